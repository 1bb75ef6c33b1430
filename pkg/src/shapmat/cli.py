"""Command-line interface.

Subcommands: synth (emit synthetic datasets), build (self-valuation matrix),
stream (run or replay an event stream), baseline (static recompute),
eval (metrics between two matrix files), sweep (knob grids).

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import load_matrix, save_matrix
from .errors import ConfigError, ShapmatError
from .harness import (
    ExperimentConfig,
    baseline_matrix,
    build_initial,
    metrics,
    replay,
    run_stream,
    save_dataset,
    save_edges,
    sweep,
    sweep_table,
    synth_blobs,
    synth_ring,
)


def _add_experiment_flags(p: argparse.ArgumentParser, need_seed: bool = True):
    p.add_argument("--seed", type=int, required=need_seed, help="RNG seed (required)")
    src = p.add_argument_group("data source")
    src.add_argument("--data", help="dataset csv (id,label,f1..fd[,e1..ek])")
    src.add_argument("--blobs", help="synthetic blobs spec classes,per_class[,separation]")
    p.add_argument("--family", default="wknn", choices=("wknn", "tree", "rbf", "ridge"))
    p.add_argument("--family-params", default="{}", help="JSON dict of family hyperparameters")
    p.add_argument("--utility", default=None, choices=("accuracy", "confidence", "neg_loss"))
    p.add_argument("--anchors", type=int, default=None, help="anchor budget k")
    p.add_argument("--anchor-ratio", type=float, default=None, help="anchor budget as k/n")
    p.add_argument("--holdout-count", type=int, default=None)
    p.add_argument("--holdout-fraction", type=float, default=None)
    p.add_argument("--event-mix", default="tasks", help="tasks|players|mixed or kind:weight list")
    p.add_argument("--tau", type=float, default=1.0, help="anchor expansion threshold")
    p.add_argument("--kappa", type=int, default=3, help="joint-update support-shift threshold")
    p.add_argument("--k-interp", type=int, default=6)
    p.add_argument("--k-max", type=int, default=20)
    p.add_argument("--no-label-strict", action="store_true")
    p.add_argument("--build-mode", default="auto", choices=("auto", "exact_shared", "mc_shared", "naive"))
    p.add_argument("--mc-samples", type=int, default=5000)
    p.add_argument("--reference", default="exact", choices=("exact", "mc", "none"))
    p.add_argument("--out-dir", default=None)


def _config_from(args) -> ExperimentConfig:
    synth = None
    if args.blobs:
        parts = [float(x) for x in args.blobs.split(",")]
        synth = {"kind": "blobs", "classes": int(parts[0]), "per_class": int(parts[1])}
        if len(parts) > 2:
            synth["separation"] = parts[2]
    if args.data is None and synth is None:
        raise ConfigError("one of --data or --blobs is required")
    return ExperimentConfig(
        seed=args.seed,
        family=args.family,
        family_params=json.loads(args.family_params),
        utility=args.utility,
        dataset_path=args.data,
        synth=synth,
        holdout_count=args.holdout_count,
        holdout_fraction=args.holdout_fraction,
        event_mix=args.event_mix,
        anchor_count=args.anchors,
        anchor_ratio=args.anchor_ratio,
        tau=args.tau,
        kappa=args.kappa,
        k_interp=args.k_interp,
        k_max=args.k_max,
        label_strict=not args.no_label_strict,
        build_mode=args.build_mode,
        mc={"max_samples": args.mc_samples},
        reference=args.reference,
        out_dir=args.out_dir,
    )


def cmd_synth(args) -> int:
    if args.kind == "blobs":
        pts = synth_blobs(
            classes=args.classes, per_class=args.per_class, separation=args.separation,
            seed=args.seed, dim=args.dim, with_embedding=args.embed,
        )
        save_dataset(pts, args.out)
    else:
        pts, edges = synth_ring(n=args.n, classes=args.classes, seed=args.seed)
        save_dataset(pts, args.out)
        if args.edges_out:
            save_edges(edges, args.edges_out)
    print(f"wrote {len(pts)} points to {args.out}")
    return 0


def cmd_build(args) -> int:
    cfg = _config_from(args)
    game, dist_cfg, anchors, matrix, report, _ = build_initial(cfg)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    save_matrix(matrix, out / "matrix.tsv")
    meta = {
        "family": cfg.family,
        "family_params": cfg.family_params,
        "distance": {
            "kind": dist_cfg.kind,
            "label_strict": dist_cfg.label_strict,
            "embedding_metric": dist_cfg.embedding_metric,
        },
        "tau": cfg.tau,
        "kappa": cfg.kappa,
        "k_interp": cfg.k_interp,
        "k_max": cfg.k_max,
        "seed": cfg.seed,
    }
    (out / "matrix.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    print(
        f"built {matrix.shape[0]}x{matrix.shape[1]} matrix ({report.mode}): "
        f"{report.trainings} trainings, {report.utility_evaluations} evaluations, "
        f"r_max={report.r_max:.4g}"
    )
    return 0


def cmd_stream(args) -> int:
    if args.replay:
        result = replay(args.replay, out_dir=args.out_dir)
    else:
        result = run_stream(_config_from(args))
    rep = result.report
    print(f"processed {rep['events']} events over {rep['players']} players x {rep['tasks']} tasks")
    if result.metrics_full:
        print(f"vs reference: spearman={result.metrics_full.spearman:.4f} "
              f"pearson={result.metrics_full.pearson:.4f} omega={result.metrics_full.omega}")
    if result.out_dir:
        print(f"artifacts in {result.out_dir}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _config_from(args)
    matrix, info = baseline_matrix(cfg, args.method)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    save_matrix(matrix, out / f"baseline_{args.method}.tsv")
    print(
        f"{args.method}: {info['counters']['samples']} samples, "
        f"{info['counters']['evaluations']} evaluations in {info['wall_clock_seconds']:.2f}s"
    )
    return 0


def cmd_eval(args) -> int:
    est = load_matrix(args.est)
    ref = load_matrix(args.ref)
    rep = metrics(est, ref, threshold=args.threshold)
    print(f"spearman={rep.spearman:.6f} pearson={rep.pearson:.6f} omega={rep.omega}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from(args)
    grid = [float(x) for x in args.grid.split(",")]
    rows = sweep(cfg, args.knob, grid)
    table = sweep_table(rows)
    if args.out:
        Path(args.out).write_text(table)
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        sys.stdout.write(table)
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shapmat", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="emit a synthetic dataset")
    p.add_argument("--kind", choices=("blobs", "ring"), default="blobs")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--separation", type=float, default=1.5)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--embed", action="store_true", help="copy features into embedding columns")
    p.add_argument("--n", type=int, default=24, help="ring size")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--edges-out", default=None)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("build", help="build the self-valuation matrix")
    _add_experiment_flags(p)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("stream", help="run a dynamic stream or replay an event log")
    p.add_argument("--replay", default=None, help="events.jsonl to replay")
    _add_experiment_flags(p, need_seed=False)
    p.set_defaults(fn=cmd_stream)

    p = sub.add_parser("baseline", help="static MC recompute over the final universe")
    p.add_argument("--method", choices=("global-mc", "tmc", "comple"), default="global-mc")
    _add_experiment_flags(p)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("eval", help="metrics between two matrix files")
    p.add_argument("--est", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--threshold", type=float, default=1e-3)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="run a knob grid")
    p.add_argument("--knob", required=True, choices=("support_size", "anchor_ratio", "interp_k", "tau"))
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--out", default=None)
    _add_experiment_flags(p)
    p.set_defaults(fn=cmd_sweep)

    return ap


def main(argv=None) -> int:
    ap = make_parser()
    args = ap.parse_args(argv)
    if args.command == "stream" and not args.replay and args.seed is None:
        ap.error("--seed is required unless --replay is given")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ShapmatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
