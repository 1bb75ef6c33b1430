"""Experiment harness: datasets, streaming protocol, metrics, and sweeps.

Drives the serialized event loop over the maintenance operations, writes the
matrix grid, a replayable JSONL event log, and structured reports.  Wall
clock is reported but never asserted; trainings and utility evaluations are
the machine-independent efficiency surrogate.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import pearsonr, spearmanr

from .core import ShapleyMatrix, TaskId, save_matrix
from .errors import AlignmentError, ConfigError, InsufficientSupport, ParseError
from .estimators import McConfig, complementary_mc, exact_local_shapley, permutation_mc
from .locality import DistanceConfig, profile_distance_fn
from .maintenance import (
    JOINT,
    PLAYER_ADD,
    PLAYER_DELETE,
    PLAYER_REPLACE,
    TASK_ADD,
    TASK_DELETE,
    TASK_REPLACE,
    StreamEvent,
    anchor_expansion,
    delete_player,
    delete_task,
    derive_seed,
    joint_update,
    player_update,
    replace_player,
)
from .models import (
    DataPoint,
    DecisionTree,
    Game,
    RBFScorer,
    RidgeERM,
    WKNN,
    register_proxy_tasks,
)
from .selfval import (
    EXACT_SHARED,
    MC_SHARED,
    NAIVE,
    AnchorSet,
    build_self_matrix,
    select_anchors_fps,
)

OMEGA_THRESHOLD = 1e-3

FAMILY_NAMES = ("wknn", "tree", "rbf", "ridge")


# -- dataset files ------------------------------------------------------------
#
# Delimited text with header ``id,label,f1..fd[,e1..ek]``; graph datasets add
# an undirected edge list ``src,dst``.


def save_dataset(points: Sequence[DataPoint], path) -> None:
    first = points[0]
    d = len(first.features)
    k = len(first.embedding) if first.embedding is not None else 0
    header = ["id", "label"] + [f"f{i + 1}" for i in range(d)] + [f"e{i + 1}" for i in range(k)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for p in points:
            row = [p.id, p.label] + [format(x, ".17g") for x in p.features]
            if k:
                row += [format(x, ".17g") for x in p.embedding]
            w.writerow(row)


def load_dataset(path) -> list[DataPoint]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(1, "empty dataset file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["id", "label"]:
        raise ParseError(1, f"header must start with id,label; got {header[:2]}")
    n_feat = sum(1 for h in header[2:] if h.startswith("f"))
    n_emb = sum(1 for h in header[2:] if h.startswith("e"))
    if n_feat + n_emb != len(header) - 2 or n_feat == 0:
        raise ParseError(1, "columns after id,label must be f1..fd then e1..ek")
    points = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(lineno, f"expected {len(header)} cells, got {len(row)}")
        try:
            pid = int(row[0])
            label = int(row[1])
            feats = [float(x) for x in row[2 : 2 + n_feat]]
            emb = [float(x) for x in row[2 + n_feat :]] if n_emb else None
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        if pid in seen:
            raise ParseError(lineno, f"duplicate id {pid}")
        seen.add(pid)
        points.append(DataPoint(pid, feats, label, embedding=emb))
    return points


def save_edges(edges: Sequence[tuple[int, int]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst"])
        for a, b in edges:
            w.writerow([a, b])


def load_edges(path, node_ids: Sequence[int]) -> np.ndarray:
    """Undirected adjacency matrix aligned with ``node_ids``."""
    seat = {z: i for i, z in enumerate(node_ids)}
    A = np.zeros((len(node_ids), len(node_ids)))
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["src", "dst"]:
        raise ParseError(1, "edge file header must be src,dst")
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            a, b = int(row[0]), int(row[1])
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        if a not in seat or b not in seat:
            raise ParseError(lineno, f"edge endpoint outside node set: {row}")
        A[seat[a], seat[b]] = A[seat[b], seat[a]] = 1.0
    return A


# -- synthetic generators ------------------------------------------------------


def synth_blobs(
    classes: int = 3,
    per_class: int = 20,
    separation: float = 6.0,
    seed: int = 0,
    dim: int = 2,
    with_embedding: bool = False,
) -> list[DataPoint]:
    """Gaussian blobs with class centers on a circle of radius ``separation``."""
    rng = np.random.default_rng(seed)
    points = []
    n = classes * per_class
    for i in range(n):
        label = i % classes
        angle = 2 * math.pi * label / classes
        center = np.zeros(dim)
        center[0] = separation * math.cos(angle)
        if dim > 1:
            center[1] = separation * math.sin(angle)
        x = rng.normal(center, 1.0)
        points.append(DataPoint(i, x, label, embedding=x.copy() if with_embedding else None))
    return points


def synth_ring(n: int = 24, classes: int = 3, seed: int = 0) -> tuple[list[DataPoint], list[tuple[int, int]]]:
    """Ring graph with arc-segment labels and angular coordinates as features."""
    rng = np.random.default_rng(seed)
    points = []
    for i in range(n):
        angle = 2 * math.pi * i / n
        label = (i * classes) // n
        x = np.array([math.cos(angle), math.sin(angle)]) + rng.normal(0, 0.05, 2)
        points.append(DataPoint(i, x, label))
    edges = [(i, (i + 1) % n) for i in range(n)]
    return points, edges


# -- configuration ---------------------------------------------------------------


@dataclass
class ExperimentConfig:
    seed: int
    family: str = "wknn"
    family_params: dict = field(default_factory=dict)
    utility: str | None = None
    dataset_path: str | None = None
    synth: dict | None = None
    holdout_count: int | None = None
    holdout_fraction: float | None = None
    event_mix: str = "tasks"
    anchor_count: int | None = None
    anchor_ratio: float | None = None
    tau: float = 1.0
    kappa: int = 3
    k_interp: int = 6
    k_max: int = 20
    label_strict: bool = True
    build_mode: str = "auto"
    mc: dict = field(default_factory=dict)
    reference: str = "exact"
    out_dir: str | None = None

    def __post_init__(self):
        if self.family not in FAMILY_NAMES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.holdout_fraction is not None and not (0.0 < self.holdout_fraction < 1.0):
            raise ConfigError("holdout_fraction must lie in (0, 1)")
        if self.anchor_ratio is not None and not (0.0 < self.anchor_ratio <= 1.0):
            raise ConfigError("anchor_ratio must lie in (0, 1]")
        if self.dataset_path is None and self.synth is None:
            raise ConfigError("either dataset_path or synth must be given")
        if self.dataset_path is not None and not Path(self.dataset_path).exists():
            raise ConfigError(f"dataset file {self.dataset_path} does not exist")
        if self.reference not in ("exact", "mc", "none"):
            raise ConfigError(f"unknown reference mode {self.reference!r}")
        if self.build_mode not in ("auto", "exact_shared", "mc_shared", "naive"):
            raise ConfigError(f"unknown build mode {self.build_mode!r}")

    def mc_config(self) -> McConfig:
        return McConfig(seed=self.seed, **self.mc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsReport:
    spearman: float = float("nan")
    pearson: float = float("nan")
    omega: int = 0
    wall_clock_by_kind: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)


@dataclass
class StreamResult:
    matrix: ShapleyMatrix
    anchors: AnchorSet
    reference: ShapleyMatrix | None
    metrics_full: MetricsReport | None
    metrics_streamed: MetricsReport | None
    report: dict
    out_dir: str | None


def family_from_config(cfg: ExperimentConfig):
    cls = {"wknn": WKNN, "tree": DecisionTree, "rbf": RBFScorer, "ridge": RidgeERM}[cfg.family]
    try:
        return cls(**cfg.family_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {cfg.family} parameters: {exc}") from None


def distance_config_for(family, cfg: ExperimentConfig) -> DistanceConfig:
    kind = family.profile_kind
    extras = {}
    if isinstance(family, RidgeERM):
        extras["embedding_metric"] = "euclidean"
        extras["lipschitz"] = family.lipschitz_constant
    return DistanceConfig(kind=kind, label_strict=cfg.label_strict, **extras)


def _load_points(cfg: ExperimentConfig) -> list[DataPoint]:
    if cfg.dataset_path is not None:
        return load_dataset(cfg.dataset_path)
    spec = dict(cfg.synth)
    kind = spec.pop("kind", "blobs")
    if kind == "blobs":
        spec.setdefault("seed", cfg.seed)
        return synth_blobs(**spec)
    if kind == "ring":
        spec.setdefault("seed", cfg.seed)
        return synth_ring(**spec)[0]
    raise ConfigError(f"unknown synthetic kind {kind!r}")


def _split(points: list[DataPoint], cfg: ExperimentConfig):
    n = len(points)
    if cfg.holdout_count is not None:
        h = cfg.holdout_count
    elif cfg.holdout_fraction is not None:
        h = int(round(n * cfg.holdout_fraction))
    else:
        h = 0
    if h >= n:
        raise ConfigError(f"holdout of {h} leaves no initial pool (n={n})")
    return points[: n - h], points[n - h :]


def build_initial(cfg: ExperimentConfig):
    """Construct the game, FPS anchors, and the self-valuation matrix."""
    points = _load_points(cfg)
    initial, holdout = _split(points, cfg)
    labels = sorted({p.label for p in points})
    family = family_from_config(cfg)
    game = Game(family, initial, utility=cfg.utility, labels=labels)
    dist_cfg = distance_config_for(family, cfg)
    register_proxy_tasks(game)

    n = len(initial)
    if cfg.anchor_count is not None:
        k = cfg.anchor_count
    elif cfg.anchor_ratio is not None:
        k = max(1, int(round(cfg.anchor_ratio * n)))
    else:
        k = max(1, n // 2)

    profiles = {z: game.profile(z) for z in game.pool_ids()}
    dist = profile_distance_fn(profiles, dist_cfg)
    anchors, coverage = select_anchors_fps(
        game.pool_ids(), k, dist, tau=cfg.tau, k_interp=cfg.k_interp
    )

    mode = cfg.build_mode
    support_restricted = False
    if mode == "auto":
        mode, support_restricted = (EXACT_SHARED, False) if n <= 16 else (EXACT_SHARED, True)
    else:
        mode = {"exact_shared": EXACT_SHARED, "mc_shared": MC_SHARED, "naive": NAIVE}[mode]
        if mode in (EXACT_SHARED, NAIVE) and n > 16:
            support_restricted = True
    matrix, build_report = build_self_matrix(
        game, anchors, mode=mode, support_restricted=support_restricted,
        mc=cfg.mc_config(), k_max=cfg.k_max,
    )
    build_report.r_max = coverage.r_max
    return game, dist_cfg, anchors, matrix, build_report, holdout


# -- event generation and replay ----------------------------------------------


def _point_dict(p: DataPoint) -> dict:
    d = {"id": int(p.id), "label": int(p.label), "features": [float(x) for x in p.features]}
    if p.embedding is not None:
        d["embedding"] = [float(x) for x in p.embedding]
    return d


def _point_from(d: dict) -> DataPoint:
    return DataPoint(d["id"], d["features"], d["label"], embedding=d.get("embedding"))


_MIX_PRESETS = {
    "tasks": {TASK_ADD: 1.0},
    "players": {PLAYER_ADD: 1.0},
    "mixed": {TASK_ADD: 0.4, PLAYER_ADD: 0.4, PLAYER_DELETE: 0.1, PLAYER_REPLACE: 0.1},
}

_MIX_KINDS = {
    "task_add": TASK_ADD,
    "task_delete": TASK_DELETE,
    "task_replace": TASK_REPLACE,
    "player_add": PLAYER_ADD,
    "player_delete": PLAYER_DELETE,
    "player_replace": PLAYER_REPLACE,
}


def _parse_mix(spec: str) -> dict[str, float]:
    if spec in _MIX_PRESETS:
        return dict(_MIX_PRESETS[spec])
    mix = {}
    for part in spec.split(","):
        name, _, weight = part.partition(":")
        if name not in _MIX_KINDS:
            raise ConfigError(f"unknown event kind {name!r} in mix")
        mix[_MIX_KINDS[name]] = float(weight) if weight else 1.0
    return mix


def make_events(cfg: ExperimentConfig, holdout: list[DataPoint]) -> list[StreamEvent]:
    """Turn the held-out pool into a seeded event stream."""
    mix = _parse_mix(cfg.event_mix)
    kinds = sorted(mix)
    weights = np.array([mix[k] for k in kinds])
    weights = weights / weights.sum()
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed & 0xFFFFFFFFFFFFFFFF, 0xE7E77)))
    events = []
    streamed_tasks: list[int] = []
    streamed_players: list[int] = []
    for p in holdout:
        kind = kinds[int(rng.choice(len(kinds), p=weights))]
        if kind == TASK_DELETE and not streamed_tasks:
            kind = TASK_ADD
        if kind == TASK_REPLACE and not streamed_tasks:
            kind = TASK_ADD
        if kind in (PLAYER_DELETE, PLAYER_REPLACE) and not streamed_players:
            kind = PLAYER_ADD
        if kind == TASK_ADD:
            events.append(StreamEvent(TASK_ADD, {"point": _point_dict(p)}))
            streamed_tasks.append(p.id)
        elif kind == TASK_DELETE:
            victim = streamed_tasks.pop(int(rng.integers(len(streamed_tasks))))
            events.append(StreamEvent(TASK_DELETE, {"id": victim}))
        elif kind == TASK_REPLACE:
            i = int(rng.integers(len(streamed_tasks)))
            victim = streamed_tasks[i]
            events.append(StreamEvent(TASK_REPLACE, {"old_id": victim, "point": _point_dict(p)}))
            streamed_tasks[i] = p.id
        elif kind == PLAYER_ADD:
            events.append(StreamEvent(PLAYER_ADD, {"point": _point_dict(p)}))
            streamed_players.append(p.id)
        elif kind == PLAYER_DELETE:
            victim = streamed_players.pop(int(rng.integers(len(streamed_players))))
            events.append(StreamEvent(PLAYER_DELETE, {"id": victim}))
        else:
            i = int(rng.integers(len(streamed_players)))
            victim = streamed_players[i]
            events.append(StreamEvent(PLAYER_REPLACE, {"old_id": victim, "point": _point_dict(p)}))
            streamed_players[i] = p.id
    return events


def apply_event(matrix, anchors, game, dist_cfg, event: StreamEvent, cfg: ExperimentConfig):
    """Dispatch one event to the maintenance operations; returns counters too."""
    mc = cfg.mc_config()
    kind = event.kind
    ev0, tr0 = game.eval_counter, game.train_counter
    t0 = time.perf_counter()
    if kind == TASK_ADD:
        matrix, anchors, _, _ = anchor_expansion(
            matrix, anchors, _point_from(event.payload["point"]), game, dist_cfg,
            k_max=cfg.k_max, mc=mc,
        )
    elif kind == TASK_DELETE:
        matrix, anchors = delete_task(matrix, anchors, event.payload["id"], game)
    elif kind == TASK_REPLACE:
        matrix, anchors = delete_task(matrix, anchors, event.payload["old_id"], game)
        matrix, anchors, _, _ = anchor_expansion(
            matrix, anchors, _point_from(event.payload["point"]), game, dist_cfg,
            k_max=cfg.k_max, mc=mc,
        )
    elif kind == PLAYER_ADD:
        matrix, _ = player_update(matrix, game, _point_from(event.payload["point"]), k_max=cfg.k_max, mc=mc)
    elif kind == PLAYER_DELETE:
        matrix, _ = delete_player(matrix, game, event.payload["id"], k_max=cfg.k_max, mc=mc)
    elif kind == PLAYER_REPLACE:
        matrix, _ = replace_player(
            matrix, game, event.payload["old_id"], _point_from(event.payload["point"]),
            k_max=cfg.k_max, mc=mc,
        )
    elif kind == JOINT:
        tasks = [_point_from(d) for d in event.payload["tasks"]]
        players = [_point_from(d) for d in event.payload["players"]]
        matrix, anchors, _ = joint_update(
            matrix, anchors, game, tasks, players, dist_cfg,
            kappa=cfg.kappa, k_max=cfg.k_max, mc=mc,
        )
    else:
        raise ConfigError(f"bad event kind {kind!r}")
    stats = {
        "wall_clock": time.perf_counter() - t0,
        "evaluations": game.eval_counter - ev0,
        "trainings": game.train_counter - tr0,
    }
    return matrix, anchors, stats


# -- reference and metrics -------------------------------------------------------


def reference_matrix(game: Game, matrix: ShapleyMatrix, mode: str, cfg: ExperimentConfig) -> ShapleyMatrix:
    """Recompute every column from scratch over the final universe.

    ``exact`` enumerates each task's local game; ``mc`` runs the high-budget
    permutation estimator over the full player set, the recompute protocol
    used for quality comparisons.
    """
    ref = ShapleyMatrix(matrix.players, [], np.zeros((len(matrix.players), 0)))
    mc = cfg.mc_config()
    for t in matrix.tasks:
        proxy = matrix.proxy_for.get(t)
        if mode == "exact":
            sup = game.support(t)
            col = exact_local_shapley(game, sup, t).column
        else:
            players = [z for z in game.pool_ids() if z != proxy]
            col = permutation_mc(game, players, t, replace(mc, seed=derive_seed(mc.seed, 0x5EF, t))).column
        ref = ref.append_column(
            t, col, as_anchor=matrix.is_anchor(t), proxy_for=proxy,
            label=matrix.label_of_task.get(t),
        )
    ref.anchor_order = list(matrix.anchor_order)
    return ref


def metrics(
    est: ShapleyMatrix,
    ref: ShapleyMatrix,
    threshold: float = OMEGA_THRESHOLD,
    tasks: Iterable[TaskId] | None = None,
) -> MetricsReport:
    """Filtered Spearman/Pearson agreement between two aligned matrices.

    Only entries whose reference magnitude exceeds the threshold enter the
    correlation; undefined diagonals never do.  Spearman uses average ranks
    for ties.
    """
    if est.players != ref.players or est.tasks != ref.tasks:
        raise AlignmentError("matrices are not id-aligned")
    cols = list(est.tasks) if tasks is None else [t for t in est.tasks if t in set(tasks)]
    a, b = [], []
    for t in cols:
        j = est.tasks.index(t)
        for i in range(len(est.players)):
            rv = ref.values[i, j]
            ev = est.values[i, j]
            if np.isnan(rv) or np.isnan(ev):
                continue
            if abs(rv) > threshold:
                a.append(ev)
                b.append(rv)
    if len(a) < 2:
        raise InsufficientSupport(f"only {len(a)} entries above the filter")
    a = np.asarray(a)
    b = np.asarray(b)
    if np.all(a == a[0]) or np.all(b == b[0]):
        return MetricsReport(spearman=float("nan"), pearson=float("nan"), omega=len(a))
    rho = float(spearmanr(a, b).statistic)
    r = float(pearsonr(a, b).statistic)
    return MetricsReport(spearman=rho, pearson=r, omega=len(a))


# -- the streaming experiment ------------------------------------------------------


def run_stream(cfg: ExperimentConfig, events: list[StreamEvent] | None = None) -> StreamResult:
    """Build, stream, compare against a reference, and write artifacts."""
    t_start = time.perf_counter()
    game, dist_cfg, anchors, matrix, build_report, holdout = build_initial(cfg)
    if events is None:
        events = make_events(cfg, holdout)

    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    log_fh = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "events.jsonl", "w", encoding="utf-8")
        log_fh.write(json.dumps({"kind": "INIT", "config": cfg.to_dict(), "version": 1}, sort_keys=True) + "\n")

    timings: dict[str, float] = {}
    counters = {"evaluations": 0, "trainings": 0}
    streamed_tasks: list[TaskId] = []
    for idx, ev in enumerate(events):
        matrix, anchors, stats = apply_event(matrix, anchors, game, dist_cfg, ev, cfg)
        if ev.kind in (TASK_ADD, TASK_REPLACE):
            streamed_tasks.append(ev.payload["point"]["id"])
        if ev.kind == TASK_DELETE:
            streamed_tasks = [t for t in streamed_tasks if t != ev.payload["id"]]
        if ev.kind == JOINT:
            streamed_tasks.extend(d["id"] for d in ev.payload["tasks"])
        timings[ev.kind] = timings.get(ev.kind, 0.0) + stats["wall_clock"]
        counters["evaluations"] += stats["evaluations"]
        counters["trainings"] += stats["trainings"]
        if log_fh:
            rec = {"kind": ev.kind, "payload": ev.payload, "index": idx, "ts": time.time()}
            log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if log_fh:
        log_fh.close()

    reference = None
    metrics_full = None
    metrics_streamed = None
    if cfg.reference != "none":
        reference = reference_matrix(game, matrix, cfg.reference, cfg)
        metrics_full = metrics(matrix, reference)
        live_streamed = [t for t in streamed_tasks if t in matrix.tasks]
        if live_streamed:
            try:
                metrics_streamed = metrics(matrix, reference, tasks=live_streamed)
            except InsufficientSupport:
                metrics_streamed = None
        for rep in (metrics_full, metrics_streamed):
            if rep is not None:
                rep.wall_clock_by_kind = dict(timings)
                rep.counters = dict(counters)

    report = {
        "config": cfg.to_dict(),
        "players": len(matrix.players),
        "tasks": len(matrix.tasks),
        "anchors": len(anchors.tasks),
        "events": len(events),
        "build": {
            "mode": build_report.mode,
            "trainings": build_report.trainings,
            "utility_evaluations": build_report.utility_evaluations,
            "wall_clock_seconds": build_report.wall_clock_seconds,
            "r_max": build_report.r_max,
        },
        "stream": {
            "wall_clock_by_kind": timings,
            "counters": counters,
        },
        "metrics": {
            "full": _metrics_dict(metrics_full),
            "streamed": _metrics_dict(metrics_streamed),
        },
        "total_wall_clock_seconds": time.perf_counter() - t_start,
    }

    if out_dir:
        save_matrix(matrix, out_dir / "matrix.tsv")
        if reference is not None:
            save_matrix(reference, out_dir / "reference.tsv")
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
        (out_dir / "matrix.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=float))

    return StreamResult(matrix, anchors, reference, metrics_full, metrics_streamed, report, str(out_dir) if out_dir else None)


def _metrics_dict(rep: MetricsReport | None):
    if rep is None:
        return None
    return {"spearman": rep.spearman, "pearson": rep.pearson, "omega": rep.omega}


def replay(log_path, out_dir=None) -> StreamResult:
    """Re-run a saved event log; deterministic, so the matrix is reproduced."""
    events = []
    cfg = None
    with open(log_path, "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("kind") == "INIT":
                conf = dict(rec["config"])
                conf["out_dir"] = str(out_dir) if out_dir else None
                cfg = ExperimentConfig(**conf)
            else:
                events.append(StreamEvent(rec["kind"], rec["payload"]))
    if cfg is None:
        raise ConfigError(f"{log_path}: missing INIT record")
    return run_stream(cfg, events=events)


# -- baselines ----------------------------------------------------------------------


def baseline_matrix(cfg: ExperimentConfig, method: str) -> tuple[ShapleyMatrix, dict]:
    """Recompute every final column with a static estimator (no maintenance).

    Replays only the universe mutations of the event stream, then estimates
    each task column over the full final player set with the requested
    estimator: ``global-mc`` (plain permutations), ``tmc`` (truncated), or
    ``comple`` (complementary pairing).
    """
    if method not in ("global-mc", "tmc", "comple"):
        raise ConfigError(f"unknown baseline method {method!r}")
    game, dist_cfg, anchors, matrix, _, holdout = build_initial(cfg)
    events = make_events(cfg, holdout)
    tasks = list(matrix.tasks)
    proxy = dict(matrix.proxy_for)
    labels = dict(matrix.label_of_task)
    for ev in events:
        if ev.kind == TASK_ADD:
            p = _point_from(ev.payload["point"])
            game.add_task(p)
            tasks.append(p.id)
            labels[p.id] = p.label
        elif ev.kind == TASK_DELETE:
            t = ev.payload["id"]
            tasks.remove(t)
        elif ev.kind == TASK_REPLACE:
            tasks.remove(ev.payload["old_id"])
            p = _point_from(ev.payload["point"])
            game.add_task(p)
            tasks.append(p.id)
            labels[p.id] = p.label
        elif ev.kind == PLAYER_ADD:
            game.add_player(_point_from(ev.payload["point"]))
        elif ev.kind == PLAYER_DELETE:
            game.remove_player(ev.payload["id"])
        elif ev.kind == PLAYER_REPLACE:
            game.remove_player(ev.payload["old_id"])
            game.add_player(_point_from(ev.payload["point"]))
        elif ev.kind == JOINT:
            for d in ev.payload["players"]:
                game.add_player(_point_from(d))
            for d in ev.payload["tasks"]:
                p = _point_from(d)
                game.add_task(p)
                tasks.append(p.id)
                labels[p.id] = p.label

    mc = cfg.mc_config()
    out = ShapleyMatrix(sorted(game.pool_ids()), [], np.zeros((len(game.pool_ids()), 0)))
    counters = {"evaluations": 0, "trainings": 0, "samples": 0}
    t0 = time.perf_counter()
    for t in tasks:
        players = [z for z in game.pool_ids() if z != proxy.get(t)]
        col_cfg = replace(mc, seed=derive_seed(mc.seed, 0xBA5E, t))
        if method == "global-mc":
            rep = permutation_mc(game, players, t, col_cfg, truncate=False)
        elif method == "tmc":
            rep = permutation_mc(game, players, t, col_cfg, truncate=True)
        else:
            rep = complementary_mc(game, players, t, col_cfg)
        counters["evaluations"] += rep.utility_evaluations
        counters["trainings"] += rep.trainings
        counters["samples"] += rep.samples_used
        out = out.append_column(
            t, rep.column, as_anchor=t in set(matrix.anchor_order),
            proxy_for=proxy.get(t), label=labels.get(t),
        )
    out.anchor_order = [a for a in matrix.anchor_order if a in set(tasks)]
    info = {"method": method, "counters": counters, "wall_clock_seconds": time.perf_counter() - t0}
    return out, info


# -- sweeps --------------------------------------------------------------------------


SWEEP_KNOBS = ("support_size", "anchor_ratio", "interp_k", "tau")


def sweep(cfg: ExperimentConfig, knob: str, grid: Sequence[float]) -> list[dict]:
    """One stream run per grid value; returns one row of metrics per value."""
    if knob not in SWEEP_KNOBS:
        raise ConfigError(f"unknown sweep knob {knob!r}; pick one of {SWEEP_KNOBS}")
    rows = []
    for value in grid:
        sub = replace(cfg, out_dir=None)
        if knob == "support_size":
            params = dict(cfg.family_params)
            params["support_size"] = int(value)
            sub = replace(sub, family_params=params)
        elif knob == "anchor_ratio":
            sub = replace(sub, anchor_ratio=float(value), anchor_count=None)
        elif knob == "interp_k":
            sub = replace(sub, k_interp=int(value))
        else:
            sub = replace(sub, tau=float(value))
        result = run_stream(sub)
        met = result.metrics_full
        rows.append(
            {
                "knob": knob,
                "value": value,
                "spearman": met.spearman if met else float("nan"),
                "pearson": met.pearson if met else float("nan"),
                "build_trainings": result.report["build"]["trainings"],
                "build_evaluations": result.report["build"]["utility_evaluations"],
                "stream_evaluations": result.report["stream"]["counters"]["evaluations"],
                "build_seconds": result.report["build"]["wall_clock_seconds"],
                "stream_seconds": sum(result.report["stream"]["wall_clock_by_kind"].values()),
                "r_max": result.report["build"]["r_max"],
            }
        )
    return rows


def sweep_table(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    lines = ["\t".join(cols)]
    for row in rows:
        lines.append("\t".join(_cell(row[c]) for c in cols))
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)
