"""Localized maintenance of the Shapley matrix under dynamic events.

Task arrivals become interpolated columns (or fresh anchors when coverage
is poor); player arrivals touch only the anchor columns whose support sets
change, where the local game is re-enumerated exactly, falling back to
permutation sampling above the enumeration budget.  Deletion mirrors
insertion, and replacement composes the two.  One event is processed at a
time; within an event, per-anchor enumerations are independent and merge
deterministically in anchor order.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (
    INTERPOLATED,
    REUSED,
    Coalition,
    PlayerId,
    ShapleyMatrix,
    TaskId,
    ValueColumn,
)
from .errors import AlreadyExists, NoCompatibleAnchor, NotFound
from .estimators import McConfig, exact_local_shapley, permutation_mc
from .locality import DistanceConfig, d_gamma
from .models import DataPoint, Game
from .selfval import AnchorSet

_WEIGHT_GUARD = 1e-9
DEFAULT_K_MAX = 20

TASK_ADD = "TASK_ADD"
TASK_DELETE = "TASK_DELETE"
TASK_REPLACE = "TASK_REPLACE"
PLAYER_ADD = "PLAYER_ADD"
PLAYER_DELETE = "PLAYER_DELETE"
PLAYER_REPLACE = "PLAYER_REPLACE"
JOINT = "JOINT"

EVENT_KINDS = (TASK_ADD, TASK_DELETE, TASK_REPLACE, PLAYER_ADD, PLAYER_DELETE, PLAYER_REPLACE, JOINT)

_PAYLOAD_KEYS = {
    TASK_ADD: {"point"},
    TASK_DELETE: {"id"},
    TASK_REPLACE: {"old_id", "point"},
    PLAYER_ADD: {"point"},
    PLAYER_DELETE: {"id"},
    PLAYER_REPLACE: {"old_id", "point"},
    JOINT: {"tasks", "players"},
}


@dataclass(frozen=True)
class StreamEvent:
    """One dynamic event; the payload shape is fixed per kind."""

    kind: str
    payload: dict

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        missing = _PAYLOAD_KEYS[self.kind] - set(self.payload)
        if missing:
            raise ValueError(f"{self.kind} payload missing {sorted(missing)}")


@dataclass
class PlayerUpdateReport:
    """Which columns a player event touched and what it cost."""

    affected_tasks: list[TaskId] = field(default_factory=list)
    evaluations: int = 0
    trainings: int = 0
    corrections: dict[tuple[PlayerId, TaskId], float] = field(default_factory=dict)
    realized_k_max: int = 0
    wall_clock_seconds: float = 0.0

    @property
    def bound(self) -> int:
        return len(self.affected_tasks) * (1 << self.realized_k_max)


def derive_seed(base: int, *parts: int) -> int:
    mask = 0xFFFFFFFFFFFFFFFF
    ss = np.random.SeedSequence(tuple(p & mask for p in (base, *parts)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# -- task side ---------------------------------------------------------------


def task_update(
    m: ShapleyMatrix,
    anchors: AnchorSet,
    tid: TaskId,
    game: Game,
    dist_cfg: DistanceConfig,
) -> tuple[ValueColumn, list[TaskId], dict[TaskId, float]]:
    """Estimate a new task's column by convex interpolation of anchor columns.

    Selects the ``k_interp`` nearest label-compatible anchors under the
    model-induced distance (ties by anchor order), weights them by inverse
    distance, and averages the columns.  If any anchor is at distance zero
    the weights collapse to uniform over the zero-distance anchors.  Rows
    whose anchor entry is undefined (a proxy diagonal) renormalize over the
    remaining anchors.
    """
    prof_t = game.profile(tid)
    scored = []
    for pos, a in enumerate(anchors.tasks):
        d = d_gamma(prof_t, game.profile(a), dist_cfg)
        if math.isfinite(d):
            scored.append((d, pos, a))
    if not scored:
        raise NoCompatibleAnchor(f"no label-compatible anchor for task {tid}")
    scored.sort()
    chosen = scored[: anchors.k_interp]

    exact = [(d, pos, a) for d, pos, a in chosen if d == 0.0]
    if exact:
        chosen = exact
        weights = {a: 1.0 / len(exact) for _, _, a in exact}
    else:
        raw = {a: 1.0 / (d + _WEIGHT_GUARD) for d, _, a in chosen}
        total = sum(raw.values())
        weights = {a: w / total for a, w in raw.items()}

    cols = {a: m.values[:, m.tasks.index(a)] for _, _, a in chosen}
    entries: dict[PlayerId, float] = {}
    for i, z in enumerate(m.players):
        num = 0.0
        wsum = 0.0
        for a, w in weights.items():
            v = cols[a][i]
            if np.isnan(v):
                continue
            num += w * v
            wsum += w
        entries[z] = num / wsum if wsum > 0 else 0.0

    provenance = REUSED if len(exact) == 1 else INTERPOLATED
    used = [a for _, _, a in chosen]
    return ValueColumn(tid, entries, provenance), used, weights


def anchor_expansion(
    m: ShapleyMatrix,
    anchors: AnchorSet,
    point: DataPoint,
    game: Game,
    dist_cfg: DistanceConfig,
    k_max: int = DEFAULT_K_MAX,
    mc: McConfig | None = None,
) -> tuple[ShapleyMatrix, AnchorSet, ValueColumn, bool]:
    """Value an incoming task, expanding the anchor set when poorly covered.

    Covered tasks (coverage radius <= tau) are interpolated and appended as
    derived columns; uncovered ones get an exactly computed column appended
    at the end of the anchor ordering.
    """
    tid = point.id if game.has_task(point.id) else game.add_task(point)
    prof_t = game.profile(tid)
    radius = math.inf
    for a in anchors.tasks:
        radius = min(radius, d_gamma(prof_t, game.profile(a), dist_cfg))
    if radius <= anchors.tau:
        col, _, _ = task_update(m, anchors, tid, game, dist_cfg)
        m2 = m.append_column(tid, col, as_anchor=False, label=point.label)
        return m2, anchors, col, False
    col = _fresh_column(game, tid, k_max, mc)
    m2 = m.append_column(tid, col, as_anchor=True, label=point.label)
    return m2, anchors.extended(tid), col, True


def _fresh_column(game: Game, tid: TaskId, k_max: int, mc: McConfig | None) -> ValueColumn:
    sup = game.support(tid)
    if len(sup) <= k_max:
        return exact_local_shapley(game, sup, tid).column
    cfg = mc or McConfig()
    cfg = replace(cfg, seed=derive_seed(cfg.seed, tid, len(sup)))
    return permutation_mc(game, sup.members, tid, cfg).column


def delete_task(m: ShapleyMatrix, anchors: AnchorSet, tid: TaskId, game: Game | None = None):
    """Remove one column; other entries stay bit-identical."""
    m2 = m.remove_column(tid)
    anchors2 = anchors.without(tid) if tid in anchors.tasks else anchors
    if game is not None and game.has_task(tid):
        game.remove_task(tid)
    return m2, anchors2


# -- player side ----------------------------------------------------------------


def _anchor_supports(m: ShapleyMatrix, game: Game) -> dict[TaskId, Coalition]:
    return {a: game.support(a).members for a in m.anchor_order}


def _rewrite_column(
    m: ShapleyMatrix,
    game: Game,
    a: TaskId,
    new_support: Coalition,
    old_support: Coalition,
    k_max: int,
    mc: McConfig | None,
) -> tuple[ShapleyMatrix, int, ValueColumn]:
    """Re-value one affected anchor column over its new local game.

    Members of the new support are revalued, players dropped from the
    support go to zero, and everything else keeps its old value untouched.
    """
    if len(new_support) <= k_max:
        rep = exact_local_shapley(game, new_support, a)
    else:
        cfg = mc or McConfig()
        cfg = replace(cfg, seed=derive_seed(cfg.seed, a, len(new_support)))
        rep = permutation_mc(game, new_support, a, cfg)
    entries = m.column_dict(a)
    for z in set(old_support) | set(new_support):
        if z in entries:
            entries[z] = 0.0
    for z, v in rep.column.entries.items():
        entries[z] = v
    entries = {z: v for z, v in entries.items() if z in set(m.players)}
    m2 = m.set_column(a, entries)
    m2.provenance[a] = rep.column.provenance
    return m2, rep.utility_evaluations, rep.column


def player_update(
    m: ShapleyMatrix,
    game: Game,
    point: DataPoint,
    k_max: int = DEFAULT_K_MAX,
    mc: McConfig | None = None,
) -> tuple[ShapleyMatrix, PlayerUpdateReport]:
    """Insert a player and re-value only the anchor columns whose support changed.

    Appends a zero row, recomputes the local game over each affected
    anchor's new support, and leaves every other entry bit-identical.
    """
    t0 = time.perf_counter()
    if game.has_player(point.id) or point.id in m.players:
        raise AlreadyExists(f"player {point.id} already present")
    tr0 = game.train_counter
    before = _anchor_supports(m, game)
    game.add_player(point)
    after = _anchor_supports(m, game)
    affected = [a for a in m.anchor_order if set(before[a]) != set(after[a])]

    m2 = m.append_row(point.id, label=point.label)
    report = PlayerUpdateReport(affected_tasks=affected)
    for a in affected:
        old_col = {z: m2.get_entry(z, a) for z in m.players if z != m2.proxy_for.get(a)}
        m2, evals, _ = _rewrite_column(m2, game, a, after[a], before[a], k_max, mc)
        report.evaluations += evals
        report.realized_k_max = max(report.realized_k_max, len(before[a]), len(after[a]))
        for z in set(before[a]) | set(after[a]):
            if z == point.id or z == m2.proxy_for.get(a):
                continue
            report.corrections[(z, a)] = m2.get_entry(z, a) - old_col[z]
    report.trainings = game.train_counter - tr0
    report.wall_clock_seconds = time.perf_counter() - t0
    return m2, report


def delete_player(
    m: ShapleyMatrix,
    game: Game,
    z: PlayerId,
    k_max: int = DEFAULT_K_MAX,
    mc: McConfig | None = None,
) -> tuple[ShapleyMatrix, PlayerUpdateReport]:
    """Remove a player's row and re-value only the anchors that depended on it.

    The player's proxy column (if any) stays: it is still a well-defined
    evaluation task over the remaining pool.
    """
    t0 = time.perf_counter()
    if z not in m.players or not game.has_player(z):
        raise NotFound(f"unknown player {z}")
    tr0 = game.train_counter
    before = _anchor_supports(m, game)
    game.remove_player(z)
    after = _anchor_supports(m, game)
    affected = [a for a in m.anchor_order if set(before[a]) != set(after[a])]

    m2 = m.remove_row(z)
    report = PlayerUpdateReport(affected_tasks=affected)
    for a in affected:
        old_col = {w: m2.get_entry(w, a) for w in m2.players if w != m2.proxy_for.get(a)}
        m2, evals, _ = _rewrite_column(m2, game, a, after[a], before[a].drop(z) if z in before[a] else before[a], k_max, mc)
        report.evaluations += evals
        report.realized_k_max = max(report.realized_k_max, len(before[a]), len(after[a]))
        for w in set(before[a]) | set(after[a]):
            if w == z or w == m2.proxy_for.get(a) or w not in old_col:
                continue
            report.corrections[(w, a)] = m2.get_entry(w, a) - old_col[w]
    report.trainings = game.train_counter - tr0
    report.wall_clock_seconds = time.perf_counter() - t0
    return m2, report


def replace_player(
    m: ShapleyMatrix,
    game: Game,
    z_old: PlayerId,
    new_point: DataPoint,
    k_max: int = DEFAULT_K_MAX,
    mc: McConfig | None = None,
) -> tuple[ShapleyMatrix, PlayerUpdateReport]:
    """Deletion followed by insertion; the affected set is the union."""
    m1, rep_del = delete_player(m, game, z_old, k_max=k_max, mc=mc)
    m2, rep_add = player_update(m1, game, new_point, k_max=k_max, mc=mc)
    affected = [a for a in m2.anchor_order if a in set(rep_del.affected_tasks) | set(rep_add.affected_tasks)]
    report = PlayerUpdateReport(
        affected_tasks=affected,
        evaluations=rep_del.evaluations + rep_add.evaluations,
        trainings=rep_del.trainings + rep_add.trainings,
        realized_k_max=max(rep_del.realized_k_max, rep_add.realized_k_max),
        wall_clock_seconds=rep_del.wall_clock_seconds + rep_add.wall_clock_seconds,
    )
    for a in affected:
        for z in m2.players:
            if z == m2.proxy_for.get(a) or z == new_point.id:
                continue
            if z in m.players:
                old = m.get_entry(z, a)
                new = m2.get_entry(z, a)
                if new != old:
                    report.corrections[(z, a)] = new - old
    return m2, report


# -- joint batches -----------------------------------------------------------------


@dataclass
class JointReport:
    player_reports: list[PlayerUpdateReport] = field(default_factory=list)
    task_dispositions: dict[TaskId, str] = field(default_factory=dict)  # interpolated/exact/anchor


def joint_update(
    m: ShapleyMatrix,
    anchors: AnchorSet,
    game: Game,
    new_tasks: Sequence[DataPoint],
    new_players: Sequence[DataPoint],
    dist_cfg: DistanceConfig,
    kappa: int = 3,
    k_max: int = DEFAULT_K_MAX,
    mc: McConfig | None = None,
) -> tuple[ShapleyMatrix, AnchorSet, JointReport]:
    """Apply a mixed batch: all player updates first, then the new tasks.

    Each new task is recomputed exactly when it is poorly covered
    (min anchor distance > tau, which also makes it a new anchor) or when
    the batch shifted its support by more than ``kappa`` members; otherwise
    it is interpolated from the already-updated columns.
    """
    report = JointReport()
    task_ids = []
    pre_support: dict[TaskId, frozenset] = {}
    for tp in new_tasks:
        if game.has_task(tp.id) or tp.id in m.tasks:
            raise AlreadyExists(f"task {tp.id} already present")
        tid = game.add_task(tp)
        task_ids.append(tid)
        pre_support[tid] = frozenset(game.support(tid).members)

    for p in new_players:
        m, rep = player_update(m, game, p, k_max=k_max, mc=mc)
        report.player_reports.append(rep)

    for tid, tp in zip(task_ids, new_tasks):
        post = frozenset(game.support(tid).members)
        shift = len(pre_support[tid] ^ post)
        prof_t = game.profile(tid)
        radius = math.inf
        for a in anchors.tasks:
            radius = min(radius, d_gamma(prof_t, game.profile(a), dist_cfg))
        if radius > anchors.tau or shift > kappa:
            col = _fresh_column(game, tid, k_max, mc)
            if radius > anchors.tau:
                m = m.append_column(tid, col, as_anchor=True, label=tp.label)
                anchors = anchors.extended(tid)
                report.task_dispositions[tid] = "anchor"
            else:
                m = m.append_column(tid, col, as_anchor=False, label=tp.label)
                report.task_dispositions[tid] = "exact"
        else:
            col, _, _ = task_update(m, anchors, tid, game, dist_cfg)
            m = m.append_column(tid, col, as_anchor=False, label=tp.label)
            report.task_dispositions[tid] = "interpolated"
    return m, anchors, report
