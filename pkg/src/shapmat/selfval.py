"""Self-valuation matrix construction.

Every training player doubles as a leave-one-out proxy task, so the matrix
can be built from the training data alone.  Shared subset scheduling assigns
each coalition a unique pivot anchor so the model is trained once and its
utility credited to every anchor column the coalition is compatible with.
Coalition evaluations inside one build are accumulated in ascending mask
(or sample) order, which keeps results independent of any parallel split.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Sequence

import numpy as np

from .core import Coalition, PlayerId, ShapleyMatrix, TaskId, EXACT_LOCAL, MC
from .errors import InvalidBudget, TooLarge
from .estimators import McConfig, exact_local_shapley, stopping_check
from .models import Game, register_proxy_tasks

EXACT_SHARED = "EXACT_SHARED"
MC_SHARED = "MC_SHARED"
NAIVE = "NAIVE"

EXACT_PLAYER_CAP = 16


@dataclass(frozen=True)
class AnchorSet:
    """Ordered anchor tasks with the expansion threshold and neighbor count."""

    tasks: tuple[TaskId, ...]
    tau: float = 1.0
    k_interp: int = 6

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if len(set(self.tasks)) != len(self.tasks):
            raise ValueError("duplicate anchors in ordering")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.k_interp < 1:
            raise ValueError("k_interp must be >= 1")

    def extended(self, t: TaskId) -> "AnchorSet":
        return AnchorSet(self.tasks + (t,), self.tau, self.k_interp)

    def without(self, t: TaskId) -> "AnchorSet":
        return AnchorSet(tuple(a for a in self.tasks if a != t), self.tau, self.k_interp)


@dataclass(frozen=True)
class PivotSchedule:
    """Coalition-to-anchor assignment: the first anchor outside the coalition."""

    order: tuple[TaskId, ...]

    def pivot(self, coalition) -> TaskId | None:
        members = set(coalition)
        for a in self.order:
            if a not in members:
                return a
        return None


@dataclass
class CoverageReport:
    r_max: float
    argmax_point: PlayerId | None
    nearest: dict[PlayerId, float]


@dataclass
class BuildReport:
    n: int
    k: int
    mode: str
    trainings: int = 0
    utility_evaluations: int = 0
    credit_events: dict[TaskId, int] = field(default_factory=dict)
    wall_clock_seconds: float = 0.0
    r_max: float | None = None


def covering_radius(players: Sequence[PlayerId], anchors: Sequence[TaskId], dist) -> CoverageReport:
    """max over players of min over anchors of the task distance."""
    if not anchors:
        raise InvalidBudget("anchors must be nonempty")
    nearest = {z: min(dist(z, a) for a in anchors) for z in players}
    worst = max(nearest, key=lambda z: (nearest[z], -z)) if nearest else None
    return CoverageReport(nearest[worst] if worst is not None else 0.0, worst, nearest)


def select_anchors_fps(
    players: Sequence[PlayerId],
    k: int,
    dist: Callable[[PlayerId, PlayerId], float],
    tau: float = 1.0,
    k_interp: int = 6,
    seed_point: PlayerId | None = None,
) -> tuple[AnchorSet, CoverageReport]:
    """Greedy k-center anchor selection (farthest-point sampling).

    Seeds at the lowest player id unless ``seed_point`` overrides it; each
    following anchor maximizes the distance to the chosen set, ties broken
    by ascending id.  The greedy radius is within twice the optimum.
    """
    players = sorted(players)
    n = len(players)
    if not (1 <= k <= n):
        raise InvalidBudget(f"anchor budget {k} outside [1, {n}]")
    first = seed_point if seed_point is not None else players[0]
    if first not in players:
        raise InvalidBudget(f"seed point {first} is not a player")
    chosen = [first]
    min_dist = {z: dist(z, first) for z in players}
    while len(chosen) < k:
        best = None
        for z in players:
            if z in min_dist and min_dist[z] > 0 and z not in chosen:
                if best is None or min_dist[z] > min_dist[best]:
                    best = z
        if best is None:  # all remaining points coincide with an anchor
            best = next(z for z in players if z not in chosen)
        chosen.append(best)
        for z in players:
            d = dist(z, best)
            if d < min_dist[z]:
                min_dist[z] = d
    anchors = AnchorSet(tuple(chosen), tau, k_interp)
    return anchors, covering_radius(players, anchors.tasks, dist)


# -- matrix construction ----------------------------------------------------


def build_self_matrix(
    game: Game,
    anchors: AnchorSet,
    mode: str = EXACT_SHARED,
    support_restricted: bool = False,
    mc: McConfig | None = None,
    k_max: int | None = None,
) -> tuple[ShapleyMatrix, BuildReport]:
    """Build the anchor-column self-valuation matrix over the game's pool.

    EXACT_SHARED enumerates every coalition of the full pool once, training
    at its pivot and crediting every anchor outside the coalition; NAIVE
    enumerates per anchor with the cross-anchor cache disabled and serves
    as the oracle; MC_SHARED draws size-stratified coalitions once and
    feeds inverse-probability credits to every compatible column, with the
    shared per-column stopping rule.  ``support_restricted`` switches the
    exact modes to per-anchor local games over each proxy task's support,
    lifting the full-enumeration player cap.
    """
    ids = sorted(game.pool_ids())
    n = len(ids)
    k = len(anchors.tasks)
    if k == 0 or any(a not in ids for a in anchors.tasks):
        raise InvalidBudget("anchors must be a nonempty subset of the pool")
    register_proxy_tasks(game)
    t0 = time.perf_counter()
    tr0 = game.train_counter

    if mode == EXACT_SHARED and not support_restricted:
        values, evals, credits = _exact_shared(game, ids, anchors.tasks)
    elif mode == NAIVE and not support_restricted:
        values, evals, credits = _naive(game, ids, anchors.tasks)
    elif mode in (EXACT_SHARED, NAIVE) and support_restricted:
        values, evals, credits = _exact_local(game, ids, anchors.tasks, k_max, naive=(mode == NAIVE))
    elif mode == MC_SHARED:
        values, evals, credits = _mc_shared(game, ids, anchors.tasks, mc or McConfig())
    else:
        raise ValueError(f"unknown build mode {mode!r}")

    label_p = {z: game.point(z).label for z in ids}
    matrix = ShapleyMatrix(
        players=ids,
        tasks=list(anchors.tasks),
        values=values,
        anchor_order=list(anchors.tasks),
        proxy_for={a: a for a in anchors.tasks},
        label_of_task={a: label_p[a] for a in anchors.tasks},
        label_of_player=label_p,
        provenance={a: (MC if mode == MC_SHARED else EXACT_LOCAL) for a in anchors.tasks},
    )
    report = BuildReport(
        n=n,
        k=k,
        mode=mode + ("/local" if support_restricted else ""),
        trainings=game.train_counter - tr0,
        utility_evaluations=evals,
        credit_events=credits,
        wall_clock_seconds=time.perf_counter() - t0,
    )
    return matrix, report


def _exact_shared(game, ids, anchor_order):
    n = len(ids)
    if n > EXACT_PLAYER_CAP:
        raise TooLarge(f"exact build limited to {EXACT_PLAYER_CAP} players, got {n}")
    seat = {z: i for i, z in enumerate(ids)}
    k = len(anchor_order)
    col_of = {a: j for j, a in enumerate(anchor_order)}
    values = np.zeros((n, k))
    w_in = np.array([(n - 1) * comb(n - 2, s - 1) if 1 <= s <= n - 1 else 0 for s in range(n + 1)], dtype=float)
    w_out = np.array([(n - 1) * comb(n - 2, s) if s <= n - 2 else 0 for s in range(n + 1)], dtype=float)
    evals = 0
    credits = {a: 0 for a in anchor_order}
    anchor_bits = {a: 1 << seat[a] for a in anchor_order}
    for mask in range(1 << n):
        free = [a for a in anchor_order if not mask & anchor_bits[a]]
        if not free:
            continue
        S = Coalition(ids[i] for i in range(n) if mask >> i & 1)
        s = len(S)
        in_arr = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        for a in free:  # the model is trained once, at the first (pivot) call
            v = game.utility(S, a)
            evals += 1
            credits[a] += 1
            gain = v / w_in[s] if s >= 1 else 0.0
            drop = -v / w_out[s] if s <= n - 2 else 0.0
            contrib = np.where(in_arr, gain, drop)
            contrib[seat[a]] = 0.0
            values[:, col_of[a]] += contrib
    for a in anchor_order:
        values[seat[a], col_of[a]] = np.nan
    return values, evals, credits


def _naive(game, ids, anchor_order):
    n = len(ids)
    if n > EXACT_PLAYER_CAP:
        raise TooLarge(f"exact build limited to {EXACT_PLAYER_CAP} players, got {n}")
    seat = {z: i for i, z in enumerate(ids)}
    values = np.zeros((n, len(anchor_order)))
    w_in = [(n - 1) * comb(n - 2, s - 1) if 1 <= s <= n - 1 else 0 for s in range(n + 1)]
    w_out = [(n - 1) * comb(n - 2, s) if s <= n - 2 else 0 for s in range(n + 1)]
    evals = 0
    credits = {a: 0 for a in anchor_order}
    for j, a in enumerate(anchor_order):
        others = [z for z in ids if z != a]
        with game.caching_disabled():
            for mask in range(1 << len(others)):
                S = Coalition(others[i] for i in range(len(others)) if mask >> i & 1)
                v = game.utility(S, a)
                evals += 1
                credits[a] += 1
                s = len(S)
                member_bits = set(S)
                for z in others:
                    if z in member_bits:
                        values[seat[z], j] += v / w_in[s]
                    else:
                        values[seat[z], j] -= v / w_out[s]
        values[seat[a], j] = np.nan
    return values, evals, credits


def _exact_local(game, ids, anchor_order, k_max, naive=False):
    seat = {z: i for i, z in enumerate(ids)}
    values = np.zeros((len(ids), len(anchor_order)))
    evals = 0
    credits = {a: 0 for a in anchor_order}
    for j, a in enumerate(anchor_order):
        sup = game.support(a, k_max=k_max)
        if naive:
            with game.caching_disabled():
                rep = exact_local_shapley(game, sup, a)
        else:
            rep = exact_local_shapley(game, sup, a)
        evals += rep.utility_evaluations
        credits[a] += rep.utility_evaluations
        for z, v in rep.column.entries.items():
            values[seat[z], j] = v
        values[seat[a], j] = np.nan
    return values, evals, credits


def _mc_shared(game, ids, anchor_order, cfg: McConfig):
    n = len(ids)
    if n < 2:
        raise TooLarge("MC build needs at least two players")
    seat = {z: i for i, z in enumerate(ids)}
    k = len(anchor_order)
    col_of = {a: j for j, a in enumerate(anchor_order)}
    # inverse-probability factors for size-uniform coalition sampling:
    # p(S) = 1 / ((n+1) * C(n, s)), column weights use the n-1 player game
    f_in = np.zeros(n + 1)
    f_out = np.zeros(n + 1)
    for s in range(n + 1):
        if 1 <= s <= n - 1:
            f_in[s] = (n + 1) * comb(n, s) / ((n - 1) * comb(n - 2, s - 1))
        if s <= n - 2:
            f_out[s] = (n + 1) * comb(n, s) / ((n - 1) * comb(n - 2, s))
    sums = np.zeros((n, k))
    values = np.full((n, k), np.nan)
    live = {a: None for a in anchor_order}  # anchor -> previous snapshot
    frozen: dict[TaskId, int] = {}
    evals = 0
    credits = {a: 0 for a in anchor_order}
    m = 0
    for m in range(1, cfg.max_samples + 1):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed & 0xFFFFFFFFFFFFFFFF, m)))
        s = int(rng.integers(0, n + 1))
        S = Coalition(ids[i] for i in rng.choice(n, size=s, replace=False))
        member = np.zeros(n, dtype=bool)
        for z in S:
            member[seat[z]] = True
        for a in list(live):
            if a in S:
                continue
            v = game.utility(S, a)
            evals += 1
            credits[a] += 1
            contrib = np.where(member, v * f_in[s], -v * f_out[s])
            contrib[seat[a]] = 0.0
            sums[:, col_of[a]] += contrib
        if m % cfg.check_interval == 0:
            for a in list(live):
                j = col_of[a]
                curr = {z: sums[seat[z], j] / m for z in ids if z != a}
                prev = live[a]
                if prev is not None and stopping_check(prev, curr, cfg.rel_change_stop):
                    frozen[a] = m
                    del live[a]
                else:
                    live[a] = curr
            if not live:
                break
    for a in anchor_order:
        j = col_of[a]
        denom = frozen.get(a, m)
        values[:, j] = sums[:, j] / denom
        values[seat[a], j] = np.nan
    return values, evals, credits
