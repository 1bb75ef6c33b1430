"""Shapley value estimators over task-conditioned utility games.

All estimators consume a game object exposing ``utility(coalition, task)``
and an integer ``train_counter``; columns are returned inside an
:class:`EstimateReport` together with evaluation and training counters.

Monte Carlo estimators draw one independent random stream per sample index,
derived from (seed, index), so results do not depend on evaluation order.
Accumulation into a column happens in ascending sample order, which is the
single deterministic synchronization point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from math import comb
from typing import Mapping

import numpy as np

from .core import EXACT_LOCAL, MC, Coalition, PlayerId, SupportSet, TaskId, ValueColumn
from .errors import KeyMismatch, SupportTooLarge

HARD_ENUMERATION_CAP = 25


@dataclass(frozen=True)
class McConfig:
    """Shared Monte Carlo budget and stopping configuration."""

    max_samples: int = 5000
    check_interval: int = 100
    rel_change_stop: float = 0.05
    truncation_tolerance: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not (self.max_samples >= self.check_interval >= 1):
            raise ValueError("need max_samples >= check_interval >= 1")
        if self.rel_change_stop <= 0 or self.truncation_tolerance <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class EstimateReport:
    """One estimated column plus the counters that measure its cost."""

    column: ValueColumn
    utility_evaluations: int = 0
    trainings: int = 0
    samples_used: int = 0
    wall_clock_seconds: float = 0.0


class CallableGame:
    """Adapter turning a plain coalition function into a game.

    ``fn`` may take the coalition alone or ``(coalition, task)``.  Distinct
    coalitions are counted as trainings, mirroring model-backed games.
    """

    def __init__(self, fn, with_task: bool = False):
        self._fn = fn
        self._with_task = with_task
        self._seen: set[tuple] = set()
        self.train_counter = 0

    def utility(self, coalition, task=None) -> float:
        key = tuple(sorted(coalition))
        if key not in self._seen:
            self._seen.add(key)
            self.train_counter += 1
        if self._with_task:
            return float(self._fn(key, task))
        return float(self._fn(key))


def _entries(obj) -> Mapping[PlayerId, float]:
    return obj.entries if isinstance(obj, ValueColumn) else obj


def stopping_check(prev, curr, rel_change_stop: float = 0.05) -> bool:
    """True iff the mean relative change between snapshots is below the stop.

    Implements (1/n) * sum |phi_m - phi_prev| / (|phi_m| + 1e-12) with the
    mandatory 1e-12 guard, so all-zero snapshots report convergence.
    """
    p, c = _entries(prev), _entries(curr)
    if set(p) != set(c):
        raise KeyMismatch("snapshots cover different players")
    if not c:
        return True
    total = 0.0
    for z, v in c.items():
        total += abs(v - p[z]) / (abs(v) + 1e-12)
    return total / len(c) < rel_change_stop


def _members(support) -> tuple[PlayerId, ...]:
    if isinstance(support, SupportSet):
        return tuple(support.members)
    return tuple(Coalition(support))


def exact_local_shapley(game, support, task: TaskId) -> EstimateReport:
    """Exact Shapley values of the local game restricted to ``support``.

    Enumerates all 2^K coalitions once and applies the two-term weight
    form: every evaluated coalition S credits each member z with
    ``+v(S) / (K * C(K-1, |S|-1))`` and debits each non-member with
    ``-v(S) / (K * C(K-1, |S|))``.  Players outside the support are zero.
    """
    members = _members(support)
    k = len(members)
    if k > HARD_ENUMERATION_CAP:
        raise SupportTooLarge(k, HARD_ENUMERATION_CAP)
    t0 = time.perf_counter()
    tr0 = getattr(game, "train_counter", 0)

    n_sets = 1 << k
    vals = np.empty(n_sets)
    for mask in range(n_sets):
        s = Coalition(members[i] for i in range(k) if mask >> i & 1)
        vals[mask] = game.utility(s, task)

    idx = np.arange(n_sets, dtype=np.uint32)
    sizes = np.zeros(n_sets, dtype=np.int64)
    for i in range(k):
        sizes += (idx >> i) & 1
    w_in = np.array([1.0 / (k * comb(k - 1, s - 1)) if s >= 1 else 0.0 for s in range(k + 1)])
    w_out = np.array([1.0 / (k * comb(k - 1, s)) if s <= k - 1 else 0.0 for s in range(k + 1)])

    entries: dict[PlayerId, float] = {}
    for i, z in enumerate(members):
        has = ((idx >> i) & 1).astype(bool)
        contrib = np.where(has, vals * w_in[sizes], -vals * w_out[sizes])
        entries[z] = float(contrib.sum())

    return EstimateReport(
        column=ValueColumn(task, entries, EXACT_LOCAL),
        utility_evaluations=n_sets,
        trainings=getattr(game, "train_counter", 0) - tr0,
        samples_used=0,
        wall_clock_seconds=time.perf_counter() - t0,
    )


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed & 0xFFFFFFFFFFFFFFFF, index)))


def permutation_mc(game, players, task: TaskId, cfg: McConfig, truncate: bool = False) -> EstimateReport:
    """Permutation-sampling Monte Carlo estimate of one task column.

    With ``truncate`` the tail of a permutation is skipped (zero marginals)
    once the running prefix utility is within ``truncation_tolerance`` of
    the full-set utility, which is evaluated once and cached for the call.
    Stops early when the mean relative change over the players falls below
    ``rel_change_stop`` between consecutive checkpoints.
    """
    players = tuple(Coalition(players))
    n = len(players)
    if n == 0:
        raise ValueError("players must be nonempty")
    t0 = time.perf_counter()
    tr0 = getattr(game, "train_counter", 0)
    evals = 0

    v_empty = game.utility(Coalition(), task)
    evals += 1
    v_full = None
    if truncate:
        v_full = game.utility(Coalition(players), task)
        evals += 1

    sums = {z: 0.0 for z in players}
    prev_snapshot: dict[PlayerId, float] | None = None
    used = 0
    for m in range(1, cfg.max_samples + 1):
        order = _sample_rng(cfg.seed, m).permutation(n)
        prefix: list[PlayerId] = []
        v_prev = v_empty
        cut = False
        for pos in order:
            z = players[pos]
            if cut:
                continue  # zero marginal for the truncated tail
            prefix.append(z)
            v = game.utility(Coalition(prefix), task)
            evals += 1
            sums[z] += v - v_prev
            v_prev = v
            if truncate and abs(v - v_full) < cfg.truncation_tolerance:
                cut = True
        used = m
        if m % cfg.check_interval == 0:
            curr = {z: sums[z] / m for z in players}
            if prev_snapshot is not None and stopping_check(prev_snapshot, curr, cfg.rel_change_stop):
                break
            prev_snapshot = curr

    entries = {z: sums[z] / used for z in players}
    return EstimateReport(
        column=ValueColumn(task, entries, MC),
        utility_evaluations=evals,
        trainings=getattr(game, "train_counter", 0) - tr0,
        samples_used=used,
        wall_clock_seconds=time.perf_counter() - t0,
    )


def complementary_mc(game, players, task: TaskId, cfg: McConfig) -> EstimateReport:
    """Permutation sampling with complementary-coalition pairing.

    Each sampled prefix S is paired with its complement D\\S, so one sampled
    permutation also yields the marginals of its reversal and every utility
    evaluation feeds two coupled marginal terms.
    """
    players = tuple(Coalition(players))
    n = len(players)
    if n == 0:
        raise ValueError("players must be nonempty")
    t0 = time.perf_counter()
    tr0 = getattr(game, "train_counter", 0)
    evals = 0

    full = Coalition(players)
    v_empty = game.utility(Coalition(), task)
    v_full = game.utility(full, task)
    evals += 2

    sums = {z: 0.0 for z in players}
    prev_snapshot: dict[PlayerId, float] | None = None
    used = 0
    for m in range(1, cfg.max_samples + 1):
        order = [players[i] for i in _sample_rng(cfg.seed, m).permutation(n)]
        # v_fwd[j] = v(first j players), v_rev[j] = v(complement of first j)
        v_fwd = [v_empty]
        v_rev = [v_full]
        remaining = list(order)
        prefix: list[PlayerId] = []
        for j, z in enumerate(order, start=1):
            prefix.append(z)
            remaining.remove(z)
            if j < n:
                v_fwd.append(game.utility(Coalition(prefix), task))
                v_rev.append(game.utility(Coalition(remaining), task))
                evals += 2
            else:
                v_fwd.append(v_full)
                v_rev.append(v_empty)
        for j, z in enumerate(order, start=1):
            sums[z] += v_fwd[j] - v_fwd[j - 1]  # forward permutation
            sums[z] += v_rev[j - 1] - v_rev[j]  # reversed (complement) permutation
        used = m
        if m % cfg.check_interval == 0:
            curr = {z: sums[z] / (2 * m) for z in players}
            if prev_snapshot is not None and stopping_check(prev_snapshot, curr, cfg.rel_change_stop):
                break
            prev_snapshot = curr

    entries = {z: sums[z] / (2 * used) for z in players}
    return EstimateReport(
        column=ValueColumn(task, entries, MC),
        utility_evaluations=evals,
        trainings=getattr(game, "train_counter", 0) - tr0,
        samples_used=used,
        wall_clock_seconds=time.perf_counter() - t0,
    )
