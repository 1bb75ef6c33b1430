"""Utility model families: train-on-coalition, evaluate-on-task, with locality.

A :class:`Game` wraps one model family and a mutable training pool.  It
exposes the task-conditioned utility v(S, t) = g(model(S), t), the local
support set of each task, and the task's computation-structure profile used
by the distance module.

Trained models are cached under the canonical coalition serialization, so a
coalition is trained at most once per pool state and its utility is reused
across every task that evaluates it.  Cache reads and inserts are atomic
dict operations, so concurrent utility evaluations are safe; results never
depend on completion order because training is deterministic.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from sklearn.tree import DecisionTreeClassifier

from .core import Coalition, PlayerId, SupportSet, TaskId
from .errors import AlreadyExists, NotFitted, NotFound

# Profile kinds.
NEIGHBOR_WEIGHTS = "NEIGHBOR_WEIGHTS"
DECISION_PATH = "DECISION_PATH"
KERNEL_RELEVANCE = "KERNEL_RELEVANCE"
EMBEDDING = "EMBEDDING"
PPR = "PPR"

# Utility definitions.
ACCURACY = "accuracy"
CONFIDENCE = "confidence"
NEG_LOSS = "neg_loss"

_DIST_GUARD = 1e-12


@dataclass
class DataPoint:
    """One training contributor or evaluation point."""

    id: PlayerId
    features: np.ndarray
    label: int
    embedding: np.ndarray | None = None
    adjacency: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.embedding is not None:
            self.embedding = np.asarray(self.embedding, dtype=float)

    def repr_vector(self) -> np.ndarray:
        """Representation used by embedding-based families and distances."""
        return self.embedding if self.embedding is not None else self.features


@dataclass(frozen=True)
class Task:
    id: TaskId
    point: DataPoint
    exclude_player: PlayerId | None = None


@dataclass(frozen=True)
class WKNN:
    """Weighted K-nearest-neighbor voter with inverse-distance weights."""

    k: int = 5
    support_multiplier: float = 2.0
    support_size: int | None = None  # explicit override used by sweeps

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.support_multiplier < 1.0:
            raise ValueError("support_multiplier must be >= 1")
        if self.support_size is not None and self.support_size < 1:
            raise ValueError("support_size must be >= 1")

    @property
    def profile_kind(self):
        return NEIGHBOR_WEIGHTS

    def resolved_support_size(self) -> int:
        if self.support_size is not None:
            return self.support_size
        return int(round(self.support_multiplier * self.k))


@dataclass(frozen=True)
class DecisionTree:
    """Depth-limited CART classifier; depth 0 degenerates to a single leaf."""

    max_depth: int = 3
    min_leaf: int = 1

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")

    @property
    def profile_kind(self):
        return DECISION_PATH


@dataclass(frozen=True)
class RBFScorer:
    """Kernel relevance scorer: class score = sum of RBF kernels to members.

    gamma=None selects the median heuristic bandwidth from the initial pool.
    """

    gamma: float | None = None
    relevance_threshold: float = 0.5

    def __post_init__(self):
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if not (0.0 < self.relevance_threshold <= 1.0):
            raise ValueError("relevance_threshold must be in (0, 1]")

    @property
    def profile_kind(self):
        return KERNEL_RELEVANCE


@dataclass(frozen=True)
class RidgeERM:
    """L2-regularized linear scorer with a Lipschitz, bounded-at-zero loss.

    The loss is ``loss_lipschitz * log(1 + exp(-y a))`` on labels mapped to
    {-1, +1}, so the declared Lipschitz constant is exact and the loss at a
    zero score is ``loss_lipschitz * ln 2``.  Any trained parameter vector
    then satisfies ||theta|| <= sqrt(2 * loss_at_zero_bound / mu), which is
    the norm bound the task-distance error analysis relies on.
    """

    mu: float = 1.0
    loss_lipschitz: float = 1.0
    loss_at_zero_bound: float | None = None
    support_k: int = 10

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be > 0")
        if self.loss_lipschitz <= 0:
            raise ValueError("loss_lipschitz must be > 0")
        floor = self.loss_lipschitz * math.log(2.0)
        if self.loss_at_zero_bound is None:
            object.__setattr__(self, "loss_at_zero_bound", floor)
        elif self.loss_at_zero_bound < floor - 1e-12:
            raise ValueError("loss_at_zero_bound is below the actual loss at zero")
        if self.support_k < 1:
            raise ValueError("support_k must be >= 1")

    @property
    def profile_kind(self):
        return EMBEDDING

    @property
    def norm_bound(self) -> float:
        return math.sqrt(2.0 * self.loss_at_zero_bound / self.mu)

    @property
    def lipschitz_constant(self) -> float:
        """Utility Lipschitz constant w.r.t. the representation distance."""
        return self.loss_lipschitz * self.norm_bound


@dataclass
class SupportProfile:
    """Local computation structure of one task."""

    kind: str
    task: TaskId
    label: int | None
    weights: dict[PlayerId, float] | None = None
    path: tuple[int, ...] | None = None
    vector: np.ndarray | None = None
    universe_tag: frozenset | None = None
    tree_epoch: int | None = None

    def __post_init__(self):
        if self.weights is not None and any(w < 0 for w in self.weights.values()):
            raise ValueError("profile weights must be nonnegative")


class _ConstantModel:
    """Majority-class fallback for empty or depth-zero coalitions."""

    def __init__(self, label: int):
        self.label = label


class Game:
    """Task-conditioned utility oracle over a mutable training pool."""

    def __init__(
        self,
        family,
        points: Iterable[DataPoint] = (),
        utility: str | None = None,
        default_class: int | None = None,
        labels: Iterable[int] | None = None,
        cache: bool = True,
    ):
        self.family = family
        self._pool: dict[PlayerId, DataPoint] = {}
        self._tasks: dict[TaskId, Task] = {}
        self._cache: dict[tuple, object] = {}
        self._cache_enabled = cache
        self.train_counter = 0
        self.eval_counter = 0
        self._epoch = 0
        self._dists: dict[TaskId, dict[PlayerId, float]] = {}
        self._profiles: dict[tuple[TaskId, int], SupportProfile] = {}
        self._support_tree = None  # (model, ids, leaves, epoch)

        for p in points:
            if p.id in self._pool:
                raise AlreadyExists(f"player {p.id} already in pool")
            self._pool[p.id] = p

        inferred = sorted({p.label for p in self._pool.values()})
        self.labels = sorted(set(labels)) if labels is not None else inferred
        if default_class is None:
            default_class = self.labels[0] if self.labels else 0
        self.default_class = default_class

        if utility is None:
            utility = NEG_LOSS if isinstance(family, RidgeERM) else ACCURACY
        if utility not in (ACCURACY, CONFIDENCE, NEG_LOSS):
            raise ValueError(f"unknown utility definition {utility!r}")
        if utility == NEG_LOSS and not isinstance(family, RidgeERM):
            raise ValueError("neg_loss utility is defined for RidgeERM only")
        self.utility_kind = utility

        if isinstance(family, RBFScorer):
            self._gamma = family.gamma if family.gamma is not None else self._median_gamma()

    # -- pool and task registry ------------------------------------------

    def pool_ids(self) -> tuple[PlayerId, ...]:
        return tuple(self._pool)

    def point(self, z: PlayerId) -> DataPoint:
        try:
            return self._pool[z]
        except KeyError:
            raise NotFound(f"unknown player {z}") from None

    def has_player(self, z: PlayerId) -> bool:
        return z in self._pool

    def add_player(self, p: DataPoint) -> None:
        if p.id in self._pool:
            raise AlreadyExists(f"player {p.id} already in pool")
        self._pool[p.id] = p
        if p.label not in self.labels:
            self.labels = sorted(set(self.labels) | {p.label})
        self._epoch += 1
        self._profiles.clear()

    def remove_player(self, z: PlayerId) -> DataPoint:
        if z not in self._pool:
            raise NotFound(f"unknown player {z}")
        p = self._pool.pop(z)
        self._epoch += 1
        self._profiles.clear()
        return p

    def add_task(self, point: DataPoint, exclude_player: PlayerId | None = None) -> TaskId:
        tid = point.id
        if tid in self._tasks:
            raise AlreadyExists(f"task {tid} already registered")
        self._tasks[tid] = Task(tid, point, exclude_player)
        if point.label not in self.labels:
            self.labels = sorted(set(self.labels) | {point.label})
        return tid

    def remove_task(self, tid: TaskId) -> None:
        if tid not in self._tasks:
            raise NotFound(f"unknown task {tid}")
        del self._tasks[tid]

    def task(self, tid: TaskId) -> Task:
        try:
            return self._tasks[tid]
        except KeyError:
            raise NotFound(f"unknown task {tid}") from None

    def has_task(self, tid: TaskId) -> bool:
        return tid in self._tasks

    # -- training ----------------------------------------------------------

    @contextmanager
    def caching_disabled(self):
        old = self._cache_enabled
        self._cache_enabled = False
        try:
            yield self
        finally:
            self._cache_enabled = old

    def clear_cache(self):
        self._cache.clear()

    def train(self, coalition) -> object:
        """Train (or fetch) the model for a coalition; deterministic."""
        key = tuple(Coalition(coalition))
        for z in key:
            if z not in self._pool:
                raise NotFound(f"coalition member {z} not in pool")
        if self._cache_enabled and key in self._cache:
            return self._cache[key]
        handle = self._fit(key)
        self.train_counter += 1
        if self._cache_enabled:
            self._cache[key] = handle
        return handle

    def _fit(self, key: tuple[PlayerId, ...]):
        fam = self.family
        if isinstance(fam, (WKNN, RBFScorer)):
            return key  # lazy learners: the coalition is the model
        if isinstance(fam, DecisionTree):
            return self._fit_tree(key)
        if isinstance(fam, RidgeERM):
            return self._fit_erm(key)
        raise TypeError(f"unknown family {fam!r}")

    def _fit_tree(self, key):
        if not key:
            return _ConstantModel(self.default_class)
        ys = [self._pool[z].label for z in key]
        if self.family.max_depth == 0 or len(set(ys)) == 1:
            return _ConstantModel(_majority(ys))
        xs = np.array([self._pool[z].features for z in key])
        clf = DecisionTreeClassifier(
            max_depth=self.family.max_depth,
            min_samples_leaf=self.family.min_leaf,
            random_state=0,
        )
        clf.fit(xs, ys)
        return clf

    def _fit_erm(self, key):
        dim = self._repr_dim()
        if not key:
            return np.zeros(dim)
        ymap = self._binary_map()
        X = np.array([self._pool[z].repr_vector() for z in key])
        y = np.array([ymap[self._pool[z].label] for z in key], dtype=float)
        mu, scale = self.family.mu, self.family.loss_lipschitz
        n = len(key)

        def objective(theta):
            a = X @ theta
            margins = -y * a
            loss = scale * np.mean(np.logaddexp(0.0, margins))
            grad = scale * (X.T @ (-y * expit(margins))) / n
            return loss + 0.5 * mu * theta @ theta, grad + mu * theta

        res = minimize(
            objective,
            np.zeros(dim),
            jac=True,
            method="L-BFGS-B",
            options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 500},
        )
        return res.x

    def _repr_dim(self) -> int:
        for p in self._pool.values():
            return len(p.repr_vector())
        for t in self._tasks.values():
            return len(t.point.repr_vector())
        return 1

    def _binary_map(self) -> dict[int, float]:
        if len(self.labels) != 2:
            raise ValueError("RidgeERM requires exactly two declared labels")
        lo, hi = self.labels
        return {lo: -1.0, hi: +1.0}

    def _median_gamma(self) -> float:
        pts = [p.features for p in self._pool.values()]
        if len(pts) < 2:
            return 1.0
        X = np.array(pts)
        sq = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
        med = float(np.median(sq[np.triu_indices(len(pts), k=1)]))
        return 1.0 / med if med > 0 else 1.0

    @property
    def gamma(self) -> float:
        if not isinstance(self.family, RBFScorer):
            raise AttributeError("gamma is defined for RBFScorer only")
        return self._gamma

    # -- utility -----------------------------------------------------------

    def utility(self, coalition, tid: TaskId) -> float:
        task = self.task(tid)
        S = Coalition(coalition)
        if task.exclude_player is not None and task.exclude_player in S:
            raise ValueError(f"coalition contains the excluded proxy player {task.exclude_player}")
        handle = self.train(S)
        self.eval_counter += 1
        return self._evaluate(handle, S, task)

    def _evaluate(self, handle, S, task: Task) -> float:
        fam = self.family
        if isinstance(fam, WKNN):
            scores = self._wknn_scores(S, task)
            return self._classify_utility(scores, task)
        if isinstance(fam, RBFScorer):
            scores = self._rbf_scores(S, task)
            return self._classify_utility(scores, task)
        if isinstance(fam, DecisionTree):
            return self._tree_utility(handle, task)
        if isinstance(fam, RidgeERM):
            return self._erm_utility(handle, task)
        raise TypeError(f"unknown family {fam!r}")

    def _task_dists(self, task: Task) -> dict[PlayerId, float]:
        cache = self._dists.setdefault(task.id, {})
        x = task.point.features
        for z, p in self._pool.items():
            if z not in cache:
                cache[z] = float(np.linalg.norm(x - p.features))
        return cache

    def _wknn_scores(self, S, task: Task):
        if not S:
            return None
        d = self._task_dists(task)
        nearest = sorted(S, key=lambda z: (d[z], z))[: self.family.k]
        scores: dict[int, float] = {}
        for z in nearest:
            w = 1.0 / (d[z] + _DIST_GUARD)
            lbl = self._pool[z].label
            scores[lbl] = scores.get(lbl, 0.0) + w
        return scores

    def _rbf_scores(self, S, task: Task):
        if not S:
            return None
        d = self._task_dists(task)
        scores: dict[int, float] = {}
        for z in S:
            k = math.exp(-self._gamma * d[z] ** 2)
            lbl = self._pool[z].label
            scores[lbl] = scores.get(lbl, 0.0) + k
        return scores

    def _classify_utility(self, scores, task: Task) -> float:
        if scores is None:  # reference model: uniform prior
            if self.utility_kind == CONFIDENCE:
                return 1.0 / max(len(self.labels), 1)
            pred = self.default_class
        else:
            pred = min(scores, key=lambda c: (-scores[c], c))
        if self.utility_kind == CONFIDENCE:
            total = sum(scores.values())
            return scores.get(task.point.label, 0.0) / total if total > 0 else 0.0
        return 1.0 if pred == task.point.label else 0.0

    def _tree_utility(self, handle, task: Task) -> float:
        x = task.point.features.reshape(1, -1)
        if isinstance(handle, _ConstantModel):
            pred = handle.label
            conf = 1.0 if pred == task.point.label else 0.0
        else:
            pred = int(handle.predict(x)[0])
            if self.utility_kind == CONFIDENCE:
                proba = handle.predict_proba(x)[0]
                classes = list(handle.classes_)
                conf = (
                    float(proba[classes.index(task.point.label)])
                    if task.point.label in classes
                    else 0.0
                )
        if self.utility_kind == CONFIDENCE:
            return conf
        return 1.0 if pred == task.point.label else 0.0

    def _erm_utility(self, theta, task: Task) -> float:
        ymap = self._binary_map()
        a = float(theta @ task.point.repr_vector())
        y = ymap[task.point.label]
        if self.utility_kind == NEG_LOSS:
            return -self.family.loss_lipschitz * float(np.logaddexp(0.0, -y * a))
        if self.utility_kind == CONFIDENCE:
            return float(expit(y * a))
        lo, hi = self.labels
        pred = hi if a > 0 else lo
        return 1.0 if pred == task.point.label else 0.0

    # -- supports and profiles ---------------------------------------------

    def _universe(self, task: Task, over=None) -> list[PlayerId]:
        ids = list(over) if over is not None else list(self._pool)
        if task.exclude_player is not None:
            ids = [z for z in ids if z != task.exclude_player]
        return ids

    def support(self, tid: TaskId, over=None, k_max: int | None = None) -> SupportSet:
        """The players that determine this task's utility, per family rule.

        ``k_max`` caps the support size (largest-relevance members kept,
        ties broken by ascending id); None keeps the family-natural size.
        """
        task = self.task(tid)
        ids = self._universe(task, over)
        fam = self.family
        if not ids:
            return SupportSet(tid, Coalition(), self._epoch)
        if isinstance(fam, WKNN):
            d = self._task_dists(task)
            size = min(fam.resolved_support_size(), len(ids))
            members = sorted(ids, key=lambda z: (d[z], z))[:size]
        elif isinstance(fam, RBFScorer):
            d = self._task_dists(task)
            kern = {z: math.exp(-self._gamma * d[z] ** 2) for z in ids}
            members = [z for z in ids if kern[z] >= fam.relevance_threshold]
            members.sort(key=lambda z: (-kern[z], z))
        elif isinstance(fam, DecisionTree):
            leaves = self._pool_leaves()
            leaf_t = self._leaf_of(task.point)
            members = sorted(z for z in ids if leaves[z] == leaf_t)
        elif isinstance(fam, RidgeERM):
            psi_t = task.point.repr_vector()
            aff = {z: abs(float(self._pool[z].repr_vector() @ psi_t)) for z in ids}
            members = sorted(ids, key=lambda z: (-aff[z], z))[: fam.support_k]
        else:
            raise TypeError(f"unknown family {fam!r}")
        if k_max is not None and len(members) > k_max:
            # members are in the family's relevance order (id order for trees)
            members = members[:k_max]
        return SupportSet(tid, Coalition(members), self._epoch)

    def _support_tree_model(self):
        if self._support_tree is not None and self._support_tree[-1] == self._epoch:
            return self._support_tree
        if not self._pool:
            raise NotFitted("support tree requested over an empty pool")
        ids = tuple(self._pool)
        ys = [self._pool[z].label for z in ids]
        if self.family.max_depth == 0 or len(set(ys)) == 1 or len(ids) < 2:
            model = _ConstantModel(_majority(ys))
            leaves = {z: 0 for z in ids}
        else:
            xs = np.array([self._pool[z].features for z in ids])
            model = DecisionTreeClassifier(
                max_depth=self.family.max_depth,
                min_samples_leaf=self.family.min_leaf,
                random_state=0,
            )
            model.fit(xs, ys)
            assigned = model.apply(xs)
            leaves = {z: int(l) for z, l in zip(ids, assigned)}
        self._support_tree = (model, leaves, self._epoch)
        return self._support_tree

    def _pool_leaves(self) -> dict[PlayerId, int]:
        return self._support_tree_model()[1]

    def _leaf_of(self, point: DataPoint) -> int:
        model = self._support_tree_model()[0]
        if isinstance(model, _ConstantModel):
            return 0
        return int(model.apply(point.features.reshape(1, -1))[0])

    def _tree_path(self, point: DataPoint) -> tuple[int, ...]:
        model = self._support_tree_model()[0]
        if isinstance(model, _ConstantModel):
            return ()
        tree = model.tree_
        node, path = 0, []
        x = point.features
        while tree.children_left[node] != -1:
            path.append(node)
            if x[tree.feature[node]] <= tree.threshold[node]:
                node = tree.children_left[node]
            else:
                node = tree.children_right[node]
        return tuple(path)

    def profile(self, tid: TaskId, over=None) -> SupportProfile:
        """The task's local computation structure (see module distances)."""
        task = self.task(tid)
        key = (tid, self._epoch, tuple(over) if over is not None else None)
        if key in self._profiles:
            return self._profiles[key]
        ids = self._universe(task, over)
        # the weight universe is the pool itself; an excluded proxy player
        # simply carries zero weight, so proxy and external profiles compare
        tag = frozenset(over) if over is not None else frozenset(self._pool)
        fam = self.family
        if isinstance(fam, WKNN):
            members = self.support(tid, over=over).members
            d = self._task_dists(task)
            weights = {z: 1.0 / (d[z] + _DIST_GUARD) for z in members}
            prof = SupportProfile(NEIGHBOR_WEIGHTS, tid, task.point.label, weights=weights, universe_tag=tag)
        elif isinstance(fam, RBFScorer):
            d = self._task_dists(task)
            weights = {z: math.exp(-self._gamma * d[z] ** 2) for z in ids}
            prof = SupportProfile(KERNEL_RELEVANCE, tid, task.point.label, weights=weights, universe_tag=tag)
        elif isinstance(fam, DecisionTree):
            path = self._tree_path(task.point)
            prof = SupportProfile(
                DECISION_PATH, tid, task.point.label, path=path,
                universe_tag=tag, tree_epoch=self._support_tree[-1],
            )
        elif isinstance(fam, RidgeERM):
            prof = SupportProfile(
                EMBEDDING, tid, task.point.label,
                vector=np.array(task.point.repr_vector(), dtype=float), universe_tag=tag,
            )
        else:
            raise TypeError(f"unknown family {fam!r}")
        self._profiles[key] = prof
        return prof


def _majority(labels: Sequence[int]) -> int:
    counts: dict[int, int] = {}
    for l in labels:
        counts[l] = counts.get(l, 0) + 1
    return min(counts, key=lambda c: (-counts[c], c))


class LocalizedGame:
    """View of a game whose utility is fully determined by fixed supports.

    Evaluates the base utility on S intersected with the task's support, so
    out-of-support players are exact null players by construction.
    """

    def __init__(self, game: Game, supports: dict[TaskId, Iterable[PlayerId]]):
        self._game = game
        self._supports = {t: frozenset(s) for t, s in supports.items()}

    @property
    def train_counter(self):
        return self._game.train_counter

    def utility(self, coalition, tid: TaskId) -> float:
        sup = self._supports[tid]
        return self._game.utility(Coalition(z for z in coalition if z in sup), tid)


def register_proxy_tasks(game: Game, ids: Iterable[PlayerId] | None = None) -> list[TaskId]:
    """Register each pool player as its own leave-one-out proxy task."""
    out = []
    for z in ids if ids is not None else game.pool_ids():
        if not game.has_task(z):
            game.add_task(game.point(z), exclude_player=z)
        out.append(z)
    return out
