"""Model-induced task distances computed on local computation structures.

All distance operations are pure functions of their profile arguments and
may be called concurrently without restriction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEmbedding, KindMismatch, TreeMismatch, UniverseMismatch
from .models import (
    DECISION_PATH,
    EMBEDDING,
    KERNEL_RELEVANCE,
    NEIGHBOR_WEIGHTS,
    PPR,
    SupportProfile,
)

_WEIGHT_KINDS = (NEIGHBOR_WEIGHTS, KERNEL_RELEVANCE, PPR)

COSINE = "cosine"
EUCLIDEAN = "euclidean"


@dataclass(frozen=True)
class DistanceConfig:
    """How to turn two task profiles into one distance.

    ``label_strict`` implements the hard rule: tasks with different labels
    are infinitely far apart.  ``augmented_labels`` instead adds +1 on a
    label mismatch to the euclidean embedding distance, the bounded
    alternative available for the regularized-ERM family.  ``lipschitz``
    optionally carries the constant used by synthetic bound checks.
    """

    kind: str
    label_strict: bool = True
    augmented_labels: bool = False
    ppr_alpha: float = 0.15
    ppr_tolerance: float = 1e-8
    ppr_max_iter: int = 10_000
    embedding_metric: str = COSINE
    lipschitz: float | None = None

    def __post_init__(self):
        if not (0.0 < self.ppr_alpha < 1.0):
            raise ValueError("ppr_alpha must lie strictly inside (0, 1)")
        if self.ppr_tolerance <= 0:
            raise ValueError("ppr_tolerance must be positive")
        if self.embedding_metric not in (COSINE, EUCLIDEAN):
            raise ValueError(f"unknown embedding metric {self.embedding_metric!r}")
        if self.augmented_labels and (self.kind != EMBEDDING or self.embedding_metric != EUCLIDEAN):
            raise ValueError("augmented_labels applies to euclidean embedding distances only")


def weighted_tanimoto(p: SupportProfile, q: SupportProfile) -> float:
    """1 - sum(min(w_p, w_q)) / sum(max(w_p, w_q)) over the shared universe.

    Reduces to the Jaccard distance on {0,1} weights.  Two all-empty
    profiles are at distance 0: both games depend on nothing.
    """
    if p.kind not in _WEIGHT_KINDS or q.kind not in _WEIGHT_KINDS:
        raise KindMismatch(f"tanimoto needs weight profiles, got {p.kind}/{q.kind}")
    if p.universe_tag != q.universe_tag:
        raise UniverseMismatch("profiles built over different universes")
    num = 0.0
    den = 0.0
    # fixed accumulation order keeps d(p, q) == d(q, p) bit-exact
    for z in sorted(p.weights.keys() | q.weights.keys()):
        a = p.weights.get(z, 0.0)
        b = q.weights.get(z, 0.0)
        num += a if a < b else b
        den += b if a < b else a
    if den == 0.0:
        return 0.0
    return 1.0 - num / den


def path_jaccard(p: SupportProfile, q: SupportProfile) -> float:
    """1 - |path intersection| / |path union|; identical paths give 0."""
    if p.kind != DECISION_PATH or q.kind != DECISION_PATH:
        raise KindMismatch(f"path distance needs decision paths, got {p.kind}/{q.kind}")
    if p.tree_epoch != q.tree_epoch:
        raise TreeMismatch("paths come from different fitted trees")
    a, b = set(p.path), set(q.path)
    union = a | b
    if not union:
        return 0.0
    return 1.0 - len(a & b) / len(union)


def cosine_distance(p: SupportProfile, q: SupportProfile) -> float:
    """Angular alignment rescaled to [0, 1]: 0 parallel, 1 antiparallel."""
    if p.kind != EMBEDDING or q.kind != EMBEDDING:
        raise KindMismatch(f"cosine distance needs embeddings, got {p.kind}/{q.kind}")
    na = float(np.linalg.norm(p.vector))
    nb = float(np.linalg.norm(q.vector))
    if na == 0.0 or nb == 0.0:
        raise DegenerateEmbedding("zero embedding vector")
    cos = float(np.clip(p.vector @ q.vector / (na * nb), -1.0, 1.0))
    return 0.5 * (1.0 - cos)


def euclidean_distance(p: SupportProfile, q: SupportProfile) -> float:
    if p.kind != EMBEDDING or q.kind != EMBEDDING:
        raise KindMismatch(f"euclidean distance needs embeddings, got {p.kind}/{q.kind}")
    return float(np.linalg.norm(p.vector - q.vector))


def ppr_profile(
    adjacency: np.ndarray,
    node: int,
    alpha: float = 0.15,
    tolerance: float = 1e-8,
    max_iter: int = 10_000,
    node_ids=None,
    labels=None,
) -> SupportProfile:
    """Personalized PageRank mass around one node by power iteration.

    Solves pi = alpha * e_node + (1 - alpha) * A_norm @ pi on the
    column-normalized adjacency; mass leaving dangling (degree-zero)
    columns teleports back to the seed, so an isolated node yields the
    indicator vector exactly and the mass always sums to one.
    """
    A = np.asarray(adjacency, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("adjacency must be square")
    ids = list(node_ids) if node_ids is not None else list(range(n))
    seat = ids.index(node)

    deg = A.sum(axis=0)
    dangling = deg == 0
    norm = np.where(dangling, 1.0, deg)
    An = A / norm

    e = np.zeros(n)
    e[seat] = 1.0
    pi = e.copy()
    for _ in range(max_iter):
        spread = An @ pi
        spread[seat] += pi[dangling].sum()  # dangling mass restarts at the seed
        nxt = alpha * e + (1.0 - alpha) * spread
        if np.abs(nxt - pi).sum() < tolerance:
            pi = nxt
            break
        pi = nxt

    label = labels.get(node) if labels is not None else None
    weights = {ids[i]: float(pi[i]) for i in range(n)}
    return SupportProfile(PPR, node, label, weights=weights, universe_tag=frozenset(ids))


def d_gamma(p: SupportProfile, q: SupportProfile, config: DistanceConfig) -> float:
    """Dispatch to the kind-specific distance with the label rule applied."""
    if p.kind != q.kind or p.kind != config.kind:
        raise KindMismatch(f"profile kinds {p.kind}/{q.kind} do not match config {config.kind}")
    if config.augmented_labels:
        base = euclidean_distance(p, q)
        return base + (1.0 if p.label != q.label else 0.0)
    if config.label_strict and p.label != q.label:
        return math.inf
    if config.kind in _WEIGHT_KINDS:
        return weighted_tanimoto(p, q)
    if config.kind == DECISION_PATH:
        return path_jaccard(p, q)
    if config.kind == EMBEDDING:
        if config.embedding_metric == EUCLIDEAN:
            return euclidean_distance(p, q)
        return cosine_distance(p, q)
    raise KindMismatch(f"no distance for kind {config.kind}")


def profile_distance_fn(profiles: dict, config: DistanceConfig):
    """Memoized pairwise distance over a fixed profile table."""
    memo: dict[tuple, float] = {}

    def dist(a, b) -> float:
        if a == b:
            return 0.0
        key = (a, b) if a <= b else (b, a)
        if key not in memo:
            memo[key] = d_gamma(profiles[key[0]], profiles[key[1]], config)
        return memo[key]

    return dist
