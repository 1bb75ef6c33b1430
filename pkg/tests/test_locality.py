import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapmat.errors import (
    DegenerateEmbedding,
    KindMismatch,
    TreeMismatch,
    UniverseMismatch,
)
from shapmat.locality import (
    EUCLIDEAN,
    DistanceConfig,
    cosine_distance,
    d_gamma,
    path_jaccard,
    ppr_profile,
    weighted_tanimoto,
)
from shapmat.models import (
    DECISION_PATH,
    EMBEDDING,
    NEIGHBOR_WEIGHTS,
    SupportProfile,
)

UNIVERSE = frozenset(range(10))


def wprof(weights, label=0, kind=NEIGHBOR_WEIGHTS, tag=UNIVERSE, task=0):
    return SupportProfile(kind, task, label, weights=weights, universe_tag=tag)


def pprof(path, label=0, epoch=1, task=0):
    return SupportProfile(DECISION_PATH, task, label, path=tuple(path), tree_epoch=epoch)


def eprof(vec, label=0, task=0):
    return SupportProfile(EMBEDDING, task, label, vector=np.asarray(vec, dtype=float))


# -- weighted tanimoto ---------------------------------------------------------


def test_tanimoto_identical_profiles_zero():
    p = wprof({1: 0.5, 2: 1.5})
    assert weighted_tanimoto(p, wprof({1: 0.5, 2: 1.5})) == 0.0


def test_tanimoto_disjoint_supports_one():
    assert weighted_tanimoto(wprof({1: 0.7}), wprof({2: 0.3})) == 1.0


def test_tanimoto_worked_example():
    # hand enumeration: sum(min) = 1, sum(max) = 3 over {a, b, c}
    p = wprof({1: 1.0, 2: 1.0})
    q = wprof({2: 1.0, 3: 1.0})
    assert weighted_tanimoto(p, q) == pytest.approx(1.0 - 1.0 / 3.0, abs=1e-15)


def test_tanimoto_both_empty_zero():
    assert weighted_tanimoto(wprof({}), wprof({})) == 0.0


def test_tanimoto_universe_mismatch():
    with pytest.raises(UniverseMismatch):
        weighted_tanimoto(wprof({1: 1.0}), wprof({1: 1.0}, tag=frozenset(range(3))))


def test_tanimoto_reduces_to_jaccard_on_binary_weights():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a = {int(z): 1.0 for z in rng.choice(10, size=rng.integers(0, 10), replace=False)}
        b = {int(z): 1.0 for z in rng.choice(10, size=rng.integers(0, 10), replace=False)}
        d = weighted_tanimoto(wprof(a), wprof(b))
        union = set(a) | set(b)
        jaccard = 0.0 if not union else 1.0 - len(set(a) & set(b)) / len(union)
        assert d == jaccard


@settings(max_examples=300, deadline=None)
@given(
    st.dictionaries(st.integers(0, 9), st.floats(0.0, 100.0, allow_nan=False), max_size=10),
    st.dictionaries(st.integers(0, 9), st.floats(0.0, 100.0, allow_nan=False), max_size=10),
)
def test_tanimoto_symmetric_and_in_range(wa, wb):
    p, q = wprof(wa), wprof(wb)
    d1, d2 = weighted_tanimoto(p, q), weighted_tanimoto(q, p)
    assert d1 == d2
    assert 0.0 <= d1 <= 1.0


# -- path jaccard ----------------------------------------------------------------


def test_path_same_leaf_zero():
    assert path_jaccard(pprof([1, 2, 3]), pprof([1, 2, 3])) == 0.0


def test_path_worked_example():
    assert path_jaccard(pprof([1, 2, 3]), pprof([1, 2, 5])) == pytest.approx(0.5)


def test_path_shared_root_only():
    assert path_jaccard(pprof([1]), pprof([1])) == 0.0
    assert path_jaccard(pprof([]), pprof([])) == 0.0


def test_path_tree_mismatch():
    with pytest.raises(TreeMismatch):
        path_jaccard(pprof([1], epoch=1), pprof([1], epoch=2))


def test_path_symmetry_random():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        a = pprof(rng.choice(20, size=rng.integers(0, 8), replace=False))
        b = pprof(rng.choice(20, size=rng.integers(0, 8), replace=False))
        d = path_jaccard(a, b)
        assert d == path_jaccard(b, a)
        assert 0.0 <= d <= 1.0


# -- cosine -----------------------------------------------------------------------


def test_cosine_self_zero():
    v = eprof([1.0, 2.0, -3.0])
    assert cosine_distance(v, v) == 0.0


def test_cosine_orthogonal_half():
    assert cosine_distance(eprof([1, 0]), eprof([0, 1])) == pytest.approx(0.5)


def test_cosine_antiparallel_one():
    assert cosine_distance(eprof([1, 0]), eprof([-1, 0])) == pytest.approx(1.0)


def test_cosine_zero_vector_rejected():
    with pytest.raises(DegenerateEmbedding):
        cosine_distance(eprof([0.0, 0.0]), eprof([1.0, 0.0]))


def test_cosine_symmetry_random():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        a, b = eprof(rng.normal(size=4)), eprof(rng.normal(size=4))
        d = cosine_distance(a, b)
        assert d == cosine_distance(b, a)
        assert 0.0 <= d <= 1.0


def test_tanimoto_symmetry_random_pairs():
    rng = np.random.default_rng(14)
    for _ in range(1000):
        a = {int(z): float(rng.uniform(0, 5)) for z in rng.choice(10, size=rng.integers(0, 10), replace=False)}
        b = {int(z): float(rng.uniform(0, 5)) for z in rng.choice(10, size=rng.integers(0, 10), replace=False)}
        d = weighted_tanimoto(wprof(a), wprof(b))
        assert d == weighted_tanimoto(wprof(b), wprof(a))
        assert 0.0 <= d <= 1.0


# -- personalized pagerank ---------------------------------------------------------


def test_ppr_isolated_node_is_indicator():
    A = np.zeros((3, 3))
    A[1, 2] = A[2, 1] = 1.0
    prof = ppr_profile(A, node=0, alpha=0.5)
    assert prof.weights[0] == pytest.approx(1.0, abs=1e-9)
    assert prof.weights[1] == pytest.approx(0.0, abs=1e-9)


def test_ppr_complete_graph_symmetry():
    n = 5
    A = np.ones((n, n)) - np.eye(n)
    prof = ppr_profile(A, node=2, alpha=0.2)
    off = [prof.weights[z] for z in range(n) if z != 2]
    assert prof.weights[2] > max(off)
    assert max(off) - min(off) < 1e-10


def test_ppr_path_graph_matches_linear_system_oracle():
    # oracle: solve (I - (1-a) A_norm) pi = a e_t exactly
    A = np.zeros((3, 3))
    A[0, 1] = A[1, 0] = 1.0
    A[1, 2] = A[2, 1] = 1.0
    alpha = 0.5
    An = A / A.sum(axis=0)
    e = np.array([1.0, 0.0, 0.0])
    oracle = np.linalg.solve(np.eye(3) - (1 - alpha) * An, alpha * e)
    prof = ppr_profile(A, node=0, alpha=alpha, tolerance=1e-12)
    for z in range(3):
        assert prof.weights[z] == pytest.approx(oracle[z], abs=1e-6)


def test_ppr_mass_normalized():
    rng = np.random.default_rng(17)
    for trial in range(10):
        n = int(rng.integers(2, 12))
        A = (rng.random((n, n)) < 0.4).astype(float)
        A = np.triu(A, 1)
        A = A + A.T
        prof = ppr_profile(A, node=0, alpha=0.15)
        assert abs(sum(prof.weights.values()) - 1.0) < 1e-6


def test_ppr_distance_uses_tanimoto():
    A = np.zeros((4, 4))
    for i, j in [(0, 1), (1, 2), (2, 3)]:
        A[i, j] = A[j, i] = 1.0
    p0 = ppr_profile(A, 0, labels={0: 0, 1: 0})
    p1 = ppr_profile(A, 1, labels={0: 0, 1: 0})
    cfg = DistanceConfig(kind="PPR", label_strict=False)
    d = d_gamma(p0, p1, cfg)
    assert 0.0 < d < 1.0
    assert d == d_gamma(p1, p0, cfg)


# -- dispatch ------------------------------------------------------------------------


def test_d_gamma_same_task_zero_per_kind():
    cfgw = DistanceConfig(kind=NEIGHBOR_WEIGHTS)
    p = wprof({1: 0.4}, label=1)
    assert d_gamma(p, p, cfgw) == 0.0
    cfge = DistanceConfig(kind=EMBEDDING)
    v = eprof([0.3, 0.4], label=1)
    assert d_gamma(v, v, cfge) == 0.0


def test_d_gamma_label_strict_infinite():
    cfg = DistanceConfig(kind=NEIGHBOR_WEIGHTS, label_strict=True)
    assert d_gamma(wprof({1: 1.0}, label=0), wprof({1: 1.0}, label=1), cfg) == math.inf


def test_d_gamma_label_bypass_returns_base():
    cfg = DistanceConfig(kind=NEIGHBOR_WEIGHTS, label_strict=False)
    assert d_gamma(wprof({1: 1.0}, label=0), wprof({1: 1.0}, label=1), cfg) == 0.0


def test_d_gamma_augmented_label_penalty():
    cfg = DistanceConfig(kind=EMBEDDING, embedding_metric=EUCLIDEAN, augmented_labels=True)
    a, b = eprof([0.0, 0.0], label=0), eprof([3.0, 4.0], label=1)
    assert d_gamma(a, b, cfg) == pytest.approx(6.0)
    same = eprof([3.0, 4.0], label=0)
    assert d_gamma(a, same, cfg) == pytest.approx(5.0)


def test_d_gamma_kind_mismatch():
    cfg = DistanceConfig(kind=NEIGHBOR_WEIGHTS)
    with pytest.raises(KindMismatch):
        d_gamma(wprof({1: 1.0}), eprof([1.0]), cfg)
    with pytest.raises(KindMismatch):
        d_gamma(eprof([1.0]), eprof([1.0]), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        DistanceConfig(kind=NEIGHBOR_WEIGHTS, ppr_alpha=1.0)
    with pytest.raises(ValueError):
        DistanceConfig(kind=NEIGHBOR_WEIGHTS, augmented_labels=True)
    with pytest.raises(ValueError):
        DistanceConfig(kind=EMBEDDING, embedding_metric="cityblock")
