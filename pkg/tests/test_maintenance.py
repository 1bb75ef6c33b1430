from itertools import combinations
from math import comb

import numpy as np
import pytest

from shapmat.core import Coalition, ShapleyMatrix, ValueColumn, INTERPOLATED, REUSED
from shapmat.errors import AlreadyExists, NoCompatibleAnchor, NotFound
from shapmat.estimators import CallableGame, exact_local_shapley
from shapmat.locality import EUCLIDEAN, DistanceConfig
from shapmat.maintenance import (
    StreamEvent,
    anchor_expansion,
    delete_player,
    delete_task,
    joint_update,
    player_update,
    replace_player,
    task_update,
)
from shapmat.models import (
    EMBEDDING,
    KERNEL_RELEVANCE,
    NEIGHBOR_WEIGHTS,
    DataPoint,
    Game,
    RBFScorer,
    RidgeERM,
    WKNN,
    register_proxy_tasks,
)
from shapmat.selfval import AnchorSet, EXACT_SHARED, build_self_matrix

from test_models import make_points


WKNN_CFG = DistanceConfig(kind=NEIGHBOR_WEIGHTS)
RBF_CFG = DistanceConfig(kind=KERNEL_RELEVANCE)


def blobs_setup(seed=0, n=20, family=None, anchors_k=6, tau=1.0):
    rng = np.random.default_rng(seed)
    pts = make_points(rng, n, classes=2, spread=6.0)
    game = Game(family or WKNN(k=2), pts)
    anchor_ids = tuple(range(anchors_k))
    anchors = AnchorSet(anchor_ids, tau=tau)
    m, _ = build_self_matrix(game, anchors, mode=EXACT_SHARED, support_restricted=True)
    return rng, pts, game, anchors, m


# -- task interpolation --------------------------------------------------------


def test_identical_anchor_columns_interpolate_to_same_column():
    players = [0, 1, 2]
    m = ShapleyMatrix(players, [])
    col = {0: 0.5, 1: -0.2, 2: 0.1}
    m = m.append_column(10, ValueColumn(10, dict(col)), as_anchor=True, label=0)
    m = m.append_column(11, ValueColumn(11, dict(col)), as_anchor=True, label=0)
    game = Game(WKNN(k=1), [DataPoint(z, [float(z), 0.0], 0) for z in players])
    game.add_task(DataPoint(10, [0.0, 0.0], 0))
    game.add_task(DataPoint(11, [1.0, 0.0], 0))
    t = game.add_task(DataPoint(50, [0.5, 0.0], 0))
    anchors = AnchorSet((10, 11))
    out, used, weights = task_update(m, anchors, t, game, WKNN_CFG)
    for z, v in col.items():
        assert out.entries[z] == pytest.approx(v, abs=1e-12)
    assert abs(sum(weights.values()) - 1.0) < 1e-12


def test_equidistant_anchors_average_columns():
    players = [0, 1]
    m = ShapleyMatrix(players, [])
    m = m.append_column(10, ValueColumn(10, {0: 1.0, 1: 0.0}), as_anchor=True, label=0)
    m = m.append_column(11, ValueColumn(11, {0: 0.0, 1: 1.0}), as_anchor=True, label=0)
    game = Game(RidgeERM(), [DataPoint(0, [1.0, 0.0], 0), DataPoint(1, [0.0, 1.0], 1)])
    game.add_task(DataPoint(10, [1.0, 1.0], 0))
    game.add_task(DataPoint(11, [1.0, -1.0], 0))
    t = game.add_task(DataPoint(50, [1.0, 0.0], 0))
    cfg = DistanceConfig(kind=EMBEDDING, embedding_metric=EUCLIDEAN)
    out, used, weights = task_update(m, AnchorSet((10, 11)), t, game, cfg)
    assert out.entries[0] == pytest.approx(0.5)
    assert out.entries[1] == pytest.approx(0.5)
    assert weights[10] == pytest.approx(0.5)


def test_zero_distance_anchor_copies_column_as_reused():
    players = [0, 1]
    m = ShapleyMatrix(players, [])
    m = m.append_column(10, ValueColumn(10, {0: 0.7}), as_anchor=True, label=0)
    m = m.append_column(11, ValueColumn(11, {1: 0.4}), as_anchor=True, label=0)
    game = Game(RidgeERM(), [DataPoint(0, [1.0, 0.0], 0), DataPoint(1, [0.0, 1.0], 1)])
    game.add_task(DataPoint(10, [2.0, 3.0], 0))
    game.add_task(DataPoint(11, [5.0, 0.0], 0))
    t = game.add_task(DataPoint(50, [2.0, 3.0], 0))  # coincides with anchor 10
    cfg = DistanceConfig(kind=EMBEDDING, embedding_metric=EUCLIDEAN)
    out, used, weights = task_update(m, AnchorSet((10, 11)), t, game, cfg)
    assert out.provenance == REUSED
    assert used == [10]
    assert out.entries[0] == 0.7


def test_no_compatible_anchor_raises():
    _, pts, game, anchors, m = blobs_setup(seed=1)
    t = game.add_task(DataPoint(900, [0.0, 0.0], 99))  # unseen label
    with pytest.raises(NoCompatibleAnchor):
        task_update(m, anchors, t, game, WKNN_CFG)


def test_interpolation_bound_on_lipschitz_games():
    # anchors within eps of the new task bound the interpolation error by
    # 2 * L * eps, with L derived from the family's norm bound
    rng = np.random.default_rng(3)
    n = 8
    pts = []
    for i in range(n):
        label = i % 2
        pts.append(DataPoint(i, rng.normal(label * 2.0, 1.0, size=3), label))
    fam = RidgeERM(mu=4.0)
    game = Game(fam, pts)
    lipschitz = fam.lipschitz_constant
    cfg = DistanceConfig(kind=EMBEDDING, embedding_metric=EUCLIDEAN, lipschitz=lipschitz)

    all_players = Coalition(range(n))
    m = ShapleyMatrix(list(range(n)), [])
    anchor_ids = []
    tid = 100
    for j in range(6):
        label = j % 2
        p = DataPoint(tid, rng.normal(label * 2.0, 1.0, size=3), label)
        game.add_task(p)
        rep = exact_local_shapley(game, all_players, tid)
        m = m.append_column(tid, rep.column, as_anchor=True, label=label)
        anchor_ids.append(tid)
        tid += 1
    anchors = AnchorSet(tuple(anchor_ids))

    for trial in range(10):
        base = game.task(anchor_ids[trial % 6]).point
        x = base.features + rng.uniform(-0.03, 0.03, size=3)
        p = DataPoint(tid, x, base.label)
        game.add_task(p)
        est, used, _ = task_update(m, anchors, tid, game, cfg)
        prof_t = game.profile(tid)
        eps = max(
            float(np.linalg.norm(prof_t.vector - game.profile(a).vector)) for a in used
        )
        exact = exact_local_shapley(game, all_players, tid).column.entries
        gap = max(abs(est.entries[z] - exact[z]) for z in range(n))
        assert gap <= 2.0 * lipschitz * eps + 1e-9
        tid += 1


# -- player insertion ------------------------------------------------------------


def far_point(pid, label=0):
    return DataPoint(pid, [1e6, 1e6], label)


def test_far_player_affects_nothing():
    _, pts, game, anchors, m = blobs_setup(seed=4)
    m2, report = player_update(m, game, far_point(500))
    assert report.affected_tasks == []
    assert report.evaluations == 0
    assert report.bound == 0
    assert m2.players == m.players + [500]
    assert np.array_equal(m2.values[:-1], m.values, equal_nan=True)
    assert np.array_equal(m2.values[-1], np.zeros(len(m.tasks)))


def test_duplicate_player_rejected():
    _, pts, game, anchors, m = blobs_setup(seed=5)
    with pytest.raises(AlreadyExists):
        player_update(m, game, DataPoint(0, [0.0, 0.0], 0))


def test_frozen_entries_outside_affected_columns():
    rng, pts, game, anchors, m = blobs_setup(seed=6, n=24)
    for step in range(8):
        z = 1000 + step
        newcomer = DataPoint(z, rng.normal([0.0, 0.0], 2.0), int(rng.integers(0, 2)))
        before = m
        m, report = player_update(m, game, newcomer)
        affected = set(report.affected_tasks)
        for j, t in enumerate(before.tasks):
            if t in affected:
                continue
            old = before.values[:, j]
            new = m.values[: len(before.players), m.tasks.index(t)]
            assert np.array_equal(old, new, equal_nan=True)
        assert report.evaluations <= report.bound


def test_player_update_matches_from_scratch_reference():
    # after a burst of insertions each anchor column equals the exact local
    # game recomputed from scratch on the final pool
    rng, pts, game, anchors, m = blobs_setup(seed=7, n=10)
    for step in range(6):
        z = 100 + step
        m, _ = player_update(m, game, DataPoint(z, rng.normal([3.0, 0.0], 2.0), int(rng.integers(0, 2))))
    fresh_game = Game(WKNN(k=2), [game.point(z) for z in game.pool_ids()])
    register_proxy_tasks(fresh_game)
    for a in m.anchor_order:
        sup = fresh_game.support(a)
        rep = exact_local_shapley(fresh_game, sup, a)
        for z in m.players:
            if z == a:
                continue
            expect = rep.column.entries.get(z, 0.0)
            assert m.get_entry(z, a) == pytest.approx(expect, abs=1e-10)


def expansion_correction_oracle(utility, task, old_support, z_new):
    """Additive correction and new-player value from the coalition-difference
    formula, computed independently of the engine's enumeration."""
    old_support = tuple(sorted(old_support))
    K = len(old_support)
    new_value = 0.0
    for size in range(K + 1):
        for S in combinations(old_support, size):
            S = Coalition(S)
            new_value += (utility(S.add(z_new), task) - utility(S, task)) / comb(K, size)
    new_value /= K + 1

    deltas = {}
    for zj in old_support:
        rest = tuple(w for w in old_support if w != zj)
        total = 0.0
        for size in range(len(rest) + 1):
            for S in combinations(rest, size):
                S = Coalition(S)
                m_plain = utility(S.add(zj), task) - utility(S, task)
                with_new = S.add(z_new)
                m_shift = utility(with_new.add(zj), task) - utility(with_new, task)
                total += (m_shift - m_plain) / comb(K, size + 1)
        deltas[zj] = total / (K + 1)
    return new_value, deltas


def test_monotone_expansion_matches_additive_correction_oracle():
    # RBF threshold supports only grow when a nearby player arrives, so the
    # update must agree with old-value-plus-correction computed directly
    rng = np.random.default_rng(8)
    pts = [DataPoint(i, rng.normal([0.0, 0.0], 0.6), i % 2) for i in range(8)]
    game = Game(RBFScorer(gamma=0.05, relevance_threshold=0.5), pts)
    anchors = AnchorSet(tuple(range(4)))
    m, _ = build_self_matrix(game, anchors, mode=EXACT_SHARED, support_restricted=True)

    checked = 0
    step = 0
    while checked < 6:
        z = 200 + step
        step += 1
        newcomer = DataPoint(z, rng.normal([0.0, 0.0], 0.6), int(rng.integers(0, 2)))
        before_support = {a: game.support(a).members for a in m.anchor_order}
        before_cols = {a: m.column_dict(a) for a in m.anchor_order}
        m, report = player_update(m, game, newcomer)
        for a in report.affected_tasks:
            new_support = game.support(a).members
            if set(new_support) != set(before_support[a]) | {z}:
                continue  # not a monotone expansion
            new_val, deltas = expansion_correction_oracle(game.utility, a, before_support[a], z)
            assert m.get_entry(z, a) == pytest.approx(new_val, abs=1e-10)
            for zj in before_support[a]:
                expect = before_cols[a].get(zj, 0.0) + deltas[zj]
                assert m.get_entry(zj, a) == pytest.approx(expect, abs=1e-10)
                assert report.corrections[(zj, a)] == pytest.approx(deltas[zj], abs=1e-10)
            checked += 1


# -- deletion and replacement ------------------------------------------------------


def test_delete_task_single_column():
    _, pts, game, anchors, m = blobs_setup(seed=9)
    t = m.tasks[2]
    m2, anchors2 = delete_task(m, anchors, t, game)
    assert len(m2.tasks) == len(m.tasks) - 1
    assert t not in anchors2.tasks
    keep = [j for j, task in enumerate(m.tasks) if task != t]
    assert np.array_equal(m2.values, m.values[:, keep], equal_nan=True)


def test_delete_player_outside_supports_row_only():
    _, pts, game, anchors, m = blobs_setup(seed=10)
    m2, _ = player_update(m, game, far_point(700))
    m3, report = delete_player(m2, game, 700)
    assert report.affected_tasks == []
    assert report.evaluations == 0
    assert m3.equals(m)


def test_delete_then_identical_readd_restores_columns():
    rng, pts, game, anchors, m = blobs_setup(seed=11, n=12)
    saved = m
    victim = game.point(7)
    m2, _ = delete_player(m, game, 7)
    clone = DataPoint(800, victim.features.copy(), victim.label)
    m3, _ = player_update(m2, game, clone)
    for a in m.anchor_order:
        for z in saved.players:
            if z in (a, 7):
                continue
            old = saved.get_entry(z, a)
            new = m3.get_entry(z, a)
            assert new == pytest.approx(old, abs=1e-10)


def test_delete_missing_player():
    _, pts, game, anchors, m = blobs_setup(seed=12)
    with pytest.raises(NotFound):
        delete_player(m, game, 999)


def test_replace_with_identical_copy_is_inverse():
    rng, pts, game, anchors, m = blobs_setup(seed=13, n=12)
    victim = game.point(9)
    clone = DataPoint(900, victim.features.copy(), victim.label)
    m2, report = replace_player(m, game, 9, clone)
    for a in m.anchor_order:
        for z in m.players:
            if z in (a, 9):
                continue
            assert m2.get_entry(z, a) == pytest.approx(m.get_entry(z, a), abs=1e-10)


def test_replace_far_with_far_zero_evaluations():
    _, pts, game, anchors, m = blobs_setup(seed=14)
    m2, _ = player_update(m, game, far_point(600))
    m3, report = replace_player(m2, game, 600, far_point(601))
    assert report.affected_tasks == []
    assert report.evaluations == 0


def test_replace_affected_union_verified_independently():
    rng, pts, game, anchors, m = blobs_setup(seed=15, n=16)
    # independent support snapshots around a replacement of a near player
    sup_orig = {a: set(game.support(a).members) for a in m.anchor_order}
    victim = 3
    probe = Game(WKNN(k=2), [game.point(z) for z in game.pool_ids() if z != victim])
    register_proxy_tasks(probe)
    sup_minus = {a: set(probe.support(a).members) for a in m.anchor_order if a != victim}
    newcomer = DataPoint(950, rng.normal([0.0, 0.0], 1.0), 1)
    probe.add_player(newcomer)
    sup_plus = {a: set(probe.support(a).members) for a in m.anchor_order if a != victim}
    expected = [
        a
        for a in m.anchor_order
        if a != victim and (sup_minus[a] != sup_orig[a] or sup_plus[a] != sup_minus[a])
    ]
    expected_with_victim = sorted(
        set(expected) | {a for a in m.anchor_order if a == victim and False}
    )
    m2, report = replace_player(m, game, victim, DataPoint(950, newcomer.features.copy(), 1))
    got = sorted(a for a in report.affected_tasks)
    assert got == sorted(expected)


# -- joint updates ------------------------------------------------------------------


def test_joint_tasks_only_equals_sequential_interpolation():
    rng, pts, game, anchors, m = blobs_setup(seed=16, n=20)
    new_tasks = [
        DataPoint(300 + i, game.point(i).features + rng.normal(0, 0.05, 2), game.point(i).label)
        for i in range(3)
    ]
    game2 = Game(WKNN(k=2), [game.point(z) for z in game.pool_ids()])
    m_seq = m
    for tp in new_tasks:
        tid = game2.add_task(DataPoint(tp.id, tp.features.copy(), tp.label))
        register_proxy_tasks(game2)
        col, _, _ = task_update(m_seq, anchors, tid, game2, WKNN_CFG)
        m_seq = m_seq.append_column(tid, col, as_anchor=False, label=tp.label)
    m_joint, anchors2, report = joint_update(m, anchors, game, new_tasks, [], WKNN_CFG)
    assert anchors2.tasks == anchors.tasks
    assert m_joint.equals(m_seq, atol=1e-12)
    assert all(d == "interpolated" for d in report.task_dispositions.values())


def test_joint_players_only_equals_sequential_player_updates():
    rng, pts, game, anchors, m = blobs_setup(seed=17, n=16)
    newcomers = [
        DataPoint(400 + i, rng.normal([0.0, 0.0], 2.0), int(rng.integers(0, 2))) for i in range(3)
    ]
    game2 = Game(WKNN(k=2), [game.point(z) for z in game.pool_ids()])
    register_proxy_tasks(game2)
    m_seq = m
    for p in newcomers:
        m_seq, _ = player_update(m_seq, game2, DataPoint(p.id, p.features.copy(), p.label))
    m_joint, _, _ = joint_update(m, anchors, game, [], newcomers, WKNN_CFG)
    assert m_joint.equals(m_seq, atol=1e-12)


def test_joint_mixed_equals_player_then_task():
    rng, pts, game, anchors, m = blobs_setup(seed=18, n=20)
    newcomers = [DataPoint(450, rng.normal([0.0, 0.0], 1.5), 0)]
    # tasks sit on existing points, far from the newcomers' influence
    new_tasks = [
        DataPoint(460 + i, game.point(10 + i).features + rng.normal(0, 0.02, 2), game.point(10 + i).label)
        for i in range(2)
    ]
    game2 = Game(WKNN(k=2), [game.point(z) for z in game.pool_ids()])
    register_proxy_tasks(game2)
    m_seq = m
    for p in newcomers:
        m_seq, _ = player_update(m_seq, game2, DataPoint(p.id, p.features.copy(), p.label))
    for tp in new_tasks:
        tid = game2.add_task(DataPoint(tp.id, tp.features.copy(), tp.label))
        col, _, _ = task_update(m_seq, anchors, tid, game2, WKNN_CFG)
        m_seq = m_seq.append_column(tid, col, as_anchor=False, label=tp.label)
    m_joint, _, _ = joint_update(m, anchors, game, new_tasks, newcomers, WKNN_CFG, kappa=3)
    assert m_joint.equals(m_seq, atol=1e-10)


def test_joint_kappa_forces_exact_column():
    rng, pts, game, anchors, m = blobs_setup(seed=19, n=16)
    # a cluster of newcomers that dominates the new task's support
    newcomers = [DataPoint(470 + i, np.array([50.0, 50.0]) + rng.normal(0, 0.1, 2), 0) for i in range(5)]
    new_tasks = [DataPoint(480, np.array([50.0, 50.0]), 0)]
    m2, anchors2, report = joint_update(m, anchors, game, new_tasks, newcomers, WKNN_CFG, kappa=3)
    assert report.task_dispositions[480] in ("exact", "anchor")


# -- anchor expansion -----------------------------------------------------------------


def test_tau_one_never_expands_on_finite_distances():
    rng, pts, game, anchors, m = blobs_setup(seed=20, tau=1.0)
    p = DataPoint(520, game.point(2).features + rng.normal(0, 0.1, 2), game.point(2).label)
    m2, anchors2, col, expanded = anchor_expansion(m, anchors, p, game, WKNN_CFG)
    assert not expanded
    assert anchors2.tasks == anchors.tasks
    assert col.provenance in (INTERPOLATED, REUSED)
    assert not m2.is_anchor(520)


def test_tau_zero_always_expands_distinct_task():
    rng, pts, game, anchors, m = blobs_setup(seed=21, tau=0.0)
    p = DataPoint(530, rng.normal([3.0, 3.0], 1.0), 0)
    m2, anchors2, col, expanded = anchor_expansion(m, anchors, p, game, WKNN_CFG)
    assert expanded
    assert anchors2.tasks == anchors.tasks + (530,)
    assert m2.is_anchor(530)
    assert m2.anchor_order[-1] == 530


def test_unseen_label_forces_expansion():
    rng, pts, game, anchors, m = blobs_setup(seed=22, tau=1.0)
    p = DataPoint(540, rng.normal([0.0, 0.0], 1.0), 7)  # third, unseen label
    m2, anchors2, col, expanded = anchor_expansion(m, anchors, p, game, WKNN_CFG)
    assert expanded
    assert 540 in anchors2.tasks


# -- robustness when supports only approximately determine utility ---------------------


def test_leaky_support_determination_bound():
    # utility = f(S within support) + leak(S outside), |leak| <= eps; the local
    # column stays within 2*eps of the full-game exact values
    rng = np.random.default_rng(23)
    players = tuple(range(10))
    support = players[:5]
    table = {}
    for size in range(6):
        for S in combinations(support, size):
            table[S] = float(rng.uniform(0, 1))
    for eps in (0.01, 0.1):
        leak = {}
        for size in range(6):
            for O in combinations(players[5:], size):
                leak[O] = 0.0 if not O else float(rng.uniform(-1, 1))

        def utility(S, task=None):
            S = tuple(sorted(S))
            inner = tuple(z for z in S if z in support)
            outer = tuple(z for z in S if z not in support)
            return table[inner] + eps * leak[outer]

        game = CallableGame(utility, with_task=True)
        local = exact_local_shapley(game, support, task=0).column.entries
        full = exact_local_shapley(game, players, task=0).column.entries
        for z in players:
            assert abs(full[z] - local.get(z, 0.0)) <= 2 * eps + 1e-9


# -- stream events ----------------------------------------------------------------------


def test_stream_event_payload_validation():
    with pytest.raises(ValueError):
        StreamEvent("TASK_ADD", {})
    with pytest.raises(ValueError):
        StreamEvent("NOPE", {"id": 1})
    ev = StreamEvent("PLAYER_DELETE", {"id": 4})
    assert ev.kind == "PLAYER_DELETE"
