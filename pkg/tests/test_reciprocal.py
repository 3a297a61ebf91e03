from __future__ import annotations

import numpy as np
import pytest

from multimem.core_math import l2_normalize_rows
from multimem.errors import InsufficientSamplesError
from multimem.reciprocal import (
    SimilarityMatrix,
    build_similarity,
    raw_top_k_selection,
    reorder_and_select,
    soft_weights,
)

from .oracles import reorder_reference, similarity_reference


def random_unit_features(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    return l2_normalize_rows(rng.normal(size=(n, d)))


def clustered_features(rng: np.random.Generator, centers: int, per: int, d: int, spread: float = 0.15) -> np.ndarray:
    protos = rng.normal(size=(centers, d))
    rows = [protos[c] + spread * rng.normal(size=d) for c in range(centers) for _ in range(per)]
    return l2_normalize_rows(np.asarray(rows))


# -- build_similarity ---------------------------------------------------------


def test_two_identical_points_are_fully_similar() -> None:
    features = l2_normalize_rows(np.array([[1.0, 2.0], [1.0, 2.0]]))
    sim = build_similarity(features, k1=1, k2=1, lambda_r=0.3)
    np.testing.assert_allclose(sim.s, np.ones((2, 2)), atol=1e-12)


def test_mutually_orthogonal_points_symmetric_off_diagonals() -> None:
    # exact ties are broken by index, so entries are only pairwise symmetric
    features = np.eye(4)
    sim = build_similarity(features, k1=2, k2=2, lambda_r=0.3)
    np.testing.assert_allclose(sim.s, sim.s.T, atol=1e-12)
    np.testing.assert_allclose(np.diag(sim.s), 1.0)
    np.testing.assert_allclose(sim.s, similarity_reference(features, 2, 2, 0.3), atol=1e-9)


def test_two_cluster_instance_separates_within_from_cross() -> None:
    rng = np.random.default_rng(5)
    features = clustered_features(rng, centers=2, per=3, d=6, spread=0.05)
    sim = build_similarity(features, k1=2, k2=2, lambda_r=0.3)
    expected = similarity_reference(features, k1=2, k2=2, lambda_r=0.3)
    np.testing.assert_allclose(sim.s, expected, atol=1e-9)
    within = [sim.s[i, j] for i in range(3) for j in range(3) if i != j]
    cross = [sim.s[i, j] for i in range(3) for j in range(3, 6)]
    assert min(within) > max(cross)


def test_similarity_matches_reference_on_random_instances() -> None:
    rng = np.random.default_rng(42)
    for trial in range(50):
        n = int(rng.integers(6, 51))
        d = int(rng.integers(3, 9))
        k1 = int(rng.integers(2, min(n - 1, 21)))
        k2 = int(rng.integers(1, min(n, 7)))
        lam = float(rng.uniform(0.0, 1.0))
        if rng.uniform() < 0.5:
            features = random_unit_features(rng, n, d)
        else:
            per = max(2, n // 4)
            features = clustered_features(rng, centers=max(2, n // per), per=per, d=d)[:n]
        sim = build_similarity(features, k1=k1, k2=k2, lambda_r=lam)
        expected = similarity_reference(features, k1=k1, k2=k2, lambda_r=lam)
        np.testing.assert_allclose(sim.s, expected, atol=1e-9, err_msg=f"trial {trial}")


def test_similarity_matrix_shape_contract() -> None:
    rng = np.random.default_rng(0)
    features = random_unit_features(rng, 20, 5)
    sim = build_similarity(features, k1=5, k2=3, lambda_r=0.3, epoch_built=4)
    assert sim.epoch_built == 4
    np.testing.assert_allclose(sim.s, sim.s.T, atol=1e-9)
    np.testing.assert_array_equal(np.diag(sim.s), np.ones(20))
    assert np.all(sim.s > 0.0) and np.all(sim.s <= 1.0)


def test_similarity_rejects_small_instances() -> None:
    with pytest.raises(InsufficientSamplesError):
        build_similarity(np.eye(1), k1=1, k2=1)
    with pytest.raises(InsufficientSamplesError):
        build_similarity(np.eye(3), k1=3, k2=1)


# -- reorder_and_select -------------------------------------------------------


def sim_from(matrix: list[list[float]]) -> SimilarityMatrix:
    return SimilarityMatrix(s=np.asarray(matrix, dtype=np.float64))


def test_self_only_selection_at_k1() -> None:
    # query, an exact duplicate, and a far point
    s = sim_from([[1.0, 1.0, 0.1], [1.0, 1.0, 0.1], [0.1, 0.1, 1.0]])
    sel = reorder_and_select(s, query=0, k=1)
    np.testing.assert_array_equal(sel.indices, [0])
    np.testing.assert_array_equal(sel.weights, [1.0])


def test_total_tie_breaks_by_index() -> None:
    s = sim_from(np.ones((6, 6)).tolist())
    sel = reorder_and_select(s, query=0, k=3)
    np.testing.assert_array_equal(sel.indices, [0, 1, 2])


def test_five_point_worked_example() -> None:
    s = sim_from(
        [
            [1.0, 0.9, 0.8, 0.7, 0.2],
            [0.9, 1.0, 0.3, 0.2, 0.85],
            [0.8, 0.3, 1.0, 0.9, 0.1],
            [0.7, 0.2, 0.9, 1.0, 0.1],
            [0.2, 0.85, 0.1, 0.1, 1.0],
        ]
    )
    sel = reorder_and_select(s, query=0, k=2)
    # index 1 is demoted: its candidate list overlaps the query's by 3,
    # indices 2 and 3 overlap by 4, and 2 beats 3 on similarity
    np.testing.assert_array_equal(sel.indices, [0, 2])
    assert reorder_reference(s.s, 0, 2) == [0, 2]


def test_reorder_matches_exhaustive_reference() -> None:
    rng = np.random.default_rng(123)
    for trial in range(100):
        n = int(rng.integers(4, 31))
        features = random_unit_features(rng, n, int(rng.integers(3, 7)))
        raw = features @ features.T
        s = (raw + raw.T) / 2
        np.fill_diagonal(s, 1.0)
        s = (s + 1.0) / 2.0  # into (0, 1]
        sim = SimilarityMatrix(s=s)
        k = int(rng.integers(1, min(5, n // 2) + 1))
        query = int(rng.integers(n))
        sel = reorder_and_select(sim, query, k)
        assert sel.indices.tolist() == reorder_reference(s, query, k), f"trial {trial}"


def test_selection_always_contains_query_first() -> None:
    rng = np.random.default_rng(9)
    features = random_unit_features(rng, 25, 4)
    sim = build_similarity(features, k1=6, k2=3)
    for query in range(25):
        sel = reorder_and_select(sim, query, k=5)
        assert sel.indices[0] == query
        assert len(set(sel.indices.tolist())) == 5


def test_reorder_deterministic_across_calls() -> None:
    rng = np.random.default_rng(17)
    features = random_unit_features(rng, 20, 5)
    sim = build_similarity(features, k1=5, k2=2)
    first = [reorder_and_select(sim, q, 4).indices.tolist() for q in range(20)]
    sim2 = build_similarity(features, k1=5, k2=2)
    second = [reorder_and_select(sim2, q, 4).indices.tolist() for q in range(20)]
    assert first == second


def test_block_diagonal_selection_stays_in_block() -> None:
    block = np.ones((4, 4)) * 0.9
    s = np.full((8, 8), 1e-6)
    s[:4, :4] = block
    s[4:, 4:] = block
    np.fill_diagonal(s, 1.0)
    sim = SimilarityMatrix(s=s)
    for query in range(8):
        sel = reorder_and_select(sim, query, k=3)
        own_block = set(range(4)) if query < 4 else set(range(4, 8))
        assert set(sel.indices.tolist()) <= own_block


def test_reorder_needs_enough_samples() -> None:
    sim = SimilarityMatrix(s=np.eye(4))
    with pytest.raises(InsufficientSamplesError):
        reorder_and_select(sim, 0, k=3)


# -- soft_weights --------------------------------------------------------------


def test_weight_is_one_at_full_similarity() -> None:
    s = sim_from([[1.0, 1.0], [1.0, 1.0]])
    sel = reorder_and_select(s, 0, 1)
    np.testing.assert_array_equal(soft_weights(s, 0, sel, alpha2=2.0), [1.0])


def test_zero_temperature_gives_unit_weights() -> None:
    rng = np.random.default_rng(2)
    features = random_unit_features(rng, 10, 4)
    sim = build_similarity(features, k1=3, k2=2)
    sel = reorder_and_select(sim, 1, 3)
    np.testing.assert_array_equal(soft_weights(sim, 1, sel, alpha2=0.0), np.ones(3))


def test_weight_matches_direct_evaluation() -> None:
    s = sim_from([[1.0, 0.5, 0.2, 0.1], [0.5, 1.0, 0.2, 0.1], [0.2, 0.2, 1.0, 0.1], [0.1, 0.1, 0.1, 1.0]])
    sel = reorder_and_select(s, 0, 2)
    w = soft_weights(s, 0, sel, alpha2=2.0)
    assert w[0] == pytest.approx(1.0)
    assert w[1] == pytest.approx(np.exp(-2.0 * 0.5), abs=1e-9)
    assert w[1] == pytest.approx(0.367879, abs=1e-6)


def test_weights_in_unit_interval_and_monotone() -> None:
    rng = np.random.default_rng(31)
    features = random_unit_features(rng, 30, 6)
    sim = build_similarity(features, k1=8, k2=3)
    for query in range(0, 30, 5):
        sel = reorder_and_select(sim, query, 6)
        w = soft_weights(sim, query, sel, alpha2=2.0)
        assert np.all(w > 0.0) and np.all(w <= 1.0)
        order = np.argsort(-sim.s[query, sel.indices], kind="stable")
        assert np.all(np.diff(w[order]) <= 1e-12)


# -- raw selection --------------------------------------------------------------


def test_raw_selection_orders_by_score() -> None:
    scores = np.array([0.1, 0.9, 0.5, 0.7])
    sel = raw_top_k_selection(scores, query=0, k=3)
    np.testing.assert_array_equal(sel.indices, [0, 1, 3])
    np.testing.assert_array_equal(sel.weights, np.ones(3))


def test_raw_selection_breaks_ties_by_index() -> None:
    sel = raw_top_k_selection(np.zeros(5), query=2, k=3)
    np.testing.assert_array_equal(sel.indices, [2, 0, 1])
