from __future__ import annotations

import io

import numpy as np
import pytest

from multimem.clustering import PseudoLabeling
from multimem.core_math import l2_normalize
from multimem.errors import (
    DimensionMismatchError,
    EmptyClusterError,
    IndexOutOfRangeError,
    ZeroVectorError,
)
from multimem.memory_bank import MemoryBank, MemoryLevel, rebuild_domain_bank


def bank_with_slots(rows: list[list[float]], level: MemoryLevel = MemoryLevel.INSTANCE) -> MemoryBank:
    arr = np.asarray(rows, dtype=np.float64)
    bank = MemoryBank(arr.shape[0], arr.shape[1], level)
    bank.slots = arr.copy()
    return bank


def labeling_from_members(members: list[list[int]], n: int) -> PseudoLabeling:
    labels = np.full(n, -1, dtype=np.intp)
    for c, idx in enumerate(members):
        labels[idx] = c
    return PseudoLabeling(
        labels=labels,
        num_clusters=len(members),
        member_lists=[np.asarray(m, dtype=np.intp) for m in members],
    )


def test_read_single_slot_is_certain() -> None:
    bank = bank_with_slots([[1.0, 0.0]])
    np.testing.assert_array_equal(bank.read_probabilities(np.array([0.0, 1.0]), 0.05), [1.0])


def test_read_two_slots_matches_scalar_evaluation() -> None:
    bank = bank_with_slots([[1.0, 0.0], [0.0, 1.0]])
    probs = bank.read_probabilities(np.array([1.0, 0.0]), 1.0)
    np.testing.assert_allclose(probs, [0.731059, 0.268941], atol=1e-6)


def test_read_identical_slots_split_evenly() -> None:
    bank = bank_with_slots([[0.0, 1.0], [0.0, 1.0]])
    probs = bank.read_probabilities(l2_normalize([1.0, 1.0]), 0.1)
    np.testing.assert_allclose(probs, [0.5, 0.5], atol=1e-12)


def test_read_dimension_mismatch() -> None:
    bank = bank_with_slots([[1.0, 0.0]])
    with pytest.raises(DimensionMismatchError):
        bank.read_probabilities(np.array([1.0, 0.0, 0.0]), 0.05)


def test_zero_slots_participate_with_score_zero() -> None:
    bank = MemoryBank(3, 2, MemoryLevel.INSTANCE)
    bank.write_slot(0, np.array([1.0, 0.0]), rho=0.0)
    probs = bank.read_probabilities(np.array([1.0, 0.0]), 1.0)
    # slot 0 scores 1, untouched slots score 0
    expected = np.exp([1.0, 0.0, 0.0])
    np.testing.assert_allclose(probs, expected / expected.sum(), atol=1e-12)


def test_write_full_overwrite() -> None:
    bank = bank_with_slots([[0.0, 1.0]])
    bank.write_slot(0, np.array([1.0, 0.0]), rho=0.0)
    np.testing.assert_allclose(bank.slots[0], [1.0, 0.0], atol=1e-12)


def test_write_rho_one_keeps_slot() -> None:
    bank = bank_with_slots([[0.0, 1.0]])
    bank.write_slot(0, np.array([1.0, 0.0]), rho=1.0)
    np.testing.assert_allclose(bank.slots[0], [0.0, 1.0], atol=1e-12)


def test_write_blend_renormalizes() -> None:
    bank = bank_with_slots([[1.0, 0.0]])
    bank.write_slot(0, np.array([0.0, 1.0]), rho=0.5)
    np.testing.assert_allclose(bank.slots[0], [0.707107, 0.707107], atol=1e-6)


def test_write_only_touches_addressed_slot() -> None:
    rng = np.random.default_rng(3)
    slots = rng.normal(size=(6, 4))
    slots /= np.linalg.norm(slots, axis=1, keepdims=True)
    bank = bank_with_slots(slots.tolist())
    before = bank.slots.copy()
    bank.write_slot(2, l2_normalize(rng.normal(size=4)), rho=0.3)
    assert np.linalg.norm(bank.slots[2]) == pytest.approx(1.0, abs=1e-9)
    others = [i for i in range(6) if i != 2]
    np.testing.assert_array_equal(bank.slots[others], before[others])


def test_write_index_out_of_range() -> None:
    bank = bank_with_slots([[1.0, 0.0]])
    with pytest.raises(IndexOutOfRangeError):
        bank.write_slot(1, np.array([1.0, 0.0]), rho=0.5)


def test_write_cancellation_raises() -> None:
    bank = bank_with_slots([[1.0, 0.0]])
    with pytest.raises(ZeroVectorError):
        bank.write_slot(0, np.array([-1.0, 0.0]), rho=0.5)


def test_repeated_writes_converge_to_feature() -> None:
    bank = bank_with_slots([[0.0, 1.0, 0.0]])
    f = l2_normalize([1.0, 2.0, -0.5])
    for _ in range(50):
        bank.write_slot(0, f, rho=0.5)
    assert np.linalg.norm(bank.slots[0] - f) < 1e-6


def test_rebuild_single_sample_cluster_copies_feature() -> None:
    f = l2_normalize([0.3, -0.4, 0.8])
    bank = rebuild_domain_bank(f[None, :], labeling_from_members([[0]], 1))
    np.testing.assert_allclose(bank.slots[0], f, atol=1e-12)
    assert bank.level is MemoryLevel.DOMAIN


def test_rebuild_centroid_of_orthogonal_pair() -> None:
    features = np.array([[1.0, 0.0], [0.0, 1.0]])
    bank = rebuild_domain_bank(features, labeling_from_members([[0, 1]], 2))
    np.testing.assert_allclose(bank.slots[0], [0.707107, 0.707107], atol=1e-6)


def test_rebuild_singleton_clusters_reproduce_samples() -> None:
    features = np.array([[1.0, 0.0], [0.0, 1.0]])
    bank = rebuild_domain_bank(features, labeling_from_members([[0], [1]], 2))
    np.testing.assert_allclose(bank.slots, features, atol=1e-12)


def test_rebuild_excludes_noise_from_centroids() -> None:
    features = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    labeling = labeling_from_members([[0]], 3)  # samples 1, 2 are noise
    bank = rebuild_domain_bank(features, labeling)
    assert bank.num_slots == 1
    np.testing.assert_allclose(bank.slots[0], [1.0, 0.0], atol=1e-12)


def test_rebuild_empty_cluster_raises() -> None:
    features = np.array([[1.0, 0.0]])
    labeling = PseudoLabeling(
        labels=np.array([0]), num_clusters=2, member_lists=[np.array([0]), np.array([], dtype=np.intp)]
    )
    with pytest.raises(EmptyClusterError):
        rebuild_domain_bank(features, labeling)


def test_dump_and_load_round_trip() -> None:
    rng = np.random.default_rng(11)
    slots = rng.normal(size=(4, 3))
    slots /= np.linalg.norm(slots, axis=1, keepdims=True)
    bank = bank_with_slots(slots.tolist(), MemoryLevel.PART_UPPER)
    buf = io.StringIO()
    bank.dump(buf)
    buf.seek(0)
    loaded = MemoryBank.load(buf)
    assert loaded.level is MemoryLevel.PART_UPPER
    np.testing.assert_array_equal(loaded.slots, bank.slots)


def test_argmax_read_depends_only_on_direction() -> None:
    rng = np.random.default_rng(7)
    slots = rng.normal(size=(5, 4))
    slots /= np.linalg.norm(slots, axis=1, keepdims=True)
    bank = bank_with_slots(slots.tolist())
    raw = rng.normal(size=4)
    p1 = bank.read_probabilities(l2_normalize(raw), 0.05)
    p2 = bank.read_probabilities(l2_normalize(3.7 * raw), 0.05)
    np.testing.assert_allclose(p1, p2, atol=1e-12)
