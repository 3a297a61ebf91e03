from __future__ import annotations

import numpy as np
import pytest

from multimem.core_math import l2_normalize_rows, softmax_rows
from multimem.errors import EmptyBatchError, InvalidLabelError, NonPositiveProbabilityError
from multimem.gradcheck import central_difference, gradient_error
from multimem.losses import (
    batch_hard_triplet,
    domain_loss,
    instance_loss,
    rectify_weights,
    source_loss,
    total_loss,
)
from multimem.reciprocal import NeighborSelection


def selection(query: int, indices: list[int]) -> NeighborSelection:
    return NeighborSelection(
        query=query, indices=np.asarray(indices), weights=np.ones(len(indices))
    )


# -- rectify_weights -----------------------------------------------------------


def test_gamma_zero_keeps_weights() -> None:
    sel = selection(0, [0, 2])
    w = np.array([1.0, 0.4])
    out = rectify_weights(w, np.array([0.2, 0.5, 0.9]), np.array([0.1, 0.3, 0.8]), sel, gamma=0.0)
    np.testing.assert_array_equal(out, w)


def test_gamma_one_with_zero_part_evidence() -> None:
    sel = selection(0, [0])
    # slot 0 holds the minimum of both part reads, so its normalized value is 0
    out = rectify_weights(
        np.array([1.0]), np.array([0.0, 1.0]), np.array([0.0, 1.0]), sel, gamma=1.0
    )
    np.testing.assert_array_equal(out, [0.0])


def test_rectification_direct_evaluation() -> None:
    sel = selection(0, [1])
    p_pu = np.array([0.0, 1.0, 0.5])  # normalized value at slot 1: 1.0
    p_pb = np.array([0.0, 0.5, 1.0])  # normalized value at slot 1: 0.5
    out = rectify_weights(np.array([0.6]), p_pu, p_pb, sel, gamma=0.2)
    assert out[0] == pytest.approx(0.78, abs=1e-12)


def test_rectified_weights_stay_in_zero_two() -> None:
    rng = np.random.default_rng(8)
    for _ in range(50):
        n, k = 12, 4
        sel = NeighborSelection(
            query=0, indices=rng.permutation(n)[:k], weights=np.ones(k)
        )
        w = rng.uniform(0.0, 1.0, size=k)
        out = rectify_weights(w, rng.uniform(size=n), rng.uniform(size=n), sel, gamma=float(rng.uniform(0, 1)))
        assert np.all(out >= 0.0) and np.all(out <= 2.0)


# -- instance_loss ---------------------------------------------------------------


def test_perfect_self_recognition_is_zero_loss() -> None:
    probs = np.array([[1.0, 0.0]])
    slots = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss, grads = instance_loss(probs, [selection(0, [0])], [np.ones(1)], slots, 1.0)
    assert loss == pytest.approx(0.0)


def test_instance_loss_single_query_scalar_chain() -> None:
    slots = np.array([[1.0, 0.0], [0.0, 1.0]])
    f = np.array([[1.0, 0.0]])
    probs = softmax_rows(f @ slots.T / 1.0)
    loss, _ = instance_loss(probs, [selection(0, [0])], [np.ones(1)], slots, 1.0)
    assert loss == pytest.approx(-np.log(np.exp(1) / (np.exp(1) + 1)), abs=1e-12)
    assert loss == pytest.approx(0.313262, abs=1e-6)


def test_doubling_weights_doubles_loss_and_gradient() -> None:
    rng = np.random.default_rng(4)
    slots = l2_normalize_rows(rng.normal(size=(6, 4)))
    f = l2_normalize_rows(rng.normal(size=(2, 4)))
    probs = softmax_rows(f @ slots.T / 0.2)
    sels = [selection(0, [0, 3]), selection(1, [1, 5])]
    weights = [np.array([1.0, 0.5]), np.array([0.7, 0.2])]
    loss1, grad1 = instance_loss(probs, sels, weights, slots, 0.2)
    loss2, grad2 = instance_loss(probs, sels, [2 * w for w in weights], slots, 0.2)
    assert loss2 == pytest.approx(2 * loss1, rel=1e-12)
    np.testing.assert_allclose(grad2, 2 * grad1, atol=1e-12)


def test_instance_loss_underflow_raises() -> None:
    probs = np.array([[1.0, 0.0]])
    slots = np.eye(2)
    with pytest.raises(NonPositiveProbabilityError):
        instance_loss(probs, [selection(0, [1])], [np.ones(1)], slots, 1.0)


def test_instance_gradient_matches_finite_differences() -> None:
    rng = np.random.default_rng(12)
    for _ in range(10):
        slots = l2_normalize_rows(rng.normal(size=(7, 5)))
        f = l2_normalize_rows(rng.normal(size=(3, 5)))
        sels = []
        weights = []
        for i in range(3):
            idx = rng.permutation(7)[:3]
            sels.append(NeighborSelection(query=int(idx[0]), indices=idx, weights=np.ones(3)))
            weights.append(rng.uniform(0.2, 2.0, size=3))
        alpha1 = 0.3

        def value(f_in: np.ndarray) -> float:
            return instance_loss(
                softmax_rows(f_in @ slots.T / alpha1), sels, weights, slots, alpha1
            )[0]

        _, analytic = instance_loss(
            softmax_rows(f @ slots.T / alpha1), sels, weights, slots, alpha1
        )
        assert gradient_error(analytic, central_difference(value, f)) <= 1e-5


def test_descent_direction_reduces_instance_loss() -> None:
    rng = np.random.default_rng(23)
    slots = l2_normalize_rows(rng.normal(size=(8, 5)))
    f = l2_normalize_rows(rng.normal(size=(1, 5)))
    sel = [NeighborSelection(query=2, indices=np.array([2, 5]), weights=np.ones(2))]
    w = [np.array([1.0, 0.8])]
    alpha1 = 0.2

    def value(f_in: np.ndarray) -> float:
        return instance_loss(softmax_rows(f_in @ slots.T / alpha1), sel, w, slots, alpha1)[0]

    base = value(f)
    _, grad = instance_loss(softmax_rows(f @ slots.T / alpha1), sel, w, slots, alpha1)
    stepped = value(f - 1e-3 * grad)
    assert stepped < base


# -- batch-hard triplet / domain loss ----------------------------------------------


def test_triplet_worked_example() -> None:
    emb = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 0.0]])
    labels = np.array([0, 0, 1])
    loss, _ = batch_hard_triplet(emb, labels, margin=0.3)
    assert loss == pytest.approx(1.3, abs=1e-12)


def test_triplet_single_sample_is_zero() -> None:
    loss, grads = batch_hard_triplet(np.array([[1.0, 0.0]]), np.array([0]), 0.3)
    assert loss == 0.0
    np.testing.assert_array_equal(grads, 0.0)


def test_triplet_inactive_hinge_for_separated_clusters() -> None:
    emb = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]])
    labels = np.array([0, 0, 1, 1])
    loss, grads = batch_hard_triplet(emb, labels, margin=0.3)
    assert loss == 0.0
    np.testing.assert_array_equal(grads, 0.0)


def test_triplet_exhaustive_enumeration_oracle() -> None:
    rng = np.random.default_rng(3)
    for _ in range(30):
        b = int(rng.integers(3, 8))
        emb = rng.normal(size=(b, 3))
        labels = rng.integers(0, 3, size=b)
        loss, _ = batch_hard_triplet(emb, labels, margin=0.3)

        # independent enumeration over all (anchor, positive, negative)
        dist = np.linalg.norm(emb[:, None] - emb[None, :], axis=2)
        hinges = []
        for a in range(b):
            pos = [j for j in range(b) if labels[j] == labels[a] and j != a]
            neg = [j for j in range(b) if labels[j] != labels[a]]
            if not pos or not neg:
                continue
            dp = max(dist[a, j] for j in pos)
            dn = min(dist[a, j] for j in neg)
            hinges.append(max(0.0, 0.3 + dp - dn))
        expected = float(np.mean(hinges)) if hinges else 0.0
        assert loss == pytest.approx(expected, abs=1e-12)


def test_domain_loss_single_sample_certain() -> None:
    probs = np.array([[1.0, 0.0]])
    slots = np.eye(2)
    total, tri, grads = domain_loss(
        probs, np.array([0]), np.array([[1.0, 0.0]]), 0.3, slots, 0.05
    )
    assert total == pytest.approx(0.0)
    assert tri == 0.0


def test_domain_loss_gradient_matches_finite_differences() -> None:
    from multimem.gradcheck import _domain_setup

    rng = np.random.default_rng(19)
    for _ in range(10):
        emb, labels, slots, alpha1, margin = _domain_setup(rng)

        def value(e_in: np.ndarray) -> float:
            return domain_loss(
                softmax_rows(e_in @ slots.T / alpha1), labels, e_in, margin, slots, alpha1
            )[0]

        _, _, analytic = domain_loss(
            softmax_rows(emb @ slots.T / alpha1), labels, emb, margin, slots, alpha1
        )
        assert gradient_error(analytic, central_difference(value, emb)) <= 1e-5


def test_domain_loss_empty_batch_raises() -> None:
    with pytest.raises(EmptyBatchError):
        domain_loss(np.empty((0, 2)), np.empty(0, dtype=int), np.empty((0, 2)), 0.3, np.eye(2), 0.05)


def test_domain_loss_rejects_bad_labels() -> None:
    with pytest.raises(InvalidLabelError):
        domain_loss(np.array([[0.5, 0.5]]), np.array([2]), np.eye(1, 2), 0.3, np.eye(2), 0.05)


# -- source_loss ------------------------------------------------------------------


def test_source_loss_saturated_logits_near_zero() -> None:
    logits = np.array([[20.0, 0.0, 0.0]])
    loss, _ = source_loss(logits, np.array([0]))
    assert loss < 1e-3


def test_source_loss_uniform_logits() -> None:
    loss, _ = source_loss(np.zeros((3, 4)), np.array([0, 1, 2]))
    assert loss == pytest.approx(np.log(4.0), abs=1e-12)


def test_source_loss_two_logit_example() -> None:
    loss, _ = source_loss(np.array([[1.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.313262, abs=1e-6)


def test_source_loss_invalid_label() -> None:
    with pytest.raises(InvalidLabelError):
        source_loss(np.zeros((1, 2)), np.array([5]))


def test_source_gradient_matches_finite_differences() -> None:
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(4, 5)) * 3
    labels = rng.integers(0, 5, size=4)
    _, analytic = source_loss(logits, labels)
    numeric = central_difference(lambda z: source_loss(z, labels)[0], logits)
    assert gradient_error(analytic, numeric) <= 1e-5


# -- total_loss ---------------------------------------------------------------------


def test_lambda_zero_reduces_to_source() -> None:
    report = total_loss(2.0, 1.0, 0.5, 0.1, lam=0.0, beta=1.0)
    assert report.total == pytest.approx(2.0)


def test_lambda_one_removes_source() -> None:
    report = total_loss(2.0, 1.0, 0.5, 0.1, lam=1.0, beta=1.0)
    assert report.total == pytest.approx(1.5)


def test_total_direct_evaluation() -> None:
    report = total_loss(2.0, 1.0, 0.5, 0.2, lam=0.3, beta=1.0)
    assert report.total == pytest.approx(1.85, abs=1e-12)


def test_report_identity_holds() -> None:
    rng = np.random.default_rng(0)
    for _ in range(20):
        ls, li, ld, lt = rng.uniform(0, 3, size=4)
        lam, beta = rng.uniform(0, 1), rng.uniform(0, 3)
        report = total_loss(ls, li, ld, lt, lam, beta)
        assert report.total == pytest.approx(
            (1 - lam) * report.l_source + lam * (report.l_instance + beta * report.l_domain),
            abs=1e-12,
        )


def test_beta_scaling_is_linear() -> None:
    base = total_loss(1.0, 0.8, 0.6, 0.0, lam=0.5, beta=1.0)
    scaled = total_loss(1.0, 0.8, 0.6, 0.0, lam=0.5, beta=3.0)
    contribution = scaled.total - base.total
    assert contribution == pytest.approx(0.5 * 0.6 * 2.0, abs=1e-12)
