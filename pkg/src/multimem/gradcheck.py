"""Finite-difference verification of every analytic gradient.

Each check builds a random configuration, evaluates the loss as a plain
scalar function of the supervised inputs, and compares the analytic
gradient against central differences (h = 1e-5). The error measure is
``||g_a - g_n|| / max(||g_a||, ||g_n||)`` (0 when both vanish), and the
acceptance threshold is 1e-5 at double precision.

Configurations are resampled away from the non-differentiable points of
the hinge and of the hardest-positive / hardest-negative selections, since
finite differences straddle those kinks.

Neighbor selections and (rectified) weights are frozen inputs here, exactly
as in training: no gradient flows through the selection or rectification
paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core_math import l2_normalize_rows, softmax_rows
from .encoder import Encoder
from .losses import (
    batch_hard_triplet,
    domain_loss,
    instance_loss,
    rectify_weights,
    source_loss,
)
from .reciprocal import NeighborSelection

TOLERANCE = 1e-5
STEP = 1e-5


@dataclass
class CheckRow:
    name: str
    num_configs: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error <= TOLERANCE


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)  # private contiguous copy; mutated in place
    grad = np.zeros_like(x)
    flat = grad.ravel()
    x_flat = x.ravel()
    for i in range(x_flat.size):
        orig = x_flat[i]
        x_flat[i] = orig + h
        up = f(x)
        x_flat[i] = orig - h
        down = f(x)
        x_flat[i] = orig
        flat[i] = (up - down) / (2.0 * h)
    return grad


def gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    na, nn = np.linalg.norm(a), np.linalg.norm(n)
    if na < 1e-12 and nn < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / max(na, nn))


def _random_selection(rng: np.random.Generator, query: int, n: int, k: int) -> NeighborSelection:
    others = rng.permutation(np.delete(np.arange(n), query))[: k - 1]
    indices = np.concatenate([[query], others])
    return NeighborSelection(query=query, indices=indices, weights=np.ones(k))


def _instance_setup(rng: np.random.Generator, rectified: bool):
    b, n, d, k = 4, 9, 6, 3
    alpha1 = float(rng.uniform(0.05, 0.5))
    slots = l2_normalize_rows(rng.normal(size=(n, d)))
    f = l2_normalize_rows(rng.normal(size=(b, d)))
    selections = [_random_selection(rng, int(rng.integers(n)), n, k) for _ in range(b)]
    weights = []
    for sel in selections:
        w = np.exp(-2.0 * rng.uniform(0.0, 1.0, size=k))
        w[0] = 1.0
        if rectified:
            w = rectify_weights(
                w, rng.uniform(size=n), rng.uniform(size=n), sel, gamma=0.3
            )
        weights.append(w)
    return f, slots, selections, weights, alpha1


def _check_instance(rng: np.random.Generator, num_configs: int, rectified: bool, corrupt: bool) -> CheckRow:
    worst = 0.0
    for _ in range(num_configs):
        f, slots, sels, weights, alpha1 = _instance_setup(rng, rectified)

        def value(f_in: np.ndarray) -> float:
            probs = softmax_rows(f_in @ slots.T / alpha1)
            return instance_loss(probs, sels, weights, slots, alpha1)[0]

        probs = softmax_rows(f @ slots.T / alpha1)
        _, analytic = instance_loss(probs, sels, weights, slots, alpha1)
        if corrupt:
            analytic = analytic + 1e-3
        worst = max(worst, gradient_error(analytic, central_difference(value, f)))
    name = "instance_loss_rectified" if rectified else "instance_loss_hard"
    return CheckRow(name, num_configs, worst)


def _domain_setup(rng: np.random.Generator):
    """Random domain-loss configuration, resampled away from hinge kinks and
    hardest-pair selection ties."""
    b, c, d = 6, 3, 5
    alpha1 = float(rng.uniform(0.05, 0.5))
    margin = 0.3
    while True:
        slots = l2_normalize_rows(rng.normal(size=(c, d)))
        emb = l2_normalize_rows(rng.normal(size=(b, d)))
        labels = rng.integers(0, c, size=b)
        if _triplet_is_smooth(emb, labels, margin):
            return emb, labels, slots, alpha1, margin


def _triplet_is_smooth(emb: np.ndarray, labels: np.ndarray, margin: float, gap: float = 1e-3) -> bool:
    diff = emb[:, None, :] - emb[None, :, :]
    dist = np.sqrt(np.maximum((diff * diff).sum(axis=2), 0.0))
    same = labels[:, None] == labels[None, :]
    for a in range(emb.shape[0]):
        pos = np.nonzero(same[a] & (np.arange(emb.shape[0]) != a))[0]
        neg = np.nonzero(~same[a])[0]
        if pos.size == 0 or neg.size == 0:
            continue
        dp = np.sort(dist[a, pos])
        dn = np.sort(dist[a, neg])
        if dp.size > 1 and dp[-1] - dp[-2] < gap:
            return False
        if dn.size > 1 and dn[1] - dn[0] < gap:
            return False
        if abs(margin + dp[-1] - dn[0]) < gap:
            return False
        if dp[-1] < gap or dn[0] < gap:
            return False
    return True


def _check_domain(rng: np.random.Generator, num_configs: int, corrupt: bool) -> CheckRow:
    worst = 0.0
    for _ in range(num_configs):
        emb, labels, slots, alpha1, margin = _domain_setup(rng)

        def value(e_in: np.ndarray) -> float:
            probs = softmax_rows(e_in @ slots.T / alpha1)
            return domain_loss(probs, labels, e_in, margin, slots, alpha1)[0]

        probs = softmax_rows(emb @ slots.T / alpha1)
        _, _, analytic = domain_loss(probs, labels, emb, margin, slots, alpha1)
        if corrupt:
            analytic = analytic + 1e-3
        worst = max(worst, gradient_error(analytic, central_difference(value, emb)))
    return CheckRow("domain_loss", num_configs, worst)


def _check_triplet(rng: np.random.Generator, num_configs: int, corrupt: bool) -> CheckRow:
    worst = 0.0
    for _ in range(num_configs):
        emb, labels, _, _, margin = _domain_setup(rng)
        _, analytic = batch_hard_triplet(emb, labels, margin)
        if corrupt:
            analytic = analytic + 1e-3
        numeric = central_difference(
            lambda e: batch_hard_triplet(e, labels, margin)[0], emb
        )
        worst = max(worst, gradient_error(analytic, numeric))
    return CheckRow("triplet_loss", num_configs, worst)


def _check_source(rng: np.random.Generator, num_configs: int, corrupt: bool) -> CheckRow:
    worst = 0.0
    for _ in range(num_configs):
        b, c = 5, 4
        logits = rng.normal(size=(b, c)) * 2.0
        labels = rng.integers(0, c, size=b)
        _, analytic = source_loss(logits, labels)
        if corrupt:
            analytic = analytic + 1e-3
        numeric = central_difference(lambda z: source_loss(z, labels)[0], logits)
        worst = max(worst, gradient_error(analytic, numeric))
    return CheckRow("source_loss", num_configs, worst)


def _check_total(rng: np.random.Generator, num_configs: int, corrupt: bool) -> CheckRow:
    """Joint objective over (target embeddings, source logits): the combined
    gradient must carry the (1 - lam) / lam / beta coefficients exactly."""
    worst = 0.0
    for _ in range(num_configs):
        f, slots, sels, weights, alpha1 = _instance_setup(rng, rectified=True)
        emb_d, labels_d, slots_d, alpha1_d, margin = _domain_setup(rng)
        logits = rng.normal(size=(5, 4)) * 2.0
        labels_s = rng.integers(0, 4, size=5)
        lam, beta = 0.3, 1.0

        def value(packed: np.ndarray) -> float:
            f_in = packed[: f.size].reshape(f.shape)
            e_in = packed[f.size : f.size + emb_d.size].reshape(emb_d.shape)
            z_in = packed[f.size + emb_d.size :].reshape(logits.shape)
            l_i = instance_loss(
                softmax_rows(f_in @ slots.T / alpha1), sels, weights, slots, alpha1
            )[0]
            l_d = domain_loss(
                softmax_rows(e_in @ slots_d.T / alpha1_d),
                labels_d,
                e_in,
                margin,
                slots_d,
                alpha1_d,
            )[0]
            l_s = source_loss(z_in, labels_s)[0]
            return (1.0 - lam) * l_s + lam * (l_i + beta * l_d)

        _, g_i = instance_loss(
            softmax_rows(f @ slots.T / alpha1), sels, weights, slots, alpha1
        )
        _, _, g_d = domain_loss(
            softmax_rows(emb_d @ slots_d.T / alpha1_d),
            labels_d,
            emb_d,
            margin,
            slots_d,
            alpha1_d,
        )
        _, g_s = source_loss(logits, labels_s)
        analytic = np.concatenate(
            [(lam * g_i).ravel(), (lam * beta * g_d).ravel(), ((1 - lam) * g_s).ravel()]
        )
        if corrupt:
            analytic = analytic + 1e-3
        packed = np.concatenate([f.ravel(), emb_d.ravel(), logits.ravel()])
        worst = max(worst, gradient_error(analytic, central_difference(value, packed)))
    return CheckRow("total_loss", num_configs, worst)


def _encoder_objective(
    enc: Encoder,
    x_src: np.ndarray,
    labels_src: np.ndarray,
    x_tgt: np.ndarray,
    inst_slots: np.ndarray,
    sels: list[NeighborSelection],
    weights: list[np.ndarray],
    dom_slots: np.ndarray,
    dom_labels: np.ndarray,
    alpha1: float,
    margin: float,
    lam: float,
    beta: float,
) -> tuple[float, "np.ndarray"]:
    """Joint objective as a function of encoder parameters, plus its value.

    Returns (value, packed analytic parameter gradient)."""
    src_state = enc.forward(x_src)
    logits = enc.logits(src_state.f_g)
    l_s, g_logits = source_loss(logits, labels_src)

    tgt_state = enc.forward(x_tgt)
    probs_i = softmax_rows(tgt_state.f_g @ inst_slots.T / alpha1)
    l_i, g_fg_i = instance_loss(probs_i, sels, weights, inst_slots, alpha1)
    probs_d = softmax_rows(tgt_state.f_g @ dom_slots.T / alpha1)
    l_d, _, g_fg_d = domain_loss(
        probs_d, dom_labels, tgt_state.f_g, margin, dom_slots, alpha1
    )

    value = (1.0 - lam) * l_s + lam * (l_i + beta * l_d)
    src_grads = enc.backward(src_state, grad_logits=(1.0 - lam) * g_logits)
    tgt_grads = enc.backward(tgt_state, grad_f_g=lam * (g_fg_i + beta * g_fg_d))
    total = src_grads.add(tgt_grads)
    # the part heads share w_g's columns, so fold their paths in
    half = enc.d_in // 2
    w_g_total = total.w_g.copy()
    w_g_total[:, :half] += total.w_u
    w_g_total[:, half:] += total.w_b
    packed = np.concatenate([w_g_total.ravel(), total.classifier.ravel()])
    return value, packed


def _heads_smooth(enc: Encoder, x: np.ndarray, kink_gap: float = 1e-3) -> bool:
    """True when every ReLU row is alive and no pre-activation sits within
    the finite-difference stencil of the ReLU kink."""
    half = enc.d_in // 2
    for w, inputs in ((enc.w_g, x), (enc.w_u, x[:, :half]), (enc.w_b, x[:, half:])):
        z = inputs @ w.T
        if np.any(np.abs(z) < kink_gap):
            return False
        if np.any(np.linalg.norm(np.maximum(z, 0.0), axis=1) < 1e-2):
            return False
    return True


def _check_encoder(rng: np.random.Generator, num_seeds: int, corrupt: bool) -> CheckRow:
    worst = 0.0
    d_in, dim, classes = 8, 6, 3
    for _ in range(num_seeds):
        n, k = 7, 3
        dom_labels = np.array([0, 1, 0])
        alpha1, margin, lam, beta = 0.2, 0.3, 0.3, 1.0
        while True:
            enc = Encoder(d_in, dim, classes, seed=int(rng.integers(2**31)))
            x_src = rng.normal(size=(3, d_in))
            labels_src = rng.integers(0, classes, size=3)
            x_tgt = rng.normal(size=(3, d_in))
            if not (_heads_smooth(enc, x_src) and _heads_smooth(enc, x_tgt)):
                continue
            if _triplet_is_smooth(enc.forward(x_tgt).f_g, dom_labels, margin):
                break
        inst_slots = l2_normalize_rows(rng.normal(size=(n, dim)))
        sels = [_random_selection(rng, int(rng.integers(n)), n, k) for _ in range(3)]
        weights = [np.exp(-rng.uniform(size=k)) for _ in sels]
        dom_slots = l2_normalize_rows(rng.normal(size=(3, dim)))

        args = (
            x_src, labels_src, x_tgt, inst_slots, sels, weights,
            dom_slots, dom_labels, alpha1, margin, lam, beta,
        )
        _, analytic = _encoder_objective(enc, *args)
        if corrupt:
            analytic = analytic + 1e-3

        mats = [enc.w_g, enc.classifier]
        numeric = np.empty(sum(m.size for m in mats))
        pos = 0
        for m in mats:
            flat = m.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + STEP
                up = _encoder_objective(enc, *args)[0]
                flat[i] = orig - STEP
                down = _encoder_objective(enc, *args)[0]
                flat[i] = orig
                numeric[pos] = (up - down) / (2.0 * STEP)
                pos += 1
        worst = max(worst, gradient_error(analytic, numeric))
    return CheckRow("encoder_end_to_end", num_seeds, worst)


def run_all(seed: int = 0, num_configs: int = 100, num_encoder_seeds: int = 20, corrupt: str | None = None) -> list[CheckRow]:
    """Full gradient-check suite; ``corrupt`` names a check whose analytic
    gradient is deliberately damaged (negative-control hook for tests)."""
    rng = np.random.default_rng(seed)
    return [
        _check_source(rng, num_configs, corrupt == "source_loss"),
        _check_instance(rng, num_configs, False, corrupt == "instance_loss_hard"),
        _check_instance(rng, num_configs, True, corrupt == "instance_loss_rectified"),
        _check_domain(rng, num_configs, corrupt == "domain_loss"),
        _check_triplet(rng, num_configs, corrupt == "triplet_loss"),
        _check_total(rng, num_configs, corrupt == "total_loss"),
        _check_encoder(rng, num_encoder_seeds, corrupt == "encoder_end_to_end"),
    ]
