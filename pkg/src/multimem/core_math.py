"""Shared vector/matrix primitives.

Everything here is pure, double precision, and reentrant. These four
operations are the arithmetic floor the memory banks, losses and neighbor
machinery are built on, so their edge cases are pinned tightly:

* ``l2_normalize`` rejects (near-)zero vectors instead of returning NaN.
* ``softmax`` subtracts the row max so scores up to ~1e3 cannot overflow.
* ``minmax_normalize`` maps an all-equal input to all zeros, meaning "no
  discriminative signal" rather than a constant offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, InvalidConfigError, ZeroVectorError

ZERO_NORM_EPS = 1e-12


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Return ``v / ||v||_2``.

    Raises ZeroVectorError when the norm is below 1e-12; a direction cannot
    be recovered from such an input.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < ZERO_NORM_EPS:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm:.3e}")
    return v / norm


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise ``l2_normalize`` for a 2-D array."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms < ZERO_NORM_EPS):
        bad = int(np.argmin(norms))
        raise ZeroVectorError(f"row {bad} has norm {norms[bad]:.3e}")
    return m / norms[:, None]


def cosine_score(u: np.ndarray, v: np.ndarray, alpha1: float) -> float:
    """Temperature-scaled similarity ``(u . v) / alpha1`` for unit-norm inputs.

    The inputs are expected to already be unit vectors (zero-initialized
    memory slots are the one sanctioned exception: their dot product is 0
    and they participate with score 0).
    """
    if alpha1 <= 0.0:
        raise InvalidConfigError(f"alpha1 must be positive, got {alpha1}")
    return float(np.dot(u, v)) / alpha1


def softmax(scores: np.ndarray) -> np.ndarray:
    """Exponential normalization with max-subtraction for overflow safety."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyInputError("softmax of an empty score vector")
    shifted = scores - np.max(scores)
    e = np.exp(shifted)
    return e / np.sum(e)


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax for a 2-D score matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyInputError("softmax of an empty score matrix")
    shifted = scores - np.max(scores, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Map entries affinely onto [0, 1] via ``(x - min) / (max - min)``.

    When all entries are equal the spread is zero and the output is all
    zeros: a flat read carries no signal, so downstream weight rectification
    adds nothing instead of a constant.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyInputError("minmax_normalize of an empty vector")
    lo = float(np.min(values))
    hi = float(np.max(values))
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


@dataclass
class Hyperparams:
    """Scalar knobs shared by the losses, neighbor selection and trainer.

    ``lam`` weighs source vs. target objectives, ``beta`` weighs the
    domain-level loss inside the target objective, ``gamma`` is the degree
    of part-based weight rectification, ``alpha1``/``alpha2`` are the read
    and neighbor-weight temperatures, ``k`` the neighborhood size.
    """

    alpha1: float = 0.05
    alpha2: float = 2.0
    rho: float = 0.0
    gamma: float = 0.2
    lam: float = 0.3
    beta: float = 1.0
    k: int = 10
    triplet_margin: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha1 <= 1.0:
            raise InvalidConfigError(f"alpha1 must be in (0, 1], got {self.alpha1}")
        if self.alpha2 < 0.0:
            raise InvalidConfigError(f"alpha2 must be >= 0, got {self.alpha2}")
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidConfigError(f"rho must be in [0, 1], got {self.rho}")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidConfigError(f"lam must be in [0, 1], got {self.lam}")
        if self.beta < 0.0:
            raise InvalidConfigError(f"beta must be >= 0, got {self.beta}")
        if self.k < 1:
            raise InvalidConfigError(f"k must be a positive integer, got {self.k}")
        if self.triplet_margin < 0.0:
            raise InvalidConfigError(
                f"triplet_margin must be >= 0, got {self.triplet_margin}"
            )
