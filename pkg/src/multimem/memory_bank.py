"""Non-parametric memory banks.

A bank is a matrix of unit-norm slots with two contracts:

* read: softmax over temperature-scaled cosine scores between a query and
  every slot, yielding a probability per slot;
* write: running-average blend of the addressed slot with a fresh feature,
  followed by renormalization. Writes never receive gradients.

Three levels share this implementation. Instance and part banks hold one
slot per target sample and are zero-initialized (a zero slot reads as
score 0 until its first write). The domain bank holds one slot per pseudo
class and is rebuilt from cluster centroids every time the similarity
matrix is refreshed, so its slot count changes over a run.
"""

from __future__ import annotations

import enum
from typing import TextIO

import numpy as np

from . import core_math
from .errors import (
    DimensionMismatchError,
    EmptyClusterError,
    IndexOutOfRangeError,
    InvalidConfigError,
    ZeroVectorError,
)


class MemoryLevel(enum.Enum):
    INSTANCE = "instance"
    PART_UPPER = "part_upper"
    PART_BOTTOM = "part_bottom"
    DOMAIN = "domain"


class MemoryBank:
    """Fixed-size bank of unit-norm (or still-zero) slots."""

    def __init__(self, num_slots: int, dim: int, level: MemoryLevel) -> None:
        if num_slots < 1:
            raise InvalidConfigError(f"bank needs at least one slot, got {num_slots}")
        if dim < 1:
            raise InvalidConfigError(f"bank needs dim >= 1, got {dim}")
        self.level = level
        self.slots = np.zeros((num_slots, dim), dtype=np.float64)

    @property
    def num_slots(self) -> int:
        return self.slots.shape[0]

    @property
    def dim(self) -> int:
        return self.slots.shape[1]

    def read_probabilities(self, f: np.ndarray, alpha1: float) -> np.ndarray:
        """Probability of the query matching each slot.

        Softmax over ``(f . slot_j) / alpha1``. Zero-initialized slots
        contribute a score of exactly 0 rather than being masked out, so the
        distribution always covers all slots.
        """
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (self.dim,):
            raise DimensionMismatchError(
                f"query shape {f.shape} does not match slot dim {self.dim}"
            )
        return core_math.softmax(self.slots @ f / alpha1)

    def read_probabilities_batch(self, queries: np.ndarray, alpha1: float) -> np.ndarray:
        """Vectorized ``read_probabilities`` for a (B, D) query stack."""
        queries = np.asarray(queries, dtype=np.float64)
        if queries.ndim != 2 or queries.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"query stack shape {queries.shape} does not match slot dim {self.dim}"
            )
        return core_math.softmax_rows(queries @ self.slots.T / alpha1)

    def write_slot(self, index: int, f: np.ndarray, rho: float) -> None:
        """Blend ``rho * slot + (1 - rho) * f`` into the slot and renormalize.

        Only the addressed slot changes. rho=0 is a full overwrite, rho=1 a
        no-op on the direction (the slot is renormalized either way).
        """
        if not 0 <= index < self.num_slots:
            raise IndexOutOfRangeError(
                f"slot index {index} outside [0, {self.num_slots})"
            )
        if not 0.0 <= rho <= 1.0:
            raise InvalidConfigError(f"rho must be in [0, 1], got {rho}")
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (self.dim,):
            raise DimensionMismatchError(
                f"feature shape {f.shape} does not match slot dim {self.dim}"
            )
        blended = rho * self.slots[index] + (1.0 - rho) * f
        norm = float(np.linalg.norm(blended))
        if norm < core_math.ZERO_NORM_EPS:
            raise ZeroVectorError(
                f"write to slot {index} cancelled out (blend norm {norm:.3e})"
            )
        self.slots[index] = blended / norm

    def write_batch(self, indices: np.ndarray, features: np.ndarray, rho: float) -> None:
        for idx, f in zip(np.asarray(indices, dtype=int), features):
            self.write_slot(int(idx), f, rho)

    def dump(self, stream: TextIO) -> None:
        """One header line ``level,num_slots,dim`` then one CSV row per slot."""
        stream.write(f"{self.level.value},{self.num_slots},{self.dim}\n")
        for row in self.slots:
            stream.write(",".join(f"{x:.17g}" for x in row) + "\n")

    @classmethod
    def load(cls, stream: TextIO) -> "MemoryBank":
        header = stream.readline().strip().split(",")
        level, num_slots, dim = MemoryLevel(header[0]), int(header[1]), int(header[2])
        bank = cls(num_slots, dim, level)
        for i in range(num_slots):
            bank.slots[i] = [float(x) for x in stream.readline().split(",")]
        return bank


def rebuild_domain_bank(features: np.ndarray, labeling) -> MemoryBank:
    """Fresh domain bank: slot c is the normalized mean feature of cluster c.

    Noise-labelled samples never enter a centroid. Slot identities do not
    survive across rebuilds; the cluster count is whatever the most recent
    labeling produced.
    """
    features = np.asarray(features, dtype=np.float64)
    if labeling.num_clusters < 1:
        raise EmptyClusterError("labeling has no clusters")
    bank = MemoryBank(labeling.num_clusters, features.shape[1], MemoryLevel.DOMAIN)
    for c, members in enumerate(labeling.member_lists):
        if len(members) == 0:
            raise EmptyClusterError(f"cluster {c} has no members")
        bank.slots[c] = core_math.l2_normalize(features[members].mean(axis=0))
    return bank
