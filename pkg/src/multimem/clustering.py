"""Density clustering of target samples on the re-ranked distance 1 - S.

Classic density semantics, pinned deterministically:

* a point is a core point when at least ``min_cluster_size`` samples
  (itself included) lie within ``eps`` of it;
* clusters are connected components of core points under the eps relation;
* a non-core point within eps of some core point joins the cluster of its
  nearest such core (ties go to the lowest core index);
* everything else is noise, labelled -1.

Cluster ids are renumbered by each cluster's lowest member index, so the
output is a pure function of the distance matrix.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, NoClustersError

NOISE = -1


@dataclass
class PseudoLabeling:
    """Cluster assignment per sample plus per-cluster member lists."""

    labels: np.ndarray
    num_clusters: int
    member_lists: list[np.ndarray]

    def members_of(self, c: int) -> np.ndarray:
        return self.member_lists[c]

    @property
    def noise_fraction(self) -> float:
        return float(np.mean(self.labels == NOISE))


def cluster(s: np.ndarray, eps: float, min_cluster_size: int) -> PseudoLabeling:
    """Partition samples into pseudo classes from similarity matrix ``s``."""
    if not 0.0 < eps < 1.0:
        raise InvalidConfigError(f"eps must be in (0, 1), got {eps}")
    if min_cluster_size < 1:
        raise InvalidConfigError(
            f"min_cluster_size must be positive, got {min_cluster_size}"
        )
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    if n < min_cluster_size:
        raise InvalidConfigError(
            f"only {n} samples but min_cluster_size={min_cluster_size}"
        )

    within = (1.0 - s) <= eps
    core = within.sum(axis=1) >= min_cluster_size

    labels = np.full(n, NOISE, dtype=np.intp)
    current = 0
    for start in range(n):
        if not core[start] or labels[start] != NOISE:
            continue
        queue = deque([start])
        labels[start] = current
        while queue:
            i = queue.popleft()
            for j in np.nonzero(within[i] & core)[0]:
                if labels[j] == NOISE:
                    labels[j] = current
                    queue.append(int(j))
        current += 1

    # border points: nearest core within eps decides the cluster
    core_idx = np.nonzero(core)[0]
    if core_idx.size:
        for i in np.nonzero(~core)[0]:
            reachable = core_idx[within[i, core_idx]]
            if reachable.size:
                dist = 1.0 - s[i, reachable]
                labels[i] = labels[reachable[np.argmin(dist)]]

    # border defection to another cluster can strand a cluster below the
    # size floor; demote such clusters to noise so the floor always holds
    for c in range(current):
        members = labels == c
        if members.sum() < min_cluster_size:
            labels[members] = NOISE

    if not np.any(labels != NOISE):
        raise NoClustersError("every sample is noise at the current eps")
    kept = np.unique(labels[labels != NOISE])
    dense = np.full(current, NOISE, dtype=np.intp)
    dense[kept] = np.arange(kept.size)
    labels = np.where(labels == NOISE, NOISE, dense[labels])
    current = kept.size

    # renumber by lowest member index for order independence
    first_member = np.full(current, n, dtype=np.intp)
    for i in range(n):
        c = labels[i]
        if c != NOISE and i < first_member[c]:
            first_member[c] = i
    remap = np.empty(current, dtype=np.intp)
    remap[np.argsort(first_member, kind="stable")] = np.arange(current)
    relabeled = np.where(labels == NOISE, NOISE, remap[labels])

    members = [np.nonzero(relabeled == c)[0] for c in range(current)]
    return PseudoLabeling(labels=relabeled, num_clusters=current, member_lists=members)
