"""Reciprocal-neighborhood similarity and domain-guided neighbor selection.

``build_similarity`` turns N unit-norm features into a dense N x N
similarity matrix S in (0, 1] by re-ranking cosine distances through
reciprocal neighbor sets:

1. base distance d0(i, j) = (1 - f_i . f_j) / 2, so d0 is in [0, 1];
2. reciprocal sets R(i, k1): j is in R(i, k1) iff each of i, j appears in
   the other's k1+1 nearest list (self included);
3. expansion: R(q, round(k1/2)) is unioned into R(i, k1) whenever at least
   two thirds of it already overlaps R(i, k1);
4. membership vectors V[i] = exp(-d0(i, .)) on the expanded set, row
   normalized, then averaged over each row's k2 nearest rows;
5. d_j(i, j) = 1 - sum(min(V_i, V_j)) / sum(max(V_i, V_j));
6. d*(i, j) = (1 - lambda_r) * d_j + lambda_r * d0, S = 1 - d*, diagonal
   forced to exactly 1 and the matrix symmetrized by averaging.

``reorder_and_select`` then reorders a query's top-2k candidates by how
much their candidate lists overlap the query's own, keeping k of them, and
``soft_weights`` attaches exp(-alpha2 * (1 - S)) confidences.

All three functions are deterministic: every ranking breaks ties by
ascending sample index, and the query always occupies position 0 of its
own selection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRangeError, InsufficientSamplesError, InvalidConfigError


@dataclass
class SimilarityMatrix:
    """Dense symmetric similarity with unit diagonal, plus its build epoch."""

    s: np.ndarray
    epoch_built: int = 0
    _top_lists: dict = field(default_factory=dict, repr=False)

    @property
    def num_samples(self) -> int:
        return self.s.shape[0]

    def top_lists(self, m: int) -> np.ndarray:
        """(N, m) candidate lists: each row ranked by S descending, ties by
        ascending index. Cached per m since selection reuses them heavily."""
        if m not in self._top_lists:
            # stable argsort of -s keeps equal entries in index order
            order = np.argsort(-self.s, axis=1, kind="stable")
            self._top_lists[m] = np.ascontiguousarray(order[:, :m])
        return self._top_lists[m]


@dataclass
class NeighborSelection:
    """Ordered neighbor set of a query; indices[0] is always the query."""

    query: int
    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.indices = np.asarray(self.indices, dtype=np.intp)
        self.weights = np.asarray(self.weights, dtype=np.float64)


def _reciprocal_sets(initial_rank: np.ndarray, k: int) -> list[np.ndarray]:
    """R(i, k) for every i: mutual membership in k+1-long forward lists."""
    n = initial_rank.shape[0]
    sets = []
    for i in range(n):
        forward = initial_rank[i, : k + 1]
        backward = initial_rank[forward, : k + 1]
        mutual = np.nonzero(backward == i)[0]
        sets.append(forward[mutual])
    return sets


def build_similarity(
    features: np.ndarray,
    k1: int = 20,
    k2: int = 6,
    lambda_r: float = 0.3,
    epoch_built: int = 0,
) -> SimilarityMatrix:
    """Re-ranked similarity matrix over unit-norm feature rows."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n < 2:
        raise InsufficientSamplesError(f"need at least 2 samples, got {n}")
    if k1 < 1 or k2 < 1:
        raise InvalidConfigError(f"k1 and k2 must be positive, got {k1}, {k2}")
    if n <= k1:
        raise InsufficientSamplesError(f"need more than k1={k1} samples, got {n}")
    if k2 > n:
        raise InsufficientSamplesError(f"k2={k2} exceeds sample count {n}")
    if not 0.0 <= lambda_r <= 1.0:
        raise InvalidConfigError(f"lambda_r must be in [0, 1], got {lambda_r}")

    d0 = np.clip((1.0 - features @ features.T) / 2.0, 0.0, None)
    initial_rank = np.argsort(d0, axis=1, kind="stable")

    half = int(round(k1 / 2))
    r_full = _reciprocal_sets(initial_rank, k1)
    r_half = _reciprocal_sets(initial_rank, half)

    v = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        # R(i, k1) can only be empty when > k1 exact duplicates crowd i out
        # of its own forward list; fall back to the singleton in that case
        expanded = r_full[i] if r_full[i].size else np.array([i])
        base = set(expanded.tolist())
        for q in r_full[i]:
            candidate = r_half[q]
            overlap = sum(1 for x in candidate if int(x) in base)
            if 3 * overlap >= 2 * len(candidate):
                expanded = np.union1d(expanded, candidate)
        weights = np.exp(-d0[i, expanded])
        v[i, expanded] = weights / weights.sum()

    if k2 != 1:
        v_qe = np.empty_like(v)
        for i in range(n):
            v_qe[i] = v[initial_rank[i, :k2]].mean(axis=0)
        v = v_qe

    # sparse accumulation of sum-min; rows of v sum to 1 so sum-max = 2 - sum-min
    nonzero_rows_of_col = [np.nonzero(v[:, j])[0] for j in range(n)]
    jaccard = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        sum_min = np.zeros(n, dtype=np.float64)
        cols = np.nonzero(v[i])[0]
        for j in cols:
            rows = nonzero_rows_of_col[j]
            sum_min[rows] += np.minimum(v[i, j], v[rows, j])
        jaccard[i] = 1.0 - sum_min / (2.0 - sum_min)

    d_star = (1.0 - lambda_r) * jaccard + lambda_r * d0
    s = 1.0 - d_star
    s = (s + s.T) / 2.0
    np.fill_diagonal(s, 1.0)
    return SimilarityMatrix(s=s, epoch_built=epoch_built)


def reorder_and_select(sim: SimilarityMatrix, query: int, k: int) -> NeighborSelection:
    """Pick the query's k neighbors after overlap-based reordering.

    The candidate pool is the query's top-2k list. Each candidate j is
    scored by how many samples its own top-2k list shares with the query's;
    candidates are ordered by (overlap desc, S desc, index asc). The query
    itself is pinned to position 0 regardless of ties, and the remaining
    k-1 slots are filled from the reordered pool.

    Weights are left as ones here; attach confidences with ``soft_weights``.
    """
    n = sim.num_samples
    if not 0 <= query < n:
        raise IndexOutOfRangeError(f"query {query} outside [0, {n})")
    if k < 1:
        raise InvalidConfigError(f"k must be positive, got {k}")
    if 2 * k > n:
        raise InsufficientSamplesError(f"need 2k={2 * k} <= N={n}")

    pool = sim.top_lists(2 * k)
    candidates = pool[query]

    member = np.zeros(n, dtype=bool)
    member[candidates] = True
    overlaps = member[pool[candidates]].sum(axis=1)

    order = np.lexsort((candidates, -sim.s[query, candidates], -overlaps))
    ranked = candidates[order]

    indices = np.empty(k, dtype=np.intp)
    indices[0] = query
    indices[1:] = ranked[ranked != query][: k - 1]
    return NeighborSelection(query=query, indices=indices, weights=np.ones(k))


def soft_weights(
    sim: SimilarityMatrix, query: int, selection: NeighborSelection, alpha2: float
) -> np.ndarray:
    """Confidence exp(-alpha2 * (1 - S[query, j])) per selected neighbor.

    S[query, query] is exactly 1, so the query's own weight is exactly 1.
    """
    if alpha2 < 0.0:
        raise InvalidConfigError(f"alpha2 must be >= 0, got {alpha2}")
    return np.exp(-alpha2 * (1.0 - sim.s[query, selection.indices]))


def raw_top_k_selection(scores: np.ndarray, query: int, k: int) -> NeighborSelection:
    """Unguided selection: the query plus its k-1 highest-scoring slots.

    Used before the first similarity build and by the instance-only ablation:
    candidates ranked purely by read score (ties by ascending index), hard
    unit weights.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    if k < 1:
        raise InvalidConfigError(f"k must be positive, got {k}")
    if k > n:
        raise InsufficientSamplesError(f"need k={k} <= N={n}")
    order = np.argsort(-scores, kind="stable")
    indices = np.empty(k, dtype=np.intp)
    indices[0] = query
    indices[1:] = order[order != query][: k - 1]
    return NeighborSelection(query=query, indices=indices, weights=np.ones(k))
