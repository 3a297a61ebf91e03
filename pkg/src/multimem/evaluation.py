"""Retrieval and clustering-quality metrics.

Retrieval follows the single-shot protocol: every query is ranked once
against the full gallery by cosine similarity, gallery entries sharing both
the query's identity and camera are excluded from its ranking (this also
removes the query itself when query and gallery are the same set), and ties
break by ascending gallery index. AP comes from the precision staircase at
each relevant hit; Rank-1 is the fraction of queries whose top entry
matches. Queries without any cross-camera match are excluded and counted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import NOISE, PseudoLabeling
from .errors import NoClustersError, NoValidQueriesError
from .reciprocal import NeighborSelection


@dataclass
class RetrievalResult:
    map: float
    rank1: float
    per_query_ap: np.ndarray
    num_excluded: int


def evaluate_retrieval(
    query_embeddings: np.ndarray,
    gallery_embeddings: np.ndarray,
    query_ids: np.ndarray,
    gallery_ids: np.ndarray,
    query_cams: np.ndarray,
    gallery_cams: np.ndarray,
) -> RetrievalResult:
    q = np.asarray(query_embeddings, dtype=np.float64)
    g = np.asarray(gallery_embeddings, dtype=np.float64)
    q_norm = np.linalg.norm(q, axis=1, keepdims=True)
    g_norm = np.linalg.norm(g, axis=1, keepdims=True)
    scores = (q / np.maximum(q_norm, 1e-30)) @ (g / np.maximum(g_norm, 1e-30)).T

    query_ids = np.asarray(query_ids)
    gallery_ids = np.asarray(gallery_ids)
    query_cams = np.asarray(query_cams)
    gallery_cams = np.asarray(gallery_cams)

    # stable sort of -scores: ties fall back to ascending gallery index
    order = np.argsort(-scores, axis=1, kind="stable")

    aps = []
    rank1_hits = 0
    excluded = 0
    for i in range(q.shape[0]):
        ranked = order[i]
        same_id = gallery_ids[ranked] == query_ids[i]
        same_cam = gallery_cams[ranked] == query_cams[i]
        keep = ~(same_id & same_cam)
        relevant = (same_id & ~same_cam)[keep]
        num_rel = int(relevant.sum())
        if num_rel == 0:
            excluded += 1
            continue
        hits = np.cumsum(relevant)
        precision_at = hits / (np.arange(relevant.size) + 1.0)
        aps.append(float((precision_at * relevant).sum() / num_rel))
        rank1_hits += int(relevant[0])
    if not aps:
        raise NoValidQueriesError("no query has a cross-camera match")
    per_query_ap = np.asarray(aps)
    return RetrievalResult(
        map=float(per_query_ap.mean()),
        rank1=rank1_hits / len(aps),
        per_query_ap=per_query_ap,
        num_excluded=excluded,
    )


def neighbor_precision(
    selections: list[NeighborSelection],
    true_ids: np.ndarray,
    restrict_to: np.ndarray | None = None,
) -> float:
    """Mean fraction of each selection (minus the query) sharing the query's id.

    With k=1 the selection is the query alone and the convention is 1.0.
    ``restrict_to`` limits the average to queries whose true identity is in
    the given id set (used to probe the confuser pairs).
    """
    true_ids = np.asarray(true_ids)
    fractions = []
    for sel in selections:
        qid = true_ids[sel.query]
        if restrict_to is not None and qid not in restrict_to:
            continue
        rest = sel.indices[1:]
        if rest.size == 0:
            fractions.append(1.0)
        else:
            fractions.append(float(np.mean(true_ids[rest] == qid)))
    return float(np.mean(fractions)) if fractions else float("nan")


def cluster_purity(labeling: PseudoLabeling, true_ids: np.ndarray) -> float:
    """Share of clustered samples whose cluster's majority identity matches
    their own; noise samples are excluded from both numerator and denominator."""
    if labeling.num_clusters < 1:
        raise NoClustersError("labeling has no clusters")
    true_ids = np.asarray(true_ids)
    agree = 0
    total = 0
    for members in labeling.member_lists:
        ids, counts = np.unique(true_ids[members], return_counts=True)
        agree += int(counts.max())
        total += len(members)
    return agree / total


def noise_fraction(labeling: PseudoLabeling) -> float:
    return float(np.mean(labeling.labels == NOISE))
