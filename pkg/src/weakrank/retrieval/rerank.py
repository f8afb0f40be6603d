"""k-reciprocal re-ranking restricted to each query's top-N candidates.

For one query the graph is {query} + its candidates. Every node ranks the
others by (distance, position) with itself first; kNN(p, k) is the first k + 1
entries of that ranking. The query is a node of the graph but never a result.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from weakrank.embeddings.store import EmbeddingMatrix
from weakrank.errors import DimensionMismatch, InsufficientCandidates, ValidationError
from weakrank.retrieval.search import METRICS, RankedList, pairwise_distances
from weakrank.utility.parallel import map_blocks, resolve_n_jobs

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class RerankParams:
    k1: int = 8
    k2: int = 5
    alpha: float = 0.5

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise ValidationError("k1 and k2 must be >= 1")
        if self.k2 > self.k1:
            raise ValidationError(f"k2 ({self.k2}) must not exceed k1 ({self.k1})")
        if not 0 <= self.alpha <= 1:
            raise ValidationError(f"alpha must be in [0, 1], got {self.alpha}")

    @property
    def k1_half(self) -> int:
        return math.ceil(self.k1 / 2)

def neighbour_ranking(dist: np.ndarray) -> np.ndarray:
    """Row p lists all nodes ordered by (dist[p], index), with p itself first."""
    n = dist.shape[0]
    keyed = dist.copy()
    np.fill_diagonal(keyed, -1.0)
    index = np.broadcast_to(np.arange(n), (n, n))
    return np.lexsort((index, keyed), axis=-1)

def reciprocal_sets(ranking: np.ndarray, k: int) -> np.ndarray:
    """Boolean matrix R with R[p, g] iff g in kNN(p, k) and p in kNN(g, k)."""
    n = ranking.shape[0]
    knn = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), min(k + 1, n))
    knn[rows, ranking[:, :k + 1].ravel()] = True
    return knn & knn.T

def expanded_sets(ranking: np.ndarray, params: RerankParams) -> np.ndarray:
    """R*(p, k1): R(p, k1) plus every R(g, ceil(k1/2)) of g in R(p, k1) that overlaps it by >= 2/3."""
    recip = reciprocal_sets(ranking, params.k1)
    half = reciprocal_sets(ranking, params.k1_half)
    half_int = half.astype(np.int64)
    # overlap[p, g] = |R(g, k1/2) & R(p, k1)|
    overlap = recip.astype(np.int64) @ half_int.T
    half_sizes = half_int.sum(axis=1)
    accepted = recip & (3 * overlap >= 2 * half_sizes[None, :])
    return recip | ((accepted.astype(np.int64) @ half_int) > 0)

def jaccard_to_query(dist: np.ndarray, params: RerankParams) -> np.ndarray:
    """Jaccard distance between node 0 (the query) and every candidate node."""
    ranking = neighbour_ranking(dist)
    encoding = np.where(expanded_sets(ranking, params), np.exp(-dist), 0.0)
    k2 = min(params.k2, dist.shape[0])
    encoding = encoding[ranking[:, :k2]].mean(axis=1)
    query, candidates = encoding[0], encoding[1:]
    shared = np.minimum(query, candidates).sum(axis=1)
    union = np.maximum(query, candidates).sum(axis=1)
    return 1 - shared / union

def rerank_one(query_vec: np.ndarray, candidates: np.ndarray, candidate_rows: np.ndarray,
               params: RerankParams, metric: str, final_k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Re-rank one query; returns (order into candidates, final distances)."""
    nodes = np.vstack([query_vec[None, :], candidates]).astype(np.float64)
    dist = pairwise_distances(nodes, nodes, metric)
    np.fill_diagonal(dist, 0.0)
    original = dist[0, 1:]
    final = (1 - params.alpha) * jaccard_to_query(dist, params) + params.alpha * original
    order = np.lexsort((candidate_rows, original, final))[:final_k]
    return order, final[order]

def k_reciprocal_rerank(queries: EmbeddingMatrix, db: EmbeddingMatrix, initial: Sequence[RankedList],
                        params: RerankParams, final_k: int, metric: str = 'cosine',
                        threads: Optional[int] = None) -> List[RankedList]:
    if metric not in METRICS:
        raise ValidationError(f"metric must be one of {METRICS}, got '{metric}'")
    if queries.dim != db.dim:
        raise DimensionMismatch(f"Query dim {queries.dim} != database dim {db.dim}")
    needed = max(params.k1 + 1, final_k)
    q_index, db_index = queries.index(), db.index()
    for ranked in initial:
        if len(ranked) < needed:
            raise InsufficientCandidates(f"Query '{ranked.query_id}' has {len(ranked)} candidates, "
                                         f"re-ranking needs at least {needed}")
        if ranked.query_id not in q_index:
            raise ValidationError(f"Ranked query '{ranked.query_id}' is not in the query matrix")

    def rerank_block(block: Sequence[RankedList]) -> List[RankedList]:
        out = []
        for ranked in block:
            rows = np.array([db_index[i] for i in ranked.db_ids])
            order, dists = rerank_one(queries.data[q_index[ranked.query_id]], db.data[rows], rows,
                                      params, metric, final_k)
            out.append(RankedList(ranked.query_id, tuple(ranked.db_ids[i] for i in order),
                                  tuple(float(d) for d in dists)))
        return out

    blocks = [list(initial[i:i + 16]) for i in range(0, len(initial), 16)]
    n_jobs = resolve_n_jobs(threads)
    logger.info("Re-ranking %d queries (k1=%d, k2=%d, alpha=%.2f, %d workers)",
                len(initial), params.k1, params.k2, params.alpha, n_jobs)
    return [r for block in map_blocks(rerank_block, blocks, n_jobs) for r in block]
