"""Exact top-N search.

Queries are processed in fixed-size blocks: each block's distances to the whole
database are one matrix product, and every query's top-N is selected on its own
row. Ties are broken by ascending database row index, so output never depends
on how blocks are spread over workers.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from weakrank import config as cfg
from weakrank.embeddings.store import EmbeddingMatrix
from weakrank.errors import (CorruptFile, DimensionMismatch, DuplicateCandidate, TopNTooLarge,
                             ValidationError, ZeroVector)
from weakrank.utility.files import atomic_write_text
from weakrank.utility.parallel import make_blocks, map_blocks, resolve_n_jobs

logger = logging.getLogger(__name__)

METRICS = ('cosine', 'euclidean')

@dataclass(frozen=True)
class SearchParams:
    metric: str = 'cosine'
    top_n: int = 100
    final_k: int = 10

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValidationError(f"metric must be one of {METRICS}, got '{self.metric}'")
        if self.top_n < 1 or self.final_k < 1:
            raise ValidationError("top_n and final_k must be >= 1")
        if self.final_k > self.top_n:
            raise ValidationError(f"final_k ({self.final_k}) must not exceed top_n ({self.top_n})")

@dataclass(frozen=True)
class RankedList:
    query_id: str
    db_ids: Tuple[str, ...]
    distances: Tuple[float, ...]

    def __post_init__(self):
        if len(self.db_ids) != len(self.distances):
            raise ValidationError(f"Ranked list for '{self.query_id}' has mismatched ids and distances")
        if len(set(self.db_ids)) != len(self.db_ids):
            raise DuplicateCandidate(f"Ranked list for '{self.query_id}' repeats a database id")
        if any(b < a for a, b in zip(self.distances, self.distances[1:])):
            raise ValidationError(f"Distances for '{self.query_id}' are not non-decreasing")

    @property
    def entries(self) -> List[Tuple[str, float]]:
        return list(zip(self.db_ids, self.distances))

    def __len__(self) -> int:
        return len(self.db_ids)

    def head(self, k: int) -> "RankedList":
        return RankedList(self.query_id, self.db_ids[:k], self.distances[:k])

def distance(x: np.ndarray, y: np.ndarray, metric: str = 'cosine') -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"Vectors have shapes {x.shape} and {y.shape}")
    if metric == 'euclidean':
        return float(np.linalg.norm(x - y))
    if metric != 'cosine':
        raise ValidationError(f"metric must be one of {METRICS}, got '{metric}'")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ZeroVector("Cosine distance is undefined for a zero vector")
    return float(np.clip(1 - np.dot(x, y) / (nx * ny), 0.0, 2.0))

def _row_norms(x: np.ndarray, metric: str, side: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    if metric == 'cosine' and (norms == 0).any():
        raise ZeroVector(f"{side} row {int(np.flatnonzero(norms == 0)[0])} is a zero vector")
    return norms

def pairwise_distances(a: np.ndarray, b: np.ndarray, metric: str = 'cosine',
                       a_norms: Optional[np.ndarray] = None,
                       b_norms: Optional[np.ndarray] = None) -> np.ndarray:
    """Dense distance matrix between the rows of `a` and `b` (float64)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a_norms is None:
        a_norms = _row_norms(a, metric, "query")
    if b_norms is None:
        b_norms = _row_norms(b, metric, "database")
    dots = a @ b.T
    if metric == 'cosine':
        return np.clip(1 - dots / np.outer(a_norms, b_norms), 0.0, 2.0)
    squared = a_norms[:, None] ** 2 + b_norms[None, :] ** 2 - 2 * dots
    return np.sqrt(np.clip(squared, 0.0, None))

def select_top(row: np.ndarray, n: int) -> np.ndarray:
    """Indices of the `n` smallest entries, ordered by (value, index)."""
    if n >= row.shape[0]:
        candidates = np.arange(row.shape[0])
    else:
        kth = row[np.argpartition(row, n - 1)[:n]].max()
        candidates = np.flatnonzero(row <= kth)
    order = np.lexsort((candidates, row[candidates]))
    return candidates[order[:n]]

def top_n_search(queries: EmbeddingMatrix, db: EmbeddingMatrix, params: SearchParams,
                 threads: Optional[int] = None, depth: Optional[int] = None) -> List[RankedList]:
    """Exact nearest neighbours of every query; `depth` defaults to `params.top_n`."""
    depth = params.top_n if depth is None else depth
    if queries.dim != db.dim:
        raise DimensionMismatch(f"Query dim {queries.dim} != database dim {db.dim}")
    if depth > db.n:
        raise TopNTooLarge(f"top_n={depth} exceeds database size {db.n}")
    db_data = db.data.astype(np.float64)
    db_norms = _row_norms(db_data, params.metric, "database")
    q_data = queries.data.astype(np.float64)
    q_norms = _row_norms(q_data, params.metric, "query")

    def search_block(block: range) -> List[RankedList]:
        rows = slice(block.start, block.stop)
        dists = pairwise_distances(q_data[rows], db_data, params.metric, q_norms[rows], db_norms)
        results = []
        for offset, q in enumerate(block):
            top = select_top(dists[offset], depth)
            results.append(RankedList(queries.ids[q], tuple(db.ids[i] for i in top),
                                      tuple(float(d) for d in dists[offset, top])))
        return results

    blocks = make_blocks(queries.n, cfg.SEARCH_BLOCK_SIZE)
    n_jobs = resolve_n_jobs(threads)
    logger.info("Searching %d queries against %d database rows (%s, top %d, %d workers)",
                queries.n, db.n, params.metric, depth, n_jobs)
    return [ranked for block in map_blocks(search_block, blocks, n_jobs) for ranked in block]

def write_ranked(ranked: Sequence[RankedList], path: Union[str, Path]) -> None:
    """TSV: query_id, db_id, 1-based rank, distance."""
    lines = []
    for r in ranked:
        for rank, (db_id, dist) in enumerate(r.entries, start=1):
            lines.append(f"{r.query_id}\t{db_id}\t{rank}\t{dist!r}\n")
    atomic_write_text(path, "".join(lines))

def read_ranked(path: Union[str, Path]) -> List[RankedList]:
    grouped: Dict[str, List[Tuple[int, str, float]]] = {}
    with open(path, 'r', encoding='utf-8') as stream:
        for line_no, line in enumerate(stream, start=1):
            line = line.rstrip('\n')
            if not line:
                continue
            fields = line.split('\t')
            if len(fields) != 4:
                raise CorruptFile(f"{path}:{line_no}: expected 4 tab-separated fields")
            try:
                grouped.setdefault(fields[0], []).append((int(fields[2]), fields[1], float(fields[3])))
            except ValueError as err:
                raise CorruptFile(f"{path}:{line_no}: {err}") from err
    ranked = []
    for query_id, rows in grouped.items():
        rows.sort()
        if [rank for rank, _, _ in rows] != list(range(1, len(rows) + 1)):
            raise CorruptFile(f"{path}: ranks for '{query_id}' are not 1..{len(rows)}")
        ranked.append(RankedList(query_id, tuple(r[1] for r in rows), tuple(r[2] for r in rows)))
    return ranked
