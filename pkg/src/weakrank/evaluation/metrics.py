"""Recall@k and MAR@k against instance-level ground truth."""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import AbstractSet, Dict, FrozenSet, List, Mapping, Sequence, Tuple, Union

import numpy as np

from weakrank.errors import (CorruptFile, DuplicateCandidate, EmptyRelevantSet, MissingGroundTruth,
                             ValidationError)
from weakrank.retrieval.search import RankedList
from weakrank.utility.files import atomic_write_text

logger = logging.getLogger(__name__)

DENOMINATORS = ('min', 'full')

@dataclass(frozen=True)
class GroundTruth:
    relevant: Mapping[str, FrozenSet[str]]

    def __post_init__(self):
        frozen = {}
        for query_id, ids in self.relevant.items():
            if not ids:
                raise EmptyRelevantSet(f"Query '{query_id}' has no relevant items")
            frozen[query_id] = frozenset(ids)
        object.__setattr__(self, 'relevant', frozen)

    def __len__(self) -> int:
        return len(self.relevant)

    def __contains__(self, query_id: str) -> bool:
        return query_id in self.relevant

    def __getitem__(self, query_id: str) -> FrozenSet[str]:
        try:
            return self.relevant[query_id]
        except KeyError:
            raise MissingGroundTruth(query_id) from None

    def query_ids(self) -> List[str]:
        return sorted(self.relevant)

    def save(self, path: Union[str, Path]) -> None:
        lines = (f"{q}\t{','.join(sorted(self.relevant[q]))}\n" for q in self.query_ids())
        atomic_write_text(path, "".join(lines))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GroundTruth":
        relevant: Dict[str, FrozenSet[str]] = {}
        with open(path, 'r', encoding='utf-8') as stream:
            for line_no, line in enumerate(stream, start=1):
                line = line.rstrip('\n')
                if not line:
                    continue
                query_id, sep, ids = line.partition('\t')
                if not sep:
                    raise CorruptFile(f"{path}:{line_no}: missing tab separator")
                if query_id in relevant:
                    raise CorruptFile(f"{path}:{line_no}: duplicate query '{query_id}'")
                relevant[query_id] = frozenset(i for i in ids.split(',') if i)
        return cls(relevant)

@dataclass(frozen=True)
class EvalReport:
    k: int
    per_query: Tuple[Tuple[str, float], ...] = field(default_factory=tuple)
    mar: float = 0.0

    @property
    def num_queries(self) -> int:
        return len(self.per_query)

    def to_json(self) -> str:
        payload = {"k": self.k, "mar": self.mar, "num_queries": self.num_queries,
                   "per_query": [{"id": q, "recall": r} for q, r in self.per_query]}
        return json.dumps(payload, indent=1) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EvalReport":
        with open(path, 'r', encoding='utf-8') as stream:
            try:
                payload = json.load(stream)
                per_query = tuple((row["id"], float(row["recall"])) for row in payload["per_query"])
                return cls(k=int(payload["k"]), per_query=per_query, mar=float(payload["mar"]))
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise CorruptFile(f"{path}: not an evaluation report ({err})") from err

def recall_at_k(ranked: Union[RankedList, Sequence[str]], relevant: AbstractSet[str], k: int,
                denominator: str = 'min') -> float:
    """|top-k ∩ relevant| / min(|relevant|, k), or / |relevant| with denominator='full'."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if denominator not in DENOMINATORS:
        raise ValidationError(f"denominator must be one of {DENOMINATORS}, got '{denominator}'")
    if not relevant:
        raise EmptyRelevantSet("Relevant set is empty")
    ids = ranked.db_ids if isinstance(ranked, RankedList) else tuple(ranked)
    if len(set(ids)) != len(ids):
        raise DuplicateCandidate("Ranked list repeats a database id")
    hits = sum(1 for item_id in ids[:k] if item_id in relevant)
    return hits / (min(len(relevant), k) if denominator == 'min' else len(relevant))

def mar_at_k(ranked: Sequence[RankedList], gt: GroundTruth, k: int,
             denominator: str = 'min') -> EvalReport:
    """Mean recall@k over every ranked query; queries are reported in input order.

    Every ranked query needs ground truth and every ground-truth query needs a
    ranked list: a missing query is an error, never a silent zero.
    """
    seen = set()
    per_query = []
    for r in ranked:
        if r.query_id in seen:
            raise ValidationError(f"Query '{r.query_id}' has more than one ranked list")
        seen.add(r.query_id)
        per_query.append((r.query_id, recall_at_k(r, gt[r.query_id], k, denominator)))
    unranked = [q for q in gt.query_ids() if q not in seen]
    if unranked:
        raise ValidationError(f"{len(unranked)} ground-truth queries have no ranked list, e.g. '{unranked[0]}'")
    if not per_query:
        raise ValidationError("Nothing to evaluate")
    mar = float(np.mean([recall for _, recall in per_query]))
    logger.info("MAR@%d = %.4f over %d queries", k, mar, len(per_query))
    return EvalReport(k=k, per_query=tuple(per_query), mar=mar)
