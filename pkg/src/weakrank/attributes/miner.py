"""Pseudo-attribute mining from product titles.

Titles are split on whitespace, frequent tokens become the pseudo-attribute
vocabulary and every item is encoded as the set of vocabulary ids found in its
title. The soft multi-label target of an item with K attributes puts mass 1/K
on each of them.
"""
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from weakrank import config as cfg
from weakrank.errors import CorruptFile, EmptyVocab, InvalidAttributeId, ValidationError
from weakrank.utility.files import atomic_write_text
from weakrank.utility.parallel import chunked, map_blocks

logger = logging.getLogger(__name__)

COUNT_MODES = ('occurrences', 'titles')

@dataclass(frozen=True)
class VocabEntry:
    token: str
    count: int
    id: int

@dataclass(frozen=True)
class AttributeVocab:
    entries: Tuple[VocabEntry, ...]
    min_count: int
    _index: Dict[str, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for position, entry in enumerate(self.entries):
            if entry.id != position:
                raise ValidationError(f"Vocabulary ids must be contiguous, got id {entry.id} at {position}")
            if entry.token in index:
                raise ValidationError(f"Duplicate vocabulary token '{entry.token}'")
            index[entry.token] = entry.id
        object.__setattr__(self, '_index', index)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def num_classes(self) -> int:
        return len(self.entries)

    def get_id(self, token: str) -> Optional[int]:
        return self._index.get(token)

    def tokens(self) -> List[str]:
        return [entry.token for entry in self.entries]

    def to_json(self) -> str:
        payload = [{"token": e.token, "count": e.count, "id": e.id} for e in self.entries]
        return json.dumps(payload, ensure_ascii=False, indent=1) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path: Union[str, Path], min_count: int = 0) -> "AttributeVocab":
        with open(path, 'r', encoding='utf-8') as stream:
            try:
                payload = json.load(stream)
            except json.JSONDecodeError as err:
                raise CorruptFile(f"{path}: not a vocabulary JSON file ({err})") from err
        try:
            entries = tuple(VocabEntry(str(e["token"]), int(e["count"]), int(e["id"])) for e in payload)
        except (KeyError, TypeError) as err:
            raise CorruptFile(f"{path}: malformed vocabulary entry ({err})") from err
        if not entries:
            raise EmptyVocab(f"{path}: vocabulary is empty")
        return cls(entries=entries, min_count=min_count)

@dataclass(frozen=True)
class ItemAttributes:
    item_id: str
    attr_ids: Tuple[int, ...]

    def __post_init__(self):
        if not self.attr_ids:
            raise ValidationError(f"Item '{self.item_id}' has no attributes")
        if any(b <= a for a, b in zip(self.attr_ids, self.attr_ids[1:])):
            raise ValidationError(f"Attribute ids of '{self.item_id}' must be strictly increasing")

    @property
    def k(self) -> int:
        return len(self.attr_ids)

@dataclass(frozen=True)
class SoftTargets:
    num_samples: int
    num_classes: int
    rows: Tuple[ItemAttributes, ...]

    @property
    def item_ids(self) -> List[str]:
        return [row.item_id for row in self.rows]

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        dense = np.zeros((self.num_samples, self.num_classes), dtype=dtype)
        for i, row in enumerate(self.rows):
            dense[i, list(row.attr_ids)] = 1.0 / row.k
        return dense

    def subset(self, indices: Sequence[int]) -> "SoftTargets":
        rows = tuple(self.rows[i] for i in indices)
        return SoftTargets(num_samples=len(rows), num_classes=self.num_classes, rows=rows)

    @classmethod
    def from_labels(cls, item_ids: Sequence[str], labels: Sequence[int],
                    num_classes: Optional[int] = None) -> "SoftTargets":
        """One-hot targets from coarse class ids (the single-label baseline)."""
        labels = [int(label) for label in labels]
        if num_classes is None:
            num_classes = max(labels) + 1
        rows = tuple(ItemAttributes(item_id, (label,)) for item_id, label in zip(item_ids, labels))
        for row in rows:
            if not 0 <= row.attr_ids[0] < num_classes:
                raise InvalidAttributeId(f"Label {row.attr_ids[0]} of '{row.item_id}' outside [0, {num_classes})")
        return cls(num_samples=len(rows), num_classes=num_classes, rows=rows)

def tokenize(title: str, lowercase: bool = True) -> List[str]:
    """Split on runs of whitespace; tokens are kept verbatim apart from lowercasing."""
    tokens = title.split()
    if lowercase:
        tokens = [token.lower() for token in tokens]
    return tokens

def _count_chunk(titles: Sequence[str], lowercase: bool, count_mode: str) -> Counter:
    counts = Counter()
    for title in titles:
        tokens = tokenize(title, lowercase)
        counts.update(set(tokens) if count_mode == 'titles' else tokens)
    return counts

def build_vocab(titles: Sequence[str], min_count: int, lowercase: bool = True,
                count_mode: str = 'occurrences', n_jobs: int = 1) -> AttributeVocab:
    """Keep tokens seen more than `min_count` times, ordered by count then token."""
    if min_count < 1:
        raise ValidationError(f"min_count must be >= 1, got {min_count}")
    if count_mode not in COUNT_MODES:
        raise ValidationError(f"count_mode must be one of {COUNT_MODES}, got '{count_mode}'")
    titles = list(titles)
    chunks = list(chunked(titles, cfg.COUNT_CHUNK_SIZE))
    partial = map_blocks(lambda chunk: _count_chunk(chunk, lowercase, count_mode), chunks, n_jobs)
    counts = reduce(lambda a, b: a + b, partial, Counter())

    kept = sorted(((token, n) for token, n in counts.items() if n > min_count),
                  key=lambda item: (-item[1], item[0]))
    if not kept:
        raise EmptyVocab(f"No token occurs more than {min_count} times in {len(titles)} titles")
    entries = tuple(VocabEntry(token, count, i) for i, (token, count) in enumerate(kept))
    logger.info("Mined %d pseudo-attributes from %d distinct tokens", len(entries), len(counts))
    return AttributeVocab(entries=entries, min_count=min_count)

def encode_item(item_id: str, title: str, vocab: AttributeVocab,
                lowercase: bool = True) -> Optional[ItemAttributes]:
    """Attribute set of one item, or None when no title token is in the vocabulary."""
    ids = {vocab.get_id(token) for token in tokenize(title, lowercase)}
    ids.discard(None)
    if not ids:
        return None
    return ItemAttributes(item_id=item_id, attr_ids=tuple(sorted(ids)))

def encode_corpus(records: Iterable[Tuple[str, str]], vocab: AttributeVocab,
                  lowercase: bool = True) -> List[ItemAttributes]:
    items, n_dropped = [], 0
    for item_id, title in records:
        item = encode_item(item_id, title, vocab, lowercase)
        if item is None:
            n_dropped += 1
        else:
            items.append(item)
    if n_dropped:
        logger.warning("Dropped %d items whose titles contain no pseudo-attribute", n_dropped)
    return items

def build_soft_targets(items: Sequence[ItemAttributes], vocab: AttributeVocab) -> SoftTargets:
    n_classes = len(vocab)
    for item in items:
        if item.attr_ids[-1] >= n_classes or item.attr_ids[0] < 0:
            raise InvalidAttributeId(f"Item '{item.item_id}' references ids outside [0, {n_classes})")
    return SoftTargets(num_samples=len(items), num_classes=n_classes, rows=tuple(items))

def histogram(vocab: AttributeVocab, top_n: int) -> List[Tuple[str, int]]:
    if top_n < 1:
        raise ValidationError(f"top_n must be >= 1, got {top_n}")
    return [(entry.token, entry.count) for entry in vocab.entries[:top_n]]

def histogram_frame(hist: Sequence[Tuple[str, int]]) -> pd.DataFrame:
    return pd.DataFrame({'rank': np.arange(1, len(hist) + 1),
                         'token': [token for token, _ in hist],
                         'count': [count for _, count in hist]})

def write_histogram(hist: Sequence[Tuple[str, int]], path: Union[str, Path]) -> None:
    atomic_write_text(path, histogram_frame(hist).to_csv(index=False, lineterminator='\n'))

def read_corpus(path: Union[str, Path]) -> List[Tuple[str, str]]:
    """Read `item_id<TAB>title` records; a line without a tab is an item with an empty title."""
    records = []
    with open(path, 'r', encoding='utf-8') as stream:
        for line in stream:
            line = line.rstrip('\n').rstrip('\r')
            if not line:
                continue
            item_id, _, title = line.partition('\t')
            records.append((item_id, title))
    return records

def write_corpus(records: Iterable[Tuple[str, str]], path: Union[str, Path]) -> None:
    atomic_write_text(path, "".join(f"{item_id}\t{title}\n" for item_id, title in records))

def write_targets(items: Iterable[ItemAttributes], path: Union[str, Path]) -> None:
    lines = (f"{item.item_id}\t{','.join(str(i) for i in item.attr_ids)}\n" for item in items)
    atomic_write_text(path, "".join(lines))

def read_targets(path: Union[str, Path]) -> List[ItemAttributes]:
    items = []
    with open(path, 'r', encoding='utf-8') as stream:
        for line_no, line in enumerate(stream, start=1):
            line = line.rstrip('\n')
            if not line:
                continue
            item_id, sep, ids = line.partition('\t')
            if not sep:
                raise CorruptFile(f"{path}:{line_no}: missing tab separator")
            try:
                attr_ids = tuple(int(i) for i in ids.split(','))
            except ValueError as err:
                raise CorruptFile(f"{path}:{line_no}: bad attribute ids '{ids}'") from err
            items.append(ItemAttributes(item_id=item_id, attr_ids=attr_ids))
    return items


def write_labels(labels: Iterable[Tuple[str, int]], path: Union[str, Path]) -> None:
    atomic_write_text(path, "".join(f"{item_id}\t{label}\n" for item_id, label in labels))

def read_labels(path: Union[str, Path]) -> List[Tuple[str, int]]:
    """Coarse class ids, `item_id<TAB>class_id` per line."""
    labels = []
    with open(path, 'r', encoding='utf-8') as stream:
        for line_no, line in enumerate(stream, start=1):
            line = line.rstrip('\n')
            if not line:
                continue
            item_id, sep, label = line.partition('\t')
            if not sep:
                raise CorruptFile(f"{path}:{line_no}: missing tab separator")
            try:
                labels.append((item_id, int(label)))
            except ValueError as err:
                raise CorruptFile(f"{path}:{line_no}: bad class id '{label}'") from err
    return labels
