"""Seeded synthetic instance-retrieval benchmark.

Coarse classes hold many instances; each instance owns a set of attribute
tokens drawn from a Zipf-like law and several noisy feature views. Instance
offsets are a linear map of the instance's attribute indicator vector, so the
title tokens identify the instance while the coarse label does not.

View 0 of every instance is the query, the remaining views go to the database.
"""
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Set, Tuple, Union

import numpy as np

from weakrank.attributes.miner import write_corpus, write_labels
from weakrank.embeddings import store
from weakrank.embeddings.store import EmbeddingMatrix
from weakrank.errors import InvalidConfig
from weakrank.evaluation.metrics import GroundTruth
from weakrank.utility.config import dump_config
from weakrank.utility.files import atomic_write_text

logger = logging.getLogger(__name__)

MAX_RESAMPLES = 1000

CORPUS_FILE = 'corpus.tsv'
LABELS_FILE = 'labels.tsv'
QUERY_FILE = 'query.emb'
DB_FILE = 'db.emb'
GT_FILE = 'gt.tsv'
CONFIG_FILE = 'synth.cfg'

@dataclass(frozen=True)
class SynthConfig:
    num_coarse_classes: int = 10
    instances_per_class: int = 50
    views_per_instance: int = 3
    feature_dim: int = 64
    vocab_size: int = 200
    attrs_per_instance: int = 5
    class_signal: float = 1.0
    instance_signal: float = 1.0
    noise_sigma: float = 0.6
    zipf_exponent: float = 1.0
    seed: int = 7

    def __post_init__(self):
        for name in ('num_coarse_classes', 'instances_per_class', 'feature_dim',
                     'vocab_size', 'attrs_per_instance'):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.views_per_instance < 2:
            raise InvalidConfig(f"views_per_instance must be >= 2 (one query view), "
                                f"got {self.views_per_instance}")
        if self.attrs_per_instance > self.vocab_size:
            raise InvalidConfig(f"attrs_per_instance ({self.attrs_per_instance}) exceeds "
                                f"vocab_size ({self.vocab_size})")
        for name in ('class_signal', 'instance_signal', 'noise_sigma', 'zipf_exponent'):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be >= 0, got {getattr(self, name)}")
        if math.comb(self.vocab_size, self.attrs_per_instance) < self.instances_per_class:
            raise InvalidConfig("Too few distinct attribute sets for instances_per_class; "
                                "raise vocab_size or attrs_per_instance")

    def dump(self) -> str:
        return dump_config(asdict(self))

@dataclass(frozen=True, eq=False)
class SynthDataset:
    config: SynthConfig
    features: EmbeddingMatrix
    coarse_labels: np.ndarray
    titles: List[str]
    is_query: np.ndarray
    ground_truth: GroundTruth
    instance_tokens: Dict[str, Tuple[str, ...]]

    def queries(self) -> EmbeddingMatrix:
        return self.features.take([i for i, q in zip(self.features.ids, self.is_query) if q])

    def database(self) -> EmbeddingMatrix:
        return self.features.take([i for i, q in zip(self.features.ids, self.is_query) if not q])

    def corpus(self) -> List[Tuple[str, str]]:
        return list(zip(self.features.ids, self.titles))

    def labels(self) -> List[Tuple[str, int]]:
        return [(item_id, int(c)) for item_id, c in zip(self.features.ids, self.coarse_labels)]

    def generating_tokens(self) -> Set[str]:
        return {token for tokens in self.instance_tokens.values() for token in tokens}

def token_name(j: int) -> str:
    return f"attr{j:04d}"

def view_id(c: int, i: int, v: int) -> str:
    return f"c{c:03d}_i{i:04d}_v{v}"

def zipf_probs(vocab_size: int, exponent: float) -> np.ndarray:
    """p_j proportional to 1 / (j + 1)^exponent."""
    weights = 1.0 / np.arange(1, vocab_size + 1, dtype=np.float64) ** exponent
    return weights / weights.sum()

def _sample_attrs(rng: np.random.Generator, probs: np.ndarray, k: int, taken: Set[Tuple[int, ...]],
                  where: str) -> Tuple[int, ...]:
    for _ in range(MAX_RESAMPLES):
        attrs = tuple(sorted(int(j) for j in rng.choice(probs.shape[0], size=k, replace=False, p=probs)))
        if attrs not in taken:
            taken.add(attrs)
            return attrs
    raise InvalidConfig(f"Could not draw a distinct attribute set for {where} "
                        f"after {MAX_RESAMPLES} tries")

def generate(config: SynthConfig) -> SynthDataset:
    """Draw the benchmark from one sequential RNG stream seeded by `config.seed`."""
    rng = np.random.default_rng(config.seed)
    d, k = config.feature_dim, config.attrs_per_instance
    probs = zipf_probs(config.vocab_size, config.zipf_exponent)
    attr_map = rng.standard_normal((config.vocab_size, d))

    ids, rows, labels, titles, is_query = [], [], [], [], []
    relevant: Dict[str, List[str]] = {}
    instance_tokens: Dict[str, Tuple[str, ...]] = {}
    for c in range(config.num_coarse_classes):
        centroid = config.class_signal * rng.standard_normal(d)
        taken: Set[Tuple[int, ...]] = set()
        for i in range(config.instances_per_class):
            attrs = _sample_attrs(rng, probs, k, taken, where=f"class {c}")
            offset = config.instance_signal * attr_map[list(attrs)].sum(axis=0) / math.sqrt(k)
            tokens = tuple(token_name(j) for j in attrs)
            instance_tokens[f"c{c:03d}_i{i:04d}"] = tokens
            views = []
            for v in range(config.views_per_instance):
                vid = view_id(c, i, v)
                rows.append(centroid + offset + config.noise_sigma * rng.standard_normal(d))
                titles.append(" ".join(tokens[j] for j in rng.permutation(k)))
                ids.append(vid)
                labels.append(c)
                is_query.append(v == 0)
                views.append(vid)
            relevant[views[0]] = views[1:]

    features = EmbeddingMatrix(ids, np.asarray(rows, dtype=np.float32))
    logger.info("Generated %d views (%d queries) over %d classes", features.n, len(relevant),
                config.num_coarse_classes)
    return SynthDataset(config=config, features=features, coarse_labels=np.asarray(labels, dtype=np.int64),
                        titles=titles, is_query=np.asarray(is_query), ground_truth=GroundTruth(relevant),
                        instance_tokens=instance_tokens)

def export(ds: SynthDataset, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write the benchmark files into `out_dir`; returns them by role."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {role: out_dir / name for role, name in (('corpus', CORPUS_FILE), ('labels', LABELS_FILE),
                                                     ('query', QUERY_FILE), ('db', DB_FILE),
                                                     ('gt', GT_FILE), ('config', CONFIG_FILE))}
    write_corpus(ds.corpus(), paths['corpus'])
    write_labels(ds.labels(), paths['labels'])
    store.save(ds.queries(), paths['query'])
    store.save(ds.database(), paths['db'])
    ds.ground_truth.save(paths['gt'])
    atomic_write_text(paths['config'], ds.config.dump())
    logger.info("Exported synthetic benchmark to %s", out_dir)
    return paths
