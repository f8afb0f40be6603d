from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from weakrank.attributes.miner import SoftTargets, read_corpus, read_labels
from weakrank.data import synthetic
from weakrank.embeddings import store
from weakrank.embeddings.store import EmbeddingMatrix
from weakrank.errors import ValidationError
from weakrank.evaluation.metrics import GroundTruth
from weakrank.utility.config import build_dataclass, load_config

class BaseDataLoader(ABC):
    """
    Base class for benchmark loaders.
    """
    def __init__(self):
        self.queries: EmbeddingMatrix = None
        self.db: EmbeddingMatrix = None
        self.corpus: List[Tuple[str, str]] = None
        self.labels: Dict[str, int] = None
        self.ground_truth: GroundTruth = None

    @abstractmethod
    def load_data(self, data_dir: Union[str, Path]) -> "BaseDataLoader":
        """Loads the benchmark files from a directory"""

    def get_data(self) -> Tuple[EmbeddingMatrix, EmbeddingMatrix, GroundTruth]:
        """
        This method returns the query views, the database views and the ground truth
        :returns: queries, db and ground_truth
        """
        return self.queries, self.db, self.ground_truth

    def get_titles(self, ids: Optional[List[str]] = None) -> List[Tuple[str, str]]:
        """Corpus records, restricted to `ids` when given"""
        if ids is None:
            return list(self.corpus)
        wanted = set(ids)
        return [record for record in self.corpus if record[0] in wanted]

    def get_label_targets(self, ids: List[str]) -> SoftTargets:
        """One-hot coarse-label targets for `ids`"""
        missing = [i for i in ids if i not in self.labels]
        if missing:
            raise ValidationError(f"{len(missing)} ids have no coarse label, e.g. '{missing[0]}'")
        num_classes = max(self.labels.values()) + 1
        return SoftTargets.from_labels(ids, [self.labels[i] for i in ids], num_classes)

class SyntheticDataLoader(BaseDataLoader):
    """
    Loader for a benchmark directory written by `gen-synth`.
    """
    def __init__(self):
        super().__init__()
        self.config: synthetic.SynthConfig = None

    def load_data(self, data_dir: Union[str, Path]) -> "SyntheticDataLoader":
        data_dir = Path(data_dir)
        self.queries = store.load(data_dir / synthetic.QUERY_FILE)
        self.db = store.load(data_dir / synthetic.DB_FILE)
        self.corpus = read_corpus(data_dir / synthetic.CORPUS_FILE)
        self.labels = dict(read_labels(data_dir / synthetic.LABELS_FILE))
        self.ground_truth = GroundTruth.load(data_dir / synthetic.GT_FILE)
        config_path = data_dir / synthetic.CONFIG_FILE
        if config_path.is_file():
            self.config = build_dataclass(synthetic.SynthConfig, load_config(config_path))
        return self

    def coarse_labels(self, ids: List[str]) -> np.ndarray:
        return np.asarray([self.labels[i] for i in ids], dtype=np.int64)

def get_data_loader(dataset_name: str) -> BaseDataLoader:
    if dataset_name == "synthetic":
        return SyntheticDataLoader()
    else:
        raise ValidationError(f"Dataset '{dataset_name}' not found")
