import numpy as np
import pytest
import torch

from weakrank.data.synthetic import SynthConfig, export, generate
from weakrank.embeddings.store import EmbeddingMatrix

TOY_TITLES = ["red apple phone", "red case", "apple case"]

TINY_SYNTH = dict(num_coarse_classes=3, instances_per_class=8, views_per_instance=3, feature_dim=8,
                  vocab_size=30, attrs_per_instance=3, class_signal=1.0, instance_signal=1.0,
                  noise_sigma=0.3, seed=11)

TINY_ENCODER = dict(hidden_dim=16, num_blocks=1, embed_dim=8, drop_path_prob=0.1, head_init_scale=0.01)

TINY_TRAIN = dict(base_lr=1e-3, weight_decay=1e-4, batch_size=16, epochs=3, warmup_epochs=1,
                  ema_decay=0.9, poly_epsilon=0.5, seed=0)

@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
    monkeypatch.setenv("WEAKRANK_THREADS", "1")
    torch.set_num_threads(1)

@pytest.fixture
def rng():
    return np.random.default_rng(1234)

def make_matrix(data, prefix="x"):
    data = np.asarray(data, dtype=np.float32)
    return EmbeddingMatrix([f"{prefix}{i}" for i in range(data.shape[0])], data)

@pytest.fixture
def toy_corpus():
    return [(f"i{n}", title) for n, title in enumerate(TOY_TITLES)]

@pytest.fixture
def tiny_synth_config():
    return SynthConfig(**TINY_SYNTH)

@pytest.fixture
def tiny_dataset(tiny_synth_config):
    return generate(tiny_synth_config)

@pytest.fixture
def tiny_bench(tmp_path, tiny_dataset):
    """Exported tiny benchmark; returns the file paths by role."""
    return export(tiny_dataset, tmp_path / "bench")

def write_settings(path, settings):
    path.write_text("".join(f"{key} = {value}\n" for key, value in settings.items()))
    return path

def pipeline_settings(bench, work_dir, **extra):
    settings = {
        'paths.corpus': bench['corpus'], 'paths.query': bench['query'], 'paths.db': bench['db'],
        'paths.gt': bench['gt'], 'paths.work_dir': work_dir,
        'attributes.min_count': 2,
        'search.top_n': 20, 'search.final_k': 5,
        'eval.k': 5, 'run.threads': 1,
    }
    settings.update({f'encoder.{k}': v for k, v in TINY_ENCODER.items()})
    settings.update({f'train.{k}': v for k, v in TINY_TRAIN.items()})
    settings.update(extra)
    return settings
