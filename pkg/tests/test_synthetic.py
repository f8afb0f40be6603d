import numpy as np
import pytest

from weakrank.attributes.miner import build_vocab, read_corpus, read_labels
from weakrank.data.synthetic import SynthConfig, export, generate, zipf_probs
from weakrank.embeddings import store
from weakrank.errors import InvalidConfig, ValidationError
from weakrank.evaluation.metrics import GroundTruth, mar_at_k
from weakrank.retrieval.search import SearchParams, pairwise_distances, top_n_search
from weakrank.tools.data_loader import get_data_loader

from conftest import TINY_SYNTH

def test_config_validation():
    with pytest.raises(InvalidConfig):
        SynthConfig(views_per_instance=1)
    with pytest.raises(InvalidConfig):
        SynthConfig(vocab_size=4, attrs_per_instance=5)
    with pytest.raises(InvalidConfig):
        SynthConfig(noise_sigma=-0.1)
    with pytest.raises(InvalidConfig):
        SynthConfig(vocab_size=5, attrs_per_instance=4, instances_per_class=6)

def test_deterministic(tmp_path, tiny_synth_config):
    first = export(generate(tiny_synth_config), tmp_path / "a")
    second = export(generate(tiny_synth_config), tmp_path / "b")
    for role in first:
        assert first[role].read_bytes() == second[role].read_bytes()

def test_seed_changes_data(tiny_synth_config):
    other = SynthConfig(**{**TINY_SYNTH, 'seed': TINY_SYNTH['seed'] + 1})
    assert not generate(tiny_synth_config).features.equals(generate(other).features)

def test_structure(tiny_dataset, tiny_synth_config):
    c = tiny_synth_config
    n_instances = c.num_coarse_classes * c.instances_per_class
    assert tiny_dataset.features.n == n_instances * c.views_per_instance
    assert tiny_dataset.queries().n == n_instances
    assert tiny_dataset.database().n == n_instances * (c.views_per_instance - 1)
    assert set(tiny_dataset.queries().ids).isdisjoint(tiny_dataset.database().ids)

def test_titles_share_instance_tokens(tiny_dataset):
    for item_id, title in tiny_dataset.corpus():
        instance = item_id.rsplit('_v', 1)[0]
        assert sorted(title.split()) == sorted(tiny_dataset.instance_tokens[instance])

def test_attribute_sets_distinct_within_class(tiny_dataset):
    by_class = {}
    for instance, tokens in tiny_dataset.instance_tokens.items():
        by_class.setdefault(instance.split('_')[0], []).append(tuple(sorted(tokens)))
    for sets in by_class.values():
        assert len(set(sets)) == len(sets)

def test_ground_truth_lists_sibling_views(tiny_dataset):
    db_ids = set(tiny_dataset.database().ids)
    for query_id in tiny_dataset.ground_truth.query_ids():
        relevant = tiny_dataset.ground_truth[query_id]
        assert relevant <= db_ids
        assert {r.rsplit('_v', 1)[0] for r in relevant} == {query_id.rsplit('_v', 1)[0]}
        assert len(relevant) >= 1

def test_noiseless_views_retrieve_perfectly():
    ds = generate(SynthConfig(**{**TINY_SYNTH, 'noise_sigma': 0.0}))
    for metric in ('cosine', 'euclidean'):
        ranked = top_n_search(ds.queries(), ds.database(), SearchParams(metric, 10, 10))
        assert mar_at_k(ranked, ds.ground_truth, 10).mar == 1.0

def test_zipf_probs_non_increasing():
    probs = zipf_probs(50, 1.0)
    assert probs.sum() == pytest.approx(1.0)
    assert np.all(np.diff(probs) <= 0)

def test_export_round_trip(tmp_path, tiny_dataset):
    paths = export(tiny_dataset, tmp_path)
    assert store.load(paths['query']).equals(tiny_dataset.queries())
    assert store.load(paths['db']).equals(tiny_dataset.database())
    assert read_corpus(paths['corpus']) == tiny_dataset.corpus()
    assert read_labels(paths['labels']) == tiny_dataset.labels()
    assert GroundTruth.load(paths['gt']) == tiny_dataset.ground_truth

def test_export_file_sizes(tmp_path, tiny_dataset):
    paths = export(tiny_dataset, tmp_path)
    for role, m in (('query', tiny_dataset.queries()), ('db', tiny_dataset.database())):
        assert paths[role].stat().st_size == store.file_size(m.n, m.dim, m.ids)

def test_data_loader(tiny_bench, tiny_dataset):
    loader = get_data_loader("synthetic").load_data(tiny_bench['db'].parent)
    queries, db, gt = loader.get_data()
    assert queries.equals(tiny_dataset.queries())
    assert db.equals(tiny_dataset.database())
    assert gt == tiny_dataset.ground_truth
    assert loader.config == tiny_dataset.config
    titles = loader.get_titles(db.ids[:2])
    assert [item_id for item_id, _ in titles] == db.ids[:2]
    targets = loader.get_label_targets(db.ids)
    assert targets.num_classes == TINY_SYNTH['num_coarse_classes']
    np.testing.assert_array_equal(loader.coarse_labels(db.ids), targets.to_dense().argmax(axis=1))
    with pytest.raises(ValidationError):
        get_data_loader("eproduct")

def test_mined_vocab_recovers_generating_tokens(tiny_dataset, tiny_synth_config):
    vocab = build_vocab(tiny_dataset.titles, min_count=tiny_synth_config.views_per_instance - 1)
    recovered = set(vocab.tokens()) & tiny_dataset.generating_tokens()
    assert len(recovered) >= 0.95 * len(tiny_dataset.generating_tokens())

@pytest.mark.slow
def test_reference_separability_and_recovery():
    ds = generate(SynthConfig())
    vocab = build_vocab(ds.titles, min_count=ds.config.views_per_instance - 1)
    assert set(vocab.tokens()) >= ds.generating_tokens()

    x = ds.features.data.astype(np.float64)
    instance = np.array([i.rsplit('_v', 1)[0] for i in ds.features.ids])
    labels = ds.coarse_labels
    dists = pairwise_distances(x, x, 'euclidean')
    off_diag = ~np.eye(len(x), dtype=bool)
    same_instance = (instance[:, None] == instance[None, :]) & off_diag
    same_class = (labels[:, None] == labels[None, :]) & ~same_instance & off_diag
    cross_class = labels[:, None] != labels[None, :]
    assert dists[same_instance].mean() < dists[same_class].mean() < dists[cross_class].mean()
