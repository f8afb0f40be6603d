from dataclasses import dataclass

import pytest

from weakrank.errors import ConfigError
from weakrank.utility.config import (apply_overrides, as_list, build_dataclass, dump_config, load_config,
                                     parse_config, parse_value, section)
from weakrank.utility.parallel import chunked, make_blocks, map_blocks, resolve_n_jobs

@dataclass
class _Params:
    top_n: int = 100
    metric: str = 'cosine'

def test_parse_value():
    assert parse_value("3") == 3
    assert parse_value("1e-3") == pytest.approx(0.001)
    assert parse_value("true") is True
    assert parse_value(" cosine ") == "cosine"
    assert parse_value("a,b") == "a,b"

def test_parse_config():
    settings = parse_config(["# comment\n", "search.top_n = 50\n", "\n", "metric = euclidean  # trailing\n"])
    assert settings == {'search.top_n': 50, 'metric': 'euclidean'}
    assert settings.metric == 'euclidean'

def test_parse_config_keeps_hash_inside_values():
    settings = parse_config(["paths.corpus = data/run#2/corpus.tsv\n", "paths.gt = gt#1.tsv   # ground truth\n",
                             "\t# indented comment\n"])
    assert settings == {'paths.corpus': "data/run#2/corpus.tsv", 'paths.gt': "gt#1.tsv"}

def test_parse_config_errors():
    with pytest.raises(ConfigError, match="duplicate key"):
        parse_config(["a = 1", "a = 2"])
    with pytest.raises(ConfigError, match="key = value"):
        parse_config(["just text"])
    with pytest.raises(ConfigError, match="empty key"):
        parse_config([" = 1"])

def test_load_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.epochs = 4\n")
    assert load_config(path) == {'train.epochs': 4}
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")

def test_overrides():
    merged = apply_overrides({'a': 1, 'b': 2}, ["b=3", "c = x"])
    assert merged == {'a': 1, 'b': 3, 'c': 'x'}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])

def test_section():
    settings = {'search.top_n': 20, 'rerank.k1': 8, 'threads': 2, 'top_n': 5}
    assert section(settings, 'search') == {'top_n': 20, 'threads': 2}
    assert section(settings, 'search', keep_bare=False) == {'top_n': 20}

def test_build_dataclass():
    assert build_dataclass(_Params, {'top_n': 5}) == _Params(top_n=5)
    with pytest.raises(ConfigError, match="Unknown"):
        build_dataclass(_Params, {'top_k': 5})
    assert build_dataclass(_Params, {'top_k': 5}, strict=False) == _Params()

def test_dump_config_reloads():
    settings = {'b.flag': True, 'a.ids': ['x', 'y'], 'c.lr': 0.25}
    text = dump_config(settings)
    assert text == "a.ids = x,y\nb.flag = true\nc.lr = 0.25\n"
    reloaded = parse_config(text.splitlines())
    assert as_list(reloaded['a.ids']) == ['x', 'y']
    assert reloaded['b.flag'] is True

def test_as_list():
    assert as_list(None) == []
    assert as_list("a, b,,c") == ['a', 'b', 'c']
    assert as_list(('x',)) == ['x']

def test_resolve_n_jobs(monkeypatch):
    monkeypatch.setenv("WEAKRANK_THREADS", "2")
    assert resolve_n_jobs(8) == 2
    assert resolve_n_jobs(1) == 1
    monkeypatch.setenv("WEAKRANK_THREADS", "lots")
    assert resolve_n_jobs(3) == 3
    monkeypatch.delenv("WEAKRANK_THREADS")
    assert resolve_n_jobs(5) == 5
    assert resolve_n_jobs() >= 1

def test_blocks_and_map():
    blocks = make_blocks(10, 4)
    assert [list(b) for b in blocks] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]
    assert map_blocks(sum, blocks, n_jobs=1) == map_blocks(sum, blocks, n_jobs=3) == [6, 22, 17]
    assert [list(c) for c in chunked([1, 2, 3], 2)] == [[1, 2], [3]]
