import pytest

from weakrank.cli import main
from weakrank.embeddings import store
from weakrank.errors import ConfigError, StageError
from weakrank.pipeline import EnsembleMember, pipeline_config, resolved_settings, run_pipeline

from conftest import TINY_ENCODER, TINY_TRAIN, pipeline_settings, write_settings

def _run(bench, work_dir, resume=False, **extra):
    return run_pipeline(pipeline_config(pipeline_settings(bench, work_dir, **extra)), resume=resume)

def test_pipeline_writes_report(tiny_bench, tmp_path):
    result = _run(tiny_bench, tmp_path / "work")
    assert result.paths.report.is_file()
    assert 0.0 <= result.report.mar <= 1.0
    assert result.report.num_queries == 24
    assert all(len(r) == 5 for r in result.ranked)
    assert result.skipped == []
    assert result.ran[-1] == 'eval'

def test_pipeline_matches_manual_stages(tiny_bench, tmp_path):
    result = _run(tiny_bench, tmp_path / "auto", **{'rerank.enabled': False})

    work = tmp_path / "manual"
    work.mkdir()
    train_cfg = write_settings(tmp_path / "train.cfg", {**TINY_ENCODER, **TINY_TRAIN})
    vocab, targets, ckpt = work / "vocab.json", work / "targets.tsv", work / "model.ckpt"
    steps = [
        ['mine-attrs', '--corpus', tiny_bench['corpus'], '--out', vocab, '--min-count', '2'],
        ['build-targets', '--corpus', tiny_bench['corpus'], '--vocab', vocab, '--out', targets],
        ['train', '--features', tiny_bench['db'], '--targets', targets, '--vocab', vocab,
         '--config', train_cfg, '--out', ckpt, '--seed', '0'],
        ['embed', '--model', ckpt, '--features', tiny_bench['query'], '--out', work / "q.emb", '--ema'],
        ['embed', '--model', ckpt, '--features', tiny_bench['db'], '--out', work / "db.emb", '--ema'],
        ['whiten', '--db', work / "db.emb", '--in', work / "q.emb", '--out', work / "q_post.emb"],
        ['whiten', '--db', work / "db.emb", '--in', work / "db.emb", '--out', work / "db_post.emb"],
        ['search', '--q', work / "q_post.emb", '--db', work / "db_post.emb", '--top-n', '20', '--k', '5',
         '--out', work / "ranked.tsv"],
        ['eval', '--ranked', work / "ranked.tsv", '--gt', tiny_bench['gt'], '--k', '5',
         '--out', work / "report.json"],
    ]
    for step in steps:
        assert main([str(arg) for arg in step] + ['--threads', '1']) == 0, step[0]

    assert (work / "ranked.tsv").read_bytes() == result.paths.ranked.read_bytes()
    assert (work / "report.json").read_bytes() == result.paths.report.read_bytes()

def test_resume_skips_finished_stages(tiny_bench, tmp_path):
    first = _run(tiny_bench, tmp_path / "work")
    report = first.paths.report.read_bytes()
    second = _run(tiny_bench, tmp_path / "work", resume=True)
    assert second.ran == []
    assert second.skipped == first.ran
    assert second.paths.report.read_bytes() == report

def test_resume_reruns_missing_outputs(tiny_bench, tmp_path):
    first = _run(tiny_bench, tmp_path / "work")
    ranked = first.paths.ranked.read_bytes()
    first.paths.ranked.unlink()
    first.paths.report.unlink()
    second = _run(tiny_bench, tmp_path / "work", resume=True)
    assert second.ran == ['rerank', 'eval']
    assert second.paths.ranked.read_bytes() == ranked

def test_fresh_runs_are_byte_identical(tiny_bench, tmp_path):
    a = _run(tiny_bench, tmp_path / "a")
    b = _run(tiny_bench, tmp_path / "b")
    for name in ('report.json', 'ranked.tsv', 'candidates.tsv', 'db_0.emb', 'vocab.json'):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    assert a.report == b.report

def test_two_member_ensemble(tiny_bench, tmp_path):
    result = _run(tiny_bench, tmp_path / "work", **{'ensemble.members': "0:1e-3,1:2e-3"})
    assert store.load(result.paths.query_ens).dim == 2 * TINY_ENCODER['embed_dim']
    assert (tmp_path / "work" / "model_1.ckpt").is_file()

def test_missing_corpus_is_stage_error(tiny_bench, tmp_path):
    bench = {**tiny_bench, 'corpus': tmp_path / "missing.tsv"}
    with pytest.raises(StageError) as err:
        _run(bench, tmp_path / "work")
    assert err.value.stage == 'mine-attrs'
    assert err.value.exit_code == 2

def test_validation_failure_keeps_exit_code(tiny_bench, tmp_path):
    with pytest.raises(StageError) as err:
        _run(tiny_bench, tmp_path / "work", **{'search.top_n': 500, 'search.final_k': 5})
    assert err.value.stage == 'search'
    assert err.value.exit_code == 1

def test_pipeline_config_errors(tiny_bench, tmp_path):
    settings = pipeline_settings(tiny_bench, tmp_path)
    del settings['paths.gt']
    with pytest.raises(ConfigError, match="paths.gt"):
        pipeline_config(settings)
    with pytest.raises(ConfigError):
        pipeline_config(pipeline_settings(tiny_bench, tmp_path, **{'search.depth': 3}))
    with pytest.raises(ConfigError):
        pipeline_config(pipeline_settings(tiny_bench, tmp_path, **{'encoder.width': 3}))
    with pytest.raises(ConfigError):
        pipeline_config(pipeline_settings(tiny_bench, tmp_path, **{'misc.flag': 1}))

def test_pipeline_config_defaults(tiny_bench, tmp_path):
    config = pipeline_config(pipeline_settings(tiny_bench, tmp_path))
    assert config.members == (EnsembleMember(TINY_TRAIN['seed'], TINY_TRAIN['base_lr']),)
    assert config.use_ema and config.whiten
    assert config.rerank is not None and config.rerank.k1 == 8
    settings = resolved_settings(config)
    assert settings['ensemble.members'] == "0:0.001"
    assert settings['rerank.enabled'] is True
    assert pipeline_config({k: v for k, v in settings.items()}) == config

def test_ensemble_member_parse():
    assert EnsembleMember.parse("3:0.001") == EnsembleMember(3, 0.001)
    member = EnsembleMember.parse("1:1e-4:models/m.ckpt")
    assert member.checkpoint == "models/m.ckpt"
    assert str(member) == "1:0.0001:models/m.ckpt"
    for bad in ("3", "x:0.1", "1:fast"):
        with pytest.raises(ConfigError):
            EnsembleMember.parse(bad)
