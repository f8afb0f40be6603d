import json

import pandas as pd
import pytest

from weakrank.cli import main
from weakrank.evaluation.metrics import EvalReport

from conftest import TINY_SYNTH, pipeline_settings, write_settings

def test_version(capsys):
    with pytest.raises(SystemExit) as err:
        main(['--version'])
    assert err.value.code == 0
    assert capsys.readouterr().out.strip() == "weakrank 1.0.0"

def test_usage_errors_exit_with_validation_code():
    with pytest.raises(SystemExit) as err:
        main(['embed', '--model', 'm.ckpt'])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        main(['no-such-command'])
    assert err.value.code == 1

def test_print_config(capsys):
    assert main(['search', '--q', 'q.emb', '--db', 'db.emb', '--out', 'r.tsv', '--print-config']) == 0
    assert capsys.readouterr().out == ("rerank.enabled = false\nsearch.final_k = 10\n"
                                       "search.metric = cosine\nsearch.top_n = 100\n")

def test_print_config_applies_overrides(tmp_path, capsys):
    cfg_path = write_settings(tmp_path / "synth.cfg", {'synth.vocab_size': 50})
    assert main(['gen-synth', '--config', str(cfg_path), '--out', str(tmp_path / "out"),
                 '--set', 'synth.noise_sigma=0.2', '--seed', '3', '--print-config']) == 0
    out = capsys.readouterr().out
    assert "synth.vocab_size = 50\n" in out
    assert "synth.noise_sigma = 0.2\n" in out
    assert "synth.seed = 3\n" in out
    assert not (tmp_path / "out").exists()

def test_gen_synth_then_pipeline(tmp_path):
    synth_cfg = write_settings(tmp_path / "synth.cfg", TINY_SYNTH)
    bench_dir = tmp_path / "bench"
    assert main(['gen-synth', '--config', str(synth_cfg), '--out', str(bench_dir)]) == 0
    bench = {role: bench_dir / name for role, name in
             (('corpus', 'corpus.tsv'), ('query', 'query.emb'), ('db', 'db.emb'), ('gt', 'gt.tsv'))}
    pipeline_cfg = write_settings(tmp_path / "pipeline.cfg", pipeline_settings(bench, tmp_path / "work"))
    assert main(['pipeline', '--config', str(pipeline_cfg)]) == 0
    report = EvalReport.load(tmp_path / "work" / "report.json")
    assert report.num_queries == 24
    assert main(['pipeline', '--config', str(pipeline_cfg), '--resume']) == 0

def test_pipeline_print_config_seed(tiny_bench, tmp_path, capsys):
    pipeline_cfg = write_settings(tmp_path / "pipeline.cfg", pipeline_settings(tiny_bench, tmp_path / "work"))
    assert main(['pipeline', '--config', str(pipeline_cfg), '--seed', '5', '--print-config']) == 0
    out = capsys.readouterr().out
    assert "train.seed = 5\n" in out
    assert "ensemble.members = 5:0.001\n" in out
    assert not (tmp_path / "work").exists()

def test_histogram(tiny_bench, tmp_path):
    vocab = tmp_path / "vocab.json"
    assert main(['mine-attrs', '--corpus', str(tiny_bench['corpus']), '--out', str(vocab), '--min-count', '2']) == 0
    out = tmp_path / "hist.csv"
    plot = tmp_path / "hist.png"
    assert main(['histogram', '--vocab', str(vocab), '--top', '3', '--out', str(out), '--plot', str(plot)]) == 0
    assert plot.stat().st_size > 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ['rank', 'token', 'count']
    assert list(frame['rank']) == [1, 2, 3]
    assert list(frame['count']) == sorted(frame['count'], reverse=True)

def test_unsupported_plot_format_is_runtime_error(tiny_bench, tmp_path):
    vocab = tmp_path / "vocab.json"
    assert main(['mine-attrs', '--corpus', str(tiny_bench['corpus']), '--out', str(vocab), '--min-count', '2']) == 0
    assert main(['histogram', '--vocab', str(vocab), '--top', '3', '--out', str(tmp_path / "hist.csv"),
                 '--plot', str(tmp_path / "hist.xyz")]) == 2

def test_train_on_coarse_labels(tiny_bench, tmp_path):
    ckpt = tmp_path / "labels.ckpt"
    assert main(['train', '--features', str(tiny_bench['db']), '--labels', str(tiny_bench['labels']),
                 '--out', str(ckpt), '--epochs', '1', '--batch-size', '16', '--set', 'warmup_epochs=0',
                 '--set', 'hidden_dim=16', '--set', 'embed_dim=8']) == 0
    assert ckpt.is_file()
    assert main(['embed', '--model', str(ckpt), '--features', str(tiny_bench['query']),
                 '--out', str(tmp_path / "q.emb")]) == 0

def test_loss_check(tmp_path):
    out = tmp_path / "check.json"
    assert main(['loss-check', '--trials', '5', '--out', str(out)]) == 0
    summary = json.loads(out.read_text())
    assert summary['n_trials'] == 5
    assert summary['n_failed'] == 0

def test_runtime_and_validation_exit_codes(tiny_bench, tmp_path):
    missing = tmp_path / "missing.tsv"
    assert main(['eval', '--ranked', str(missing), '--gt', str(tiny_bench['gt']),
                 '--out', str(tmp_path / "r.json")]) == 2
    corrupt = tmp_path / "corrupt.ckpt"
    corrupt.write_bytes(b"WRKC")
    assert main(['embed', '--model', str(corrupt), '--features', str(tiny_bench['query']),
                 '--out', str(tmp_path / "e.emb")]) == 2
    assert main(['search', '--q', str(tiny_bench['query']), '--db', str(tiny_bench['db']),
                 '--top-n', '5', '--k', '10', '--out', str(tmp_path / "r.tsv")]) == 1
    bad_cfg = write_settings(tmp_path / "bad.cfg", {'paths.corpus': 'c.tsv'})
    assert main(['pipeline', '--config', str(bad_cfg)]) == 1

def test_ablate_writes_csv_and_plot(tiny_bench, tmp_path):
    settings = pipeline_settings(tiny_bench, tmp_path / "work", **{'ablation.variants': "baseline,whitening"})
    ablate_cfg = write_settings(tmp_path / "ablate.cfg", settings)
    out, plot = tmp_path / "ablation.csv", tmp_path / "ablation.png"
    assert main(['ablate', '--config', str(ablate_cfg), '--out', str(out), '--plot', str(plot)]) == 0
    assert list(pd.read_csv(out)['variant']) == ['baseline', 'whitening']
    assert plot.stat().st_size > 0
    assert main(['ablate', '--config', str(ablate_cfg), '--out', str(out), '--variants', 'nope']) == 1
