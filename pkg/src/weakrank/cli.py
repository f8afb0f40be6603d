"""Command-line entry point: `weakrank <subcommand> ...`.

Diagnostics go to stderr; every machine-readable result is written to a file.
Exit codes: 0 success, 1 validation error (including bad usage), 2 runtime error.
"""
import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

from weakrank import __version__
from weakrank import config as cfg
from weakrank.attributes.miner import COUNT_MODES, AttributeVocab, histogram, write_histogram
from weakrank.data.synthetic import SynthConfig, export, generate
from weakrank.errors import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, ConfigError, WeakRankError
from weakrank.evaluation.ablation import LADDER, ablation_run, compare_objectives
from weakrank.evaluation.metrics import DENOMINATORS
from weakrank.model.encoder import EncoderConfig
from weakrank.model.trainer import TrainConfig
from weakrank.objective.loss import loss_check
from weakrank.pipeline import (AttributeParams, build_targets_stage, embed_stage, ensemble_stage, eval_stage,
                               load_train_targets, mine_attrs_stage, pipeline_config, resolved_settings,
                               run_pipeline, search_stage, train_stage, whiten_stage)
from weakrank.retrieval.rerank import RerankParams
from weakrank.retrieval.search import METRICS, SearchParams
from weakrank.utility.config import (apply_overrides, as_list, build_dataclass, dotdict, dump_config,
                                     load_config, section)
from weakrank.utility.files import atomic_write_text
from weakrank.utility.plot import plot_ablation_ladder, plot_attribute_histogram

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with the validation code."""
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")

def configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(stream=sys.stderr, level=level, format=LOG_FORMAT, force=True)

# Settings helpers

def _file_settings(args: argparse.Namespace) -> dotdict:
    """Config file (if any) with --set overrides applied."""
    settings = load_config(args.config) if getattr(args, 'config', None) else dotdict()
    return apply_overrides(settings, args.set)

def _print_config(args: argparse.Namespace, settings: Mapping[str, Any]) -> bool:
    if args.print_config:
        sys.stdout.write(dump_config(settings))
        return True
    return False

def _prefixed(prefix: str, values: Mapping[str, Any]) -> Dict[str, Any]:
    return {f"{prefix}.{key}": value for key, value in values.items()}

def _attribute_params(args: argparse.Namespace, settings: Mapping[str, Any],
                      keep_bare: bool = True) -> AttributeParams:
    params = {k: v for k, v in cfg.ATTRIBUTE_PARAMS.items() if k != 'top_n'}
    params.update(section(settings, 'attributes', keep_bare=keep_bare))
    if getattr(args, 'min_count', None) is not None:
        params['min_count'] = args.min_count
    if getattr(args, 'count_mode', None) is not None:
        params['count_mode'] = args.count_mode
    if getattr(args, 'no_lowercase', False):
        params['lowercase'] = False
    return build_dataclass(AttributeParams, params)

def _train_settings(args: argparse.Namespace, settings: Mapping[str, Any]) -> Tuple[TrainConfig, Dict[str, Any]]:
    """Split a training config into TrainConfig and encoder keys; bare keys go by field name."""
    train_fields = {f.name for f in fields(TrainConfig)}
    encoder_fields = {f.name for f in fields(EncoderConfig)} - {'input_dim', 'num_classes'}
    train_params, encoder = dict(cfg.TRAIN_PARAMS), dict(cfg.ENCODER_PARAMS)
    for key, value in settings.items():
        group, _, name = key.rpartition('.')
        if group == 'train' or (not group and name in train_fields):
            train_params[name] = value
        elif group == 'encoder' or (not group and name in encoder_fields):
            if name not in encoder_fields:
                raise ConfigError(f"Unknown encoder key '{key}'; valid keys are {sorted(encoder_fields)}")
            encoder[name] = value
        elif group not in ('attributes', 'eval'):
            raise ConfigError(f"Unknown training key '{key}'")
    if args.seed is not None:
        train_params['seed'] = args.seed
    for flag, name in (('epochs', 'epochs'), ('lr', 'base_lr'), ('batch_size', 'batch_size')):
        if getattr(args, flag, None) is not None:
            train_params[name] = getattr(args, flag)
    train_params.setdefault('verbose', args.verbose > 0)
    return build_dataclass(TrainConfig, train_params), encoder

# Subcommands

def cmd_mine_attrs(args: argparse.Namespace) -> int:
    params = _attribute_params(args, _file_settings(args))
    if _print_config(args, _prefixed('attributes', asdict(params))):
        return EXIT_OK
    vocab = mine_attrs_stage(args.corpus, args.out, params, args.threads)
    logger.info("Wrote %d pseudo-attributes to %s", len(vocab), args.out)
    return EXIT_OK

def cmd_build_targets(args: argparse.Namespace) -> int:
    params = _attribute_params(args, _file_settings(args))
    if _print_config(args, {'attributes.lowercase': params.lowercase}):
        return EXIT_OK
    build_targets_stage(args.corpus, args.vocab, args.out, params.lowercase)
    return EXIT_OK

def cmd_histogram(args: argparse.Namespace) -> int:
    if _print_config(args, {'attributes.top_n': args.top_n}):
        return EXIT_OK
    hist = histogram(AttributeVocab.load(args.vocab), args.top_n)
    write_histogram(hist, args.out)
    if args.plot:
        plot_attribute_histogram(hist, args.plot, title=f"Top-{len(hist)} pseudo-attributes")
    return EXIT_OK

def cmd_gen_synth(args: argparse.Namespace) -> int:
    params = {**cfg.SYNTH_PARAMS, **section(_file_settings(args), 'synth')}
    if args.seed is not None:
        params['seed'] = args.seed
    synth_config = build_dataclass(SynthConfig, params)
    if _print_config(args, _prefixed('synth', asdict(synth_config))):
        return EXIT_OK
    export(generate(synth_config), args.out)
    return EXIT_OK

def cmd_train(args: argparse.Namespace) -> int:
    train_config, encoder = _train_settings(args, _file_settings(args))
    if _print_config(args, {**_prefixed('train', asdict(train_config)), **_prefixed('encoder', encoder)}):
        return EXIT_OK
    targets = load_train_targets(args.targets, args.labels, args.vocab)
    train_stage(args.features, args.out, targets, encoder, train_config, args.threads)
    return EXIT_OK

def cmd_embed(args: argparse.Namespace) -> int:
    if _print_config(args, {'embed.use_ema': args.ema}):
        return EXIT_OK
    embed_stage(args.model, args.features, args.out, use_ema=args.ema)
    return EXIT_OK

def cmd_whiten(args: argparse.Namespace) -> int:
    if _print_config(args, {'whitening.eps_reg': args.eps, 'whitening.normalize': not args.no_normalize}):
        return EXIT_OK
    whiten_stage(args.db, [args.input], [args.out], eps_reg=args.eps, normalize=not args.no_normalize)
    return EXIT_OK

def cmd_ensemble(args: argparse.Namespace) -> int:
    if _print_config(args, {'ensemble.inputs': args.inputs}):
        return EXIT_OK
    ensemble_stage(args.inputs, args.out)
    return EXIT_OK

def cmd_search(args: argparse.Namespace) -> int:
    params = SearchParams(metric=args.metric, top_n=args.top_n, final_k=args.k)
    rerank = RerankParams(args.k1, args.k2, args.alpha) if args.rerank else None
    settings = _prefixed('search', asdict(params))
    settings['rerank.enabled'] = rerank is not None
    if rerank is not None:
        settings.update(_prefixed('rerank', asdict(rerank)))
    if _print_config(args, settings):
        return EXIT_OK
    search_stage(args.q, args.db, args.out, params, rerank, args.threads, candidates_path=args.candidates)
    return EXIT_OK

def cmd_eval(args: argparse.Namespace) -> int:
    if _print_config(args, {'eval.k': args.k, 'eval.denominator': args.denominator}):
        return EXIT_OK
    report = eval_stage(args.ranked, args.gt, args.out, args.k, args.denominator)
    logger.info("MAR@%d = %.4f", report.k, report.mar)
    return EXIT_OK

def _pipeline_settings(args: argparse.Namespace) -> dotdict:
    settings = _file_settings(args)
    if args.seed is not None:
        settings['train.seed'] = args.seed
    if args.threads is not None:
        settings['run.threads'] = args.threads
    if getattr(args, 'work_dir', None):
        settings['paths.work_dir'] = args.work_dir
    return settings

def cmd_pipeline(args: argparse.Namespace) -> int:
    config = pipeline_config(_pipeline_settings(args))
    if _print_config(args, resolved_settings(config)):
        return EXIT_OK
    result = run_pipeline(config, resume=args.resume)
    logger.info("Report written to %s (MAR@%d = %.4f)", result.paths.report, result.report.k, result.report.mar)
    return EXIT_OK

def cmd_ablate(args: argparse.Namespace) -> int:
    settings = _pipeline_settings(args)
    ablation = section(settings, 'ablation', keep_bare=False)
    unknown = sorted(set(ablation) - {'variants', 'prepare'})
    if unknown:
        raise ConfigError(f"Unknown ablation keys {unknown}; valid keys are ['prepare', 'variants']")
    variants = as_list(args.variants) if args.variants else as_list(ablation.get('variants')) or list(LADDER)
    prepare = bool(ablation.get('prepare', True)) and not args.no_prepare
    config = pipeline_config(settings)
    if _print_config(args, {**resolved_settings(config), 'ablation.variants': ",".join(variants),
                            'ablation.prepare': prepare}):
        return EXIT_OK
    frame = ablation_run(config, variants, out_path=args.out, prepare=prepare)
    if args.plot:
        plot_ablation_ladder(list(frame['variant']), list(frame['mar']), args.plot, k=config.k)
    return EXIT_OK

def cmd_loss_check(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    if _print_config(args, {'loss_check.trials': args.trials, 'loss_check.seed': seed,
                            'loss_check.epsilon': args.epsilon}):
        return EXIT_OK
    summary = loss_check(n_trials=args.trials, seed=seed, epsilon=args.epsilon,
                         max_batch=args.max_batch, max_classes=args.max_classes)
    if args.out:
        atomic_write_text(args.out, json.dumps(summary, indent=1) + "\n")
    failed = summary['n_failed'] > 0 or summary['max_rel_error'] >= 1e-4
    message = (f"loss-check: {summary['n_trials']} trials, {summary['n_failed']} failed, "
               f"max relative error {summary['max_rel_error']:.3e}")
    if failed:
        logger.error(message)
        return EXIT_RUNTIME
    print(message, file=sys.stderr)
    return EXIT_OK

def cmd_compare(args: argparse.Namespace) -> int:
    settings = _file_settings(args)
    attributes = _attribute_params(args, settings, keep_bare=False)
    train_config, encoder = _train_settings(args, settings)
    k = args.k if args.k is not None else int(section(settings, 'eval', keep_bare=False).get('k', cfg.EVAL_PARAMS['k']))
    if _print_config(args, {**_prefixed('attributes', asdict(attributes)), **_prefixed('train', asdict(train_config)),
                            **_prefixed('encoder', encoder), 'eval.k': k}):
        return EXIT_OK
    compare_objectives(args.bench, attributes, encoder, train_config, k=k, use_ema=not args.no_ema,
                       threads=args.threads, out_path=args.out)
    return EXIT_OK

# Parser

def _add_global_args(parser: argparse.ArgumentParser, suppress: bool) -> None:
    def default(value):
        return argparse.SUPPRESS if suppress else value
    parser.add_argument('--seed', type=int, default=default(None), help="Random seed override")
    parser.add_argument('--threads', type=int, default=default(None),
                        help=f"Worker threads (capped by {cfg.THREADS_ENV_VAR})")
    parser.add_argument('--resume', action='store_true', default=default(False),
                        help="Skip pipeline stages whose outputs exist")
    parser.add_argument('--print-config', action='store_true', default=default(False),
                        help="Print the resolved configuration and exit")
    parser.add_argument('--set', action='append', default=default([]), metavar='KEY=VALUE',
                        help="Override a config value (repeatable)")
    parser.add_argument('-v', '--verbose', action='count', default=default(0),
                        help="-v for info, -vv for debug logging")

def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='weakrank', description="Weakly-supervised instance retrieval toolkit")
    parser.add_argument('--version', action='version', version=f"weakrank {__version__}")
    _add_global_args(parser, suppress=False)
    common = ArgumentParser(add_help=False)
    _add_global_args(common, suppress=True)
    sub = parser.add_subparsers(dest='command', metavar='COMMAND', required=True)

    def add(name: str, handler, help_text: str) -> ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(handler=handler)
        return p

    p = add('mine-attrs', cmd_mine_attrs, "Mine the pseudo-attribute vocabulary from titles")
    p.add_argument('--corpus', required=True, help="TSV of item_id<TAB>title")
    p.add_argument('--out', required=True, help="Vocabulary JSON")
    p.add_argument('--min-count', type=int, help="Keep tokens seen more than this many times")
    p.add_argument('--count-mode', choices=COUNT_MODES)
    p.add_argument('--no-lowercase', action='store_true')
    p.add_argument('--config')

    p = add('build-targets', cmd_build_targets, "Encode titles as pseudo-attribute targets")
    p.add_argument('--corpus', required=True)
    p.add_argument('--vocab', required=True)
    p.add_argument('--out', required=True, help="Targets TSV")
    p.add_argument('--no-lowercase', action='store_true')
    p.add_argument('--config')

    p = add('histogram', cmd_histogram, "Top-N attribute frequencies")
    p.add_argument('--vocab', required=True)
    p.add_argument('--top-n', '--top', dest='top_n', type=int, default=cfg.ATTRIBUTE_PARAMS['top_n'])
    p.add_argument('--out', required=True, help="CSV of rank,token,count")
    p.add_argument('--plot', help="Optional bar chart image")

    p = add('gen-synth', cmd_gen_synth, "Generate the synthetic benchmark")
    p.add_argument('--config')
    p.add_argument('--out', required=True, help="Output directory")

    p = add('train', cmd_train, "Train an encoder")
    p.add_argument('--features', required=True)
    targets = p.add_mutually_exclusive_group(required=True)
    targets.add_argument('--targets', help="Pseudo-attribute targets TSV")
    targets.add_argument('--labels', help="Coarse labels TSV (single-label baseline)")
    p.add_argument('--vocab', help="Vocabulary JSON; fixes the number of classes")
    p.add_argument('--config')
    p.add_argument('--out', required=True, help="Checkpoint path")
    p.add_argument('--epochs', type=int)
    p.add_argument('--lr', type=float)
    p.add_argument('--batch-size', type=int)

    p = add('embed', cmd_embed, "Embed features with a trained encoder")
    p.add_argument('--model', required=True)
    p.add_argument('--features', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--ema', action='store_true', help="Use the EMA weights")

    p = add('whiten', cmd_whiten, "Whiten (and L2-normalise) embeddings with database statistics")
    p.add_argument('--db', required=True)
    p.add_argument('--in', dest='input', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--eps', type=float, default=cfg.WHITENING_PARAMS['eps_reg'])
    p.add_argument('--no-normalize', action='store_true')

    p = add('ensemble', cmd_ensemble, "Concatenate member embeddings")
    p.add_argument('--in', dest='inputs', nargs='+', required=True)
    p.add_argument('--out', required=True)

    p = add('search', cmd_search, "Exact top-N search with optional re-ranking")
    p.add_argument('--q', required=True)
    p.add_argument('--db', required=True)
    p.add_argument('--metric', choices=METRICS, default=cfg.SEARCH_PARAMS['metric'])
    p.add_argument('--top-n', type=int, default=cfg.SEARCH_PARAMS['top_n'])
    p.add_argument('--k', type=int, default=cfg.SEARCH_PARAMS['final_k'])
    p.add_argument('--out', required=True)
    p.add_argument('--candidates', help="Also write the full top-N candidate lists")
    p.add_argument('--rerank', action='store_true')
    p.add_argument('--k1', type=int, default=cfg.RERANK_PARAMS['k1'])
    p.add_argument('--k2', type=int, default=cfg.RERANK_PARAMS['k2'])
    p.add_argument('--alpha', type=float, default=cfg.RERANK_PARAMS['alpha'])

    p = add('eval', cmd_eval, "MAR@k of ranked lists")
    p.add_argument('--ranked', required=True)
    p.add_argument('--gt', required=True)
    p.add_argument('--k', type=int, default=cfg.EVAL_PARAMS['k'])
    p.add_argument('--denominator', choices=DENOMINATORS, default=cfg.EVAL_PARAMS['denominator'])
    p.add_argument('--out', required=True)

    p = add('ablate', cmd_ablate, "Ablation ladder over pipeline components")
    p.add_argument('--config', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--variants', help="Comma-separated variants")
    p.add_argument('--no-prepare', action='store_true', help="Require existing member embeddings")
    p.add_argument('--work-dir')
    p.add_argument('--plot')

    p = add('loss-check', cmd_loss_check, "Check the analytic loss gradient")
    p.add_argument('--trials', type=int, default=100)
    p.add_argument('--epsilon', type=float, default=cfg.TRAIN_PARAMS['poly_epsilon'])
    p.add_argument('--max-batch', type=int, default=4)
    p.add_argument('--max-classes', type=int, default=16)
    p.add_argument('--out', help="Optional JSON summary")

    p = add('pipeline', cmd_pipeline, "Run the end-to-end pipeline")
    p.add_argument('--config', required=True)
    p.add_argument('--work-dir')

    p = add('compare', cmd_compare, "Compare training objectives on a benchmark directory")
    p.add_argument('--bench', required=True)
    p.add_argument('--config')
    p.add_argument('--out', required=True)
    p.add_argument('--min-count', type=int)
    p.add_argument('--count-mode', choices=COUNT_MODES)
    p.add_argument('--k', type=int)
    p.add_argument('--no-ema', action='store_true')
    return parser

def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except WeakRankError as err:
        logger.error("%s", err)
        return err.exit_code
    except OSError as err:
        logger.error("%s", err)
        return EXIT_RUNTIME
    except (ValueError, ArithmeticError, RuntimeError, LookupError) as err:
        logger.error("%s: %s", type(err).__name__, err)
        return EXIT_RUNTIME

if __name__ == '__main__':
    sys.exit(main())
