"""End-to-end retrieval pipeline.

Stage functions take file paths and write their outputs to files. The CLI
subcommands and `run_pipeline` call the same functions, so a pipeline run and
a manual stage-by-stage run with matching settings produce identical files.

Per ensemble member: train -> embed queries and database. Then per member:
fit whitening on the database, whiten both sides, L2-normalise. Then
concatenate across members, exact top-N search, k-reciprocal re-ranking down
to the final top-k, and evaluation.
"""
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from weakrank import config as cfg
from weakrank.attributes.miner import (COUNT_MODES, AttributeVocab, ItemAttributes, SoftTargets,
                                       build_soft_targets, build_vocab, encode_corpus, read_corpus,
                                       read_labels, read_targets, write_targets)
from weakrank.embeddings import store
from weakrank.embeddings.ops import apply_whitening, compute_mean_cov, ensemble_concat, fit_whitening, l2_normalize
from weakrank.embeddings.store import EmbeddingMatrix
from weakrank.errors import ConfigError, EmptyEnsemble, StageError, ValidationError, WeakRankError
from weakrank.evaluation.metrics import DENOMINATORS, EvalReport, GroundTruth, mar_at_k
from weakrank.model.encoder import EncoderConfig
from weakrank.model.trainer import (TrainConfig, TrainResult, embed, load_checkpoint, save_checkpoint,
                                    set_num_threads, train)
from weakrank.retrieval.rerank import RerankParams, k_reciprocal_rerank
from weakrank.retrieval.search import RankedList, SearchParams, read_ranked, top_n_search, write_ranked
from weakrank.utility.config import as_list, build_dataclass, section
from weakrank.utility.parallel import resolve_n_jobs

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

@dataclass(frozen=True)
class AttributeParams:
    min_count: int = 30
    lowercase: bool = True
    count_mode: str = 'occurrences'

    def __post_init__(self):
        if self.min_count < 1:
            raise ValidationError(f"min_count must be >= 1, got {self.min_count}")
        if self.count_mode not in COUNT_MODES:
            raise ValidationError(f"count_mode must be one of {COUNT_MODES}, got '{self.count_mode}'")

@dataclass(frozen=True)
class EnsembleMember:
    """One ensemble model: its training seed and learning rate, or an existing checkpoint."""
    seed: int
    lr: float
    checkpoint: Optional[str] = None

    @classmethod
    def parse(cls, text: str) -> "EnsembleMember":
        """`seed:lr` or `seed:lr:checkpoint`."""
        parts = text.strip().split(':', 2)
        if len(parts) < 2:
            raise ConfigError(f"Ensemble member must look like seed:lr[:checkpoint], got '{text}'")
        try:
            seed, lr = int(parts[0]), float(parts[1])
        except ValueError as err:
            raise ConfigError(f"Bad ensemble member '{text}': {err}") from err
        checkpoint = parts[2] if len(parts) == 3 and parts[2] else None
        return cls(seed, lr, checkpoint)

    def __str__(self):
        text = f"{self.seed}:{self.lr!r}"
        return f"{text}:{self.checkpoint}" if self.checkpoint else text

@dataclass(frozen=True)
class PipelineConfig:
    corpus: str
    query: str
    db: str
    gt: str
    work_dir: str = str(cfg.RESULTS_DIR / 'pipeline')
    attributes: AttributeParams = field(default_factory=AttributeParams)
    encoder: Dict[str, Any] = field(default_factory=lambda: dict(cfg.ENCODER_PARAMS))
    train: TrainConfig = field(default_factory=TrainConfig)
    members: Tuple[EnsembleMember, ...] = ()
    use_ema: bool = True
    whiten: bool = True
    eps_reg: float = cfg.WHITENING_PARAMS['eps_reg']
    search: SearchParams = field(default_factory=SearchParams)
    rerank: Optional[RerankParams] = field(default_factory=RerankParams)
    k: int = cfg.EVAL_PARAMS['k']
    denominator: str = cfg.EVAL_PARAMS['denominator']
    threads: Optional[int] = None

    def __post_init__(self):
        if not self.members:
            object.__setattr__(self, 'members', (EnsembleMember(self.train.seed, self.train.base_lr),))
        object.__setattr__(self, 'members', tuple(self.members))
        allowed = {f.name for f in fields(EncoderConfig)} - {'input_dim', 'num_classes'}
        unknown = sorted(set(self.encoder) - allowed)
        if unknown:
            raise ConfigError(f"Unknown encoder keys {unknown}; valid keys are {sorted(allowed)}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.denominator not in DENOMINATORS:
            raise ValidationError(f"denominator must be one of {DENOMINATORS}, got '{self.denominator}'")
        if self.eps_reg < 0:
            raise ValidationError(f"eps_reg must be >= 0, got {self.eps_reg}")

    def member_train_config(self, member: EnsembleMember) -> TrainConfig:
        return build_dataclass(TrainConfig, {**asdict(self.train), 'seed': member.seed, 'base_lr': member.lr})

PIPELINE_GROUPS = ('paths', 'attributes', 'encoder', 'train', 'ensemble', 'embed', 'whitening',
                   'search', 'rerank', 'eval', 'run', 'ablation')

def _group(settings: Mapping[str, Any], name: str, allowed: Sequence[str]) -> Dict[str, Any]:
    values = dict(section(settings, name, keep_bare=False))
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigError(f"Unknown {name} keys {unknown}; valid keys are {sorted(allowed)}")
    return values

def pipeline_config(settings: Mapping[str, Any]) -> PipelineConfig:
    """Build a PipelineConfig from dotted `group.key` settings on top of the defaults."""
    for key in settings:
        if key.split('.', 1)[0] not in PIPELINE_GROUPS or '.' not in key:
            raise ConfigError(f"Unknown pipeline key '{key}'; keys are grouped as "
                              f"{', '.join(g + '.*' for g in PIPELINE_GROUPS)}")
    paths = _group(settings, 'paths', ('corpus', 'query', 'db', 'gt', 'work_dir'))
    missing = [name for name in ('corpus', 'query', 'db', 'gt') if name not in paths]
    if missing:
        raise ConfigError(f"Missing required path keys: {', '.join('paths.' + m for m in missing)}")
    attributes = {k: v for k, v in cfg.ATTRIBUTE_PARAMS.items() if k != 'top_n'}
    attributes.update(_group(settings, 'attributes', tuple(attributes)))
    encoder = dict(cfg.ENCODER_PARAMS)
    encoder.update(section(settings, 'encoder', keep_bare=False))
    train_params = {**cfg.TRAIN_PARAMS, **section(settings, 'train', keep_bare=False)}
    ensemble = _group(settings, 'ensemble', ('members',))
    embed_params = _group(settings, 'embed', ('use_ema',))
    whitening = _group(settings, 'whitening', ('enabled', 'eps_reg'))
    search_params = {**cfg.SEARCH_PARAMS, **section(settings, 'search', keep_bare=False)}
    rerank = {**cfg.RERANK_PARAMS, 'enabled': True}
    rerank.update(_group(settings, 'rerank', tuple(rerank)))
    evaluation = {**cfg.EVAL_PARAMS, **_group(settings, 'eval', tuple(cfg.EVAL_PARAMS))}
    run = _group(settings, 'run', ('threads',))

    rerank_enabled = bool(rerank.pop('enabled'))
    return PipelineConfig(
        corpus=str(paths['corpus']), query=str(paths['query']), db=str(paths['db']), gt=str(paths['gt']),
        work_dir=str(paths.get('work_dir', cfg.RESULTS_DIR / 'pipeline')),
        attributes=build_dataclass(AttributeParams, attributes),
        encoder=encoder,
        train=build_dataclass(TrainConfig, train_params),
        members=tuple(EnsembleMember.parse(str(m)) for m in as_list(ensemble.get('members'))),
        use_ema=bool(embed_params.get('use_ema', True)),
        whiten=bool(whitening.get('enabled', True)),
        eps_reg=float(whitening.get('eps_reg', cfg.WHITENING_PARAMS['eps_reg'])),
        search=build_dataclass(SearchParams, search_params),
        rerank=build_dataclass(RerankParams, rerank) if rerank_enabled else None,
        k=int(evaluation['k']),
        denominator=str(evaluation['denominator']),
        threads=run.get('threads'))

def resolved_settings(config: PipelineConfig) -> Dict[str, Any]:
    """Flat `group.key` view of a resolved PipelineConfig (for --print-config)."""
    settings: Dict[str, Any] = {f'paths.{name}': getattr(config, name)
                                for name in ('corpus', 'query', 'db', 'gt', 'work_dir')}
    settings.update({f'attributes.{k}': v for k, v in asdict(config.attributes).items()})
    settings.update({f'encoder.{k}': v for k, v in config.encoder.items()})
    settings.update({f'train.{k}': v for k, v in asdict(config.train).items()})
    settings['ensemble.members'] = ",".join(str(m) for m in config.members)
    settings['embed.use_ema'] = config.use_ema
    settings['whitening.enabled'] = config.whiten
    settings['whitening.eps_reg'] = config.eps_reg
    settings.update({f'search.{k}': v for k, v in asdict(config.search).items()})
    settings['rerank.enabled'] = config.rerank is not None
    if config.rerank is not None:
        settings.update({f'rerank.{k}': v for k, v in asdict(config.rerank).items()})
    settings['eval.k'] = config.k
    settings['eval.denominator'] = config.denominator
    if config.threads is not None:
        settings['run.threads'] = config.threads
    return settings

@dataclass(frozen=True)
class StagePaths:
    """Where each stage writes inside the work directory."""
    work_dir: Path

    @property
    def vocab(self) -> Path:
        return self.work_dir / 'vocab.json'

    @property
    def targets(self) -> Path:
        return self.work_dir / 'targets.tsv'

    def model(self, j: int, member: EnsembleMember) -> Path:
        return Path(member.checkpoint) if member.checkpoint else self.work_dir / f'model_{j}.ckpt'

    def query_emb(self, j: int) -> Path:
        return self.work_dir / f'query_{j}.emb'

    def db_emb(self, j: int) -> Path:
        return self.work_dir / f'db_{j}.emb'

    def query_post(self, j: int) -> Path:
        return self.work_dir / f'query_{j}_post.emb'

    def db_post(self, j: int) -> Path:
        return self.work_dir / f'db_{j}_post.emb'

    @property
    def query_ens(self) -> Path:
        return self.work_dir / 'query_ens.emb'

    @property
    def db_ens(self) -> Path:
        return self.work_dir / 'db_ens.emb'

    @property
    def candidates(self) -> Path:
        return self.work_dir / 'candidates.tsv'

    @property
    def ranked(self) -> Path:
        return self.work_dir / 'ranked.tsv'

    @property
    def report(self) -> Path:
        return self.work_dir / 'report.json'

@dataclass
class PipelineResult:
    report: EvalReport
    ranked: List[RankedList]
    paths: StagePaths
    ran: List[str] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)

# Stage functions

def mine_attrs_stage(corpus_path: PathLike, vocab_path: PathLike, params: AttributeParams,
                     threads: Optional[int] = None) -> AttributeVocab:
    titles = [title for _, title in read_corpus(corpus_path)]
    vocab = build_vocab(titles, params.min_count, params.lowercase, params.count_mode,
                        n_jobs=resolve_n_jobs(threads))
    vocab.save(vocab_path)
    return vocab

def build_targets_stage(corpus_path: PathLike, vocab_path: PathLike, targets_path: PathLike,
                        lowercase: bool = True) -> List[ItemAttributes]:
    vocab = AttributeVocab.load(vocab_path)
    items = encode_corpus(read_corpus(corpus_path), vocab, lowercase)
    build_soft_targets(items, vocab)
    write_targets(items, targets_path)
    logger.info("Wrote targets for %d items to %s", len(items), targets_path)
    return items

def load_train_targets(targets_path: Optional[PathLike] = None, labels_path: Optional[PathLike] = None,
                       vocab_path: Optional[PathLike] = None) -> SoftTargets:
    """Pseudo-attribute targets, or one-hot coarse-label targets for the single-label baseline."""
    if (targets_path is None) == (labels_path is None):
        raise ValidationError("Exactly one of targets or labels must be given")
    if labels_path is not None:
        labels = read_labels(labels_path)
        if not labels:
            raise ValidationError(f"{labels_path}: no labels")
        return SoftTargets.from_labels([i for i, _ in labels], [c for _, c in labels])
    items = read_targets(targets_path)
    if not items:
        raise ValidationError(f"{targets_path}: no targets")
    if vocab_path is not None:
        return build_soft_targets(items, AttributeVocab.load(vocab_path))
    num_classes = max(item.attr_ids[-1] for item in items) + 1
    return SoftTargets(num_samples=len(items), num_classes=num_classes, rows=tuple(items))

def train_stage(features_path: PathLike, ckpt_path: PathLike, targets: SoftTargets,
                encoder_params: Mapping[str, Any], train_config: TrainConfig,
                threads: Optional[int] = None) -> TrainResult:
    set_num_threads(threads)
    features = store.load(features_path)
    encoder_config = build_dataclass(EncoderConfig, {**encoder_params, 'input_dim': features.dim,
                                                     'num_classes': targets.num_classes})
    result = train(features, targets, encoder_config, train_config)
    save_checkpoint(result.weights, ckpt_path)
    if result.epoch_losses:
        logger.info("Trained %s: loss %.4f -> %.4f", ckpt_path, result.epoch_losses[0], result.epoch_losses[-1])
    return result

def embed_stage(ckpt_path: PathLike, features_path: PathLike, out_path: PathLike,
                use_ema: bool = False) -> EmbeddingMatrix:
    embeddings = embed(load_checkpoint(ckpt_path), store.load(features_path), use_ema=use_ema)
    store.save(embeddings, out_path)
    return embeddings

def whiten_stage(db_path: PathLike, in_paths: Sequence[PathLike], out_paths: Sequence[PathLike],
                 eps_reg: float = 1e-6, whiten: bool = True, normalize: bool = True) -> None:
    """Fit whitening on `db_path`, then transform (and L2-normalise) every input."""
    if len(in_paths) != len(out_paths):
        raise ValidationError("Need one output path per input")
    transform = fit_whitening(*compute_mean_cov(store.load(db_path)), eps_reg=eps_reg) if whiten else None
    for in_path, out_path in zip(in_paths, out_paths):
        m = store.load(in_path)
        if transform is not None:
            m = apply_whitening(m, transform)
        if normalize:
            m = l2_normalize(m)
        store.save(m, out_path)

def ensemble_stage(in_paths: Sequence[PathLike], out_path: PathLike) -> EmbeddingMatrix:
    if not in_paths:
        raise EmptyEnsemble("No ensemble inputs")
    combined = ensemble_concat([store.load(p) for p in in_paths])
    store.save(combined, out_path)
    return combined

def rerank_candidates(queries: EmbeddingMatrix, db: EmbeddingMatrix, candidates: Sequence[RankedList],
                      params: SearchParams, rerank: Optional[RerankParams],
                      threads: Optional[int] = None) -> List[RankedList]:
    """Final top-k lists: re-ranked when `rerank` is set, otherwise the head of each candidate list."""
    if rerank is None:
        return [c.head(params.final_k) for c in candidates]
    return k_reciprocal_rerank(queries, db, candidates, rerank, params.final_k, params.metric, threads)

def candidates_stage(query_path: PathLike, db_path: PathLike, out_path: PathLike, params: SearchParams,
                     threads: Optional[int] = None) -> List[RankedList]:
    """Write the full top-N candidate lists."""
    candidates = top_n_search(store.load(query_path), store.load(db_path), params, threads)
    write_ranked(candidates, out_path)
    return candidates

def search_stage(query_path: PathLike, db_path: PathLike, out_path: PathLike, params: SearchParams,
                 rerank: Optional[RerankParams] = None, threads: Optional[int] = None,
                 candidates_path: Optional[PathLike] = None) -> List[RankedList]:
    queries, db = store.load(query_path), store.load(db_path)
    candidates = top_n_search(queries, db, params, threads)
    if candidates_path is not None:
        write_ranked(candidates, candidates_path)
    ranked = rerank_candidates(queries, db, candidates, params, rerank, threads)
    write_ranked(ranked, out_path)
    return ranked

def rerank_stage(query_path: PathLike, db_path: PathLike, candidates_path: PathLike, out_path: PathLike,
                 params: SearchParams, rerank: Optional[RerankParams],
                 threads: Optional[int] = None) -> List[RankedList]:
    ranked = rerank_candidates(store.load(query_path), store.load(db_path), read_ranked(candidates_path),
                               params, rerank, threads)
    write_ranked(ranked, out_path)
    return ranked

def eval_stage(ranked_path: PathLike, gt_path: PathLike, report_path: PathLike, k: int = 10,
               denominator: str = 'min') -> EvalReport:
    report = mar_at_k(read_ranked(ranked_path), GroundTruth.load(gt_path), k, denominator)
    report.save(report_path)
    return report

# Orchestration

_WRAPPED = (WeakRankError, OSError, ValueError, ArithmeticError, RuntimeError)

class _StageRunner:
    def __init__(self, resume: bool):
        self.resume = resume
        self.ran: List[str] = []
        self.skipped: List[str] = []

    def __call__(self, name: str, outputs: Sequence[Path], func: Callable[[], Any]) -> None:
        if self.resume and all(Path(p).is_file() for p in outputs):
            logger.info("Skipping stage '%s': outputs exist", name)
            self.skipped.append(name)
            return
        logger.info("Running stage '%s'", name)
        try:
            func()
        except _WRAPPED as err:
            raise StageError(name, err) from err
        self.ran.append(name)

def run_pipeline(config: PipelineConfig, resume: bool = False,
                 until: Optional[str] = None) -> Optional[PipelineResult]:
    """Run every stage in order; with `until='embed'` stop once each member's raw embeddings exist."""
    paths = StagePaths(Path(config.work_dir))
    paths.work_dir.mkdir(parents=True, exist_ok=True)
    stage = _StageRunner(resume)
    attrs = config.attributes

    stage('mine-attrs', [paths.vocab],
          lambda: mine_attrs_stage(config.corpus, paths.vocab, attrs, config.threads))
    stage('build-targets', [paths.targets],
          lambda: build_targets_stage(config.corpus, paths.vocab, paths.targets, attrs.lowercase))

    for j, member in enumerate(config.members):
        ckpt = paths.model(j, member)
        if member.checkpoint is None:
            stage(f'train[{j}]', [ckpt], lambda j=j, member=member, ckpt=ckpt: train_stage(
                config.db, ckpt, load_train_targets(paths.targets, vocab_path=paths.vocab),
                config.encoder, config.member_train_config(member), config.threads))
        stage(f'embed[{j}]', [paths.query_emb(j), paths.db_emb(j)], lambda j=j, ckpt=ckpt: (
            embed_stage(ckpt, config.query, paths.query_emb(j), config.use_ema),
            embed_stage(ckpt, config.db, paths.db_emb(j), config.use_ema)))
    if until == 'embed':
        return None

    n_members = len(config.members)
    for j in range(n_members):
        stage(f'whiten[{j}]', [paths.query_post(j), paths.db_post(j)], lambda j=j: whiten_stage(
            paths.db_emb(j), [paths.query_emb(j), paths.db_emb(j)], [paths.query_post(j), paths.db_post(j)],
            eps_reg=config.eps_reg, whiten=config.whiten))
    stage('ensemble', [paths.query_ens, paths.db_ens], lambda: (
        ensemble_stage([paths.query_post(j) for j in range(n_members)], paths.query_ens),
        ensemble_stage([paths.db_post(j) for j in range(n_members)], paths.db_ens)))
    stage('search', [paths.candidates], lambda: candidates_stage(
        paths.query_ens, paths.db_ens, paths.candidates, config.search, config.threads))
    stage('rerank', [paths.ranked], lambda: rerank_stage(
        paths.query_ens, paths.db_ens, paths.candidates, paths.ranked, config.search, config.rerank,
        config.threads))
    stage('eval', [paths.report], lambda: eval_stage(
        paths.ranked, config.gt, paths.report, config.k, config.denominator))

    report = EvalReport.load(paths.report)
    logger.info("Pipeline finished: MAR@%d = %.4f (%d stages run, %d skipped)",
                report.k, report.mar, len(stage.ran), len(stage.skipped))
    return PipelineResult(report=report, ranked=read_ranked(paths.ranked), paths=paths,
                          ran=stage.ran, skipped=stage.skipped)
