"""Ablation ladder over pipeline components and the training-objective comparison."""
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd

from weakrank.attributes.miner import build_soft_targets, build_vocab, encode_corpus
from weakrank.embeddings import store
from weakrank.embeddings.ops import ensemble_concat, l2_normalize, whiten_pair
from weakrank.embeddings.store import EmbeddingMatrix
from weakrank.errors import ValidationError
from weakrank.evaluation.metrics import EvalReport, GroundTruth, mar_at_k
from weakrank.model.encoder import EncoderConfig
from weakrank.model.trainer import TrainConfig, embed, set_num_threads, train
from weakrank.pipeline import AttributeParams, PipelineConfig, StagePaths, rerank_candidates, run_pipeline
from weakrank.retrieval.rerank import RerankParams
from weakrank.retrieval.search import SearchParams, top_n_search
from weakrank.tools.data_loader import get_data_loader
from weakrank.utility.files import atomic_write_text
from weakrank.utility.parallel import resolve_n_jobs

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class Variant:
    name: str
    ensemble: bool
    whiten: bool
    rerank: bool
    metric: str = 'cosine'

VARIANTS = {
    'baseline': Variant('baseline', ensemble=False, whiten=False, rerank=False),
    'whitening': Variant('whitening', ensemble=False, whiten=True, rerank=False),
    'rerank': Variant('rerank', ensemble=False, whiten=True, rerank=True),
    'ensemble': Variant('ensemble', ensemble=True, whiten=True, rerank=True),
    'euclidean': Variant('euclidean', ensemble=True, whiten=True, rerank=True, metric='euclidean'),
}
LADDER = ('baseline', 'whitening', 'rerank', 'ensemble')

def load_member_embeddings(config: PipelineConfig) -> List[Tuple[EmbeddingMatrix, EmbeddingMatrix]]:
    """Raw (query, db) embeddings of every ensemble member from the pipeline work directory."""
    paths = StagePaths(Path(config.work_dir))
    pairs = []
    for j in range(len(config.members)):
        for path in (paths.query_emb(j), paths.db_emb(j)):
            if not path.is_file():
                raise ValidationError(f"Missing embeddings file {path}; run the pipeline first")
        pairs.append((store.load(paths.query_emb(j)), store.load(paths.db_emb(j))))
    return pairs

def evaluate_variant(variant: Variant, members: Sequence[Tuple[EmbeddingMatrix, EmbeddingMatrix]],
                     gt: GroundTruth, config: PipelineConfig) -> EvalReport:
    used = members if variant.ensemble else members[:1]
    queries, db = [], []
    for q, d in used:
        if variant.whiten:
            q, d = whiten_pair(q, d, config.eps_reg)
        else:
            q, d = l2_normalize(q), l2_normalize(d)
        queries.append(q)
        db.append(d)
    q_all, db_all = ensemble_concat(queries), ensemble_concat(db)
    params = replace(config.search, metric=variant.metric)
    rerank = (config.rerank or RerankParams()) if variant.rerank else None
    candidates = top_n_search(q_all, db_all, params, config.threads)
    ranked = rerank_candidates(q_all, db_all, candidates, params, rerank, config.threads)
    return mar_at_k(ranked, gt, config.k, config.denominator)

def ablation_run(config: PipelineConfig, variants: Sequence[str] = LADDER,
                 out_path: Optional[Union[str, Path]] = None, prepare: bool = False) -> pd.DataFrame:
    """MAR@k of each variant on the same member embeddings.

    With `prepare`, the pipeline's training and embedding stages are run first
    (resuming from existing artifacts). The CSV is written only once every
    variant has been evaluated.
    """
    if not variants:
        raise ValidationError("No ablation variants given")
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValidationError(f"Unknown ablation variants {unknown}; choose from {sorted(VARIANTS)}")
    if prepare:
        run_pipeline(config, resume=True, until='embed')
    members = load_member_embeddings(config)
    gt = GroundTruth.load(config.gt)

    rows = []
    for name in variants:
        report = evaluate_variant(VARIANTS[name], members, gt, config)
        logger.info("Variant %-10s MAR@%d = %.4f", name, config.k, report.mar)
        rows.append({'variant': name, 'mar': report.mar})
    frame = pd.DataFrame(rows, columns=['variant', 'mar'])
    if out_path is not None:
        atomic_write_text(out_path, frame.to_csv(index=False, lineterminator='\n'))
    return frame

def compare_objectives(bench_dir: Union[str, Path], attributes: AttributeParams,
                       encoder_params: Mapping[str, Any], train_config: TrainConfig,
                       k: int = 10, denominator: str = 'min', use_ema: bool = True,
                       threads: Optional[int] = None,
                       out_path: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """Coarse-label X-Entropy vs. pseudo-attribute multi-label training, same recipe and seed.

    Each model is trained on the database views and scored by MAR@k of plain
    cosine retrieval on its embeddings.
    """
    set_num_threads(threads)
    loader = get_data_loader("synthetic").load_data(bench_dir)
    queries, db, gt = loader.get_data()
    titles = loader.get_titles(db.ids)
    vocab = build_vocab([title for _, title in titles], attributes.min_count, attributes.lowercase,
                        attributes.count_mode, n_jobs=resolve_n_jobs(threads))
    attr_targets = build_soft_targets(encode_corpus(titles, vocab, attributes.lowercase), vocab)
    label_targets = loader.get_label_targets(db.ids)

    runs = [('coarse-label classification', 'category labels', 'X-Entropy', label_targets, 0.0),
            ('pseudo-attribute MLC', 'pseudo attributes', 'X-Entropy', attr_targets, 0.0)]
    if train_config.poly_epsilon > 0:
        runs.append(('pseudo-attribute MLC', 'pseudo attributes', 'PolyLoss', attr_targets,
                     train_config.poly_epsilon))

    search = SearchParams('cosine', top_n=k, final_k=k)
    rows = []
    for method, used_info, objective, targets, epsilon in runs:
        encoder_config = EncoderConfig(input_dim=db.dim, num_classes=targets.num_classes, **encoder_params)
        result = train(db, targets, encoder_config, replace(train_config, poly_epsilon=epsilon))
        ranked = top_n_search(embed(result.weights, queries, use_ema), embed(result.weights, db, use_ema),
                              search, threads)
        mar = mar_at_k(ranked, gt, k, denominator).mar
        logger.info("%s / %s / %s: MAR@%d = %.4f", method, used_info, objective, k, mar)
        rows.append({'method': method, 'used_info': used_info, 'objective': objective, 'mar': mar})
    frame = pd.DataFrame(rows, columns=['method', 'used_info', 'objective', 'mar'])
    if out_path is not None:
        atomic_write_text(out_path, frame.to_csv(index=False, lineterminator='\n'))
    return frame
