from pathlib import Path

# Directories
ROOT_DIR = Path(__file__).absolute().parent.parent.parent
CONFIGS_DIR = Path.joinpath(ROOT_DIR, 'configs')
DATA_DIR = Path.joinpath(ROOT_DIR, 'data')
MODELS_DIR = Path.joinpath(ROOT_DIR, 'models')
RESULTS_DIR = Path.joinpath(ROOT_DIR, 'results')
PLOTS_DIR = Path.joinpath(ROOT_DIR, 'plots')

THREADS_ENV_VAR = "WEAKRANK_THREADS"

ATTRIBUTE_PARAMS = {
    'min_count': 30,
    'lowercase': True,
    'count_mode': 'occurrences',
    'top_n': 100
}

ENCODER_PARAMS = {
    'hidden_dim': 256,
    'num_blocks': 2,
    'embed_dim': 128,
    'drop_path_prob': 0.4,
    'head_init_scale': 0.01
}

TRAIN_PARAMS = {
    'base_lr': 1e-4,
    'weight_decay': 1e-4,
    'beta1': 0.9,
    'beta2': 0.999,
    'batch_size': 224,
    'epochs': 20,
    'warmup_epochs': 5,
    'ema_decay': 0.9999,
    'poly_epsilon': 0.5,
    'seed': 0
}

SEARCH_PARAMS = {
    'metric': 'cosine',
    'top_n': 100,
    'final_k': 10
}

RERANK_PARAMS = {
    'k1': 8,
    'k2': 5,
    'alpha': 0.5
}

WHITENING_PARAMS = {
    'eps_reg': 1e-6
}

EVAL_PARAMS = {
    'k': 10,
    'denominator': 'min'
}

SYNTH_PARAMS = {
    'num_coarse_classes': 10,
    'instances_per_class': 50,
    'views_per_instance': 3,
    'feature_dim': 64,
    'vocab_size': 200,
    'attrs_per_instance': 5,
    'class_signal': 1.0,
    'instance_signal': 1.0,
    'noise_sigma': 0.6,
    'zipf_exponent': 1.0,
    'seed': 7
}

# Query/database block sizes are fixed so results never depend on the worker count
SEARCH_BLOCK_SIZE = 64
COUNT_CHUNK_SIZE = 4096
EMBED_BATCH_SIZE = 1024
