import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
from tqdm import trange

from weakrank import config as cfg
from weakrank.attributes.miner import SoftTargets
from weakrank.embeddings.store import EmbeddingMatrix
from weakrank.errors import (CorruptFile, DivergenceDetected, NonFiniteActivation, ShapeMismatch,
                             ValidationError, VersionMismatch)
from weakrank.model.encoder import EncoderConfig, ModelWeights, ResidualMLP, forward, init_encoder
from weakrank.objective.loss import ObjectiveConfig, poly_loss
from weakrank.utility.files import atomic_write_bytes
from weakrank.utility.parallel import resolve_n_jobs

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 224
    epochs: int = 20
    warmup_epochs: int = 5
    ema_decay: float = 0.9999
    poly_epsilon: float = 0.5
    seed: int = 0
    verbose: bool = False

    def __post_init__(self):
        if self.base_lr < 0:
            raise ValidationError(f"base_lr must be >= 0, got {self.base_lr}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        for name in ('beta1', 'beta2'):
            if not 0 < getattr(self, name) < 1:
                raise ValidationError(f"{name} must be in (0, 1), got {getattr(self, name)}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValidationError(f"warmup_epochs must be in [0, epochs], got {self.warmup_epochs}")
        if not 0 <= self.ema_decay < 1:
            raise ValidationError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.poly_epsilon < 0:
            raise ValidationError(f"poly_epsilon must be >= 0, got {self.poly_epsilon}")

@dataclass
class TrainResult:
    weights: ModelWeights
    epoch_losses: List[float] = field(default_factory=list)
    dropped_rows: int = 0

def set_num_threads(threads: Optional[int] = None) -> int:
    """Pin torch intra-op threads; one thread gives bit-exact reruns."""
    n_jobs = resolve_n_jobs(threads)
    torch.set_num_threads(n_jobs)
    return n_jobs

def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup to `base_lr`, then cosine decay towards zero."""
    if not 0 <= step < total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps})")
    if warmup_steps > total_steps:
        raise ValidationError(f"warmup_steps {warmup_steps} > total_steps {total_steps}")
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1 + math.cos(math.pi * progress))

def build_optimizer(network: nn.Module, config: TrainConfig) -> torch.optim.AdamW:
    """AdamW over every parameter; torch applies the decoupled decay before the moment update."""
    return torch.optim.AdamW(network.parameters(), lr=config.base_lr,
                             betas=(config.beta1, config.beta2),
                             weight_decay=config.weight_decay, eps=1e-8, foreach=False)

def optimizer_step(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        for param in group['params']:
            if param.grad is not None and param.grad.shape != param.shape:
                raise ShapeMismatch(f"Gradient shape {tuple(param.grad.shape)} != "
                                    f"parameter shape {tuple(param.shape)}")
        group['lr'] = lr
    optimizer.step()

@torch.no_grad()
def ema_update(shadow: nn.Module, live: nn.Module, decay: float) -> None:
    """shadow <- decay * shadow + (1 - decay) * live, elementwise."""
    if not 0 <= decay < 1:
        raise ValidationError(f"decay must be in [0, 1), got {decay}")
    shadow_params = dict(shadow.named_parameters())
    for name, live_param in live.named_parameters():
        shadow_param = shadow_params.get(name)
        if shadow_param is None or shadow_param.shape != live_param.shape:
            raise ShapeMismatch(f"EMA shadow does not match live parameter '{name}'")
        shadow_param.mul_(decay).add_(live_param, alpha=1 - decay)

def align_dataset(features: EmbeddingMatrix, targets: SoftTargets) -> Tuple[torch.Tensor, torch.Tensor, int]:
    """Feature rows paired with their dense targets; rows without targets are dropped."""
    positions = {item_id: i for i, item_id in enumerate(targets.item_ids)}
    keep = [i for i, item_id in enumerate(features.ids) if item_id in positions]
    dropped = features.n - len(keep)
    if dropped:
        logger.warning("%d feature rows have no targets and are left out of training", dropped)
    if not keep:
        raise ValidationError("No feature row has a matching target")
    subset = targets.subset([positions[features.ids[i]] for i in keep])
    x = torch.from_numpy(features.data[keep].copy())
    y = torch.from_numpy(subset.to_dense(np.float32))
    return x, y, dropped

def train(features: EmbeddingMatrix, targets: SoftTargets, encoder_config: EncoderConfig,
          train_config: TrainConfig, weights: Optional[ModelWeights] = None) -> TrainResult:
    """Minimise PolyLoss with AdamW, warmup + cosine schedule, drop-path and a weight EMA."""
    x, y, dropped = align_dataset(features, targets)
    if x.shape[1] != encoder_config.input_dim:
        raise ShapeMismatch(f"Features have dim {x.shape[1]}, encoder expects {encoder_config.input_dim}")
    if y.shape[1] != encoder_config.num_classes:
        raise ShapeMismatch(f"Targets have {y.shape[1]} classes, encoder expects {encoder_config.num_classes}")
    if weights is None:
        weights = init_encoder(encoder_config, train_config.seed)
    model = weights.model
    objective = ObjectiveConfig(train_config.poly_epsilon)
    optimizer = build_optimizer(model, train_config)

    n_samples = x.shape[0]
    steps_per_epoch = math.ceil(n_samples / train_config.batch_size)
    total_steps = train_config.epochs * steps_per_epoch
    warmup_steps = train_config.warmup_epochs * steps_per_epoch
    shuffle_gen = torch.Generator().manual_seed(train_config.seed)
    drop_gen = torch.Generator().manual_seed(train_config.seed + 1)

    result = TrainResult(weights=weights, dropped_rows=dropped)
    step = 0
    pbar = trange(train_config.epochs, disable=not train_config.verbose)
    for epoch in pbar:
        order = torch.randperm(n_samples, generator=shuffle_gen)
        total_loss = 0.0
        lr = 0.0
        for start in range(0, n_samples, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            xi, yi = x[idx], y[idx]
            lr = lr_at(step, total_steps, warmup_steps, train_config.base_lr)

            optimizer.zero_grad()
            try:
                _, logits = forward(model, xi, train=True, generator=drop_gen)
            except NonFiniteActivation as err:
                raise DivergenceDetected(f"{err} at step {step} (epoch {epoch + 1})") from err
            loss = poly_loss(logits, yi, objective)
            if not torch.isfinite(loss):
                raise DivergenceDetected(f"Loss became {loss.item()} at step {step} (epoch {epoch + 1})")
            loss.backward()
            optimizer_step(optimizer, lr)
            ema_update(weights.ema, model, train_config.ema_decay)

            total_loss += loss.item() * len(idx)
            step += 1

        avg_loss = total_loss / n_samples
        result.epoch_losses.append(avg_loss)
        pbar.set_description(f"[Epoch {epoch + 1:4}/{train_config.epochs}]")
        pbar.set_postfix_str(f"Training loss = {avg_loss:.4f}, lr = {lr:.2e}")
        logger.debug("epoch %d: loss=%.6f lr=%.3e", epoch + 1, avg_loss, lr)

    model.eval()
    return result

@torch.no_grad()
def embed(weights: ModelWeights, features: EmbeddingMatrix, use_ema: bool = False) -> EmbeddingMatrix:
    """Eval-mode pre-head embeddings; row ids are preserved."""
    network = weights.network(use_ema)
    if features.dim != network.config.input_dim:
        raise ShapeMismatch(f"Features have dim {features.dim}, encoder expects {network.config.input_dim}")
    x = torch.from_numpy(features.data.copy())
    outputs = []
    for start in range(0, features.n, cfg.EMBED_BATCH_SIZE):
        embeddings, _ = forward(network, x[start:start + cfg.EMBED_BATCH_SIZE], train=False)
        outputs.append(embeddings.numpy())
    data = np.concatenate(outputs, axis=0) if outputs else np.zeros((0, network.config.embed_dim))
    return EmbeddingMatrix(features.ids, data.astype(np.float32))

# Checkpoint layout: b"WRKC", u32 version, u32 config length, config JSON,
# u32 tensor count, then per tensor: u16 name length, name, u32 ndim, ndim x u32 dims, f32 data.
CKPT_MAGIC = b"WRKC"
CKPT_VERSION = 1

def save_checkpoint(weights: ModelWeights, path: Union[str, Path]) -> None:
    config_blob = json.dumps(asdict(weights.config), sort_keys=True).encode('utf-8')
    tensors = [(f"live.{name}", t) for name, t in weights.model.state_dict().items()]
    tensors += [(f"ema.{name}", t) for name, t in weights.ema.state_dict().items()]
    parts = [CKPT_MAGIC, struct.pack('<II', CKPT_VERSION, len(config_blob)), config_blob,
             struct.pack('<I', len(tensors))]
    for name, tensor in tensors:
        encoded = name.encode('utf-8')
        array = tensor.detach().cpu().numpy().astype('<f4')
        parts.append(struct.pack('<H', len(encoded)) + encoded)
        parts.append(struct.pack(f'<I{array.ndim}I', array.ndim, *array.shape))
        parts.append(array.tobytes())
    atomic_write_bytes(path, b"".join(parts))

def _read(payload: bytes, offset: int, fmt: str, source: str):
    size = struct.calcsize(fmt)
    if offset + size > len(payload):
        raise CorruptFile(f"{source}: truncated checkpoint")
    return struct.unpack_from(fmt, payload, offset), offset + size

def load_checkpoint(path: Union[str, Path]) -> ModelWeights:
    source = str(path)
    with open(path, 'rb') as stream:
        payload = stream.read()
    if payload[:4] != CKPT_MAGIC:
        raise CorruptFile(f"{source}: not a weakrank checkpoint")
    (version, config_len), offset = _read(payload, 4, '<II', source)
    if version != CKPT_VERSION:
        raise VersionMismatch(f"{source}: checkpoint version {version}, expected {CKPT_VERSION}")
    try:
        config = EncoderConfig(**json.loads(payload[offset:offset + config_len].decode('utf-8')))
    except (ValueError, TypeError) as err:
        raise CorruptFile(f"{source}: bad encoder config ({err})") from err
    offset += config_len
    (count,), offset = _read(payload, offset, '<I', source)
    states = {'live': {}, 'ema': {}}
    for _ in range(count):
        (name_len,), offset = _read(payload, offset, '<H', source)
        name = payload[offset:offset + name_len].decode('utf-8')
        offset += name_len
        (ndim,), offset = _read(payload, offset, '<I', source)
        shape, offset = _read(payload, offset, f'<{ndim}I', source)
        n_bytes = int(np.prod(shape)) * 4
        if offset + n_bytes > len(payload):
            raise CorruptFile(f"{source}: truncated tensor '{name}'")
        array = np.frombuffer(payload, dtype='<f4', count=n_bytes // 4, offset=offset).reshape(shape)
        offset += n_bytes
        group, _, key = name.partition('.')
        if group not in states:
            raise CorruptFile(f"{source}: unexpected tensor '{name}'")
        states[group][key] = torch.from_numpy(array.astype(np.float32))
    if offset != len(payload):
        raise CorruptFile(f"{source}: trailing bytes after tensors")

    model, ema = ResidualMLP(config), ResidualMLP(config)
    try:
        model.load_state_dict(states['live'])
        ema.load_state_dict(states['ema'])
    except RuntimeError as err:
        raise CorruptFile(f"{source}: {err}") from err
    model.eval()
    ema.eval()
    return ModelWeights(model, ema)
