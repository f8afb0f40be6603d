import copy
from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn

from weakrank.errors import NonFiniteActivation, ValidationError

@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    num_classes: int
    hidden_dim: int = 256
    num_blocks: int = 2
    embed_dim: int = 128
    drop_path_prob: float = 0.4
    head_init_scale: float = 0.01

    def __post_init__(self):
        for name in ('input_dim', 'num_classes', 'hidden_dim', 'embed_dim'):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_blocks < 0:
            raise ValidationError(f"num_blocks must be >= 0, got {self.num_blocks}")
        if not 0 <= self.drop_path_prob < 1:
            raise ValidationError(f"drop_path_prob must be in [0, 1), got {self.drop_path_prob}")
        if self.head_init_scale < 0:
            raise ValidationError(f"head_init_scale must be >= 0, got {self.head_init_scale}")

def drop_path(x: torch.Tensor, drop_prob: float, training: bool,
              generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Stochastic depth per sample: zero the branch with prob `drop_prob`, rescale survivors."""
    if drop_prob == 0.0 or not training:
        return x
    keep_prob = 1 - drop_prob
    shape = (x.shape[0],) + (1,) * (x.ndim - 1)
    noise = torch.empty(shape, dtype=x.dtype, device=x.device)
    noise = noise.bernoulli_(keep_prob, generator=generator)
    return x * noise.div_(keep_prob)

class ResidualBlock(nn.Module):
    """x + drop_path(branch(x)). With `linear=True` the branch is a single Linear."""
    def __init__(self, dim: int, drop_prob: float = 0.0, linear: bool = False):
        super().__init__()
        self.drop_prob = drop_prob
        if linear:
            self.branch = nn.Sequential(nn.Linear(dim, dim))
        else:
            self.branch = nn.Sequential(nn.LayerNorm(dim), nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, dim))

    def forward(self, x: torch.Tensor, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        return x + drop_path(self.branch(x), self.drop_prob, self.training, generator)

class ResidualMLP(nn.Module):
    """
    stem -> residual blocks -> embedding projection -> pseudo-attribute head.
    The embedding used for retrieval is the output of the projection (pre-head).
    """
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.stem = nn.Linear(config.input_dim, config.hidden_dim)
        self.blocks = nn.ModuleList([ResidualBlock(config.hidden_dim, config.drop_path_prob)
                                     for _ in range(config.num_blocks)])
        self.neck = nn.Linear(config.hidden_dim, config.embed_dim)
        self.head = nn.Linear(config.embed_dim, config.num_classes)

    def forward(self, x: torch.Tensor,
                generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        h = self.stem(x)
        for block in self.blocks:
            h = block(h, generator)
        embeddings = self.neck(h)
        return embeddings, self.head(embeddings)

    def __repr__(self):
        c = self.config
        return (f"{self.__class__.__name__}(input_dim={c.input_dim}, hidden_dim={c.hidden_dim}, "
                f"num_blocks={c.num_blocks}, embed_dim={c.embed_dim}, num_classes={c.num_classes})")

class ModelWeights:
    """Live network plus its EMA shadow (same architecture, same parameter shapes)."""
    def __init__(self, model: ResidualMLP, ema: Optional[ResidualMLP] = None):
        self.model = model
        self.ema = ema if ema is not None else copy.deepcopy(model)
        self.ema.requires_grad_(False)

    @property
    def config(self) -> EncoderConfig:
        return self.model.config

    def network(self, use_ema: bool = False) -> ResidualMLP:
        return self.ema if use_ema else self.model

def init_encoder(config: EncoderConfig, seed: int) -> ModelWeights:
    """Fan-in scaled init (torch defaults) with the head shrunk by `head_init_scale`."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = ResidualMLP(config)
    with torch.no_grad():
        model.head.weight.mul_(config.head_init_scale)
        model.head.bias.mul_(config.head_init_scale)
    return ModelWeights(model)

def forward(network: ResidualMLP, inputs: torch.Tensor, train: bool = False,
            generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    network.train(train)
    embeddings, logits = network(inputs, generator)
    if not (torch.isfinite(embeddings).all() and torch.isfinite(logits).all()):
        raise NonFiniteActivation("Encoder produced NaN or infinite activations")
    return embeddings, logits
