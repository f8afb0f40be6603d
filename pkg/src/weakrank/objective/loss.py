"""Soft multi-label cross-entropy and PolyLoss over pseudo-attribute targets.

Both losses take a (B, T) batch of logits and the soft targets Y, whose rows put
mass 1/K on each of an item's K attributes. PolyLoss adds
eps/B * sum_i sum_t (1 - Y_t P_t) over *all* classes, so its value exceeds the
single-target Poly-1 form by a constant; the gradient is unaffected.
"""
from dataclasses import dataclass
from typing import Dict, Union

import torch
from torch import nn

from weakrank.attributes.miner import SoftTargets
from weakrank.errors import NonFiniteInput, ShapeMismatch, ValidationError

TargetsLike = Union[SoftTargets, torch.Tensor]

@dataclass(frozen=True)
class ObjectiveConfig:
    epsilon: float = 0.5

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValidationError(f"epsilon must be >= 0, got {self.epsilon}")

def _check_logits(logits: torch.Tensor) -> None:
    if logits.dim() != 2:
        raise ShapeMismatch(f"Logits must be a (B, T) matrix, got shape {tuple(logits.shape)}")
    if not torch.isfinite(logits).all():
        raise NonFiniteInput("Logits contain NaN or infinite values")

def dense_targets(targets: TargetsLike, logits: torch.Tensor) -> torch.Tensor:
    """Dense (B, T) target matrix matching the dtype and device of `logits`."""
    if isinstance(targets, SoftTargets):
        if targets.num_samples != logits.shape[0] or targets.num_classes != logits.shape[1]:
            raise ShapeMismatch(f"Targets are {targets.num_samples}x{targets.num_classes}, "
                                f"logits are {logits.shape[0]}x{logits.shape[1]}")
        targets = torch.as_tensor(targets.to_dense())
    elif targets.shape != logits.shape:
        raise ShapeMismatch(f"Targets shape {tuple(targets.shape)} != logits shape {tuple(logits.shape)}")
    return targets.to(dtype=logits.dtype, device=logits.device)

def softmax(logits: torch.Tensor) -> torch.Tensor:
    _check_logits(logits)
    return torch.softmax(logits, dim=1)

def soft_cross_entropy(logits: torch.Tensor, targets: TargetsLike) -> torch.Tensor:
    _check_logits(logits)
    y = dense_targets(targets, logits)
    log_p = torch.log_softmax(logits, dim=1)
    return -(y * log_p).sum() / logits.shape[0]

def _poly_term(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return (1 - y * p).sum() / p.shape[0]

def poly_loss_value(logits: torch.Tensor, targets: TargetsLike, cfg: ObjectiveConfig) -> torch.Tensor:
    """PolyLoss computed directly from its definition (differentiable by autograd)."""
    ce = soft_cross_entropy(logits, targets)
    if cfg.epsilon == 0:
        return ce
    y = dense_targets(targets, logits)
    return ce + cfg.epsilon * _poly_term(torch.softmax(logits, dim=1), y)

def grad_poly_loss(logits: torch.Tensor, targets: TargetsLike, cfg: ObjectiveConfig) -> torch.Tensor:
    """Closed-form gradient of PolyLoss with respect to the logits.

    d/dz_j of -sum_t Y_t log P_t is P_j * sum_t Y_t - Y_j, and of -sum_t Y_t P_t it is
    P_j * sum_t Y_t P_t - Y_j P_j. The constant T in sum_t (1 - Y_t P_t) drops out.
    """
    _check_logits(logits)
    y = dense_targets(targets, logits)
    p = torch.softmax(logits, dim=1)
    y_mass = y.sum(dim=1, keepdim=True)
    grad = p * y_mass - y
    if cfg.epsilon != 0:
        yp = y * p
        grad = grad + cfg.epsilon * (p * yp.sum(dim=1, keepdim=True) - yp)
    return grad / logits.shape[0]

class _PolyLossFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, logits, y, epsilon):
        cfg = ObjectiveConfig(epsilon)
        ctx.save_for_backward(logits, y)
        ctx.epsilon = epsilon
        return poly_loss_value(logits, y, cfg)

    @staticmethod
    def backward(ctx, grad_output):
        logits, y = ctx.saved_tensors
        grad = grad_poly_loss(logits, y, ObjectiveConfig(ctx.epsilon))
        return grad_output * grad, None, None

def poly_loss(logits: torch.Tensor, targets: TargetsLike, cfg: ObjectiveConfig) -> torch.Tensor:
    """PolyLoss whose backward pass is the analytic gradient."""
    y = dense_targets(targets, logits)
    return _PolyLossFunction.apply(logits, y, cfg.epsilon)

class PolyLoss(nn.Module):
    def __init__(self, epsilon: float = 0.5):
        super().__init__()
        self.cfg = ObjectiveConfig(epsilon)

    def forward(self, logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
        return poly_loss(logits, targets, self.cfg)

def _random_instance(generator: torch.Generator, max_batch: int, max_classes: int):
    batch = int(torch.randint(1, max_batch + 1, (1,), generator=generator))
    n_classes = int(torch.randint(2, max_classes + 1, (1,), generator=generator))
    logits = torch.randn(batch, n_classes, generator=generator, dtype=torch.float64) * 3
    y = torch.zeros(batch, n_classes, dtype=torch.float64)
    for i in range(batch):
        k = int(torch.randint(1, n_classes + 1, (1,), generator=generator))
        attrs = torch.randperm(n_classes, generator=generator)[:k]
        y[i, attrs] = 1.0 / k
    return logits, y

def loss_check(n_trials: int = 100, seed: int = 0, epsilon: float = 0.5,
               max_batch: int = 4, max_classes: int = 16,
               step: float = 1e-4, rtol: float = 1e-4) -> Dict[str, float]:
    """Check the analytic gradient against central finite differences and autograd.

    Returns the number of failing trials and the largest relative error against
    autograd through the as-written loss.
    """
    generator = torch.Generator().manual_seed(seed)
    cfg = ObjectiveConfig(epsilon)
    n_failed = 0
    max_rel_err = 0.0
    for _ in range(n_trials):
        logits, y = _random_instance(generator, max_batch, max_classes)
        logits.requires_grad_(True)
        ok = torch.autograd.gradcheck(lambda z: poly_loss(z, y, cfg), (logits,),
                                      eps=step, atol=1e-7, rtol=rtol, raise_exception=False)
        reference, = torch.autograd.grad(poly_loss_value(logits, y, cfg), logits)
        analytic = grad_poly_loss(logits.detach(), y, cfg)
        scale = reference.abs().max().clamp_min(1e-12)
        max_rel_err = max(max_rel_err, float((analytic - reference).abs().max() / scale))
        n_failed += 0 if ok else 1
    return {'n_trials': n_trials, 'n_failed': n_failed, 'max_rel_error': max_rel_err}
