import math

import pytest
import torch

from weakrank.attributes.miner import ItemAttributes, SoftTargets
from weakrank.errors import NonFiniteInput, ShapeMismatch, ValidationError
from weakrank.objective.loss import (ObjectiveConfig, PolyLoss, grad_poly_loss, loss_check, poly_loss,
                                     poly_loss_value, soft_cross_entropy, softmax)

LN4 = math.log(4)

def _targets(*attr_sets, num_classes):
    rows = tuple(ItemAttributes(f"i{n}", attrs) for n, attrs in enumerate(attr_sets))
    return SoftTargets(num_samples=len(rows), num_classes=num_classes, rows=rows)

def test_softmax_examples():
    p = softmax(torch.tensor([[0.0, 0.0], [5.0, 5.0]], dtype=torch.float64))
    torch.testing.assert_close(p, torch.full((2, 2), 0.5, dtype=torch.float64))
    p = softmax(torch.tensor([[7.0, 7.0, 7.0, 7.0]], dtype=torch.float64))
    torch.testing.assert_close(p, torch.full((1, 4), 0.25, dtype=torch.float64))
    p = softmax(torch.log(torch.tensor([[1.0, 2.0, 3.0]], dtype=torch.float64)))
    torch.testing.assert_close(p, torch.tensor([[1 / 6, 2 / 6, 3 / 6]], dtype=torch.float64))

def test_softmax_rejects_non_finite():
    with pytest.raises(NonFiniteInput):
        softmax(torch.tensor([[0.0, float('nan')]]))
    with pytest.raises(ShapeMismatch):
        softmax(torch.zeros(3))

def test_cross_entropy_values():
    confident = torch.tensor([[20.0, -20.0]], dtype=torch.float64)
    assert soft_cross_entropy(confident, _targets((0,), num_classes=2)).item() < 1e-8

    uniform = torch.zeros(1, 4, dtype=torch.float64)
    loss = soft_cross_entropy(uniform, _targets((0, 1), num_classes=4))
    assert loss.item() == pytest.approx(LN4, abs=1e-6)

def test_cross_entropy_batch_mean():
    logits = torch.tensor([[20.0, -20.0, -20.0, -20.0], [0.0, 0.0, 0.0, 0.0]], dtype=torch.float64)
    y = torch.tensor([[1.0, 0.0, 0.0, 0.0], [0.5, 0.5, 0.0, 0.0]], dtype=torch.float64)
    assert soft_cross_entropy(logits, y).item() == pytest.approx(0.693147, abs=1e-6)

def test_poly_loss_values():
    uniform = torch.zeros(1, 4, dtype=torch.float64)
    targets = _targets((0, 1), num_classes=4)
    assert poly_loss(uniform, targets, ObjectiveConfig(0.5)).item() == pytest.approx(3.261294, abs=1e-6)

    confident = torch.tensor([[20.0, -20.0]], dtype=torch.float64)
    value = poly_loss(confident, _targets((0,), num_classes=2), ObjectiveConfig(0.5)).item()
    assert value == pytest.approx(0.5, abs=1e-6)

def test_poly_loss_epsilon_zero_is_cross_entropy(rng):
    logits = torch.from_numpy(rng.standard_normal((3, 5)))
    targets = _targets((0,), (1, 4), (0, 2, 3), num_classes=5)
    assert poly_loss(logits, targets, ObjectiveConfig(0.0)).item() == soft_cross_entropy(logits, targets).item()

def test_poly_loss_decomposition(rng):
    logits = torch.from_numpy(rng.standard_normal((3, 5)))
    targets = _targets((0,), (1, 4), (0, 2, 3), num_classes=5)
    y = torch.from_numpy(targets.to_dense())
    p = torch.softmax(logits, dim=1)
    expected = (1 - y * p).sum().item() / 3 * 0.7
    diff = poly_loss(logits, targets, ObjectiveConfig(0.7)) - soft_cross_entropy(logits, targets)
    assert diff.item() == pytest.approx(expected, abs=1e-12)

def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        soft_cross_entropy(torch.zeros(2, 3), _targets((0,), num_classes=3))
    with pytest.raises(ShapeMismatch):
        poly_loss(torch.zeros(1, 4), _targets((0,), num_classes=3), ObjectiveConfig())

def test_negative_epsilon():
    with pytest.raises(ValidationError):
        ObjectiveConfig(-0.1)

def test_gradient_one_hot_is_p_minus_y():
    logits = torch.tensor([[1.0, -0.5, 2.0], [0.0, 0.3, 0.1]], dtype=torch.float64)
    y = torch.tensor([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], dtype=torch.float64)
    grad = grad_poly_loss(logits, y, ObjectiveConfig(0.0))
    torch.testing.assert_close(grad, (torch.softmax(logits, dim=1) - y) / 2)

def test_gradient_zero_at_stationary_point():
    # uniform logits are stationary for a uniform target
    logits = torch.zeros(1, 4, dtype=torch.float64)
    y = torch.full((1, 4), 0.25, dtype=torch.float64)
    grad = grad_poly_loss(logits, y, ObjectiveConfig(0.5))
    assert grad.abs().max().item() < 1e-6

def test_gradient_matches_autograd(rng):
    logits = torch.from_numpy(rng.standard_normal((3, 5))).requires_grad_(True)
    targets = _targets((0,), (1, 4), (0, 2, 3), num_classes=5)
    cfg = ObjectiveConfig(0.5)
    reference, = torch.autograd.grad(poly_loss_value(logits, targets, cfg), logits)
    analytic = grad_poly_loss(logits.detach(), targets, cfg)
    torch.testing.assert_close(analytic, reference, rtol=1e-9, atol=1e-12)

def test_gradient_ignores_constant_offset(rng):
    # d/dz of sum_t (1 - Y P) equals d/dz of -sum_t Y P
    logits = torch.from_numpy(rng.standard_normal((2, 6))).requires_grad_(True)
    y = torch.from_numpy(_targets((1, 2), (5,), num_classes=6).to_dense())
    reduced = soft_cross_entropy(logits, y) - 0.5 * (y * torch.softmax(logits, dim=1)).sum() / 2
    reference, = torch.autograd.grad(reduced, logits)
    torch.testing.assert_close(grad_poly_loss(logits.detach(), y, ObjectiveConfig(0.5)), reference)

def test_backward_uses_analytic_gradient(rng):
    logits = torch.from_numpy(rng.standard_normal((2, 4))).requires_grad_(True)
    y = torch.from_numpy(_targets((0, 3), (2,), num_classes=4).to_dense())
    PolyLoss(0.5)(logits, y).backward()
    torch.testing.assert_close(logits.grad, grad_poly_loss(logits.detach(), y, ObjectiveConfig(0.5)))

def test_shift_invariance(rng):
    logits = torch.from_numpy(rng.standard_normal((3, 5)))
    shifted = logits + torch.tensor([[3.0], [-10.0], [100.0]], dtype=torch.float64)
    targets = _targets((0,), (1, 4), (0, 2, 3), num_classes=5)
    cfg = ObjectiveConfig(0.5)
    torch.testing.assert_close(softmax(shifted), softmax(logits), atol=1e-6, rtol=0)
    assert poly_loss(shifted, targets, cfg).item() == pytest.approx(poly_loss(logits, targets, cfg).item(), abs=1e-6)
    torch.testing.assert_close(grad_poly_loss(shifted, targets, cfg), grad_poly_loss(logits, targets, cfg),
                               atol=1e-6, rtol=0)

def test_loss_check_passes():
    summary = loss_check(n_trials=100, seed=0, epsilon=0.5)
    assert summary['n_trials'] == 100
    assert summary['n_failed'] == 0
    assert summary['max_rel_error'] < 1e-4
