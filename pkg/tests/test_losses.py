import numpy as np
import pytest
import torch
import torch.nn.functional as F

from hicome.losses import (LossConfig, bce_loss, iaccl_loss, iou_loss, total_loss, triplet_loss,
                           weighted_total)


def central_difference(fn, x, h=1e-4):
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        up = fn(x).item()
        flat[i] = orig - h
        down = fn(x).item()
        flat[i] = orig
        grad.view(-1)[i] = (up - down) / (2 * h)
    return grad


def relative_error(a, b):
    return (a - b).norm().item() / max(a.norm().item(), b.norm().item(), 1e-12)


@pytest.mark.parametrize("loss", [bce_loss, iou_loss])
def test_saliency_loss_gradients(loss):
    g = torch.Generator().manual_seed(0)
    pred = (0.05 + 0.9 * torch.rand(2, 1, 5, 5, generator=g, dtype=torch.float64)).requires_grad_()
    gt = (torch.rand(2, 1, 5, 5, generator=g) > 0.5).double()
    loss(pred, gt).backward()
    fd = central_difference(lambda x: loss(x, gt), pred.detach().clone())
    assert relative_error(pred.grad, fd) < 1e-3


def test_triplet_gradients():
    g = torch.Generator().manual_seed(1)
    a, p, n = (F.normalize(torch.randn(6, generator=g, dtype=torch.float64), dim=0) for _ in range(3))
    # keep away from the hinge kink
    x = torch.stack([a, p, n]).requires_grad_()
    fn = lambda t: triplet_loss(t[0], t[1], t[2], margin=2.5)
    fn(x).backward()
    assert relative_error(x.grad, central_difference(fn, x.detach().clone())) < 1e-3


def test_triplet_hinge():
    a = torch.tensor([1.0, 0.0])
    assert triplet_loss(a, a, -a, 0.3).item() == 0.0  # well separated
    assert triplet_loss(a, -a, a, 0.3).item() == pytest.approx(2.3)


def test_iaccl_term_order():
    f1_0, f1_1 = torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0])
    f2_0, f2_1 = torch.tensor([-1.0, 0.0]), torch.tensor([0.0, -1.0])
    expected = (triplet_loss(f2_0, f2_1, f1_1) + triplet_loss(f1_0, f1_1, f2_0)).item()
    assert iaccl_loss(f1_0, f1_1, f2_0, f2_1).item() == pytest.approx(expected)
    # collapsed groups: each term equals the margin
    same = torch.tensor([1.0, 0.0])
    assert iaccl_loss(same, same, same, same).item() == pytest.approx(0.6)


def test_unit_components_weighting():
    one = torch.tensor(1.0)
    assert weighted_total(one, one, one, LossConfig()).item() == 33.5
    assert weighted_total(one, one, None, LossConfig()).item() == 30.5


def test_total_loss_breakdown():
    pred = torch.full((2, 1, 4, 4), 0.5)
    gt = torch.ones(2, 1, 4, 4)
    emb = F.normalize(torch.randn(2, 2, 8), dim=-1)
    total, br = total_loss(pred, gt, pred, gt, emb)
    assert set(br) == {"bce", "iou", "iaccl", "total"}
    assert br["bce"] == pytest.approx(np.log(2), rel=1e-6)
    assert br["total"] == pytest.approx(30 * br["bce"] + 0.5 * br["iou"] + 3 * br["iaccl"], rel=1e-6)
    _, br = total_loss(pred, gt, pred, gt, None)
    assert br["iaccl"] is None


def test_bce_saturated_is_finite():
    pred = torch.tensor([0.0, 1.0])
    gt = torch.tensor([1.0, 0.0])
    assert torch.isfinite(bce_loss(pred, gt))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        bce_loss(torch.zeros(2, 3), torch.zeros(3, 2))


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(lambda_bce=-1)
    with pytest.raises(ValueError):
        LossConfig(distance="cosine")
