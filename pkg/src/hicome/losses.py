"""Saliency (BCE + IoU) and consensus-contrast (triplet / IACCL) objectives."""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import torch

EPS = 1e-7


@dataclass
class LossConfig:
    lambda_bce: float = 30.0
    lambda_iou: float = 0.5
    lambda_iaccl: float = 3.0
    triplet_margin: float = 0.3
    distance: str = "euclidean"

    def __post_init__(self):
        if min(self.lambda_bce, self.lambda_iou, self.lambda_iaccl) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.triplet_margin < 0:
            raise ValueError("triplet margin must be >= 0")
        if self.distance != "euclidean":
            raise ValueError(f"unsupported distance {self.distance!r}")

    def to_dict(self):
        return asdict(self)


def _check(pred, gt):
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")


def bce_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over all pixels; ``pred`` clamped to [eps, 1-eps]."""
    _check(pred, gt)
    gt = gt.to(pred.dtype)
    p = pred.clamp(EPS, 1 - EPS)
    return -(gt * torch.log(p) + (1 - gt) * torch.log(1 - p)).mean()


def iou_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """1 - mean soft IoU, one IoU per leading-dim item."""
    _check(pred, gt)
    gt = gt.to(pred.dtype)
    p = pred.flatten(1)
    g = gt.flatten(1)
    inter = (p * g).sum(1)
    union = (p + g - p * g).sum(1)
    return 1 - (inter / (union + EPS)).mean()


def triplet_loss(anchor, positive, negative, margin: float = 0.3) -> torch.Tensor:
    d_pos = torch.linalg.vector_norm(anchor - positive, dim=-1)
    d_neg = torch.linalg.vector_norm(anchor - negative, dim=-1)
    return torch.clamp(d_pos - d_neg + margin, min=0)


def iaccl_loss(f1_0, f1_1, f2_0, f2_1, margin: float = 0.3) -> torch.Tensor:
    """Cross-group consensus contrast over the four half-group embeddings.

    The first term pulls group 2's halves together (anchor f2_0) against
    group 1's second half; the second pulls group 1's halves together
    (anchor f1_0) against group 2's first half.
    """
    return (triplet_loss(f2_0, f2_1, f1_1, margin)
            + triplet_loss(f1_0, f1_1, f2_0, margin))


def weighted_total(bce, iou, iaccl, cfg: LossConfig):
    total = cfg.lambda_bce * bce + cfg.lambda_iou * iou
    if iaccl is not None:
        total = total + cfg.lambda_iaccl * iaccl
    return total


def total_loss(pred_a, gt_a, pred_b, gt_b, embeddings: Optional[torch.Tensor],
               cfg: LossConfig | None = None):
    """Weighted objective and its unweighted components.

    ``embeddings`` is (2 groups, 2 halves, D) or None, in which case the
    contrast term is dropped and reported as None.
    """
    cfg = cfg or LossConfig()
    bce = 0.5 * (bce_loss(pred_a, gt_a) + bce_loss(pred_b, gt_b))
    iou = 0.5 * (iou_loss(pred_a, gt_a) + iou_loss(pred_b, gt_b))
    iaccl = None
    if embeddings is not None:
        iaccl = iaccl_loss(embeddings[0, 0], embeddings[0, 1],
                           embeddings[1, 0], embeddings[1, 1], cfg.triplet_margin)
    total = weighted_total(bce, iou, iaccl, cfg)
    breakdown = {
        "bce": bce.item(),
        "iou": iou.item(),
        "iaccl": None if iaccl is None else iaccl.item(),
        "total": total.item(),
    }
    return total, breakdown
