"""Dataset-level evaluation and report aggregation."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from PIL import Image

from ..dataset import GroupedDataset
from .measures import THRESHOLDS, e_measure, f_measure, mae, s_measure

METRIC_KEYS = ("Smeasure", "Emax", "Emean", "Fmax", "Fmean", "MAE")


class MissingPredictionError(KeyError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing predictions: " + ", ".join(self.missing))


@dataclass
class MetricReport:
    per_group: dict
    aggregate: dict
    n_images: int
    per_image: dict = field(default_factory=dict)
    empty_gt: list = field(default_factory=list)
    curves: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {
            "per_group": self.per_group,
            "aggregate": self.aggregate,
            "n_images": self.n_images,
            "empty_gt": self.empty_gt,
        }
        if self.curves is not None:
            out["curves"] = self.curves
        return out


def resize_map(pred: np.ndarray, shape) -> np.ndarray:
    """Bilinear resize of a float map to ``shape`` (H, W)."""
    pred = np.asarray(pred, dtype=np.float32)
    if pred.shape == tuple(shape):
        return pred.astype(np.float64)
    im = Image.fromarray(pred, mode="F").resize((shape[1], shape[0]), Image.BILINEAR)
    return np.clip(np.asarray(im, dtype=np.float64), 0.0, 1.0)


def score_image(pred, gt) -> dict:
    f = f_measure(pred, gt)
    e = e_measure(pred, gt)
    return {
        "Smeasure": s_measure(pred, gt),
        "Emax": e.e_max,
        "Emean": e.e_mean,
        "Fmax": f.f_max,
        "Fmean": f.f_mean,
        "MAE": mae(pred, gt),
        "_empty": f.gt_empty,
        "_curves": (f.precision, f.recall, f.curve, e.curve),
    }


def evaluate_dataset(preds: Mapping, ds: GroupedDataset, parallel: bool = False,
                     curves: bool = False, workers: int = 4) -> MetricReport:
    """Score ``preds[(group, stem)]`` against every sample of ``ds``.

    Predictions are resized to the mask resolution first. Group scores are
    means over their images; the aggregate is the mean over all images.
    """
    jobs = [(g.name, s) for g in ds.groups for s in g.samples]
    missing = [f"{g}/{s.name}" for g, s in jobs if (g, s.name) not in preds]
    if missing:
        raise MissingPredictionError(missing)

    def run(job):
        group, s = job
        return score_image(resize_map(preds[(group, s.name)], s.mask.shape), s.mask)

    if parallel:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(run, jobs))
    else:
        scores = [run(j) for j in jobs]

    per_image, per_group, empty = {}, {}, []
    for (group, s), sc in zip(jobs, scores):
        per_image[f"{group}/{s.name}"] = {k: sc[k] for k in METRIC_KEYS}
        if sc["_empty"]:
            empty.append(f"{group}/{s.name}")
    for g in ds.groups:
        rows = [per_image[f"{g.name}/{s.name}"] for s in g.samples]
        per_group[g.name] = {k: float(np.mean([r[k] for r in rows])) for k in METRIC_KEYS}
    aggregate = {k: float(np.mean([r[k] for r in per_image.values()])) for k in METRIC_KEYS}

    curve_data = None
    if curves:
        stacked = [np.mean([sc["_curves"][i] for sc in scores], axis=0) for i in range(4)]
        curve_data = {
            "thresholds": THRESHOLDS.tolist(),
            "precision": stacked[0].tolist(),
            "recall": stacked[1].tolist(),
            "fmeasure": stacked[2].tolist(),
            "emeasure": stacked[3].tolist(),
        }
    return MetricReport(per_group, aggregate, len(jobs), per_image, empty, curve_data)
