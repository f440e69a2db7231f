"""Siamese training loop, learning-rate schedule, checkpoints and inference."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from PIL import Image

from .batching import BatchingConfig, make_training_batch, pair_groups, resize_sample
from .checkpoint import Checkpoint, pack_state, read_checkpoint, unpack_optimizer, write_checkpoint
from .dataset import GroupedDataset, ImageGroup
from .losses import LossConfig, total_loss
from .model import HICOME, ModelConfig

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 120
    lr_initial: float = 3e-4
    lr_drop_factor: float = 10.0
    lr_drop_epoch: int = 100
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.0
    grad_clip: Optional[float] = 5.0
    seed: int = 0
    checkpoint_every: int = 10
    iaccl_enabled: bool = True

    def __post_init__(self):
        if self.lr_initial <= 0:
            raise TrainingError("lr_initial must be > 0")
        if self.epochs < 0 or self.lr_drop_epoch < 0:
            raise TrainingError("epochs and lr_drop_epoch must be >= 0")
        if self.epochs > 0 and self.lr_drop_epoch >= self.epochs:
            raise TrainingError(f"lr_drop_epoch {self.lr_drop_epoch} must be < epochs {self.epochs}")
        if self.lr_drop_factor <= 0:
            raise TrainingError("lr_drop_factor must be > 0")

    def to_dict(self):
        return asdict(self)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.lr_drop_epoch:
        return cfg.lr_initial
    return cfg.lr_initial / cfg.lr_drop_factor


@dataclass
class TrainState:
    model: HICOME
    optimizer: torch.optim.Optimizer
    epoch: int = 0
    step: int = 0
    history: list = field(default_factory=list)


def make_optimizer(model: HICOME, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr_initial, betas=(cfg.beta1, cfg.beta2),
                            weight_decay=cfg.weight_decay)


def init_state(model_cfg: ModelConfig, train_cfg: TrainConfig) -> TrainState:
    torch.manual_seed(train_cfg.seed)
    model = HICOME(model_cfg)
    return TrainState(model, make_optimizer(model, train_cfg))


def train_step(state: TrainState, batch_pair, train_cfg: TrainConfig, loss_cfg: LossConfig,
               lr: Optional[float] = None):
    """One optimizer update on a (batch_a, batch_b) pair. Returns ``(state, breakdown)``."""
    a, b = batch_pair
    model = state.model
    model.train()
    pred_a, pred_b, _ = model(a.images, b.images, mode="train",
                              negatives_a=a.negative_flags, negatives_b=b.negative_flags)
    emb = None
    if train_cfg.iaccl_enabled:
        emb = model.consensus_second_pass(a.images, pred_a.maps, b.images, pred_b.maps,
                                          a.negative_flags, b.negative_flags)
    total, breakdown = total_loss(pred_a.maps, a.gts, pred_b.maps, b.gts, emb, loss_cfg)
    if not math.isfinite(breakdown["total"]):
        raise TrainingError(f"non-finite loss at step {state.step}: {json.dumps(breakdown)}")
    if lr is not None:
        for group in state.optimizer.param_groups:
            group["lr"] = lr
    state.optimizer.zero_grad(set_to_none=False)
    total.backward()
    if train_cfg.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
    state.optimizer.step()
    state.step += 1
    return state, breakdown


def state_to_checkpoint(state: TrainState, config: dict, seed: int) -> Checkpoint:
    tensors, steps = pack_state(state.model, state.optimizer)
    meta = {"optimizer_steps": steps, "history": state.history}
    return Checkpoint(config, seed, state.epoch, state.step, tensors, meta)


def state_from_checkpoint(ckpt: Checkpoint, model_cfg: ModelConfig, train_cfg: TrainConfig) -> TrainState:
    model = HICOME(model_cfg)
    model.load_state_dict(ckpt.model_state())
    opt = make_optimizer(model, train_cfg)
    unpack_optimizer(ckpt, model, opt)
    return TrainState(model, opt, ckpt.epoch, ckpt.step, list(ckpt.meta.get("history", [])))


def train(ds: GroupedDataset, config, out_dir=None, resume=None,
          on_step: Optional[Callable[[dict], None]] = None):
    """Run (or resume) training; returns ``(checkpoint, log_records)``.

    ``config`` is a :class:`hicome.config.Config`. With ``out_dir`` the
    JSON-lines log and checkpoints (``epoch_XXXX.ckpt`` every
    ``checkpoint_every`` epochs plus ``final.ckpt``) are written there.
    """
    if len(ds.groups) < 2:
        raise TrainingError("training needs at least 2 groups")
    tc, bc, lc = config.train, config.batching, config.loss
    if bc.resolution != config.model.resolution:
        raise TrainingError("batching resolution differs from model resolution")
    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else read_checkpoint(resume)
        state = state_from_checkpoint(ckpt, config.model, tc)
    else:
        state = init_state(config.model, tc)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "a" if resume is not None else "w")
    records = []
    cfg_dict = config.to_dict()
    try:
        for epoch in range(state.epoch, tc.epochs):
            lr = lr_schedule(epoch, tc)
            for pi, pair in enumerate(pair_groups(ds, tc.seed, epoch)):
                batches = make_training_batch(pair, bc, ds.groups, seed=[bc.seed, epoch, pi])
                state, br = train_step(state, batches, tc, lc, lr=lr)
                rec = {"step": state.step, "epoch": epoch, "lr": lr, **br}
                records.append(rec)
                state.history.append(br["total"])
                if out is not None:
                    log_fh.write(json.dumps(rec) + "\n")
                    log_fh.flush()
                if on_step:
                    on_step(rec)
            state.epoch = epoch + 1
            log.info("epoch %d/%d loss %.4f", state.epoch, tc.epochs, state.history[-1])
            if out is not None and tc.checkpoint_every and state.epoch % tc.checkpoint_every == 0:
                write_checkpoint(out / f"epoch_{state.epoch:04d}.ckpt",
                                 state_to_checkpoint(state, cfg_dict, tc.seed))
    finally:
        if out is not None:
            log_fh.close()
    ckpt = state_to_checkpoint(state, cfg_dict, tc.seed)
    if out is not None:
        write_checkpoint(out / "final.ckpt", ckpt)
    return ckpt, records


# ---------------------------------------------------------------- inference

def load_model(checkpoint) -> HICOME:
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else read_checkpoint(checkpoint)
    model = HICOME(ModelConfig.from_dict(ckpt.config["model"]))
    model.load_state_dict(ckpt.model_state())
    return model.eval()


@torch.no_grad()
def infer(checkpoint, group: ImageGroup) -> list[np.ndarray]:
    """Saliency maps for one whole group, at each image's native size.

    ``checkpoint`` may be a path, a :class:`Checkpoint` or a loaded model.
    """
    if group is None or len(group.samples) == 0:
        raise TrainingError("cannot infer on an empty group")
    model = checkpoint if isinstance(checkpoint, HICOME) else load_model(checkpoint)
    model.eval()
    s = model.cfg.resolution
    x = torch.from_numpy(np.stack([resize_sample(smp, s)[0] for smp in group.samples]))
    x = x.permute(0, 3, 1, 2).contiguous().float()
    with warnings.catch_warnings():
        if len(group.samples) == 1:
            warnings.simplefilter("ignore")
        pred, _, _ = model(x, mode="infer")
    maps = pred.maps[:, 0].numpy().astype(np.float32)
    out = []
    for m, smp in zip(maps, group.samples):
        if m.shape != smp.mask.shape:
            im = Image.fromarray(m, mode="F").resize((smp.width, smp.height), Image.BILINEAR)
            m = np.clip(np.asarray(im, dtype=np.float32), 0.0, 1.0)
        out.append(m)
    return out


def infer_dataset(checkpoint, ds: GroupedDataset) -> dict:
    model = checkpoint if isinstance(checkpoint, HICOME) else load_model(checkpoint)
    preds = {}
    for g in ds.groups:
        for smp, m in zip(g.samples, infer(model, g)):
            preds[(g.name, smp.name)] = m
    return preds
