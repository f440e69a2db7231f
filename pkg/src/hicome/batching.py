"""Siamese group pairing, batch padding, negative injection and augmentation.

Every function is a pure function of its inputs and seed, so an epoch can
be replayed exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

from .dataset import GroupedDataset, ImageGroup, Sample

AUGMENTATIONS = ("hflip", "color", "rotate")
PADDING_MODES = ("fixed", "adaptive", "none")
ROTATE_RANGE = 15.0
COLOR_RANGE = (0.75, 1.25)


class BatchingError(ValueError):
    pass


@dataclass
class BatchingConfig:
    batch_size: int = 32
    padding_mode: str = "fixed"
    n_negatives: int = 2
    augmentations: tuple = AUGMENTATIONS
    augment_base: bool = True
    resolution: int = 64
    seed: int = 0

    def __post_init__(self):
        self.augmentations = tuple(self.augmentations)
        if self.padding_mode not in PADDING_MODES:
            raise BatchingError(f"padding_mode must be one of {PADDING_MODES}")
        if self.batch_size < 2 or self.batch_size % 2:
            raise BatchingError("batch_size must be even and >= 2")
        if self.n_negatives < 0:
            raise BatchingError("n_negatives must be >= 0")
        unknown = set(self.augmentations) - set(AUGMENTATIONS)
        if unknown:
            raise BatchingError(f"unknown augmentations {sorted(unknown)}")

    def to_dict(self):
        d = asdict(self)
        d["augmentations"] = list(self.augmentations)
        return d


@dataclass
class Batch:
    images: torch.Tensor          # N x 3 x S x S
    gts: torch.Tensor             # N x 1 x S x S, {0, 1}
    negative_flags: torch.Tensor  # N, bool
    names: list
    group: str

    def __len__(self):
        return self.images.shape[0]


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


# ------------------------------------------------------------ augmentation

def augment(image: np.ndarray, mask: np.ndarray, ops: Sequence[str], seed,
            rotate_range: float = ROTATE_RANGE):
    """Apply every op in ``ops`` (order: hflip, color, rotate)."""
    unknown = set(ops) - set(AUGMENTATIONS)
    if unknown:
        raise BatchingError(f"unknown augmentations {sorted(unknown)}")
    rng = _rng(seed)
    image = np.asarray(image, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.uint8)
    if "hflip" in ops:
        image = image[:, ::-1].copy()
        mask = mask[:, ::-1].copy()
    if "color" in ops:
        b, c, s = rng.uniform(*COLOR_RANGE, size=3)
        image = image * b
        gray = image @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
        image = (image - gray.mean()) * c + gray.mean()
        gray = image @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
        image = gray[..., None] + (image - gray[..., None]) * s
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
    if "rotate" in ops:
        angle = rng.uniform(-rotate_range, rotate_range) if rotate_range > 0 else 0.0
        if angle != 0.0:
            rot_mask = ndimage.rotate(mask, angle, reshape=False, order=0, mode="constant", cval=0)
            # keep the sample usable when the object would rotate out of frame
            if rot_mask.any() or not mask.any():
                mask = (rot_mask > 0).astype(np.uint8)
                image = np.clip(ndimage.rotate(image, angle, axes=(1, 0), reshape=False,
                                               order=1, mode="nearest"), 0.0, 1.0).astype(np.float32)
    return image, mask


def random_augment(sample: Sample, ops: Sequence[str], rng: np.random.Generator,
                   suffix: str = "") -> Sample:
    """Augment with each configured op switched on with probability 1/2."""
    chosen = [op for op in ops if rng.random() < 0.5]
    image, mask = augment(sample.image, sample.mask, chosen, rng.integers(2**32))
    return Sample(sample.name + suffix, image, mask)


# ----------------------------------------------------------------- pairing

def pair_groups(ds: GroupedDataset, seed, epoch: int = 0) -> list[tuple[ImageGroup, ImageGroup]]:
    """Disjoint consecutive pairs of a random group permutation; an odd
    leftover is paired with a random other group."""
    n = len(ds.groups)
    if n < 2:
        raise BatchingError("pairing needs at least 2 groups")
    rng = _rng([int(seed), int(epoch)])
    perm = rng.permutation(n)
    pairs = [(perm[i], perm[i + 1]) for i in range(0, n - 1, 2)]
    if n % 2:
        last = perm[-1]
        other = rng.choice([i for i in range(n) if i != last])
        pairs.append((last, other))
    return [(ds.groups[a], ds.groups[b]) for a, b in pairs]


# ----------------------------------------------------------------- padding

def _pad(samples: list[Sample], n: int, aug, rng) -> list[Sample]:
    out = list(samples)
    for i in range(n - len(samples)):
        src = samples[rng.integers(len(samples))]
        out.append(random_augment(src, aug, rng, suffix=f"~pad{i}"))
    return [out[i] for i in rng.permutation(len(out))]


def pad_group_fixed(group: ImageGroup, n: int, aug=AUGMENTATIONS, seed=0) -> list[Sample]:
    """Exactly ``n`` samples: a random subset if the group is large enough,
    otherwise all originals plus augmented copies, shuffled."""
    if n < 1:
        raise BatchingError("n must be >= 1")
    rng = _rng(seed)
    samples = list(group.samples)
    if len(samples) >= n:
        return [samples[i] for i in rng.choice(len(samples), size=n, replace=False)]
    return _pad(samples, n, aug, rng)


def pad_group_adaptive(pair: tuple[ImageGroup, ImageGroup], aug=AUGMENTATIONS, seed=0):
    """Pad the smaller group of the pair up to the larger one's size."""
    rng = _rng(seed)
    n = max(len(pair[0]), len(pair[1]))
    return tuple(_pad(list(g.samples), n, aug, rng) for g in pair)


def inject_negatives(samples: list[Sample], other_groups: Sequence[ImageGroup], k: int, seed=0):
    """Append ``k`` images from ``other_groups`` with all-zero masks, then
    shuffle. Returns ``(samples, negative_flags)``."""
    if k == 0:
        return list(samples), np.zeros(len(samples), dtype=bool)
    if not other_groups:
        raise BatchingError("negative sampling needs at least one other group")
    rng = _rng(seed)
    rows = [(s, False) for s in samples]
    for i in range(k):
        g = other_groups[rng.integers(len(other_groups))]
        src = g.samples[rng.integers(len(g.samples))]
        rows.append((Sample(f"{g.name}/{src.name}~neg{i}", src.image,
                            np.zeros_like(src.mask)), True))
    rows = [rows[i] for i in rng.permutation(len(rows))]
    return [r[0] for r in rows], np.array([r[1] for r in rows], dtype=bool)


# ----------------------------------------------------------------- tensors

def resize_sample(sample: Sample, size: int) -> tuple[np.ndarray, np.ndarray]:
    image, mask = sample.image, sample.mask
    if image.shape[:2] != (size, size):
        im = Image.fromarray(np.clip(np.rint(image * 255), 0, 255).astype(np.uint8), "RGB")
        image = np.asarray(im.resize((size, size), Image.BILINEAR), dtype=np.float32) / 255.0
    if mask.shape != (size, size):
        m = Image.fromarray(mask * np.uint8(255), "L").resize((size, size), Image.NEAREST)
        mask = (np.asarray(m) >= 128).astype(np.uint8)
    return image, mask


def to_batch(samples: list[Sample], flags, size: int, group: str) -> Batch:
    pairs = [resize_sample(s, size) for s in samples]
    images = torch.from_numpy(np.stack([p[0] for p in pairs])).permute(0, 3, 1, 2).contiguous()
    gts = torch.from_numpy(np.stack([p[1] for p in pairs]).astype(np.float32)).unsqueeze(1)
    return Batch(images.float(), gts, torch.as_tensor(np.asarray(flags, dtype=bool)),
                 [s.name for s in samples], group)


def make_training_batch(pair: tuple[ImageGroup, ImageGroup], cfg: BatchingConfig,
                        pool: Sequence[ImageGroup] = (), seed=None) -> tuple[Batch, Batch]:
    """Build the two group batches of one Siamese step.

    ``pool`` supplies negatives (each group draws from pool groups with a
    different name). ``seed`` defaults to ``cfg.seed``.
    """
    rng = _rng(cfg.seed if seed is None else seed)
    aug = cfg.augmentations
    if cfg.padding_mode == "fixed":
        padded = [pad_group_fixed(g, cfg.batch_size, aug, rng.integers(2**32)) for g in pair]
    elif cfg.padding_mode == "adaptive":
        padded = list(pad_group_adaptive(pair, aug, rng.integers(2**32)))
    else:
        padded = [list(g.samples) for g in pair]

    batches = []
    for g, samples in zip(pair, padded):
        if cfg.augment_base and aug:
            samples = [s if "~pad" in s.name else random_augment(s, aug, rng) for s in samples]
        others = [o for o in pool if o.name != g.name]
        samples, flags = inject_negatives(samples, others, cfg.n_negatives, rng.integers(2**32))
        batches.append(to_batch(samples, flags, cfg.resolution, g.name))
    return batches[0], batches[1]
