"""Grouped image data: containers, disk I/O, validation, statistics and a
synthetic co-saliency generator.

On-disk layout::

    <root>/images/<group>/<stem>.png|jpg
    <root>/gt/<group>/<stem>.png        8-bit grayscale, foreground >= 128
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

MASK_THRESHOLD = 128
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

SHAPES = ("circle", "square", "triangle", "cross")
PALETTE = {
    "red": (220, 30, 30),
    "green": (30, 200, 40),
    "blue": (30, 60, 230),
    "yellow": (240, 220, 20),
    "magenta": (210, 40, 210),
    "cyan": (20, 210, 220),
}


class DatasetError(ValueError):
    pass


@dataclass
class Sample:
    """One (image, mask) pair. ``image`` is HxWx3 float32 in [0, 1];
    ``mask`` is HxW uint8 in {0, 1}."""

    name: str
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DatasetError(f"{self.name}: image must be HxWx3, got {self.image.shape}")
        if self.image.shape[0] < 1 or self.image.shape[1] < 1:
            raise DatasetError(f"{self.name}: empty image")
        if self.mask.ndim != 2:
            raise DatasetError(f"{self.name}: mask must be HxW, got {self.mask.shape}")
        if self.mask.dtype != np.uint8 or np.any(self.mask > 1):
            raise DatasetError(f"{self.name}: mask is not binary")

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass
class ImageGroup:
    name: str
    samples: list[Sample]

    def __post_init__(self):
        if not self.samples:
            raise DatasetError(f"group {self.name!r} is empty")

    def __len__(self):
        return len(self.samples)


@dataclass
class GroupedDataset:
    groups: list[ImageGroup]
    root: str = "synthetic"

    def __post_init__(self):
        if not self.groups:
            raise DatasetError("dataset has no groups")
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise DatasetError("group names must be unique")

    def __len__(self):
        return len(self.groups)

    @property
    def n_images(self) -> int:
        return sum(len(g) for g in self.groups)

    def group(self, name: str) -> ImageGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def subset(self, names: Sequence[str]) -> "GroupedDataset":
        return GroupedDataset([self.group(n) for n in names], root=self.root)


@dataclass
class Finding:
    kind: str  # empty-mask | full-mask | shape-mismatch | duplicate-stem
    group: str
    stem: str
    detail: str = ""


@dataclass
class DatasetStats:
    n_images: int
    n_groups: int
    group_size_mean: float
    group_size_std: float
    res_h_mean: float
    res_h_std: float
    res_w_mean: float
    res_w_std: float

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------- I/O

def read_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0


def read_mask(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read mask {path}: {exc}") from exc
    return (arr >= MASK_THRESHOLD).astype(np.uint8)


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def load_dataset(root, strict: bool = True) -> GroupedDataset:
    """Load ``root`` laid out as images/<group>/<stem>.* plus gt/<group>/<stem>.png.

    Groups and samples are sorted by name. A missing mask raises in strict
    mode and is skipped with a warning otherwise.
    """
    root = Path(root)
    img_root, gt_root = root / "images", root / "gt"
    if not img_root.is_dir():
        raise DatasetError(f"{img_root} is not a directory")
    groups = []
    for gdir in sorted(p for p in img_root.iterdir() if p.is_dir()):
        samples = []
        files = sorted(p for p in gdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        for img_path in files:
            mask_path = gt_root / gdir.name / f"{img_path.stem}.png"
            if not mask_path.is_file():
                msg = f"no mask for {gdir.name}/{img_path.name}"
                if strict:
                    raise DatasetError(msg)
                warnings.warn(msg + "; skipped", stacklevel=2)
                continue
            samples.append(Sample(img_path.stem, read_image(img_path), read_mask(mask_path)))
        if not samples:
            raise DatasetError(f"group {gdir.name!r} has no usable samples")
        groups.append(ImageGroup(gdir.name, samples))
    if not groups:
        raise DatasetError(f"no groups under {img_root}")
    return GroupedDataset(groups, root=str(root))


def save_dataset(ds: GroupedDataset, root) -> None:
    root = Path(root)
    for g in ds.groups:
        (root / "images" / g.name).mkdir(parents=True, exist_ok=True)
        (root / "gt" / g.name).mkdir(parents=True, exist_ok=True)
        for s in g.samples:
            Image.fromarray(to_uint8(s.image), "RGB").save(root / "images" / g.name / f"{s.name}.png")
            Image.fromarray(s.mask * np.uint8(255), "L").save(root / "gt" / g.name / f"{s.name}.png")


# -------------------------------------------------------------- validation

def validate_dataset(ds: GroupedDataset) -> list[Finding]:
    # Semantic (wrong-class) annotation errors are not detectable here.
    findings = []
    for g in ds.groups:
        seen = set()
        for s in g.samples:
            if s.name in seen:
                findings.append(Finding("duplicate-stem", g.name, s.name))
            seen.add(s.name)
            if s.mask.shape != s.image.shape[:2]:
                findings.append(Finding(
                    "shape-mismatch", g.name, s.name,
                    f"image {s.image.shape[:2]} vs mask {s.mask.shape}"))
            if not s.mask.any():
                findings.append(Finding("empty-mask", g.name, s.name))
            elif s.mask.all():
                findings.append(Finding("full-mask", g.name, s.name))
    return findings


# -------------------------------------------------------------- statistics

def stats_from_records(records: Iterable[tuple[str, int, int]]) -> DatasetStats:
    """Statistics from (group, height, width) records; population std."""
    records = list(records)
    if not records:
        raise DatasetError("no records")
    sizes: dict[str, int] = {}
    for group, _, _ in records:
        sizes[group] = sizes.get(group, 0) + 1
    gs = np.array(list(sizes.values()), dtype=np.float64)
    hs = np.array([r[1] for r in records], dtype=np.float64)
    ws = np.array([r[2] for r in records], dtype=np.float64)
    return DatasetStats(
        n_images=len(records),
        n_groups=len(sizes),
        group_size_mean=float(gs.mean()),
        group_size_std=float(gs.std()),
        res_h_mean=float(hs.mean()),
        res_h_std=float(hs.std()),
        res_w_mean=float(ws.mean()),
        res_w_std=float(ws.std()),
    )


def compute_stats(ds: GroupedDataset) -> DatasetStats:
    return stats_from_records((g.name, s.height, s.width) for g in ds.groups for s in g.samples)


def read_manifest(path) -> list[tuple[str, int, int]]:
    """Read a ``group,stem,height,width`` CSV (header optional)."""
    import csv

    out = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "group":
                continue
            out.append((row[0], int(row[2]), int(row[3])))
    return out


# --------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SyntheticSpec:
    n_groups: int = 4
    group_size: int = 8
    image_size: int = 64
    n_distractors: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_groups < 1 or self.group_size < 1:
            raise DatasetError("n_groups and group_size must be >= 1")
        if self.n_distractors < 0:
            raise DatasetError("n_distractors must be >= 0")
        if self.image_size < 32:
            raise DatasetError("image_size must be >= 32")


def target_classes() -> list[tuple[str, str]]:
    return list(itertools.product(SHAPES, PALETTE))


def rasterize(kind: str, cy: float, cx: float, r: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dy, dx = yy - cy, xx - cx
    if kind == "circle":
        m = dx * dx + dy * dy <= r * r
    elif kind == "square":
        h = 0.85 * r
        m = (np.abs(dx) <= h) & (np.abs(dy) <= h)
    elif kind == "triangle":
        # apex up; inside = below both slanted edges and above the base
        base, half = 0.8 * r, 0.95 * r
        t = (dy + r) / (base + r)
        m = (t >= 0) & (t <= 1) & (np.abs(dx) <= half * t)
    elif kind == "cross":
        arm = r / 3.0
        m = ((np.abs(dx) <= r) & (np.abs(dy) <= arm)) | ((np.abs(dy) <= r) & (np.abs(dx) <= arm))
    else:
        raise DatasetError(f"unknown shape {kind!r}")
    return m


def _place(rng, size, placed, tries=64):
    """Sample (cy, cx, r) avoiding overlap with already placed boxes."""
    for attempt in range(tries):
        r = rng.uniform(0.12, 0.22) * size
        cy = rng.uniform(r + 1, size - r - 1)
        cx = rng.uniform(r + 1, size - r - 1)
        if all(abs(cy - py) > r + pr + 1 or abs(cx - px) > r + pr + 1 for py, px, pr in placed):
            return cy, cx, r
    return cy, cx, r


def generate_synthetic(spec: SyntheticSpec) -> GroupedDataset:
    """Groups of images sharing one (shape, colour) target class.

    Each image holds one target instance plus ``n_distractors`` instances of
    other groups' classes; the mask covers only the target, which is drawn
    last so it is never occluded.
    """
    classes = target_classes()
    if spec.n_groups > len(classes):
        raise DatasetError(f"at most {len(classes)} distinct classes, asked for {spec.n_groups}")
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(classes))
    chosen = [classes[i] for i in order[: spec.n_groups]]
    spare = [classes[i] for i in order[spec.n_groups:]]
    size = spec.image_size

    groups = []
    for gi, (shape, color) in enumerate(chosen):
        others = [c for j, c in enumerate(chosen) if j != gi] or spare
        samples = []
        for k in range(spec.group_size):
            bg = rng.integers(70, 180)
            img = np.full((size, size, 3), bg, dtype=np.uint8)
            placed = []
            target = _place(rng, size, placed)
            placed.append(target)
            for _ in range(spec.n_distractors):
                dshape, dcolor = others[rng.integers(len(others))]
                cy, cx, r = _place(rng, size, placed)
                placed.append((cy, cx, r))
                img[rasterize(dshape, cy, cx, r, size)] = PALETTE[dcolor]
            m = rasterize(shape, *target, size)
            img[m] = PALETTE[color]
            samples.append(Sample(f"{k:04d}", img.astype(np.float32) / 255.0, m.astype(np.uint8)))
        groups.append(ImageGroup(f"{shape}_{color}", samples))
    # same order as load_dataset gives after a save
    groups.sort(key=lambda g: g.name)
    return GroupedDataset(groups, root="synthetic")
