"""HICOME network: pyramid transformer encoder, hierarchical consensus fusion
and a spatial-increment-attention decoder with FPN-style laterals."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict
from typing import NamedTuple, Optional

import torch
import torch.nn.functional as F
from torch import nn

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ShapeError(ValueError):
    pass


@dataclass
class ModelConfig:
    resolution: int = 64
    stage_channels: tuple = (32, 64, 128, 256)
    patch_sizes: tuple = (4, 2, 2, 2)
    sr_ratios: tuple = (8, 4, 2, 1)
    n_heads: tuple = (1, 2, 4, 8)
    depths: tuple = (2, 2, 2, 2)
    consensus_dim: int = 128
    si_ratios: tuple = (2, 2, 2)
    decoder_channels: tuple = (128, 64, 32)
    decoder_heads: tuple = (4, 2, 1)
    decoder_depths: tuple = (1, 1, 1)
    mlp_ratio: int = 4
    affinity_scale: float = 10.0

    def __post_init__(self):
        for key in ("stage_channels", "patch_sizes", "sr_ratios", "n_heads", "depths",
                    "si_ratios", "decoder_channels", "decoder_heads", "decoder_depths"):
            value = tuple(int(v) for v in getattr(self, key))
            setattr(self, key, value)
            if any(v < 1 for v in value):
                raise ShapeError(f"{key} entries must be >= 1")
        for key in ("stage_channels", "patch_sizes", "sr_ratios", "n_heads", "depths"):
            if len(getattr(self, key)) != 4:
                raise ShapeError(f"{key} needs 4 entries")
        for key in ("si_ratios", "decoder_channels", "decoder_heads", "decoder_depths"):
            if len(getattr(self, key)) != 3:
                raise ShapeError(f"{key} needs 3 entries")
        if self.affinity_scale <= 0:
            raise ShapeError("affinity_scale must be > 0")
        if self.resolution % math.prod(self.patch_sizes):
            raise ShapeError(
                f"resolution {self.resolution} not divisible by {math.prod(self.patch_sizes)}")
        for g, r in zip(self.grids(), self.sr_ratios):
            if g % r:
                raise ShapeError(f"sr_ratio {r} does not divide stage grid {g}")
        for c, h in zip(self.stage_channels, self.n_heads):
            if c % h:
                raise ShapeError(f"{c} channels not divisible by {h} heads")
        for c, h in zip(self.decoder_channels, self.decoder_heads):
            if c % h:
                raise ShapeError(f"{c} decoder channels not divisible by {h} heads")

    def grids(self) -> list[int]:
        out, g = [], self.resolution
        for p in self.patch_sizes:
            g //= p
            out.append(g)
        return out

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


class FeaturePyramid(NamedTuple):
    f1: torch.Tensor
    f2: torch.Tensor
    f3: torch.Tensor
    f4: torch.Tensor


@dataclass
class ConsensusSet:
    fused_map: torch.Tensor
    group_slices: tuple
    embeddings: Optional[torch.Tensor] = None  # (n_groups, 2, consensus_dim)


@dataclass
class PredictionBatch:
    logits: torch.Tensor

    @property
    def maps(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)

    def __len__(self):
        return self.logits.shape[0]


# ------------------------------------------------------------- primitives

def patchify(x: torch.Tensor, p: int) -> torch.Tensor:
    """Split N x C x H x W into non-overlapping p x p patches.

    Returns N x (H/p * W/p) x (p*p*C) tokens in row-major grid order.
    """
    n, c, h, w = x.shape
    if h % p or w % p:
        raise ShapeError(f"spatial size {h}x{w} not divisible by patch size {p}")
    x = x.reshape(n, c, h // p, p, w // p, p)
    x = x.permute(0, 2, 4, 3, 5, 1)
    return x.reshape(n, (h // p) * (w // p), p * p * c)


def tokens_to_map(x: torch.Tensor, h: int, w: int) -> torch.Tensor:
    return x.transpose(1, 2).reshape(x.shape[0], x.shape[2], h, w)


def map_to_tokens(x: torch.Tensor) -> torch.Tensor:
    return x.flatten(2).transpose(1, 2)


def square_side(length: int) -> int:
    side = math.isqrt(length)
    if side * side != length:
        raise ShapeError(f"token count {length} is not a square grid")
    return side


class PatchEmbed(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, patch: int):
        super().__init__()
        self.patch = patch
        self.proj = nn.Linear(patch * patch * in_ch, out_ch)
        self.norm = nn.LayerNorm(out_ch)

    def forward(self, x):
        h, w = x.shape[2] // self.patch, x.shape[3] // self.patch
        return self.norm(self.proj(patchify(x, self.patch))), h, w


def _attend(q, k, v, n_heads):
    b, lq, c = q.shape
    dh = c // n_heads
    q = q.reshape(b, lq, n_heads, dh).transpose(1, 2)
    k = k.reshape(b, k.shape[1], n_heads, dh).transpose(1, 2)
    v = v.reshape(b, v.shape[1], n_heads, dh).transpose(1, 2)
    out = F.scaled_dot_product_attention(q, k, v)
    return out.transpose(1, 2).reshape(b, lq, c)


class SpatialReductionAttention(nn.Module):
    """Multi-head attention whose keys/values come from a strided
    (downsampled) copy of the token grid."""

    def __init__(self, dim, n_heads, sr_ratio):
        super().__init__()
        self.n_heads = n_heads
        self.sr_ratio = sr_ratio
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)
        if sr_ratio > 1:
            self.sr = nn.Conv2d(dim, dim, kernel_size=sr_ratio, stride=sr_ratio)
            self.norm = nn.LayerNorm(dim)

    def forward(self, x, h, w):
        src = x
        if self.sr_ratio > 1:
            src = self.norm(map_to_tokens(self.sr(tokens_to_map(x, h, w))))
        k, v = self.kv(src).chunk(2, dim=-1)
        return self.proj(_attend(self.q(x), k, v, self.n_heads))


class SpatialIncrementAttention(nn.Module):
    """Multi-head attention whose keys/values come from an upsampled copy
    of the token grid (learned transposed projection, factor ``si_ratio``).

    Queries stay at the input resolution, so the output length equals the
    input length. With ``si_ratio == 1`` this is plain multi-head attention.
    """

    def __init__(self, dim, n_heads, si_ratio):
        super().__init__()
        self.n_heads = n_heads
        self.si_ratio = si_ratio
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)
        if si_ratio > 1:
            self.si = nn.ConvTranspose2d(dim, dim, kernel_size=si_ratio, stride=si_ratio)
            self.norm = nn.LayerNorm(dim)

    def forward(self, x, h=None, w=None):
        if h is None:
            h = w = square_side(x.shape[1])
        elif h * w != x.shape[1]:
            raise ShapeError(f"grid {h}x{w} does not match {x.shape[1]} tokens")
        src = x
        if self.si_ratio > 1:
            src = self.norm(map_to_tokens(self.si(tokens_to_map(x, h, w))))
        k, v = self.kv(src).chunk(2, dim=-1)
        return self.proj(_attend(self.q(x), k, v, self.n_heads))


class MixFFN(nn.Module):
    def __init__(self, dim, ratio):
        super().__init__()
        hidden = dim * ratio
        self.fc1 = nn.Linear(dim, hidden)
        self.dw = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x, h, w):
        x = self.fc1(x)
        x = map_to_tokens(self.dw(tokens_to_map(x, h, w)))
        return self.fc2(F.gelu(x))


class TransformerBlock(nn.Module):
    """Pre-norm block: attention (reduction or increment) then Mix-FFN."""

    def __init__(self, dim, n_heads, ratio, mlp_ratio, increment=False):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        attn_cls = SpatialIncrementAttention if increment else SpatialReductionAttention
        self.attn = attn_cls(dim, n_heads, ratio)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = MixFFN(dim, mlp_ratio)

    def forward(self, x, h, w):
        x = x + self.attn(self.norm1(x), h, w)
        return x + self.ffn(self.norm2(x), h, w)


def group_affinity(feat: torch.Tensor, scale: torch.Tensor | float = 1.0):
    """Consensus attention for the images of ONE group.

    Every position is scored by its best cosine match inside each of the
    other images, averaged over those images (so content shared by more
    images scores higher). Scores are softmaxed over each image's grid and
    rescaled to mean 1. Returns ``(feat * att + feat, consensus)`` where
    ``consensus`` is the unit-norm attention-pooled feature.
    """
    n, c, h, w = feat.shape
    hw = h * w
    x = map_to_tokens(feat)  # n, hw, c
    flat = F.normalize(x, dim=-1).reshape(n * hw, c)
    best = (flat @ flat.t()).view(n, hw, n, hw).amax(dim=3)  # n, hw, n
    if n > 1:
        others = ~torch.eye(n, dtype=torch.bool, device=feat.device)
        score = (best * others.unsqueeze(1)).sum(2) / (n - 1)
    else:
        warnings.warn("group of one image: falling back to self-affinity", stacklevel=2)
        score = best[:, :, 0]
    att = torch.softmax(score * scale, dim=1)  # n, hw
    consensus = F.normalize((x * att.unsqueeze(-1)).sum(1).mean(0), dim=0)
    modulated = feat * (att * hw).view(n, 1, h, w) + feat
    return modulated, consensus


class GroupAffinity(nn.Module):
    """Group affinity with a learnable inverse temperature."""

    def __init__(self, scale: float = 1.0):
        super().__init__()
        self.log_scale = nn.Parameter(torch.tensor(math.log(scale)))

    def forward(self, feat):
        return group_affinity(feat, self.log_scale.exp())


# ------------------------------------------------------------------ network

class HICOME(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        chans = (3,) + cfg.stage_channels
        self.register_buffer("pix_mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("pix_std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1), persistent=False)

        self.embeds = nn.ModuleList(
            PatchEmbed(chans[i], chans[i + 1], cfg.patch_sizes[i]) for i in range(4))
        self.stages = nn.ModuleList(
            nn.ModuleList(TransformerBlock(chans[i + 1], cfg.n_heads[i], cfg.sr_ratios[i], cfg.mlp_ratio)
                          for _ in range(cfg.depths[i]))
            for i in range(4))
        self.stage_norms = nn.ModuleList(nn.LayerNorm(c) for c in cfg.stage_channels)

        self.affinity = nn.ModuleList(GroupAffinity(cfg.affinity_scale) for _ in range(3))
        self.fuse = nn.Conv2d(sum(cfg.stage_channels[1:]), cfg.consensus_dim, 1)

        dec_in = (cfg.consensus_dim,) + cfg.decoder_channels[:-1]
        self.dec_proj = nn.ModuleList(
            nn.Conv2d(dec_in[k], cfg.decoder_channels[k], 1) for k in range(3))
        # laterals from f3, f2, f1
        self.laterals = nn.ModuleList(
            nn.Conv2d(cfg.stage_channels[2 - k], cfg.decoder_channels[k], 1) for k in range(3))
        self.dec_stages = nn.ModuleList(
            nn.ModuleList(TransformerBlock(cfg.decoder_channels[k], cfg.decoder_heads[k],
                                           cfg.si_ratios[k], cfg.mlp_ratio, increment=True)
                          for _ in range(cfg.decoder_depths[k]))
            for k in range(3))
        self.head = nn.Conv2d(cfg.decoder_channels[-1], 1, 1)
        self.apply(_init_weights)

    # -- encoder
    def encode(self, images: torch.Tensor) -> FeaturePyramid:
        s = self.cfg.resolution
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (s, s):
            raise ShapeError(f"expected N x 3 x {s} x {s}, got {tuple(images.shape)}")
        x = (images - self.pix_mean) / self.pix_std
        feats = []
        for embed, blocks, norm in zip(self.embeds, self.stages, self.stage_norms):
            x, h, w = embed(x)
            for blk in blocks:
                x = blk(x, h, w)
            x = tokens_to_map(norm(x), h, w)
            feats.append(x)
        return FeaturePyramid(*feats)

    # -- consensus
    def hcf(self, pyr: FeaturePyramid, group_sizes, negative_flags=None,
            with_embeddings: bool = False) -> ConsensusSet:
        n = pyr.f2.shape[0]
        if sum(group_sizes) != n:
            raise ShapeError(f"group sizes {tuple(group_sizes)} do not cover batch of {n}")
        if negative_flags is None:
            negative_flags = torch.zeros(n, dtype=torch.bool)
        grid = pyr.f2.shape[2:]
        fused, embeddings, start = [], [], 0
        for size in group_sizes:
            if size == 0:
                continue
            sl = slice(start, start + size)
            start += size
            maps = []
            for module, f in zip(self.affinity, (pyr.f2, pyr.f3, pyr.f4)):
                mod, _ = module(f[sl])
                if mod.shape[2:] != grid:
                    mod = F.interpolate(mod, size=grid, mode="bilinear", align_corners=False)
                maps.append(mod)
            g = self.fuse(torch.cat(maps, dim=1))
            fused.append(g)
            if with_embeddings:
                embeddings.append(half_embeddings(g, negative_flags[sl]))
        return ConsensusSet(
            fused_map=torch.cat(fused, dim=0),
            group_slices=tuple(int(s) for s in group_sizes),
            embeddings=torch.stack(embeddings) if with_embeddings else None,
        )

    # -- decoder
    def decode(self, cons: ConsensusSet, pyr: FeaturePyramid) -> PredictionBatch:
        x = cons.fused_map
        if x.shape[0] != pyr.f1.shape[0] or x.shape[2:] != pyr.f2.shape[2:]:
            raise ShapeError("consensus map does not match the feature pyramid")
        for k, (proj, lateral, blocks) in enumerate(zip(self.dec_proj, self.laterals, self.dec_stages)):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = proj(x)
            skip = lateral(pyr[2 - k])
            x = x + F.interpolate(skip, size=x.shape[2:], mode="bilinear", align_corners=False)
            h, w = x.shape[2:]
            t = map_to_tokens(x)
            for blk in blocks:
                t = blk(t, h, w)
            x = tokens_to_map(t, h, w)
        logits = self.head(x)
        s = self.cfg.resolution
        if logits.shape[2:] != (s, s):
            logits = F.interpolate(logits, size=(s, s), mode="bilinear", align_corners=False)
        return PredictionBatch(logits)

    def forward(self, images_a, images_b=None, mode: str = "infer",
                negatives_a=None, negatives_b=None):
        """Siamese forward. Returns ``(pred_a, pred_b, consensus)``; in infer
        mode ``images_b`` may be omitted and ``consensus`` is None."""
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        if images_a is None or images_a.shape[0] == 0:
            raise ShapeError("empty batch")
        if images_b is None:
            if mode == "train":
                raise ShapeError("train mode needs two groups")
            images_b = images_a[:0]
        n_a, n_b = images_a.shape[0], images_b.shape[0]
        pyr = self.encode(torch.cat([images_a, images_b]))
        neg = None
        if mode == "train":
            neg = torch.cat([_flags(negatives_a, n_a), _flags(negatives_b, n_b)])
        cons = self.hcf(pyr, (n_a, n_b), neg, with_embeddings=(mode == "train"))
        pred = self.decode(cons, pyr)
        pred_a = PredictionBatch(pred.logits[:n_a])
        pred_b = PredictionBatch(pred.logits[n_a:])
        return pred_a, pred_b, (cons if mode == "train" else None)

    def consensus_second_pass(self, images_a, maps_a, images_b, maps_b,
                              negatives_a=None, negatives_b=None) -> torch.Tensor:
        """Embeddings (2 groups x 2 halves x D) of the prediction-masked images.

        Weights are shared with the first pass and gradients flow into the maps.
        """
        masked = torch.cat([images_a * maps_a, images_b * maps_b])
        n_a, n_b = images_a.shape[0], images_b.shape[0]
        neg = torch.cat([_flags(negatives_a, n_a), _flags(negatives_b, n_b)])
        cons = self.hcf(self.encode(masked), (n_a, n_b), neg, with_embeddings=True)
        return cons.embeddings


def _flags(flags, n):
    if flags is None:
        return torch.zeros(n, dtype=torch.bool)
    return torch.as_tensor(flags, dtype=torch.bool)


def half_embeddings(fused: torch.Tensor, negative_flags: torch.Tensor) -> torch.Tensor:
    """Unit-norm pooled embeddings of the two contiguous halves of the
    non-negative rows of one group's fused map."""
    rows = torch.nonzero(~negative_flags.to(torch.bool)).flatten()
    if rows.numel() < 2:
        raise ShapeError("need at least 2 non-negative images per group for embeddings")
    half = rows.numel() // 2
    out = []
    for part in (rows[:half], rows[half:]):
        out.append(F.normalize(fused[part].mean(dim=(0, 2, 3)), dim=0))
    return torch.stack(out)


def _init_weights(m):
    if isinstance(m, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.trunc_normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.LayerNorm):
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)


def count_inference_cost(model: "ModelConfig | HICOME", group_size: int = 1) -> tuple[int, int]:
    """(parameter count, multiply-accumulates) of an infer-mode forward on
    one group of ``group_size`` images. Accepts a config or a built model."""
    from torch.utils.flop_counter import FlopCounterMode

    if isinstance(model, ModelConfig):
        model = HICOME(model)
    cfg = model.cfg
    model.eval()
    params = sum(p.numel() for p in model.parameters())
    x = torch.zeros(group_size, 3, cfg.resolution, cfg.resolution)
    with torch.no_grad(), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        counter = FlopCounterMode(display=False)
        with counter:
            model(x, mode="infer")
    return params, counter.get_total_flops() // 2
