"""Self-describing checkpoint container.

Layout: 8-byte magic ``HICOMEv1``, little-endian uint64 header length, UTF-8
JSON header, then the raw little-endian float32 payload. The header echoes
the configuration, seed, epoch and step and lists every tensor as
``{name, shape, offset, nbytes}`` relative to the start of the payload.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

MAGIC = b"HICOMEv1"
DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    seed: int
    epoch: int
    step: int
    tensors: dict  # name -> float32 ndarray
    meta: dict = field(default_factory=dict)

    def model_state(self) -> dict:
        return {k[len("model/"):]: torch.from_numpy(v.copy())
                for k, v in self.tensors.items() if k.startswith("model/")}


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    entries, blobs, offset = [], [], 0
    for name in sorted(ckpt.tensors):
        arr = np.array(ckpt.tensors[name], dtype=DTYPE, order="C")  # keeps 0-d shapes
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format": "hicome-checkpoint",
        "dtype": "float32-le",
        "config": ckpt.config,
        "seed": ckpt.seed,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "meta": ckpt.meta,
        "tensors": entries,
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hdr)))
        fh.write(hdr)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def read_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    base = 16 + hlen
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        raw = data[start:start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        tensors[e["name"]] = np.frombuffer(raw, dtype=DTYPE).reshape(e["shape"]).copy()
    return Checkpoint(header["config"], header["seed"], header["epoch"], header["step"],
                      tensors, header.get("meta", {}))


def pack_state(model: torch.nn.Module, optimizer: torch.optim.Optimizer | None = None):
    """Flatten model parameters and Adam moments into named float32 arrays.

    Returns ``(tensors, optimizer_steps)``.
    """
    tensors = {f"model/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    steps = {}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                n = names[id(p)]
                tensors[f"optim/{n}/exp_avg"] = state["exp_avg"].detach().cpu().numpy()
                tensors[f"optim/{n}/exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()
                steps[n] = float(state["step"])
    return tensors, steps


def unpack_optimizer(ckpt: Checkpoint, model: torch.nn.Module, optimizer) -> None:
    steps = ckpt.meta.get("optimizer_steps", {})
    for n, p in model.named_parameters():
        if n not in steps:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(steps[n]),
            "exp_avg": torch.from_numpy(ckpt.tensors[f"optim/{n}/exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(ckpt.tensors[f"optim/{n}/exp_avg_sq"].copy()),
        }
