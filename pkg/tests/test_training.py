import json

import numpy as np
import pytest
import torch

from conftest import tiny_config
from hicome.checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from hicome.training import (TrainConfig, TrainingError, infer, infer_dataset, init_state,
                             load_model, lr_schedule, state_to_checkpoint, train)


def test_lr_schedule():
    cfg = TrainConfig(epochs=120, lr_initial=3e-4, lr_drop_epoch=100)
    assert lr_schedule(0, cfg) == 3e-4 and lr_schedule(99, cfg) == 3e-4
    assert lr_schedule(100, cfg) == pytest.approx(3e-5)
    with pytest.raises(ValueError):
        lr_schedule(120, cfg)


def test_train_config_validation():
    with pytest.raises(TrainingError):
        TrainConfig(epochs=10, lr_drop_epoch=10)
    with pytest.raises(TrainingError):
        TrainConfig(lr_initial=0)
    TrainConfig(epochs=0)


def test_checkpoint_roundtrip(tmp_path, tiny_cfg):
    state = init_state(tiny_cfg.model, tiny_cfg.train)
    ckpt = state_to_checkpoint(state, tiny_cfg.to_dict(), 0)
    write_checkpoint(tmp_path / "a.ckpt", ckpt)
    back = read_checkpoint(tmp_path / "a.ckpt")
    assert back.config == tiny_cfg.to_dict()
    model = load_model(back)
    for k, v in state.model.state_dict().items():
        assert torch.equal(v, model.state_dict()[k])
    (tmp_path / "bad.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "bad.ckpt")


def test_training_reduces_loss_and_logs(tmp_path, small_ds):
    cfg = tiny_config(epochs=4, lr_drop_epoch=3, lr_initial=3e-3)
    _, records = train(small_ds, cfg, out_dir=tmp_path)
    assert len(records) == 8
    assert records[-1]["total"] < records[0]["total"]
    assert all(r["iaccl"] is not None for r in records)
    lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
    assert [json.loads(l)["step"] for l in lines] == list(range(1, 9))
    assert (tmp_path / "final.ckpt").is_file() and (tmp_path / "epoch_0002.ckpt").is_file()


def test_training_is_deterministic(small_ds):
    cfg = tiny_config()
    a, ra = train(small_ds, cfg)
    b, rb = train(small_ds, cfg)
    assert ra == rb
    assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)


def test_resume_is_bit_exact(tmp_path, small_ds):
    cfg = tiny_config()
    full, records = train(small_ds, cfg, out_dir=tmp_path / "full")
    resumed, rest = train(small_ds, cfg, out_dir=tmp_path / "part",
                          resume=tmp_path / "full" / "epoch_0001.ckpt")
    assert [r["total"] for r in rest] == [r["total"] for r in records[len(records) - len(rest):]]
    assert all(np.array_equal(full.tensors[k], resumed.tensors[k]) for k in full.tensors)


def test_train_needs_two_groups(small_ds):
    with pytest.raises(TrainingError):
        train(small_ds.subset([small_ds.groups[0].name]), tiny_config())


def test_infer_native_size(small_ds, tiny_cfg):
    state = init_state(tiny_cfg.model, tiny_cfg.train)
    group = small_ds.groups[0]
    maps = infer(state.model, group)
    assert len(maps) == len(group.samples)
    assert all(m.shape == s.mask.shape and m.dtype == np.float32 for m, s in zip(maps, group.samples))
    preds = infer_dataset(state.model, small_ds)
    assert len(preds) == small_ds.n_images
    with pytest.raises(TrainingError):
        infer(state.model, None)
