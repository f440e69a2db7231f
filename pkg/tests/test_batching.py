import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hicome.batching import (BatchingConfig, BatchingError, augment, inject_negatives,
                             make_training_batch, pad_group_adaptive, pad_group_fixed, pair_groups)
from hicome.dataset import GroupedDataset, ImageGroup, Sample


def _group(name, n, size=16, seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for k in range(n):
        mask = np.zeros((size, size), np.uint8)
        mask[4:10, 5:11] = 1
        samples.append(Sample(f"{k:03d}", rng.random((size, size, 3)).astype(np.float32), mask))
    return ImageGroup(name, samples)


def _ds(n_groups, n=3):
    return GroupedDataset([_group(f"g{i}", n, seed=i) for i in range(n_groups)])


def _names(samples):
    return [s.name for s in samples]


def test_pairing_even_and_odd():
    pairs = pair_groups(_ds(4), seed=0)
    assert len(pairs) == 2
    assert sorted(g.name for p in pairs for g in p) == ["g0", "g1", "g2", "g3"]
    pairs = pair_groups(_ds(3), seed=0)
    used = [g.name for p in pairs for g in p]
    assert len(pairs) == 2 and len(set(used)) == 3 and all(a.name != b.name for a, b in pairs)
    with pytest.raises(BatchingError):
        pair_groups(_ds(1), seed=0)


def test_pairing_deterministic_per_epoch():
    ds = _ds(6)
    a = [(x.name, y.name) for x, y in pair_groups(ds, 3, epoch=2)]
    assert a == [(x.name, y.name) for x, y in pair_groups(ds, 3, epoch=2)]
    others = {tuple((x.name, y.name) for x, y in pair_groups(ds, 3, epoch=e)) for e in range(6)}
    assert len(others) > 1


@pytest.mark.parametrize("size", [1, 4, 8, 16, 20])
def test_fixed_padding_length(size):
    out = pad_group_fixed(_group("g", size), 8, seed=1)
    assert len(out) == 8
    originals = [s for s in out if "~pad" not in s.name]
    if size >= 8:
        assert len(originals) == 8 and len(set(_names(originals))) == 8
    else:
        assert sorted(_names(originals)) == [f"{k:03d}" for k in range(size)]


def test_fixed_padding_equal_size_is_permutation():
    g = _group("g", 8)
    out = pad_group_fixed(g, 8, seed=4)
    assert sorted(_names(out)) == _names(g.samples)


def test_adaptive_padding():
    a, b = pad_group_adaptive((_group("a", 5), _group("b", 9)), seed=0)
    assert len(a) == len(b) == 9
    assert sum("~pad" in s.name for s in a) == 4
    a, b = pad_group_adaptive((_group("a", 1), _group("b", 4)), seed=0)
    assert len(a) == 4 and sum("~pad" not in s.name for s in a) == 1


def test_negatives_have_zero_gt():
    samples = list(_group("cat", 16).samples)
    out, flags = inject_negatives(samples, [_group("dog", 3, seed=9)], 4, seed=0)
    assert len(out) == 20 and flags.sum() == 4
    for s, f in zip(out, flags):
        assert (s.mask.sum() == 0) == bool(f)
    same, flags = inject_negatives(samples, [], 0)
    assert _names(same) == _names(samples) and not flags.any()
    with pytest.raises(BatchingError):
        inject_negatives(samples, [], 1)


def test_augment_contracts():
    g = _group("g", 1).samples[0]
    img, m = augment(*augment(g.image, g.mask, ["hflip"], 0), ["hflip"], 0)
    assert np.array_equal(img, g.image) and np.array_equal(m, g.mask)
    img, m = augment(g.image, g.mask, ["color"], 5)
    assert np.array_equal(m, g.mask) and not np.array_equal(img, g.image)
    img, m = augment(g.image, g.mask, ["rotate"], 5, rotate_range=0.0)
    assert np.array_equal(m, g.mask) and np.allclose(img, g.image)
    with pytest.raises(BatchingError):
        augment(g.image, g.mask, ["shear"], 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.sampled_from(["hflip", "color", "rotate"]), unique=True))
def test_augment_keeps_ranges(seed, ops):
    g = _group("g", 1, seed=seed % 7).samples[0]
    img, m = augment(g.image, g.mask, ops, seed)
    assert img.shape == g.image.shape and img.dtype == np.float32
    assert img.min() >= 0.0 and img.max() <= 1.0
    assert set(np.unique(m)) <= {0, 1} and m.any()


def test_make_training_batch_fixed():
    ds = _ds(3, n=5)
    cfg = BatchingConfig(batch_size=8, n_negatives=2, resolution=16)
    a, b = make_training_batch((ds.groups[0], ds.groups[1]), cfg, ds.groups, seed=0)
    for batch in (a, b):
        assert batch.images.shape == (10, 3, 16, 16) and batch.gts.shape == (10, 1, 16, 16)
        assert int(batch.negative_flags.sum()) == 2
        per_row = batch.gts.flatten(1).sum(1)
        assert bool(((per_row == 0) == batch.negative_flags).all())


def test_make_training_batch_none_mode_and_replay():
    ds = _ds(2, n=3)
    cfg = BatchingConfig(batch_size=8, padding_mode="none", n_negatives=0, resolution=16)
    a, _ = make_training_batch((ds.groups[0], ds.groups[1]), cfg, ds.groups, seed=0)
    assert len(a) == 3
    cfg = BatchingConfig(batch_size=4, n_negatives=1, resolution=16)
    x = make_training_batch((ds.groups[0], ds.groups[1]), cfg, ds.groups, seed=[1, 2, 3])
    y = make_training_batch((ds.groups[0], ds.groups[1]), cfg, ds.groups, seed=[1, 2, 3])
    for p, q in zip(x, y):
        assert p.names == q.names
        assert np.array_equal(p.images.numpy(), q.images.numpy())


def test_config_validation():
    with pytest.raises(BatchingError):
        BatchingConfig(batch_size=3)
    with pytest.raises(BatchingError):
        BatchingConfig(padding_mode="stable")
    with pytest.raises(BatchingError):
        BatchingConfig(augmentations=["blur"])
