import numpy as np
import pytest

from latentprune import (
    KeepMaskSequence,
    LatentGrid,
    PatchDims,
    ValidationError,
    extract_kept,
    patchify,
    restore,
    unpatchify,
)
from latentprune.restoration import PrunedPatchSet


def random_patches(seed, tp=6, hw=8, c=2):
    g = LatentGrid(data=np.random.default_rng(seed).standard_normal((tp, hw, hw, c)).astype(np.float32))
    return patchify(g, PatchDims(1, 2, 2))


def random_mask(seed, dims):
    m = np.random.default_rng(seed).random(dims) < 0.5
    m[0] = True
    return KeepMaskSequence(data=m)


def test_all_true_mask_keeps_everything_in_order():
    p = random_patches(0)
    mask = KeepMaskSequence(data=np.ones(p.grid_dims, dtype=bool))
    kept = extract_kept(p, mask)
    np.testing.assert_array_equal(kept.kept_patches, p.data.reshape(-1, p.patch_len))


def test_frame0_only_mask_keeps_frame0():
    p = random_patches(1)
    m = np.zeros(p.grid_dims, dtype=bool)
    m[0] = True
    kept = extract_kept(p, KeepMaskSequence(data=m))
    np.testing.assert_array_equal(kept.kept_patches, p.data[0].reshape(-1, p.patch_len))


def test_dim_mismatch():
    p = random_patches(2)
    mask = KeepMaskSequence(data=np.ones((3, 2, 2), dtype=bool))
    with pytest.raises(ValidationError):
        extract_kept(p, mask)


def test_restore_identity_with_all_true():
    p = random_patches(3)
    mask = KeepMaskSequence(data=np.ones(p.grid_dims, dtype=bool))
    out = restore(extract_kept(p, mask))
    np.testing.assert_array_equal(out.data, p.data)


def test_restore_bit_exact_on_exactly_redundant_grid():
    # build a grid whose pruned positions exactly equal their predecessors
    rng = np.random.default_rng(4)
    p = random_patches(4)
    mask = random_mask(5, p.grid_dims)
    data = np.array(p.data)
    tp = data.shape[0]
    for t in range(1, tp):
        miss = ~mask.data[t]
        data[t][miss] = data[t - 1][miss]
    from latentprune.grids import PatchGrid

    redundant = PatchGrid(patch_dims=p.patch_dims, channels=p.channels, data=data)
    out = restore(extract_kept(redundant, mask))
    np.testing.assert_array_equal(out.data, redundant.data)


def test_forward_fill_chain():
    p = random_patches(6)
    m = np.ones(p.grid_dims, dtype=bool)
    m[1:5, 2, 3] = False
    out = restore(extract_kept(p, KeepMaskSequence(data=m)))
    for t in range(1, 5):
        np.testing.assert_array_equal(out.data[t, 2, 3], p.data[0, 2, 3])


def test_forward_fill_matches_scan_back_oracle_on_random_masks():
    for seed in range(100):
        p = random_patches(100 + seed, tp=5, hw=4, c=1)
        mask = random_mask(200 + seed, p.grid_dims)
        out = restore(extract_kept(p, mask))
        tp, hp, wp = p.grid_dims
        for t in range(tp):
            for y in range(hp):
                for x in range(wp):
                    src = t
                    while not mask.data[src, y, x]:
                        src -= 1
                    np.testing.assert_array_equal(out.data[t, y, x], p.data[src, y, x])


def test_restored_grid_has_no_gaps_and_unpatchifies():
    p = random_patches(7)
    mask = random_mask(8, p.grid_dims)
    out = restore(extract_kept(p, mask))
    assert np.all(np.isfinite(out.data))
    grid = unpatchify(out)
    assert grid.dims == (6, 8, 8, 2)


def test_kept_patch_count_validation():
    p = random_patches(9)
    mask = random_mask(10, p.grid_dims)
    with pytest.raises(ValidationError):
        PrunedPatchSet(
            mask=mask,
            kept_patches=np.zeros((3, p.patch_len), dtype=np.float32),
            patch_dims=p.patch_dims,
            channels=p.channels,
        )
