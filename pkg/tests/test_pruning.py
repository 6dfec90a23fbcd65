"""Mask pipeline tests, including a fully independent nested-loop reference.

The reference implementation below (``reference_lif_prune``) follows the
documented stage semantics with explicit Python loops and direct 3D
convolution; it shares no code with the production path and is the golden
oracle for the moving-square fixture.
"""

import math

import numpy as np
import pytest

from latentprune import (
    KeepMaskSequence,
    LatentGrid,
    PruneConfig,
    ValidationError,
    diff_mask,
    lif_prune,
    long_term_offset,
    patchify,
    prune_rate,
)
from latentprune.fixtures import FixtureSpec, moving_square_position, synth_fixture
from latentprune.pruning import per_frame_prune_rate


# ---------------------------------------------------------------------------
# Independent reference implementation (loops only)
# ---------------------------------------------------------------------------

def ref_kernel(extent, sigma):
    r = extent // 2
    w = [math.exp(-((i - r) ** 2) / (2 * sigma * sigma)) for i in range(extent)]
    s = sum(w)
    return [v / s for v in w]


def ref_l1_field(a, b):
    n, hp, wp, length = a.shape
    out = np.zeros((n, hp, wp))
    for t in range(n):
        for y in range(hp):
            for x in range(wp):
                acc = 0.0
                for e in range(length):
                    acc += abs(float(a[t, y, x, e]) - float(b[t, y, x, e]))
                out[t, y, x] = acc
    return out


def ref_smooth3d(field, extent, sigma):
    k = ref_kernel(extent, sigma)
    r = extent // 2
    n, hp, wp = field.shape
    out = np.zeros_like(field)
    for t in range(n):
        for y in range(hp):
            for x in range(wp):
                acc = 0.0
                for dt in range(-r, r + 1):
                    for dy in range(-r, r + 1):
                        for dx in range(-r, r + 1):
                            tt, yy, xx = t + dt, y + dy, x + dx
                            if 0 <= tt < n and 0 <= yy < hp and 0 <= xx < wp:
                                acc += k[dt + r] * k[dy + r] * k[dx + r] * field[tt, yy, xx]
                out[t, y, x] = acc
    return out


def clamp(v, lo, hi):
    return max(lo, min(hi, v))


def ref_median3d(mask, extent):
    r = extent // 2
    n, hp, wp = mask.shape
    out = np.zeros_like(mask)
    need = (extent ** 3) // 2 + 1
    for t in range(n):
        for y in range(hp):
            for x in range(wp):
                votes = 0
                for dt in range(-r, r + 1):
                    for dy in range(-r, r + 1):
                        for dx in range(-r, r + 1):
                            tt = clamp(t + dt, 0, n - 1)
                            yy = clamp(y + dy, 0, hp - 1)
                            xx = clamp(x + dx, 0, wp - 1)
                            votes += bool(mask[tt, yy, xx])
                out[t, y, x] = votes >= need
    return out


def ref_close2d(mask, extent):
    r = extent // 2
    n, hp, wp = mask.shape
    out = np.zeros_like(mask)
    for t in range(n):
        dil = np.zeros((hp, wp), dtype=bool)
        for y in range(hp):
            for x in range(wp):
                hit = False
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        if mask[t, clamp(y + dy, 0, hp - 1), clamp(x + dx, 0, wp - 1)]:
                            hit = True
                dil[y, x] = hit
        for y in range(hp):
            for x in range(wp):
                keep = True
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        if not dil[clamp(y + dy, 0, hp - 1), clamp(x + dx, 0, wp - 1)]:
                            keep = False
                out[t, y, x] = keep
    return out


def ref_dilate3d(mask, extent, iterations):
    r = extent // 2
    n, hp, wp = mask.shape
    cur = mask.copy()
    for _ in range(iterations):
        nxt = np.zeros_like(cur)
        for t in range(n):
            for y in range(hp):
                for x in range(wp):
                    hit = False
                    for dt in range(-r, r + 1):
                        for dy in range(-r, r + 1):
                            for dx in range(-r, r + 1):
                                tt = clamp(t + dt, 0, n - 1)
                                yy = clamp(y + dy, 0, hp - 1)
                                xx = clamp(x + dx, 0, wp - 1)
                                if cur[tt, yy, xx]:
                                    hit = True
                    nxt[t, y, x] = hit
        cur = nxt
    return cur


def ref_offset(t, s):
    return 1 if t % s == 0 else t % s


def reference_lif_prune(patches, cfg):
    data = patches.data
    tp, hp, wp = patches.grid_dims
    m_short = np.ones((tp, hp, wp), dtype=bool)
    if tp > 1:
        d = ref_l1_field(data[1:], data[:-1])
        s = ref_smooth3d(d, cfg.gaussian_extent, cfg.gaussian_sigma)
        m_short[1:] = s > cfg.tau1
    m_long = np.ones((tp, hp, wp), dtype=bool)
    long_ts = [t for t in range(tp) if t > ref_offset(t, cfg.block_size)]
    if long_ts:
        cur = np.stack([data[t] for t in long_ts])
        ref = np.stack([data[t - ref_offset(t, cfg.block_size)] for t in long_ts])
        d = ref_l1_field(cur, ref)
        s = ref_smooth3d(d, cfg.gaussian_extent, cfg.gaussian_sigma)
        for i, t in enumerate(long_ts):
            m_long[t] = s[i] > cfg.tau2
    mask = m_short | m_long
    mask = ref_median3d(mask, cfg.median_extent)
    mask = ref_close2d(mask, cfg.morph_extent)
    mask = ref_dilate3d(mask, cfg.dilation_extent, cfg.dilation_iterations)
    mask[0] = True
    return mask


# ---------------------------------------------------------------------------
# diff_mask
# ---------------------------------------------------------------------------

CFG = PruneConfig()


def test_diff_mask_equal_inputs_all_false():
    a = np.random.default_rng(0).standard_normal((4, 5, 5, 3)).astype(np.float32)
    out = diff_mask(a, a, 0.0, CFG)
    assert not out.any()


def test_diff_mask_tau_inf_all_false():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((3, 4, 4, 2)).astype(np.float32)
    b = rng.standard_normal((3, 4, 4, 2)).astype(np.float32)
    assert not diff_mask(a, b, math.inf, CFG).any()


def test_diff_mask_isolated_spike_spreads_per_convolution_oracle():
    a = np.zeros((3, 7, 7, 2), dtype=np.float32)
    b = a.copy()
    b[1, 3, 3, :] = 50.0
    d = ref_l1_field(a, b)
    s = ref_smooth3d(d, CFG.gaussian_extent, CFG.gaussian_sigma)
    for tau in (0.5, 5.0, 7.0):
        np.testing.assert_array_equal(diff_mask(a, b, tau, CFG), s > tau)
    # the smoothed spike peaks at 100 * w0^3 ~ 9.2; a threshold above every
    # neighbour's smoothed value keeps only the spike cell itself
    high = diff_mask(a, b, 7.0, CFG)
    assert high.sum() == 1 and high[1, 3, 3]


def test_diff_mask_dim_mismatch():
    a = np.zeros((2, 4, 4, 1), dtype=np.float32)
    with pytest.raises(ValidationError):
        diff_mask(a, a[:, :2], 0.1, CFG)


def test_diff_mask_commutes_with_spatial_transpose():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((3, 5, 5, 2)).astype(np.float32)
    b = rng.standard_normal((3, 5, 5, 2)).astype(np.float32)
    base = diff_mask(a, b, 0.4, CFG)
    swapped = diff_mask(a.transpose(0, 2, 1, 3), b.transpose(0, 2, 1, 3), 0.4, CFG)
    np.testing.assert_array_equal(base.transpose(0, 2, 1), swapped)


# ---------------------------------------------------------------------------
# long_term_offset: the dual-threshold reference-frame rule
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("t,s,expected", [(6, 3, 1), (7, 3, 1), (8, 3, 2)])
def test_long_term_offset_golden_table(t, s, expected):
    assert long_term_offset(t, s) == expected


def test_long_term_offset_matches_formula():
    for s in (1, 2, 3, 5):
        for t in range(20):
            expected = 1 if t % s == 0 else t - s * (t // s)
            assert long_term_offset(t, s) == expected


# ---------------------------------------------------------------------------
# lif_prune end to end
# ---------------------------------------------------------------------------

def moving_square_patches(seed=0, frames=8, size=16, value=4.0):
    spec = FixtureSpec(kind="moving-square", frames=frames, height=size, width=size,
                       channels=2, value=value, square_size=2, seed=seed)
    grid = synth_fixture(spec)
    return patchify(grid, spec.patch_dims), spec


def test_moving_square_matches_reference_bit_exactly():
    patches, _ = moving_square_patches()
    cfg = PruneConfig(tau1=0.15, tau2=0.3, block_size=3)
    mask = lif_prune(patches, cfg)
    expected = reference_lif_prune(patches, cfg)
    np.testing.assert_array_equal(mask.data, expected)


def test_moving_square_reference_with_other_kernels():
    patches, _ = moving_square_patches(seed=3, frames=6, size=12)
    cfg = PruneConfig(tau1=0.1, tau2=0.2, block_size=2, gaussian_extent=5,
                      gaussian_sigma=1.5, median_extent=3, morph_extent=3,
                      dilation_extent=3, dilation_iterations=2)
    mask = lif_prune(patches, cfg)
    np.testing.assert_array_equal(mask.data, reference_lif_prune(patches, cfg))


def test_moving_square_background_pruned_square_kept():
    patches, spec = moving_square_patches(frames=10)
    cfg = PruneConfig(tau1=0.15, tau2=0.3, block_size=3)
    mask = lif_prune(patches, cfg)
    tp, hp, wp = patches.grid_dims
    # far corner never visited by the square nor its dilation margin
    assert not mask.data[5:, 0, 0].any()
    # square cells at late frames are kept
    for t in range(5, tp):
        r0, c0 = moving_square_position(spec, t)
        assert mask.data[t, r0, c0]


def test_constant_video_guard_frames():
    g = LatentGrid(data=np.ones((12, 8, 8, 2), dtype=np.float32))
    cfg = PruneConfig(tau1=0.15, tau2=0.3, block_size=3)
    mask = lif_prune(patchify(g, cfg.patch_dims), cfg)
    # frames t <= k stay all-True by the guard branch; the 3D dilation then
    # extends the kept region one frame further; everything later is pruned
    assert mask.data[:4].all()
    assert not mask.data[4:].any()


def test_zero_thresholds_keep_everything_on_changing_video():
    rng = np.random.default_rng(4)
    g = LatentGrid(data=np.cumsum(
        0.5 + rng.random((6, 8, 8, 2)), axis=0).astype(np.float32))
    cfg = PruneConfig(tau1=0.0, tau2=0.0, block_size=3)
    mask = lif_prune(patchify(g, cfg.patch_dims), cfg)
    assert mask.data.all()


def test_frame0_always_true():
    rng = np.random.default_rng(5)
    for seed in range(5):
        g = LatentGrid(data=np.random.default_rng(seed).standard_normal((6, 8, 8, 1)).astype(np.float32))
        cfg = PruneConfig(tau1=float(rng.uniform(0, 5)), tau2=float(rng.uniform(0, 5)))
        mask = lif_prune(patchify(g, cfg.patch_dims), cfg)
        assert mask.data[0].all()


def test_raising_thresholds_never_decreases_prune_rate():
    patches, _ = moving_square_patches(seed=6, frames=8, size=12)
    rates = []
    for tau in (0.05, 0.2, 0.8, 3.0, 12.0):
        cfg = PruneConfig(tau1=tau, tau2=2 * tau, block_size=3)
        rates.append(prune_rate(lif_prune(patches, cfg)))
    assert all(b >= a for a, b in zip(rates, rates[1:]))


# ---------------------------------------------------------------------------
# prune_rate
# ---------------------------------------------------------------------------

def test_prune_rate_all_true_is_zero():
    mask = KeepMaskSequence(data=np.ones((4, 3, 3), dtype=bool))
    assert prune_rate(mask) == 0.0


def test_prune_rate_only_frame0_kept():
    m = np.zeros((16, 4, 4), dtype=bool)
    m[0] = True
    assert prune_rate(KeepMaskSequence(data=m)) == pytest.approx(15 / 16)


def test_prune_rate_matches_reference_count():
    patches, _ = moving_square_patches(seed=7)
    cfg = PruneConfig(tau1=0.15, tau2=0.3, block_size=3)
    mask = lif_prune(patches, cfg)
    ref = reference_lif_prune(patches, cfg)
    expected = 1.0 - ref.sum() / ref.size
    assert prune_rate(mask) == pytest.approx(expected)
    np.testing.assert_allclose(per_frame_prune_rate(mask), 1.0 - ref.mean(axis=(1, 2)))


def test_collect_stages_names():
    patches, _ = moving_square_patches(seed=8, frames=6, size=8)
    cfg = PruneConfig()
    mask, stages = lif_prune(patches, cfg, collect_stages=True)
    names = [s.name for s in stages]
    assert names == [
        "short_raw_diff", "short_mask", "long_raw_diff", "long_mask",
        "combined", "after_median", "after_closing", "after_dilation",
    ]
    assert isinstance(mask, KeepMaskSequence)
