"""Inter-frame keep-mask construction.

A token is kept when either its short-term (consecutive frame) or long-term
(block-anchored reference frame) patch difference is large. Raw per-location
L1 differences are smoothed with a separable 3D Gaussian before thresholding,
so decisions reflect neighbourhood motion rather than isolated flicker; the
combined boolean mask is then cleaned up with a 3D median blur (majority
vote), a per-frame 2D morphological closing, and a 3D dilation that adds a
safety margin around moving regions.

Stage semantics, fixed for golden tests:

* Gaussian smoothing uses zero padding; a location is kept where the smoothed
  difference is strictly greater than the threshold.
* Median blur, closing and dilation use replicate padding, applied per stage.
* Short-term differences for frames 1..Tp-1 are stacked along time and
  smoothed as one 3D field; long-term differences are stacked the same way
  over the frames where the long-term rule applies (t > k).
* Frames with t <= k have an all-True long-term mask, and frame 0 an all-True
  short-term mask, exactly as the dual-threshold rule states; this forces the
  first denoising block to stay fully kept even for static inputs.
* Frame 0 is re-asserted all-True after smoothing so the keep-mask invariant
  holds regardless of kernel sizes.

The long-term temporal offset for frame ``t`` with block size ``S`` is
``k = 1`` when ``t`` is a multiple of ``S`` and ``k = t mod S`` otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .grids import KeepMaskSequence, PatchGrid, PruneConfig


@dataclass(frozen=True)
class DiffMaskStage:
    """A named intermediate of the mask pipeline, retained for debugging."""

    name: str
    data: np.ndarray  # float32 diff fields or bool masks, shape (*, Hp, Wp)


def gaussian_kernel(extent: int, sigma: float) -> np.ndarray:
    """Sampled 1D Gaussian of odd length ``extent``, normalized to sum 1."""
    if extent < 1 or extent % 2 == 0:
        raise ValidationError(f"gaussian extent must be odd and >= 1, got {extent}")
    r = extent // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def smooth_diff_3d(field: np.ndarray, extent: int, sigma: float) -> np.ndarray:
    """Separable 3D Gaussian smoothing with zero-padded borders."""
    k = gaussian_kernel(extent, sigma)
    out = np.asarray(field, dtype=np.float64)
    for axis in range(3):
        out = ndimage.convolve1d(out, k, axis=axis, mode="constant", cval=0.0)
    return out


def median_blur_3d(mask: np.ndarray, extent: int) -> np.ndarray:
    """Majority vote over an extent^3 neighbourhood, replicate padding."""
    votes = ndimage.median_filter(mask.astype(np.float32), size=extent, mode="nearest")
    return votes > 0.5


def _pad_edge(mask: np.ndarray, pad: tuple[int, ...]) -> np.ndarray:
    return np.pad(mask, [(p, p) for p in pad], mode="edge")


def close_mask_2d(mask: np.ndarray, extent: int) -> np.ndarray:
    """Per-frame morphological closing with a square element, replicate padding."""
    r = extent // 2
    struct = np.ones((extent, extent), dtype=bool)
    out = np.empty_like(mask)
    for t in range(mask.shape[0]):
        frame = _pad_edge(mask[t], (r, r))
        frame = ndimage.binary_dilation(frame, structure=struct)
        frame = frame[r : frame.shape[0] - r, r : frame.shape[1] - r]
        frame = _pad_edge(frame, (r, r))
        frame = ndimage.binary_erosion(frame, structure=struct)
        out[t] = frame[r : frame.shape[0] - r, r : frame.shape[1] - r]
    return out


def dilate_mask_3d(mask: np.ndarray, extent: int, iterations: int) -> np.ndarray:
    """3D binary dilation with a cube element, replicate padding."""
    if iterations == 0:
        return mask.copy()
    r = (extent // 2) * iterations
    struct = np.ones((extent, extent, extent), dtype=bool)
    padded = _pad_edge(mask, (r, r, r))
    padded = ndimage.binary_dilation(padded, structure=struct, iterations=iterations)
    return padded[r : padded.shape[0] - r, r : padded.shape[1] - r, r : padded.shape[2] - r]


def diff_mask(a: np.ndarray, b: np.ndarray, tau: float, cfg: PruneConfig) -> np.ndarray:
    """Changed-region mask between two aligned stacks of patch frames.

    ``a`` and ``b`` are (n, Hp, Wp, L) windows of patch vectors. The
    per-location L1 difference is Gaussian-smoothed across (t, y, x) and a
    location is marked True (changed, keep) where the smoothed difference
    exceeds ``tau``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError(f"diff windows must share dims, got {a.shape} vs {b.shape}")
    if not tau >= 0:
        raise ValidationError(f"tau must be >= 0, got {tau}")
    raw = np.abs(a.astype(np.float64) - b.astype(np.float64)).sum(axis=-1)
    smoothed = smooth_diff_3d(raw, cfg.gaussian_extent, cfg.gaussian_sigma)
    return smoothed > tau


def long_term_offset(t: int, block_size: int) -> int:
    """Temporal offset k of the long-term reference frame for frame t."""
    if t < 0:
        raise ValidationError(f"frame index must be >= 0, got {t}")
    if block_size < 1:
        raise ValidationError(f"block size must be >= 1, got {block_size}")
    if t % block_size == 0:
        return 1
    return t % block_size


def lif_prune(
    patches: PatchGrid,
    cfg: PruneConfig,
    collect_stages: bool = False,
) -> KeepMaskSequence | tuple[KeepMaskSequence, list[DiffMaskStage]]:
    """Build the keep mask for a patch grid via the dual-threshold rule.

    Returns the mask, or (mask, stages) when ``collect_stages`` is set.
    """
    tp, hp, wp = patches.grid_dims
    data = patches.data
    stages: list[DiffMaskStage] = []

    m_short = np.ones((tp, hp, wp), dtype=bool)
    if tp > 1:
        m_short[1:] = diff_mask(data[1:], data[:-1], cfg.tau1, cfg)
        if collect_stages:
            raw = np.abs(data[1:].astype(np.float64) - data[:-1].astype(np.float64)).sum(axis=-1)
            stages.append(DiffMaskStage("short_raw_diff", raw.astype(np.float32)))
            stages.append(DiffMaskStage("short_mask", m_short.copy()))

    m_long = np.ones((tp, hp, wp), dtype=bool)
    offsets = {t: long_term_offset(t, cfg.block_size) for t in range(tp)}
    long_ts = [t for t in range(tp) if t > offsets[t]]
    if long_ts:
        cur = np.stack([data[t] for t in long_ts])
        ref = np.stack([data[t - offsets[t]] for t in long_ts])
        long_masks = diff_mask(cur, ref, cfg.tau2, cfg)
        for i, t in enumerate(long_ts):
            m_long[t] = long_masks[i]
        if collect_stages:
            raw = np.abs(cur.astype(np.float64) - ref.astype(np.float64)).sum(axis=-1)
            stages.append(DiffMaskStage("long_raw_diff", raw.astype(np.float32)))
            stages.append(DiffMaskStage("long_mask", m_long.copy()))

    mask = m_short | m_long
    if collect_stages:
        stages.append(DiffMaskStage("combined", mask.copy()))
    mask = median_blur_3d(mask, cfg.median_extent)
    if collect_stages:
        stages.append(DiffMaskStage("after_median", mask.copy()))
    mask = close_mask_2d(mask, cfg.morph_extent)
    if collect_stages:
        stages.append(DiffMaskStage("after_closing", mask.copy()))
    mask = dilate_mask_3d(mask, cfg.dilation_extent, cfg.dilation_iterations)
    if collect_stages:
        stages.append(DiffMaskStage("after_dilation", mask.copy()))
    mask[0] = True

    seq = KeepMaskSequence(data=mask)
    if collect_stages:
        return seq, stages
    return seq


def prune_rate(mask: KeepMaskSequence) -> float:
    """Fraction of pruned (False) entries over the whole mask."""
    return 1.0 - float(mask.data.mean())


def per_frame_prune_rate(mask: KeepMaskSequence) -> np.ndarray:
    """Fraction of pruned entries per frame, shape (Tp,)."""
    return 1.0 - mask.data.mean(axis=(1, 2))
