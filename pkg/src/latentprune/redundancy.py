"""Temporal-redundancy measurements on patch grids.

Two probes live here: the Pearson correlation between two populations of
consecutive-frame patch distances (e.g. pixel-space vs latent-space), and a
threshold-driven compression pass that substitutes a patch with its
(already-substituted) temporal predecessor whenever the L1 difference falls
below a threshold.

Distances treat the whole flattened patch vector uniformly: the L1 norm runs
over every element regardless of channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .grids import PatchGrid


@dataclass(frozen=True)
class DeltaField:
    """Per-location L1 distance between consecutive frames, shape (Tp-1, Hp, Wp)."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float32)
        if a.ndim != 3:
            raise ValidationError(f"delta field must have 3 axes, got {a.ndim}")
        if a.size and float(a.min()) < 0:
            raise ValidationError("delta field entries must be >= 0")
        a.flags.writeable = False
        object.__setattr__(self, "data", a)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class PearsonReport:
    r: float
    n_samples: int
    mean_x: float
    mean_y: float
    var_x: float
    var_y: float


@dataclass(frozen=True)
class CompressionReport:
    theta: float
    compressed_fraction: float
    fidelity: float  # latent-space MSE proxy between original and compressed grids
    n_replaced: int
    n_candidates: int


def temporal_delta_l1(patches: PatchGrid) -> DeltaField:
    """L1 distance between each patch and its successor at the same location.

    Entry (t, y, x) = sum over elements of |patch(t) - patch(t+1)|,
    accumulated in float64. Requires at least two frames.
    """
    tp = patches.grid_dims[0]
    if tp < 2:
        raise ValidationError(f"need at least 2 frames to form temporal deltas, got {tp}")
    d = patches.data.astype(np.float64)
    deltas = np.abs(d[:-1] - d[1:]).sum(axis=-1)
    return DeltaField(data=deltas.astype(np.float32))


def _pearson_one_pass(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float, float]:
    n = x.size
    sx = float(x.sum())
    sy = float(y.sum())
    sxx = float((x * x).sum())
    syy = float((y * y).sum())
    sxy = float((x * y).sum())
    mx, my = sx / n, sy / n
    vx = sxx / n - mx * mx
    vy = syy / n - my * my
    cov = sxy / n - mx * my
    return mx, my, vx, vy, cov


def _pearson_two_pass(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float, float]:
    mx = float(x.mean())
    my = float(y.mean())
    dx = x - mx
    dy = y - my
    n = x.size
    vx = float((dx * dx).sum()) / n
    vy = float((dy * dy).sum()) / n
    cov = float((dx * dy).sum()) / n
    return mx, my, vx, vy, cov


def pixel_latent_correlation(pixel_deltas: DeltaField, latent_deltas: DeltaField) -> PearsonReport:
    """Pearson correlation over all (t, y, x) pairs of two delta fields.

    The caller is responsible for matching patch scales so both fields share
    dims. One-pass accumulation in float64, with a two-pass fallback when the
    one-pass variance loses precision. Zero variance in either population is
    an error.
    """
    if pixel_deltas.dims != latent_deltas.dims:
        raise ValidationError(
            f"delta field dims differ: {pixel_deltas.dims} vs {latent_deltas.dims}"
        )
    x = pixel_deltas.data.astype(np.float64).ravel()
    y = latent_deltas.data.astype(np.float64).ravel()
    mx, my, vx, vy, cov = _pearson_one_pass(x, y)
    # Catastrophic cancellation check: fall back when the one-pass variance is
    # a tiny remainder of the raw second moment.
    if vx <= 1e-12 * max(mx * mx, 1.0) or vy <= 1e-12 * max(my * my, 1.0):
        mx, my, vx, vy, cov = _pearson_two_pass(x, y)
    if vx <= 0 or vy <= 0:
        raise ValidationError("zero-variance population; Pearson correlation undefined")
    r = cov / math.sqrt(vx * vy)
    return PearsonReport(r=r, n_samples=x.size, mean_x=mx, mean_y=my, var_x=vx, var_y=vy)


def compress_latents(patches: PatchGrid, theta: float) -> tuple[PatchGrid, CompressionReport]:
    """Forward substitution of near-static patches.

    Scanning t = 1..Tp-1 in order, patch (t, y, x) is replaced by the already
    substituted patch (t-1, y, x) when their L1 distance is strictly below
    theta, so runs of static patches collapse to the first frame's value.
    Frame 0 is never replaced.
    """
    if not theta >= 0:
        raise ValidationError(f"theta must be >= 0, got {theta}")
    tp, hp, wp = patches.grid_dims
    out = np.array(patches.data, dtype=np.float32, copy=True)
    replaced = 0
    for t in range(1, tp):
        delta = np.abs(out[t].astype(np.float64) - out[t - 1].astype(np.float64)).sum(axis=-1)
        sub = delta < theta
        out[t][sub] = out[t - 1][sub]
        replaced += int(sub.sum())
    candidates = (tp - 1) * hp * wp
    fraction = replaced / candidates if candidates else 0.0
    err = out.astype(np.float64) - patches.data.astype(np.float64)
    mse = float((err * err).mean()) if err.size else 0.0
    grid = PatchGrid(patch_dims=patches.patch_dims, channels=patches.channels, data=out)
    report = CompressionReport(
        theta=float(theta),
        compressed_fraction=fraction,
        fidelity=mse,
        n_replaced=replaced,
        n_candidates=candidates,
    )
    return grid, report


def compression_sweep(patches: PatchGrid, thetas: list[float]) -> list[CompressionReport]:
    """Run ``compress_latents`` once per threshold. Thetas must be ascending."""
    ths = list(thetas)
    if any(b < a for a, b in zip(ths, ths[1:])):
        raise ValidationError(f"thetas must be sorted ascending, got {ths}")
    return [compress_latents(patches, th)[1] for th in ths]
