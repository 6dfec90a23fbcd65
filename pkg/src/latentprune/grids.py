"""Core value types: latent grids, patch grids, keep masks, prune configuration.

All grid data is stored as float32 in row-major order; reductions elsewhere in
the toolkit accumulate in float64. Every value type is immutable after
construction (backing arrays are marked read-only), so instances can be shared
freely across threads.

Patch vector layout
-------------------
``patchify`` flattens each (pt, ph, pw, C) block in a fixed order: time-major,
then row, then column, then channel. Channels are never patched. The order is
part of the on-disk contract for kept-patch files and golden fixtures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

_AXIS_NAMES = ("time", "height", "width")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LatentGrid:
    """Dense (T, H, W, C) tensor of video latents or pixel frames."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float32)
        if a.ndim != 4:
            raise ValidationError(f"grid must have 4 axes (T, H, W, C), got {a.ndim}")
        if min(a.shape) < 1:
            raise ValidationError(f"all grid dims must be >= 1, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("grid contains non-finite values")
        object.__setattr__(self, "data", _freeze(a))

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class PatchDims:
    """Per-axis patch extents (pt, ph, pw). Channels are never patched."""

    pt: int
    ph: int
    pw: int

    def __post_init__(self):
        for name, v in zip(_AXIS_NAMES, (self.pt, self.ph, self.pw)):
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValidationError(f"patch extent for {name} axis must be a positive integer, got {v!r}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.pt, self.ph, self.pw)


@dataclass(frozen=True)
class PatchGrid:
    """Grid of flattened patch vectors indexed (t, y, x).

    ``data`` has shape (Tp, Hp, Wp, L) with L = pt*ph*pw*C. ``channels`` is
    retained so the grid can be unpatchified without outside knowledge.
    """

    patch_dims: PatchDims
    channels: int
    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float32)
        if a.ndim != 4:
            raise ValidationError(f"patch grid must have 4 axes (Tp, Hp, Wp, L), got {a.ndim}")
        pt, ph, pw = self.patch_dims.as_tuple()
        if self.channels < 1:
            raise ValidationError("channels must be >= 1")
        if a.shape[3] != pt * ph * pw * self.channels:
            raise ValidationError(
                f"patch vector length {a.shape[3]} != pt*ph*pw*C = {pt * ph * pw * self.channels}"
            )
        object.__setattr__(self, "data", _freeze(a))

    @property
    def grid_dims(self) -> tuple[int, int, int]:
        """(Tp, Hp, Wp): number of patches along each axis."""
        return self.data.shape[:3]

    @property
    def patch_len(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True)
class KeepMaskSequence:
    """Boolean keep mask at patch resolution, shape (Tp, Hp, Wp).

    True marks a kept (recomputed) token, False a pruned one. Frame 0 is
    required to be all-True so restoration always has a source.
    """

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.dtype != np.bool_:
            a = a.astype(bool)
        if a.ndim != 3:
            raise ValidationError(f"mask must have 3 axes (Tp, Hp, Wp), got {a.ndim}")
        if not bool(a[0].all()):
            raise ValidationError("mask frame 0 must be all-True")
        object.__setattr__(self, "data", _freeze(a))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def n_kept(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class PruneConfig:
    """Thresholds and smoothing parameters for inter-frame pruning.

    tau1 gates the short-term (consecutive-frame) difference, tau2 the
    long-term difference against the block-anchored reference frame.
    block_size is the denoising block size S used both by the long-term
    offset rule and by the streaming pipeline. Kernel extents must be odd.
    """

    tau1: float = 0.15
    tau2: float = 0.3
    block_size: int = 3
    patch_dims: PatchDims = field(default_factory=lambda: PatchDims(1, 2, 2))
    gaussian_extent: int = 3
    gaussian_sigma: float = 1.0
    median_extent: int = 3
    morph_extent: int = 3
    dilation_extent: int = 3
    dilation_iterations: int = 1

    def __post_init__(self):
        if self.tau1 < 0 or self.tau2 < 0:
            raise ValidationError(f"thresholds must be >= 0, got tau1={self.tau1}, tau2={self.tau2}")
        if self.block_size < 1:
            raise ValidationError(f"block_size must be >= 1, got {self.block_size}")
        if self.gaussian_sigma <= 0:
            raise ValidationError(f"gaussian_sigma must be > 0, got {self.gaussian_sigma}")
        if self.dilation_iterations < 0:
            raise ValidationError("dilation_iterations must be >= 0")
        for name in ("gaussian_extent", "median_extent", "morph_extent", "dilation_extent"):
            v = getattr(self, name)
            if v < 1 or v % 2 == 0:
                raise ValidationError(f"{name} must be odd and >= 1, got {v}")


def patchify(grid: LatentGrid, patch_dims: PatchDims) -> PatchGrid:
    """Split a grid into non-overlapping (pt, ph, pw) patches.

    Each patch is flattened time-major, then row, then column, then channel.
    Raises ValidationError naming the first axis whose extent is not
    divisible by the patch extent.
    """
    t, h, w, c = grid.dims
    pt, ph, pw = patch_dims.as_tuple()
    for name, dim, p in zip(_AXIS_NAMES, (t, h, w), (pt, ph, pw)):
        if dim % p != 0:
            raise ValidationError(f"{name} axis extent {dim} is not divisible by patch extent {p}")
    tp, hp, wp = t // pt, h // ph, w // pw
    blocks = grid.data.reshape(tp, pt, hp, ph, wp, pw, c)
    vectors = blocks.transpose(0, 2, 4, 1, 3, 5, 6).reshape(tp, hp, wp, pt * ph * pw * c)
    return PatchGrid(patch_dims=patch_dims, channels=c, data=np.ascontiguousarray(vectors))


def unpatchify(patches: PatchGrid) -> LatentGrid:
    """Inverse of ``patchify``; bit-exact round trip (pure reindexing)."""
    tp, hp, wp = patches.grid_dims
    pt, ph, pw = patches.patch_dims.as_tuple()
    c = patches.channels
    blocks = patches.data.reshape(tp, hp, wp, pt, ph, pw, c)
    grid = blocks.transpose(0, 3, 1, 4, 2, 5, 6).reshape(tp * pt, hp * ph, wp * pw, c)
    return LatentGrid(data=np.ascontiguousarray(grid))
