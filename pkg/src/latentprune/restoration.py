"""Reconstruction of a full patch grid from kept patches by temporal forward-fill.

Kept patches are stored flat in frame-major, row-major order of the True mask
positions; this ordering is part of the on-disk contract so pruned sets can be
serialized and restored by separate processes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .grids import KeepMaskSequence, PatchDims, PatchGrid


@dataclass(frozen=True)
class PrunedPatchSet:
    """A keep mask plus the kept patch vectors in raster order."""

    mask: KeepMaskSequence
    kept_patches: np.ndarray  # (n_kept, L) float32
    patch_dims: PatchDims
    channels: int

    def __post_init__(self):
        kp = np.asarray(self.kept_patches, dtype=np.float32)
        if kp.ndim != 2:
            raise ValidationError(f"kept_patches must be 2D (n_kept, L), got {kp.ndim}D")
        if kp.shape[0] != self.mask.n_kept:
            raise ValidationError(
                f"kept_patches count {kp.shape[0]} != mask True count {self.mask.n_kept}"
            )
        kp.flags.writeable = False
        object.__setattr__(self, "kept_patches", kp)


def extract_kept(patches: PatchGrid, mask: KeepMaskSequence) -> PrunedPatchSet:
    """Gather the patch vectors at True mask positions, raster order."""
    if patches.grid_dims != mask.dims:
        raise ValidationError(
            f"patch grid dims {patches.grid_dims} != mask dims {mask.dims}"
        )
    kept = patches.data[mask.data]
    return PrunedPatchSet(
        mask=mask,
        kept_patches=kept,
        patch_dims=patches.patch_dims,
        channels=patches.channels,
    )


def restore(pruned: PrunedPatchSet) -> PatchGrid:
    """Fill pruned positions with the restored value one frame earlier.

    Chains of pruned frames propagate the most recent kept patch at the same
    spatial index. Frame 0 of the mask must be all-True (enforced by the mask
    type), so every position is covered.
    """
    mask = pruned.mask.data
    tp, hp, wp = mask.shape
    length = pruned.kept_patches.shape[1]
    out = np.zeros((tp, hp, wp, length), dtype=np.float32)
    out[mask] = pruned.kept_patches
    for t in range(1, tp):
        missing = ~mask[t]
        out[t][missing] = out[t - 1][missing]
    return PatchGrid(patch_dims=pruned.patch_dims, channels=pruned.channels, data=out)
