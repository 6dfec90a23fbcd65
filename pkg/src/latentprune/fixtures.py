"""Deterministic synthetic fixtures standing in for real video latents.

Every kind has a documented closed form so tests can assert content exactly:

* ``static``: one seeded random frame repeated T times.
* ``moving-square``: a constant-valued square of patches translating one
  patch per frame over a zero background, optional additive Gaussian noise.
  With patch extents (1, ph, pw) and a square of ``size`` patches, the square
  at frame t occupies patch rows [row0, row0+size) and patch columns
  [(col0 + t) mod (Wp - size + 1), ... + size).
* ``staircase``: at patch resolution, the first half of the locations (in
  raster order) alternate between a base value and base + 1/L per element
  (L = patch vector length), so each frame-to-frame transition has an L1
  patch delta of exactly 1.0 on the moving half and exactly 0.0 on the static
  half.
* ``redundant-noisy``: a seeded smooth static base plus per-frame i.i.d.
  Gaussian noise of scale ``noise_sigma``.
* ``linear-gaussian-pair``: two grids whose patch-delta populations follow
  D ~ |N(0,1)| and E = slope*D + noise_sigma*M with M an independent
  half-normal, giving Pearson correlation slope / sqrt(slope^2 +
  noise_sigma^2) between the two delta fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ValidationError
from .grids import LatentGrid, PatchDims

KINDS = ("static", "moving-square", "staircase", "redundant-noisy", "linear-gaussian-pair")


@dataclass(frozen=True)
class FixtureSpec:
    kind: str
    frames: int
    height: int
    width: int
    channels: int
    patch_dims: PatchDims = field(default_factory=lambda: PatchDims(1, 2, 2))
    value: float = 4.0  # square amplitude / staircase base
    square_size: int = 2  # in patches
    noise_sigma: float = 0.0
    slope: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown fixture kind {self.kind!r}; choose from {KINDS}")
        if min(self.frames, self.height, self.width, self.channels) < 1:
            raise ValidationError("all fixture dims must be >= 1")


def moving_square_position(spec: FixtureSpec, t: int) -> tuple[int, int]:
    """(row0, col0) of the square in patch coordinates at frame t."""
    ph, pw = spec.patch_dims.ph, spec.patch_dims.pw
    hp, wp = spec.height // ph, spec.width // pw
    row0 = (hp - spec.square_size) // 2
    span = wp - spec.square_size + 1
    return row0, t % span


def synth_fixture(spec: FixtureSpec) -> LatentGrid | tuple[LatentGrid, LatentGrid]:
    """Generate a fixture grid; the pair kind returns (pixel-like, latent-like)."""
    rng = np.random.default_rng([spec.seed, 7])
    t, h, w, c = spec.frames, spec.height, spec.width, spec.channels

    if spec.kind == "static":
        frame = rng.standard_normal((h, w, c))
        return LatentGrid(data=np.broadcast_to(frame, (t, h, w, c)).copy())

    if spec.kind == "moving-square":
        ph, pw = spec.patch_dims.ph, spec.patch_dims.pw
        if h % ph or w % pw:
            raise ValidationError("fixture dims must be divisible by the patch extents")
        hp, wp = h // ph, w // pw
        if spec.square_size > min(hp, wp):
            raise ValidationError("square does not fit in the patch grid")
        data = np.zeros((t, h, w, c))
        for ti in range(t):
            r0, c0 = moving_square_position(spec, ti)
            data[
                ti,
                r0 * ph : (r0 + spec.square_size) * ph,
                c0 * pw : (c0 + spec.square_size) * pw,
                :,
            ] = spec.value
        if spec.noise_sigma > 0:
            data += spec.noise_sigma * rng.standard_normal(data.shape)
        return LatentGrid(data=data)

    if spec.kind == "staircase":
        pt, ph, pw = spec.patch_dims.as_tuple()
        if t % pt or h % ph or w % pw:
            raise ValidationError("fixture dims must be divisible by the patch extents")
        hp, wp = h // ph, w // pw
        if (hp * wp) % 2:
            raise ValidationError("staircase needs an even number of patch locations")
        patch_len = pt * ph * pw * c
        step = np.float32(1.0 / patch_len)
        data = np.full((t, h, w, c), spec.value, dtype=np.float32)
        moving = np.zeros((hp, wp), dtype=bool)
        moving.ravel()[: hp * wp // 2] = True
        up = np.repeat(np.repeat(moving, ph, axis=0), pw, axis=1)
        for ti in range(t):
            if (ti // pt) % 2 == 1:
                data[ti][up] += step
        return LatentGrid(data=data)

    if spec.kind == "redundant-noisy":
        base = rng.standard_normal((h, w, c))
        data = np.broadcast_to(base, (t, h, w, c)).copy()
        if spec.noise_sigma > 0:
            data += spec.noise_sigma * rng.standard_normal(data.shape)
        return LatentGrid(data=data)

    # linear-gaussian-pair: build both grids by accumulating per-transition
    # deltas along a fixed unit-L1 direction, so patchified L1 deltas equal
    # the drawn magnitudes exactly.
    pt, ph, pw = spec.patch_dims.as_tuple()
    if t % pt or h % ph or w % pw:
        raise ValidationError("fixture dims must be divisible by the patch extents")
    if t // pt < 2:
        raise ValidationError("pair fixture needs at least two patch frames")
    tp, hp, wp = t // pt, h // ph, w // pw
    patch_len = pt * ph * pw * c
    d = np.abs(rng.standard_normal((tp - 1, hp, wp)))
    m = np.abs(rng.standard_normal((tp - 1, hp, wp)))
    e = spec.slope * d + spec.noise_sigma * m
    pixel = _accumulated_grid(d, spec, patch_len)
    latent = _accumulated_grid(e, spec, patch_len)
    return pixel, latent


def _accumulated_grid(deltas: np.ndarray, spec: FixtureSpec, patch_len: int) -> LatentGrid:
    """Grid whose consecutive patch-frame L1 deltas equal ``deltas`` exactly."""
    pt, ph, pw = spec.patch_dims.as_tuple()
    tp, hp, wp = deltas.shape[0] + 1, deltas.shape[1], deltas.shape[2]
    levels = np.zeros((tp, hp, wp))
    levels[1:] = np.cumsum(deltas, axis=0)
    # Spread each level uniformly over the patch block: per-element value =
    # level / patch_len, so the block's L1 difference equals the level delta.
    per_elem = levels / patch_len
    grid = np.repeat(np.repeat(np.repeat(per_elem, pt, axis=0), ph, axis=1), pw, axis=2)
    grid = np.broadcast_to(grid[..., None], grid.shape + (spec.channels,)).copy()
    return LatentGrid(data=grid)


def closed_form_pair_correlation(slope: float, noise_sigma: float) -> float:
    """Pearson correlation of the linear-gaussian-pair delta populations."""
    return slope / math.sqrt(slope * slope + noise_sigma * noise_sigma)


def token_fixture(
    n_frames: int,
    hp: int,
    wp: int,
    model_dim: int,
    n_heads: int,
    *,
    drift: float = 0.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
    cache_frames: list[int] | None = None,
):
    """Token sequence with controllable temporal drift and i.i.d. noise.

    Each location carries a base embedding; frame t adds ``drift`` times a
    unit perturbation (the clean signal) plus ``noise_sigma`` i.i.d. Gaussian
    noise. Returns (full TokenSequence over all positions, clean KV cache)
    where the cache holds the projections of the clean components. By default
    every frame is cached; restricting ``cache_frames`` forces duplicate
    sourcing to rotate from temporally distant clean tokens, which is how the
    key-approximation error is made nonzero for drifting content. With drift
    0 and noise 0 the sequence is exactly redundant.
    """
    from .attention import HeadConfig, KVCache, ProjectionWeights, TokenSequence, cache_append

    rng = np.random.default_rng([seed, 17])
    dm = model_dim
    base = rng.standard_normal((hp, wp, dm))
    pert = rng.standard_normal((n_frames, hp, wp, dm))
    pert /= np.linalg.norm(pert, axis=-1, keepdims=True)
    clean = base[None] + drift * pert
    tokens = clean + noise_sigma * rng.standard_normal(clean.shape)

    t, y, x = np.meshgrid(np.arange(n_frames), np.arange(hp), np.arange(wp), indexing="ij")
    positions = np.stack([t.ravel(), y.ravel(), x.ravel()], axis=1)
    weights = ProjectionWeights.seeded(HeadConfig(n_heads=n_heads, head_dim=dm // n_heads), seed + 1)
    seq = TokenSequence(positions=positions, embeddings=tokens.reshape(-1, dm), weights=weights)

    cache = KVCache(window=n_frames, grid_hw=(hp, wp))
    for ti in range(n_frames) if cache_frames is None else sorted(cache_frames):
        flat = clean[ti].reshape(-1, dm)
        k = np.einsum("hdm,nm->nhd", weights.wk, flat).reshape(hp, wp, n_heads, dm // n_heads)
        v = np.einsum("hdm,nm->nhd", weights.wv, flat).reshape(hp, wp, n_heads, dm // n_heads)
        cache = cache_append(cache, ti, k, v)
    return seq, cache


def pattern_mask(n_frames: int, hp: int, wp: int, pattern: str, seed: int = 0):
    """Keep mask from a small pattern grammar.

    ``frame0`` keeps only frame 0; ``random:p`` keeps each later token with
    probability p; ``stride:k`` keeps every k-th frame entirely.
    """
    from .grids import KeepMaskSequence

    m = np.zeros((n_frames, hp, wp), dtype=bool)
    m[0] = True
    if pattern == "frame0":
        pass
    elif pattern.startswith("random:"):
        p = float(pattern.split(":", 1)[1])
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"keep probability must be in [0, 1], got {p}")
        rng = np.random.default_rng([seed, 23])
        m[1:] = rng.random((n_frames - 1, hp, wp)) < p
    elif pattern.startswith("stride:"):
        k = int(pattern.split(":", 1)[1])
        if k < 1:
            raise ValidationError(f"stride must be >= 1, got {k}")
        m[::k] = True
    else:
        raise ValidationError(f"unknown prune pattern {pattern!r}")
    return KeepMaskSequence(data=m)
