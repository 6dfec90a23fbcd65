"""Deterministic causal multi-head self-attention with rotary embeddings.

``exact_attention`` is the toolkit's oracle: a direct O(N^2) evaluation with
per-query max subtraction and float64 accumulation, no approximations. Every
attention approximation elsewhere is tested against it.

Rotary embeddings rotate consecutive dimension pairs by position-dependent
angles. By default only the temporal index rotates: duplication-based
recovery replaces tokens at the same spatial location, so only the temporal
angle differs between a kept token and the positions it stands in for. A
factorized three-axis mode is available but off by default.

The clean-token KV cache stores unrotated per-head key/value vectors for
recent frames on a dense (Hp, Wp) location grid, trimmed to a window of most
recent frames. Entries must be flagged clean (produced at a zero noise
level); appending non-clean tokens is an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class HeadConfig:
    """Multi-head geometry. head_dim must be even so RoPE pairs line up."""

    n_heads: int
    head_dim: int
    scale: float | None = None  # None -> 1/sqrt(head_dim)

    def __post_init__(self):
        if self.n_heads < 1:
            raise ValidationError(f"n_heads must be >= 1, got {self.n_heads}")
        if self.head_dim < 2 or self.head_dim % 2 != 0:
            raise ValidationError(f"head_dim must be even and >= 2, got {self.head_dim}")
        if self.scale is not None and not self.scale > 0:
            raise ValidationError(f"scale must be > 0, got {self.scale}")

    @property
    def model_dim(self) -> int:
        return self.n_heads * self.head_dim

    @property
    def logit_scale(self) -> float:
        return self.scale if self.scale is not None else 1.0 / math.sqrt(self.head_dim)


@dataclass(frozen=True)
class RoPEConfig:
    """Rotary embedding parameters.

    ``rotated_dims`` dimensions (an even count) receive rotation; pair i uses
    angular frequency base**(-2i/rotated_dims). ``axes="temporal"`` rotates by
    the frame index only; ``axes="factorized"`` splits the rotated pairs into
    three groups driven by (t, y, x) respectively.
    """

    base: float = 10000.0
    rotated_dims: int | None = None  # None -> full head_dim at call time
    axes: str = "temporal"

    def __post_init__(self):
        if self.base <= 0:
            raise ValidationError(f"rope base must be > 0, got {self.base}")
        if self.rotated_dims is not None and (self.rotated_dims < 2 or self.rotated_dims % 2):
            raise ValidationError(f"rotated_dims must be even and >= 2, got {self.rotated_dims}")
        if self.axes not in ("temporal", "factorized"):
            raise ValidationError(f"axes must be 'temporal' or 'factorized', got {self.axes!r}")

    def resolve_dims(self, head_dim: int) -> int:
        rd = head_dim if self.rotated_dims is None else self.rotated_dims
        if rd > head_dim:
            raise ValidationError(f"rotated_dims {rd} exceeds head_dim {head_dim}")
        return rd


def _pair_freqs(base: float, n_pairs: int) -> np.ndarray:
    if n_pairs == 0:
        return np.zeros(0)
    return base ** (-2.0 * np.arange(n_pairs) / (2.0 * n_pairs))


def _axis_pair_angles(positions: np.ndarray, cfg: RoPEConfig, head_dim: int) -> np.ndarray:
    """Per-pair rotation angles, shape (n, n_pairs). positions is (n, 3) int."""
    rd = cfg.resolve_dims(head_dim)
    n_pairs = rd // 2
    pos = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    if cfg.axes == "temporal":
        return pos[:, 0:1] * _pair_freqs(cfg.base, n_pairs)[None, :]
    # Factorized: split the pairs into three groups, remainder going to time.
    base_sz = n_pairs // 3
    sizes = (n_pairs - 2 * base_sz, base_sz, base_sz)
    chunks = []
    for axis, sz in enumerate(sizes):
        if sz:
            chunks.append(pos[:, axis : axis + 1] * _pair_freqs(cfg.base, sz)[None, :])
    return np.concatenate(chunks, axis=1) if chunks else np.zeros((pos.shape[0], 0))


def rope_rotate(v: np.ndarray, position, cfg: RoPEConfig) -> np.ndarray:
    """Rotate pair dims of one or more head-dim vectors to a grid position.

    ``v`` is (head_dim,) or (n, head_dim); ``position`` is a (t, y, x) triple
    or an (n, 3) array. Norms are preserved (rotations are orthogonal); dims
    beyond ``rotated_dims`` pass through unchanged.
    """
    arr = np.asarray(v, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    head_dim = arr.shape[1]
    if head_dim % 2:
        raise ValidationError(f"head vectors must have even length, got {head_dim}")
    pos = np.asarray(position)
    if pos.ndim == 1:
        pos = np.broadcast_to(pos, (arr.shape[0], 3))
    angles = _axis_pair_angles(pos, cfg, head_dim)
    n_pairs = angles.shape[1]
    out = arr.copy()
    if n_pairs:
        cos = np.cos(angles)
        sin = np.sin(angles)
        even = arr[:, 0 : 2 * n_pairs : 2]
        odd = arr[:, 1 : 2 * n_pairs : 2]
        out[:, 0 : 2 * n_pairs : 2] = cos * even - sin * odd
        out[:, 1 : 2 * n_pairs : 2] = sin * even + cos * odd
    return out[0] if single else out


def softmax_weights(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction, float64. -inf marks masked keys."""
    z = np.asarray(logits, dtype=np.float64)
    zmax = np.max(z, axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    return ez / ez.sum(axis=-1, keepdims=True)


def exact_attention(
    queries: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    *,
    query_frames: np.ndarray | None = None,
    key_frames: np.ndarray | None = None,
    causal: bool = False,
    scale: float = 1.0,
) -> np.ndarray:
    """Direct softmax attention, one head: the oracle.

    ``queries`` (nq, d), ``keys``/``values`` (nk, d). With ``causal`` set, a
    key participates only when its frame index is <= the query's frame; a
    query left with no keys is an error. Output is float64, (nq, d_v).
    """
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if k.shape[0] != v.shape[0]:
        raise ValidationError(f"key count {k.shape[0]} != value count {v.shape[0]}")
    logits = scale * (q @ k.T)
    if causal:
        if query_frames is None or key_frames is None:
            raise ValidationError("causal attention requires query_frames and key_frames")
        qf = np.asarray(query_frames).reshape(-1, 1)
        kf = np.asarray(key_frames).reshape(1, -1)
        masked = kf > qf
        if bool(masked.all(axis=1).any()):
            raise ValidationError("a query has an empty key set under causal masking")
        logits = np.where(masked, -np.inf, logits)
    return softmax_weights(logits) @ v


@dataclass(frozen=True)
class ProjectionWeights:
    """Per-head query/key/value projections, each (n_heads, head_dim, model_dim)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray

    def __post_init__(self):
        for name in ("wq", "wk", "wv"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            if w.ndim != 3:
                raise ValidationError(f"{name} must be (n_heads, head_dim, model_dim)")
            object.__setattr__(self, name, w)
        if not (self.wq.shape == self.wk.shape == self.wv.shape):
            raise ValidationError("projection weight shapes differ")

    @property
    def n_heads(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.wq.shape[1]

    @staticmethod
    def seeded(head_cfg: HeadConfig, seed: int) -> "ProjectionWeights":
        rng = np.random.default_rng(seed)
        shape = (head_cfg.n_heads, head_cfg.head_dim, head_cfg.model_dim)
        s = 1.0 / math.sqrt(head_cfg.model_dim)
        return ProjectionWeights(
            wq=rng.normal(0.0, s, shape),
            wk=rng.normal(0.0, s, shape),
            wv=rng.normal(0.0, s, shape),
        )


@dataclass(frozen=True)
class TokenSequence:
    """Tokens with (t, y, x) positions, embeddings, and optional projections."""

    positions: np.ndarray  # (n, 3) int
    embeddings: np.ndarray  # (n, model_dim)
    weights: ProjectionWeights | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64)
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValidationError("positions must be (n, 3)")
        if emb.ndim != 2 or emb.shape[0] != pos.shape[0]:
            raise ValidationError("embeddings must be (n, model_dim) matching positions")
        if len({tuple(p) for p in pos.tolist()}) != pos.shape[0]:
            raise ValidationError("token positions must be unique")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "embeddings", emb)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def frames(self) -> np.ndarray:
        return self.positions[:, 0]

    def project(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-head q, k, v, each (n_heads, n, head_dim), unrotated."""
        if self.weights is None:
            raise ValidationError("token sequence carries no projection weights")
        w = self.weights
        q = np.einsum("hdm,nm->hnd", w.wq, self.embeddings)
        k = np.einsum("hdm,nm->hnd", w.wk, self.embeddings)
        v = np.einsum("hdm,nm->hnd", w.wv, self.embeddings)
        return q, k, v


def full_sequence_attention(
    seq: TokenSequence,
    rope: RoPEConfig,
    *,
    causal: bool = True,
    scale: float | None = None,
) -> np.ndarray:
    """Multi-head exact attention of a sequence against itself.

    Keys and queries are RoPE-rotated at their own positions. Returns the
    concatenated head outputs, (n, model_dim); no output projection.
    """
    q, k, v = seq.project()
    if scale is None:
        scale = 1.0 / math.sqrt(seq.weights.head_dim)
    outs = []
    for h in range(q.shape[0]):
        qr = rope_rotate(q[h], seq.positions, rope)
        kr = rope_rotate(k[h], seq.positions, rope)
        outs.append(
            exact_attention(
                qr, kr, v[h],
                query_frames=seq.frames, key_frames=seq.frames,
                causal=causal, scale=scale,
            )
        )
    return np.concatenate(outs, axis=1)


@dataclass(frozen=True)
class KVCache:
    """Clean key/value tokens for recent frames on an (Hp, Wp) grid.

    ``keys[i]``/``values[i]`` hold frame ``frames[i]`` as (Hp, Wp, n_heads,
    head_dim) arrays of unrotated projections. At most ``window`` frames are
    retained; older frames are evicted on append.
    """

    window: int
    grid_hw: tuple[int, int]
    frames: tuple[int, ...] = ()
    keys: tuple[np.ndarray, ...] = ()
    values: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        if self.window < 1:
            raise ValidationError(f"cache window must be >= 1, got {self.window}")
        if any(b <= a for a, b in zip(self.frames, self.frames[1:])):
            raise ValidationError("cache frames must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    def lookup_frame(self, t: int) -> int | None:
        """Index of frame t in the cache, or None if absent/evicted."""
        try:
            return self.frames.index(t)
        except ValueError:
            return None

    def closest_frame(self, t: int) -> int | None:
        """Cached frame index temporally closest to t; ties pick the more recent."""
        if not self.frames:
            return None
        best = None
        best_d = None
        for f in self.frames:
            d = abs(f - t)
            if best_d is None or d < best_d or (d == best_d and f > best):
                best, best_d = f, d
        return best

    def at(self, frame: int, y: int, x: int) -> tuple[np.ndarray, np.ndarray]:
        idx = self.lookup_frame(frame)
        if idx is None:
            raise ValidationError(f"frame {frame} is not in the cache")
        return self.keys[idx][y, x], self.values[idx][y, x]


def cache_append(
    cache: KVCache,
    t: int,
    keys: np.ndarray,
    values: np.ndarray,
    *,
    clean: bool = True,
) -> KVCache:
    """Insert a clean frame of K/V tokens, evicting the oldest beyond the window."""
    if not clean:
        raise ValidationError("only clean (zero-noise-level) tokens may enter the KV cache")
    hp, wp = cache.grid_hw
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    expect = (hp, wp)
    if k.shape[:2] != expect or v.shape[:2] != expect or k.shape != v.shape:
        raise ValidationError(
            f"cache frame arrays must be ({hp}, {wp}, n_heads, head_dim), got {k.shape} / {v.shape}"
        )
    if cache.frames and t <= cache.frames[-1]:
        raise ValidationError(f"cache frames must be appended in increasing order, got {t}")
    frames = cache.frames + (t,)
    ks = cache.keys + (k,)
    vs = cache.values + (v,)
    while len(frames) > cache.window:
        frames, ks, vs = frames[1:], ks[1:], vs[1:]
    return KVCache(window=cache.window, grid_hw=cache.grid_hw, frames=frames, keys=ks, values=vs)
