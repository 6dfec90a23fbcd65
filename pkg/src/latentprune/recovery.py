"""Duplication-based recovery of full-sequence attention from a pruned sequence.

A keep mask induces, per spatial location, a run-length plan: each kept frame
j owns itself plus the pruned frames that follow it, c_j positions in total,
and the counts sum to the full frame count. Recovery materializes key/value
entries at the positions a kept token stands in for (the key is the source
vector rotated to the materialized position, the value is copied unrotated)
and then runs the ordinary attention kernel over the expanded set. Queries
are never duplicated, so the output count equals the kept-token count and the
whole mechanism stays outside the softmax loop.

Degree control: with degree m, only the min(m, c_j) most recent positions of
each run are materialized (causal queries sit late in the sequence, so the
most recent rotation angles align best with them). The partial exponential
sum over those positions is a strict lower bound on the full sum; see
``partial_sum_bound_check``.

Duplicate sourcing: with ``noise_aware`` set, the source K/V for a pruned
position is the temporally closest clean token from the KV cache at the same
spatial location (ties resolved toward the more recent frame, which needs the
smaller rotary correction). The naive mode duplicates the kept token itself,
noise included, and exists only to reproduce the failure case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import KVCache, RoPEConfig, TokenSequence, exact_attention, rope_rotate
from .errors import ValidationError
from .grids import KeepMaskSequence


@dataclass(frozen=True)
class Run:
    """One maximal covered span at a location: a kept frame plus its pruned tail.

    ``owner_frame`` is the kept frame sourcing the span. In window plans the
    owner may precede ``start`` (the span head belongs to an earlier
    processing window and only its tail is visible here).
    """

    owner_frame: int
    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class RecoveryConfig:
    """Degree and sourcing mode for duplication.

    ``m=None`` means full duplication (every covered position materialized).
    """

    m: int | None = None
    noise_aware: bool = True

    def __post_init__(self):
        if self.m is not None and self.m < 1:
            raise ValidationError(f"degree m must be >= 1 or None for full, got {self.m}")

    def materialized(self, run_length: int) -> int:
        return run_length if self.m is None else min(self.m, run_length)


@dataclass(frozen=True)
class RecoveryErrorReport:
    max_error: float
    mean_error: float
    delta: float  # max measured key-approximation error over covered positions
    n_queries: int
    m: int | None
    noise_aware: bool


class RunLengthPlan:
    """Per-location run-length encoding of a keep mask along time."""

    def __init__(self, n_frames: int, grid_hw: tuple[int, int], runs: list[list[list[Run]]]):
        self.n_frames = n_frames
        self.grid_hw = grid_hw
        self.runs = runs

    def location_runs(self, y: int, x: int) -> list[Run]:
        return self.runs[y][x]

    def duplication_counts(self, y: int, x: int) -> tuple[list[int], list[int]]:
        """(kept frames, c_j counts) at a location. Counts sum to n_frames
        for plans built over the full mask."""
        rs = self.runs[y][x]
        return [r.owner_frame for r in rs], [r.length for r in rs]

    def source_frame_of(self, y: int, x: int, t: int) -> int:
        """Kept frame owning covered position t at this location."""
        for r in self.runs[y][x]:
            if r.start <= t < r.stop:
                return r.owner_frame
        raise ValidationError(f"frame {t} is outside the plan at location ({y}, {x})")


def build_plan(mask: KeepMaskSequence) -> RunLengthPlan:
    """Run-length encode a full keep mask. Frame 0 must be all-True
    (guaranteed by the mask type), so every run starts at its owner."""
    tp, hp, wp = mask.dims
    m = mask.data
    runs: list[list[list[Run]]] = []
    for y in range(hp):
        row = []
        for x in range(wp):
            kept = np.flatnonzero(m[:, y, x])
            loc_runs = []
            for i, j in enumerate(kept):
                stop = kept[i + 1] if i + 1 < len(kept) else tp
                loc_runs.append(Run(owner_frame=int(j), start=int(j), length=int(stop - j)))
            row.append(loc_runs)
        runs.append(row)
    return RunLengthPlan(n_frames=tp, grid_hw=(hp, wp), runs=runs)


def build_window_plan(mask: KeepMaskSequence, t0: int, t1: int) -> RunLengthPlan:
    """Clip the full plan to frames [t0, t1).

    Spans that straddle the window head keep their original (out-of-window)
    owner so duplicate sourcing can still identify the kept frame.
    """
    if not (0 <= t0 < t1 <= mask.dims[0]):
        raise ValidationError(f"window [{t0}, {t1}) out of range for {mask.dims[0]} frames")
    full = build_plan(mask)
    hp, wp = full.grid_hw
    runs: list[list[list[Run]]] = []
    for y in range(hp):
        row = []
        for x in range(wp):
            clipped = []
            for r in full.runs[y][x]:
                start = max(r.start, t0)
                stop = min(r.stop, t1)
                if start < stop:
                    clipped.append(Run(owner_frame=r.owner_frame, start=start, length=stop - start))
            row.append(clipped)
        runs.append(row)
    return RunLengthPlan(n_frames=t1 - t0, grid_hw=(hp, wp), runs=runs)


class RecoveryCacheMiss(ValidationError):
    """No clean source available for a pruned position; the long-term
    pruning constraint was not enforced upstream."""


def expand_duplicates(
    kept_frames: np.ndarray,
    kept_k: np.ndarray,
    kept_v: np.ndarray,
    runs: list[Run],
    cache: KVCache | None,
    cfg: RecoveryConfig,
    rope: RoPEConfig,
    location: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Materialize the expanded (frame, K, V) entries for one location.

    ``kept_k``/``kept_v`` are (n_kept_here, n_heads, head_dim) unrotated
    projections of the location's kept tokens, aligned with ``kept_frames``.
    Keys are rotated to the position they are materialized at; values are
    copied unrotated. A kept token materialized at its own frame is passed
    through as-is (it is a real token, not an approximation).
    """
    y, x = location
    frame_to_idx = {int(f): i for i, f in enumerate(np.asarray(kept_frames).tolist())}
    out_frames: list[int] = []
    out_k: list[np.ndarray] = []
    out_v: list[np.ndarray] = []
    for run in runs:
        n_mat = cfg.materialized(run.length)
        for t in range(run.stop - n_mat, run.stop):
            if t == run.owner_frame and run.owner_frame in frame_to_idx:
                idx = frame_to_idx[run.owner_frame]
                src_k, src_v = kept_k[idx], kept_v[idx]
            elif cfg.noise_aware or run.owner_frame not in frame_to_idx:
                if cache is None or len(cache) == 0:
                    raise RecoveryCacheMiss(
                        f"no clean cache entry for pruned position (t={t}, y={y}, x={x})"
                    )
                if cfg.noise_aware:
                    src_frame = cache.closest_frame(t)
                else:
                    src_frame = run.owner_frame if cache.lookup_frame(run.owner_frame) is not None \
                        else cache.closest_frame(run.owner_frame)
                src_k, src_v = cache.at(src_frame, y, x)
            else:
                idx = frame_to_idx[run.owner_frame]
                src_k, src_v = kept_k[idx], kept_v[idx]
            out_frames.append(t)
            out_k.append(rope_rotate(src_k, (t, y, x), rope))
            out_v.append(np.asarray(src_v, dtype=np.float64))
    if not out_frames:
        nh, hd = kept_k.shape[1:] if kept_k.ndim == 3 else (0, 0)
        return np.zeros(0, dtype=np.int64), np.zeros((0, nh, hd)), np.zeros((0, nh, hd))
    return np.asarray(out_frames, dtype=np.int64), np.stack(out_k), np.stack(out_v)


def expand_grid(
    seq: TokenSequence,
    plan: RunLengthPlan,
    cache: KVCache | None,
    cfg: RecoveryConfig,
    rope: RoPEConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Expand a whole kept sequence; returns (positions (n,3), frames, K, V).

    K/V come back as (n, n_heads, head_dim) with keys rotated to their
    materialized positions. Entries are sorted canonically by (frame, y, x)
    so downstream reductions are order-stable.
    """
    _, k, v = seq.project()
    k = np.transpose(k, (1, 0, 2))  # (n, heads, dim)
    v = np.transpose(v, (1, 0, 2))
    pos = seq.positions
    hp, wp = plan.grid_hw
    all_pos: list[tuple[int, int, int]] = []
    chunks_k: list[np.ndarray] = []
    chunks_v: list[np.ndarray] = []
    for y in range(hp):
        for x in range(wp):
            here = np.flatnonzero((pos[:, 1] == y) & (pos[:, 2] == x))
            kept_frames = pos[here, 0]
            order = np.argsort(kept_frames)
            here = here[order]
            kept_frames = kept_frames[order]
            frames, ek, ev = expand_duplicates(
                kept_frames, k[here], v[here], plan.location_runs(y, x),
                cache, cfg, rope, (y, x),
            )
            for f in frames.tolist():
                all_pos.append((f, y, x))
            if len(frames):
                chunks_k.append(ek)
                chunks_v.append(ev)
    positions = np.asarray(all_pos, dtype=np.int64).reshape(-1, 3)
    keys = np.concatenate(chunks_k) if chunks_k else np.zeros((0,) + k.shape[1:])
    values = np.concatenate(chunks_v) if chunks_v else np.zeros((0,) + v.shape[1:])
    order = np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0]))
    return positions[order], positions[order, 0], keys[order], values[order]


def recovered_attention(
    seq: TokenSequence,
    plan: RunLengthPlan,
    cache: KVCache | None,
    cfg: RecoveryConfig,
    rope: RoPEConfig,
    *,
    causal: bool = True,
    scale: float | None = None,
) -> np.ndarray:
    """Approximate full-sequence attention using only kept-token queries.

    Runs the exact kernel over the expanded K/V multiset. Output rows align
    with ``seq`` (one per kept token), concatenated over heads.
    """
    q, _, _ = seq.project()
    if scale is None:
        scale = 1.0 / math.sqrt(seq.weights.head_dim)
    _, exp_frames, exp_k, exp_v = expand_grid(seq, plan, cache, cfg, rope)
    outs = []
    for h in range(q.shape[0]):
        qr = rope_rotate(q[h], seq.positions, rope)
        outs.append(
            exact_attention(
                qr, exp_k[:, h], exp_v[:, h],
                query_frames=seq.frames, key_frames=exp_frames,
                causal=causal, scale=scale,
            )
        )
    return np.concatenate(outs, axis=1)


def partial_sum_bound_check(
    q: np.ndarray,
    k: np.ndarray,
    c: int,
    m: int,
    rope: RoPEConfig,
    *,
    scale: float | None = None,
) -> tuple[float, float]:
    """Exponential sums over the m most recent rotations vs all c rotations.

    Returns (partial, full). The full sum is accumulated starting from the
    partial sum so partial <= full holds exactly, not just in real
    arithmetic: every skipped term is non-negative.
    """
    if not (1 <= m <= c):
        raise ValidationError(f"need 1 <= m <= c, got m={m}, c={c}")
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    positions = np.stack([np.arange(c), np.zeros(c, dtype=int), np.zeros(c, dtype=int)], axis=1)
    rotated = rope_rotate(np.broadcast_to(k, (c, k.shape[-1])), positions, rope)
    terms = np.exp(scale * (rotated @ q))
    partial = float(terms[c - m :].sum())
    full = partial
    for t in terms[: c - m]:
        full += float(t)
    return partial, full


def top_m_sum(
    q: np.ndarray,
    k: np.ndarray,
    c: int,
    m: int,
    rope: RoPEConfig,
    *,
    scale: float | None = None,
) -> float:
    """Best-possible m-term sum: the m largest exponentials over all c rotations."""
    if scale is None:
        scale = 1.0 / math.sqrt(np.asarray(q).shape[-1])
    positions = np.stack([np.arange(c), np.zeros(c, dtype=int), np.zeros(c, dtype=int)], axis=1)
    rotated = rope_rotate(np.broadcast_to(np.asarray(k, dtype=np.float64), (c, k.shape[-1])), positions, rope)
    terms = np.exp(scale * (rotated @ np.asarray(q, dtype=np.float64)))
    return float(np.sort(terms)[c - m :].sum())


def measure_key_delta(
    seq_full: TokenSequence,
    plan: RunLengthPlan,
    cache: KVCache | None,
    cfg: RecoveryConfig,
    rope: RoPEConfig,
) -> float:
    """Max L2 distance between true keys and their materialized stand-ins.

    ``seq_full`` must contain a token at every covered position; only
    positions the plan materializes are compared.
    """
    kept_idx = _kept_indices(seq_full, plan)
    kept_seq = TokenSequence(
        positions=seq_full.positions[kept_idx],
        embeddings=seq_full.embeddings[kept_idx],
        weights=seq_full.weights,
    )
    exp_pos, _, exp_k, _ = expand_grid(kept_seq, plan, cache, cfg, rope)
    _, true_k, _ = seq_full.project()
    true_k = np.transpose(true_k, (1, 0, 2))
    index = {tuple(p): i for i, p in enumerate(seq_full.positions.tolist())}
    worst = 0.0
    for row, p in enumerate(exp_pos.tolist()):
        i = index.get(tuple(p))
        if i is None:
            continue
        true_rot = rope_rotate(true_k[i], tuple(p), rope)
        worst = max(worst, float(np.linalg.norm(true_rot - exp_k[row])))
    return worst


def _kept_indices(seq_full: TokenSequence, plan: RunLengthPlan) -> np.ndarray:
    keep = []
    owners = {
        (r.owner_frame, y, x)
        for y in range(plan.grid_hw[0])
        for x in range(plan.grid_hw[1])
        for r in plan.runs[y][x]
    }
    for i, p in enumerate(seq_full.positions.tolist()):
        if tuple(p) in owners:
            keep.append(i)
    return np.asarray(keep, dtype=np.int64)


def recovery_error(
    seq_full: TokenSequence,
    mask: KeepMaskSequence,
    cache: KVCache | None,
    cfg: RecoveryConfig,
    rope: RoPEConfig,
    *,
    scale: float | None = None,
) -> RecoveryErrorReport:
    """Compare recovered attention against the exact oracle on the full sequence.

    ``seq_full`` holds the true (possibly noisy) token at every position; the
    mask selects the kept subset the recovery path actually sees. Errors are
    per-query L2 distances at kept positions.
    """
    from .attention import full_sequence_attention

    plan = build_plan(mask)
    kept_idx = _kept_indices(seq_full, plan)
    kept_seq = TokenSequence(
        positions=seq_full.positions[kept_idx],
        embeddings=seq_full.embeddings[kept_idx],
        weights=seq_full.weights,
    )
    oracle = full_sequence_attention(seq_full, rope, causal=True, scale=scale)[kept_idx]
    approx = recovered_attention(kept_seq, plan, cache, cfg, rope, causal=True, scale=scale)
    errs = np.linalg.norm(oracle - approx, axis=1)
    delta = measure_key_delta(seq_full, plan, cache, cfg, rope)
    return RecoveryErrorReport(
        max_error=float(errs.max()),
        mean_error=float(errs.mean()),
        delta=delta,
        n_queries=int(len(kept_idx)),
        m=cfg.m,
        noise_aware=cfg.noise_aware,
    )
