"""Monte-Carlo checks of how duplication changes i.i.d.-noise statistics.

Two effects are quantified. First, the bilinear score term eps_i' W eps_j:
with independent noise it is asymptotically N(0, ||W||_F^2); when the same
noise vector appears on both sides (a duplicated token) it becomes a weighted
chi-square with mean Tr(W) and variance 2 Tr(W_sym^2), W_sym = (W + W')/2.
Second, aggregated value noise: summing n independent noise vectors scales
per-coordinate variance like O(n), while summing one duplicated vector n
times scales like O(n^2).

Sampling uses numpy's PCG64 generator, sharded with deterministic per-shard
seed sequences and merged in a fixed order, so every report is bit
reproducible for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_SHARD = 20_000


@dataclass(frozen=True)
class NoiseModel:
    """Noise dimensionality, score matrix W, and sampling budget."""

    dim: int
    w: np.ndarray | None = None  # None -> identity
    n_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError(f"dim must be >= 1, got {self.dim}")
        if self.n_samples < 1_000:
            raise ValidationError(f"n_samples must be >= 1000, got {self.n_samples}")
        if self.w is not None:
            w = np.asarray(self.w, dtype=np.float64)
            if w.shape != (self.dim, self.dim):
                raise ValidationError(f"W must be ({self.dim}, {self.dim}), got {w.shape}")
            object.__setattr__(self, "w", w)

    def matrix(self) -> np.ndarray:
        return np.eye(self.dim) if self.w is None else self.w


@dataclass(frozen=True)
class MomentReport:
    empirical_mean: float
    empirical_var: float
    target_mean: float
    target_var: float
    mean_deviation: float  # |empirical - target|, absolute
    var_deviation: float
    mean_stderr: float  # estimator standard error of the mean
    n_samples: int
    duplicated: bool


def _score_targets(w: np.ndarray, duplicated: bool) -> tuple[float, float]:
    if duplicated:
        w_sym = 0.5 * (w + w.T)
        return float(np.trace(w)), float(2.0 * np.trace(w_sym @ w_sym))
    return 0.0, float(np.sum(w * w))


def quadratic_form_moments(model: NoiseModel, duplicated: bool) -> MomentReport:
    """Sample eps_i' W eps_j and compare moments with the analytic targets.

    ``duplicated`` reuses the same noise draw on both sides; otherwise the
    draws are independent.
    """
    w = model.matrix()
    n = model.n_samples
    total = 0.0
    total_sq = 0.0
    done = 0
    shard = 0
    while done < n:
        take = min(_SHARD, n - done)
        rng = np.random.default_rng([model.seed, 11, shard])
        eps_i = rng.standard_normal((take, model.dim))
        eps_j = eps_i if duplicated else rng.standard_normal((take, model.dim))
        s = ((eps_i @ w) * eps_j).sum(axis=1)
        total += float(s.sum())
        total_sq += float((s * s).sum())
        done += take
        shard += 1
    mean = total / n
    var = (total_sq - n * mean * mean) / (n - 1)
    t_mean, t_var = _score_targets(w, duplicated)
    return MomentReport(
        empirical_mean=mean,
        empirical_var=var,
        target_mean=t_mean,
        target_var=t_var,
        mean_deviation=abs(mean - t_mean),
        var_deviation=abs(var - t_var),
        mean_stderr=float(np.sqrt(max(var, 0.0) / n)),
        n_samples=n,
        duplicated=duplicated,
    )


def aggregation_variance(model: NoiseModel, n: int, duplicated: bool) -> MomentReport:
    """Per-coordinate variance of the summed value noise over n tokens.

    Independent: W sum_j eps_j, variance growing O(n). Duplicated: n W eps,
    variance growing O(n^2). Empirical variance is averaged over coordinates;
    the target uses mean_d (W W')_dd.
    """
    if n < 1:
        raise ValidationError(f"token count must be >= 1, got {n}")
    w = model.matrix()
    diag_mean = float(np.mean(np.einsum("ij,ij->i", w, w)))
    samples = model.n_samples
    coord_sum = np.zeros(model.dim)
    coord_sq = np.zeros(model.dim)
    done = 0
    shard = 0
    while done < samples:
        take = min(_SHARD, samples - done)
        # the shard seed excludes the duplicated flag so the n = 1 case is
        # bit-identical in both modes (a single term has nothing to duplicate)
        rng = np.random.default_rng([model.seed, 13, n, shard])
        if duplicated:
            agg = n * rng.standard_normal((take, model.dim)) @ w.T
        else:
            summed = np.zeros((take, model.dim))
            for _ in range(n):
                summed += rng.standard_normal((take, model.dim))
            agg = summed @ w.T
        coord_sum += agg.sum(axis=0)
        coord_sq += (agg * agg).sum(axis=0)
        done += take
        shard += 1
    mean_c = coord_sum / samples
    var_c = (coord_sq - samples * mean_c * mean_c) / (samples - 1)
    var = float(var_c.mean())
    target = (n * n if duplicated else n) * diag_mean
    return MomentReport(
        empirical_mean=float(mean_c.mean()),
        empirical_var=var,
        target_mean=0.0,
        target_var=target,
        mean_deviation=abs(float(mean_c.mean())),
        var_deviation=abs(var - target),
        mean_stderr=float(np.sqrt(var / samples)),
        n_samples=samples,
        duplicated=duplicated,
    )


@dataclass(frozen=True)
class AggregationSweep:
    token_counts: list[int]
    variances: list[float]
    fitted_exponent: float
    duplicated: bool


def aggregation_sweep(model: NoiseModel, token_counts: list[int], duplicated: bool) -> AggregationSweep:
    """Fit the variance growth exponent over a sweep of token counts."""
    ns = [int(v) for v in token_counts]
    if len(ns) < 2:
        raise ValidationError("need at least two token counts to fit an exponent")
    if any(v < 1 for v in ns):
        raise ValidationError("token counts must be >= 1")
    variances = [aggregation_variance(model, n, duplicated).empirical_var for n in ns]
    slope, _ = np.polyfit(np.log(np.asarray(ns, dtype=float)), np.log(np.asarray(variances)), 1)
    return AggregationSweep(
        token_counts=ns,
        variances=variances,
        fitted_exponent=float(slope),
        duplicated=duplicated,
    )
