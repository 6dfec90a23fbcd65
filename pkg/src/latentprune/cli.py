"""Command-line surface. One binary, subcommand per task.

Exit codes: 0 success, 2 validation error, 3 failed numerical self-check.
Reports go to stdout unless ``--out`` is given; plots are optional and render
next to the delimited output. Heavy imports happen inside commands so the
``--threads`` cap can be applied to the BLAS pools before numpy loads.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn):
    """Map toolkit exceptions onto exit codes."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        from .errors import NumericalCheckError, ValidationError

        try:
            return fn(*args, **kwargs)
        except NumericalCheckError as exc:
            _fail(3, str(exc))
        except ValidationError as exc:
            _fail(2, str(exc))

    return wrapper


def _parse_patch(text: str):
    from .errors import ValidationError
    from .grids import PatchDims

    parts = text.split(",")
    if len(parts) != 3:
        raise ValidationError(f"patch spec must be t,h,w, got {text!r}")
    return PatchDims(*(int(p) for p in parts))


def _write_or_echo(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text)


@click.group()
@click.option("--threads", type=int, default=None, help="Cap BLAS worker threads.")
def main(threads):
    """Latent temporal-redundancy pruning toolkit."""
    if threads is not None:
        if threads < 1:
            _fail(2, "--threads must be >= 1")
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


@main.command("analyze-corr")
@click.option("--pixel", required=True, type=click.Path(exists=True))
@click.option("--latent", required=True, type=click.Path(exists=True))
@click.option("--patch", default="1,2,2", show_default=True, help="Latent patch t,h,w.")
@click.option("--pixel-patch", default=None, help="Pixel patch t,h,w (defaults to --patch).")
@click.option("--out", default=None, type=click.Path())
@_guard
def analyze_corr(pixel, latent, patch, pixel_patch, out):
    """Pearson correlation between pixel and latent temporal patch deltas."""
    from .grids import LatentGrid, patchify
    from .ltns import read_ltns
    from .redundancy import pixel_latent_correlation, temporal_delta_l1
    from .reports import emit_json

    pixel_grid = LatentGrid(data=read_ltns(pixel))
    latent_grid = LatentGrid(data=read_ltns(latent))
    latent_dims = _parse_patch(patch)
    pixel_dims = _parse_patch(pixel_patch) if pixel_patch else latent_dims
    d_pixel = temporal_delta_l1(patchify(pixel_grid, pixel_dims))
    d_latent = temporal_delta_l1(patchify(latent_grid, latent_dims))
    report = pixel_latent_correlation(d_pixel, d_latent)
    _write_or_echo(emit_json(report, "pearson"), out)


@main.command("compress")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--thetas", required=True, help="Comma-separated ascending thresholds.")
@click.option("--patch", default="1,2,2", show_default=True)
@click.option("--out", default=None, type=click.Path())
@click.option("--out-compressed", default=None, type=click.Path(),
              help="Write the grid compressed at the largest theta as LTNS.")
@click.option("--plot", default=None, type=click.Path(), help="Render the sweep curve to a file.")
@_guard
def compress_cmd(input_path, thetas, patch, out, out_compressed, plot):
    """Threshold sweep of forward-substitution compression."""
    from .grids import LatentGrid, patchify, unpatchify
    from .ltns import read_ltns, write_ltns
    from .redundancy import compress_latents, compression_sweep
    from .reports import emit_json

    grid = LatentGrid(data=read_ltns(input_path))
    patches = patchify(grid, _parse_patch(patch))
    ths = [float(v) for v in thetas.split(",")]
    reports = compression_sweep(patches, ths)
    _write_or_echo(emit_json(reports, "compression-sweep"), out)
    if out_compressed:
        compressed, _ = compress_latents(patches, ths[-1])
        write_ltns(out_compressed, unpatchify(compressed).data)
    if plot:
        from .plots import render_compression_sweep

        render_compression_sweep(reports, plot)


@main.command("prune")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--tau1", default=0.15, show_default=True, type=float)
@click.option("--tau2", default=0.3, show_default=True, type=float)
@click.option("--block-size", default=3, show_default=True, type=int)
@click.option("--patch", default="1,2,2", show_default=True)
@click.option("--out-mask", default=None, type=click.Path(), help="Keep mask LTNS (u8).")
@click.option("--out-kept", default=None, type=click.Path(), help="Kept patch vectors LTNS.")
@click.option("--stats", "stats_path", default=None, type=click.Path())
@click.option("--emit-stages", default=None, type=click.Path(), help="Directory for stage dumps.")
@click.option("--plot", default=None, type=click.Path(), help="Render per-frame prune rates.")
@_guard
def prune_cmd(input_path, tau1, tau2, block_size, patch, out_mask, out_kept, stats_path,
              emit_stages, plot):
    """Build the inter-frame keep mask and report prune rates."""
    from .grids import LatentGrid, PruneConfig, patchify
    from .ltns import read_ltns, write_ltns
    from .pruning import lif_prune, per_frame_prune_rate, prune_rate
    from .reports import emit_json
    from .restoration import extract_kept

    grid = LatentGrid(data=read_ltns(input_path))
    cfg = PruneConfig(tau1=tau1, tau2=tau2, block_size=block_size, patch_dims=_parse_patch(patch))
    patches = patchify(grid, cfg.patch_dims)
    if emit_stages:
        mask, stages = lif_prune(patches, cfg, collect_stages=True)
        stage_dir = Path(emit_stages)
        stage_dir.mkdir(parents=True, exist_ok=True)
        for i, st in enumerate(stages):
            write_ltns(stage_dir / f"{i:02d}_{st.name}.ltns", st.data)
    else:
        mask = lif_prune(patches, cfg)
    if out_mask:
        write_ltns(out_mask, mask.data)
    if out_kept:
        write_ltns(out_kept, extract_kept(patches, mask).kept_patches)
    rates = per_frame_prune_rate(mask)
    stats = {
        "prune_rate": prune_rate(mask),
        "per_frame": rates.tolist(),
        "n_kept": mask.n_kept,
        "n_total": int(mask.data.size),
    }
    _write_or_echo(emit_json(stats, "prune-stats"), stats_path)
    if plot:
        from .plots import render_prune_rates

        render_prune_rates(rates, prune_rate(mask), plot)


@main.command("restore")
@click.option("--kept", required=True, type=click.Path(exists=True))
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True))
@click.option("--patch", default="1,2,2", show_default=True)
@click.option("--out", required=True, type=click.Path())
@_guard
def restore_cmd(kept, mask_path, patch, out):
    """Rebuild a full grid from kept patches by temporal forward-fill."""
    from .errors import ValidationError
    from .grids import KeepMaskSequence, PatchDims, unpatchify
    from .ltns import read_ltns, write_ltns
    from .restoration import PrunedPatchSet, restore

    kept_patches = read_ltns(kept)
    mask = KeepMaskSequence(data=read_ltns(mask_path).astype(bool))
    dims: PatchDims = _parse_patch(patch)
    per_patch = dims.pt * dims.ph * dims.pw
    if kept_patches.ndim != 2 or kept_patches.shape[1] % per_patch:
        raise ValidationError("kept patch vectors do not match the patch extents")
    channels = kept_patches.shape[1] // per_patch
    pruned = PrunedPatchSet(mask=mask, kept_patches=kept_patches, patch_dims=dims, channels=channels)
    write_ltns(out, unpatchify(restore(pruned)).data)


@main.command("recover-bench")
@click.option("--tokens", default=1024, show_default=True, type=int, help="Total token count.")
@click.option("--frames", default=16, show_default=True, type=int)
@click.option("--dim", default=64, show_default=True, type=int)
@click.option("--heads", default=4, show_default=True, type=int)
@click.option("--prune-pattern", default="random:0.3", show_default=True)
@click.option("--m", "m_degree", default="all", show_default=True)
@click.option("--noise-aware/--naive", default=True, show_default=True)
@click.option("--drift", default=0.0, show_default=True, type=float,
              help="Temporal drift scale (controls the key-approximation error).")
@click.option("--noise-sigma", default=0.0, show_default=True, type=float)
@click.option("--cache-stride", default=1, show_default=True, type=int,
              help="Cache only every k-th clean frame; larger strides force "
                   "duplicates to rotate from more distant sources.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--check-max-error", default=None, type=float,
              help="Exit 3 if max per-query error exceeds this bound.")
@click.option("--out", default=None, type=click.Path())
@_guard
def recover_bench(tokens, frames, dim, heads, prune_pattern, m_degree, noise_aware,
                  drift, noise_sigma, cache_stride, seed, check_max_error, out):
    """Recovered attention vs the exact oracle on a synthetic sequence."""
    import math

    from .errors import NumericalCheckError, ValidationError
    from .fixtures import pattern_mask, token_fixture
    from .attention import RoPEConfig
    from .recovery import RecoveryConfig, recovery_error
    from .reports import emit_json

    if tokens % frames:
        raise ValidationError(f"tokens {tokens} not divisible by frames {frames}")
    per_frame = tokens // frames
    hp = int(math.isqrt(per_frame))
    if hp * hp != per_frame:
        raise ValidationError(f"tokens per frame ({per_frame}) must be a perfect square")
    if cache_stride < 1:
        raise ValidationError(f"--cache-stride must be >= 1, got {cache_stride}")
    m = None if m_degree == "all" else int(m_degree)
    seq, cache = token_fixture(frames, hp, hp, dim, heads,
                               drift=drift, noise_sigma=noise_sigma, seed=seed,
                               cache_frames=list(range(0, frames, cache_stride)))
    mask = pattern_mask(frames, hp, hp, prune_pattern, seed=seed)
    report = recovery_error(seq, mask, cache, RecoveryConfig(m=m, noise_aware=noise_aware),
                            RoPEConfig())
    _write_or_echo(emit_json(report, "recovery-error"), out)
    if check_max_error is not None and report.max_error > check_max_error:
        raise NumericalCheckError(
            f"max recovery error {report.max_error:.3e} exceeds bound {check_max_error:.3e}"
        )


@main.command("noise-stats")
@click.option("--dim", default=256, show_default=True, type=int)
@click.option("--samples", default=100_000, show_default=True, type=int)
@click.option("--w", "w_kind", default="identity", show_default=True,
              help="identity, random, or a square-matrix LTNS file.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--check-tolerance", default=None, type=float,
              help="Exit 3 if relative moment deviations exceed this value.")
@click.option("--out", default=None, type=click.Path())
@click.option("--plot", default=None, type=click.Path())
@_guard
def noise_stats(dim, samples, w_kind, seed, check_tolerance, out, plot):
    """Monte-Carlo moments of the score noise term, independent vs duplicated."""
    import numpy as np

    from .errors import NumericalCheckError, ValidationError
    from .ltns import read_ltns
    from .noisestats import NoiseModel, quadratic_form_moments
    from .reports import emit_json

    if w_kind == "identity":
        w = None
    elif w_kind == "random":
        w = np.random.default_rng([seed, 31]).standard_normal((dim, dim))
    else:
        w = read_ltns(w_kind).astype(np.float64)
        if w.shape != (dim, dim):
            raise ValidationError(f"W file has shape {w.shape}, expected ({dim}, {dim})")
    model = NoiseModel(dim=dim, w=w, n_samples=samples, seed=seed)
    indep = quadratic_form_moments(model, duplicated=False)
    dup = quadratic_form_moments(model, duplicated=True)
    _write_or_echo(emit_json({"independent": indep, "duplicated": dup}, "noise-moments"), out)
    if plot:
        from .plots import render_moment_pair

        render_moment_pair(indep, dup, plot)
    if check_tolerance is not None:
        for rep in (indep, dup):
            scale = max(abs(rep.target_mean), abs(rep.target_var), 1.0)
            if rep.var_deviation > check_tolerance * max(abs(rep.target_var), 1.0) or \
               rep.mean_deviation > check_tolerance * scale:
                raise NumericalCheckError("moment deviation exceeds the requested tolerance")


@main.command("pipeline")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--stats", "stats_path", default=None, type=click.Path())
@_guard
def pipeline_cmd(input_path, config_path, out, stats_path):
    """Prune, denoise with recovery, restore; emit the restored grid and stats."""
    from .grids import LatentGrid
    from .ltns import read_ltns, write_ltns
    from .pipeline import run_pipeline
    from .reports import emit_json

    cfg = load_run_config(json.loads(Path(config_path).read_text()))
    grid = LatentGrid(data=read_ltns(input_path))
    out_grid, stats = run_pipeline(
        grid, cfg["prune"], cfg["denoiser"], cfg["recovery"],
        noise_seed=cfg["noise_seed"], compute_gap=cfg["compute_gap"],
        compare_baseline=cfg["compare_baseline"],
    )
    write_ltns(out, out_grid.data)
    _write_or_echo(emit_json(stats, "pipeline-stats"), stats_path)


@main.command("latency-sweep")
@click.option("--blocks", default=12, show_default=True, type=int)
@click.option("--tokens", default=4096, show_default=True, type=int)
@click.option("--dim", default=64, show_default=True, type=int)
@click.option("--heads", default=4, show_default=True, type=int)
@click.option("--fractions", default="0.2:1.0:5", show_default=True,
              help="start:stop:count or comma-separated list.")
@click.option("--runs", default=10, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out-csv", default=None, type=click.Path())
@click.option("--out", default=None, type=click.Path(), help="JSON curve report.")
@click.option("--plot", default=None, type=click.Path())
@click.option("--check-min-r", default=None, type=float,
              help="Exit 3 if the linear-fit Pearson r falls below this value.")
@_guard
def latency_sweep_cmd(blocks, tokens, dim, heads, fractions, runs, seed,
                      out_csv, out, plot, check_min_r):
    """Latency of the recovered denoiser across kept-token fractions."""
    from .attention import RoPEConfig
    from .errors import NumericalCheckError
    from .pipeline import ToyDenoiserConfig, latency_sweep
    from .reports import emit_json, latency_curve_csv

    frs = _parse_fractions(fractions)
    cfg = ToyDenoiserConfig(n_blocks=blocks, model_dim=dim, n_heads=heads,
                            rope=RoPEConfig(), seed=seed)
    curve = latency_sweep(cfg, tokens, frs, runs=runs, seed=seed)
    csv_text = latency_curve_csv(curve)
    if out_csv:
        Path(out_csv).write_text(csv_text)
    else:
        click.echo(csv_text, nl=False)
    _write_or_echo(emit_json(curve, "latency-curve"), out)
    if plot:
        from .plots import render_latency_curve

        render_latency_curve(curve, plot)
    if check_min_r is not None and curve.pearson_r < check_min_r:
        raise NumericalCheckError(
            f"latency linearity r={curve.pearson_r:.5f} below required {check_min_r}"
        )


@main.command("synth")
@click.option("--kind", required=True, type=str)
@click.option("--dims", required=True, help="T,H,W,C")
@click.option("--patch", default="1,2,2", show_default=True)
@click.option("--value", default=4.0, show_default=True, type=float)
@click.option("--square-size", default=2, show_default=True, type=int)
@click.option("--noise-sigma", default=0.0, show_default=True, type=float)
@click.option("--slope", default=0.8, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", default=None, type=click.Path(), help="Output LTNS (single-grid kinds).")
@click.option("--out-pixel", default=None, type=click.Path())
@click.option("--out-latent", default=None, type=click.Path())
@_guard
def synth_cmd(kind, dims, patch, value, square_size, noise_sigma, slope, seed,
              out, out_pixel, out_latent):
    """Generate a synthetic fixture grid (or pair) as LTNS."""
    from .errors import ValidationError
    from .fixtures import FixtureSpec, synth_fixture
    from .ltns import write_ltns

    parts = [int(v) for v in dims.split(",")]
    if len(parts) != 4:
        raise ValidationError(f"dims must be T,H,W,C, got {dims!r}")
    spec = FixtureSpec(kind=kind, frames=parts[0], height=parts[1], width=parts[2],
                       channels=parts[3], patch_dims=_parse_patch(patch), value=value,
                       square_size=square_size, noise_sigma=noise_sigma, slope=slope, seed=seed)
    result = synth_fixture(spec)
    if isinstance(result, tuple):
        if not (out_pixel and out_latent):
            raise ValidationError("pair fixtures need --out-pixel and --out-latent")
        write_ltns(out_pixel, result[0].data)
        write_ltns(out_latent, result[1].data)
    else:
        if not out:
            raise ValidationError("single-grid fixtures need --out")
        write_ltns(out, result.data)


def _parse_fractions(text: str) -> list[float]:
    from .errors import ValidationError

    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError(f"fraction range must be start:stop:count, got {text!r}")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 2:
            raise ValidationError("fraction range needs at least 2 points")
        step = (stop - start) / (count - 1)
        return [start + i * step for i in range(count)]
    return [float(v) for v in text.split(",")]


_CONFIG_KEYS = {
    "seed", "noise_seed", "compute_gap", "compare_baseline",
    "prune", "denoiser", "rope", "recovery",
}
_PRUNE_KEYS = {"tau1", "tau2", "block_size", "patch", "gaussian_extent", "gaussian_sigma",
               "median_extent", "morph_extent", "dilation_extent", "dilation_iterations"}
_DENOISER_KEYS = {"n_blocks", "model_dim", "n_heads", "mlp_hidden", "n_denoise_steps",
                  "noise_level", "cache_window", "seed"}
_ROPE_KEYS = {"base", "rotated_dims", "axes"}
_RECOVERY_KEYS = {"enabled", "m", "noise_aware"}


def load_run_config(doc: dict) -> dict:
    """Strictly parse the pipeline run configuration document.

    Unknown keys are rejected at every level. Defaults: tau1 0.15, tau2 0.3,
    cache window 6, 4 denoising steps, full duplication, noise-aware on.
    """
    from .attention import RoPEConfig
    from .errors import ValidationError
    from .grids import PatchDims, PruneConfig
    from .pipeline import ToyDenoiserConfig
    from .recovery import RecoveryConfig

    def check_keys(section: dict, allowed: set, where: str):
        unknown = set(section) - allowed
        if unknown:
            raise ValidationError(f"unknown {where} config keys: {sorted(unknown)}")

    if not isinstance(doc, dict):
        raise ValidationError("run config must be a JSON object")
    check_keys(doc, _CONFIG_KEYS, "top-level")
    seed = int(doc.get("seed", 0))

    prune_doc = dict(doc.get("prune", {}))
    check_keys(prune_doc, _PRUNE_KEYS, "prune")
    patch = prune_doc.pop("patch", [1, 2, 2])
    prune_cfg = PruneConfig(patch_dims=PatchDims(*patch), **prune_doc)

    rope_doc = dict(doc.get("rope", {}))
    check_keys(rope_doc, _ROPE_KEYS, "rope")
    rope = RoPEConfig(**rope_doc)

    den_doc = dict(doc.get("denoiser", {}))
    check_keys(den_doc, _DENOISER_KEYS, "denoiser")
    den_doc.setdefault("seed", seed)
    denoiser_cfg = ToyDenoiserConfig(rope=rope, **den_doc)

    rec_doc = dict(doc.get("recovery", {}))
    check_keys(rec_doc, _RECOVERY_KEYS, "recovery")
    enabled = bool(rec_doc.get("enabled", True))
    m = rec_doc.get("m", "all")
    recovery = None
    if enabled:
        recovery = RecoveryConfig(
            m=None if m in ("all", None) else int(m),
            noise_aware=bool(rec_doc.get("noise_aware", True)),
        )
    return {
        "prune": prune_cfg,
        "denoiser": denoiser_cfg,
        "recovery": recovery,
        "noise_seed": int(doc.get("noise_seed", seed)),
        "compute_gap": bool(doc.get("compute_gap", False)),
        "compare_baseline": bool(doc.get("compare_baseline", False)),
    }


if __name__ == "__main__":
    main()
