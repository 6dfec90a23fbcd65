"""Figure rendering for report curves.

Figures are written straight to files (Agg backend, no display); the CSV/JSON
reports remain the canonical outputs and every plot is optional.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_latency_curve(curve, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    xs = np.asarray(curve.fractions)
    ys = np.asarray(curve.mean_s) * 1e3
    err = np.asarray(curve.std_s) * 1e3
    ax.errorbar(xs, ys, yerr=err, fmt="o", capsize=3, label="measured (mean ± std)")
    fit = (curve.slope * xs + curve.intercept) * 1e3
    ax.plot(xs, fit, "--", label=f"linear fit, r={curve.pearson_r:.4f}")
    ax.set_xlabel("kept-token fraction")
    ax.set_ylabel("latency per application [ms]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_compression_sweep(reports, path: str | Path) -> None:
    fig, ax1 = plt.subplots(figsize=(5.5, 3.5))
    thetas = [r.theta for r in reports]
    fracs = [r.compressed_fraction for r in reports]
    mses = [r.fidelity for r in reports]
    ax1.plot(thetas, fracs, "o-", color="tab:blue", label="compressed fraction")
    ax1.set_xlabel(r"threshold $\theta$")
    ax1.set_ylabel("compressed fraction", color="tab:blue")
    ax1.set_ylim(-0.02, 1.02)
    ax2 = ax1.twinx()
    ax2.plot(thetas, mses, "s--", color="tab:red", label="MSE proxy")
    ax2.set_ylabel("latent MSE proxy", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_moment_pair(independent, duplicated, path: str | Path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(7.0, 3.2))
    for ax, rep, title in ((axes[0], independent, "independent"), (axes[1], duplicated, "duplicated")):
        labels = ["mean", "variance"]
        emp = [rep.empirical_mean, rep.empirical_var]
        tgt = [rep.target_mean, rep.target_var]
        x = np.arange(2)
        ax.bar(x - 0.18, emp, width=0.36, label="empirical")
        ax.bar(x + 0.18, tgt, width=0.36, label="target")
        ax.set_xticks(x, labels)
        ax.set_title(title)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_prune_rates(per_frame_rates, overall, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.bar(np.arange(len(per_frame_rates)), per_frame_rates, color="tab:gray")
    ax.axhline(overall, color="tab:red", ls="--", label=f"overall {overall:.3f}")
    ax.set_xlabel("frame")
    ax.set_ylabel("pruned fraction")
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
