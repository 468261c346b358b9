"""Figures for training traces and noise studies (matplotlib, headless)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .biot import PARAM_NAMES  # noqa: E402

LABELS = {"mu": r"$\mu$", "lambda": r"$\lambda$", "M": r"$M$", "alpha": r"$\alpha$",
          "phi": r"$\phi$", "kappa": r"$\kappa$"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_trace(trace, out_dir) -> dict:
    """Loss, weight and prediction histories for every region."""
    out = Path(out_dir)
    paths = {}
    names = trace.region_names
    epochs = np.arange(trace.epochs)
    R = len(names)

    fig, axes = plt.subplots(1, R, figsize=(5 * R, 3.6), squeeze=False)
    for i, ax in enumerate(axes[0]):
        for k in range(6):
            ax.semilogy(epochs, np.maximum(trace.components[:, i, k], 1e-300), label=f"$\\ell_{k + 1}$")
        ax.set(title=f"{names[i]}: weighted components", xlabel="epoch")
        ax.legend(fontsize=7, ncol=2)
    paths["fig_loss"] = _save(fig, out / "loss.png")

    fig, axes = plt.subplots(1, R, figsize=(5 * R, 3.6), squeeze=False)
    for i, ax in enumerate(axes[0]):
        for k in range(6):
            ax.semilogy(epochs, trace.weights[:, i, k], label=f"$w_{k + 1}$")
        ax.set(title=f"{names[i]}: weights", xlabel="epoch")
        ax.legend(fontsize=7, ncol=2)
    paths["fig_weights"] = _save(fig, out / "weights.png")

    fig, axes = plt.subplots(R, 6, figsize=(15, 2.6 * R), squeeze=False)
    for i in range(R):
        for j, name in enumerate(PARAM_NAMES):
            ax = axes[i, j]
            series = trace.theta[:, i, j]
            if name == "kappa":
                ax.semilogy(epochs, np.abs(series))
            else:
                ax.plot(epochs, series)
            if trace.truth is not None:
                ax.axhline(trace.truth[i, j], color="k", ls="--", lw=0.8)
            ax.set_title(f"{names[i]} {LABELS[name]}", fontsize=9)
            ax.tick_params(labelsize=7)
    paths["fig_params"] = _save(fig, out / "parameters.png")
    return paths


def plot_noise_study(study, out_dir) -> dict:
    out = Path(out_dir)
    names = next(iter(study.traces.values())).region_names
    counts = study.counts
    fig, axes = plt.subplots(1, len(names), figsize=(5 * len(names), 3.6), squeeze=False)
    for i, ax in enumerate(axes[0]):
        for j, name in enumerate(PARAM_NAMES):
            vals = [study.xi[n][i, j] if study.xi[n] is not None else np.nan for n in counts]
            ax.semilogy(counts, vals, "o-", label=LABELS[name])
        ax.set(title=f"{names[i]}: error vs ensemble size", xlabel="$N_T$", ylabel=r"$\Xi$")
        ax.legend(fontsize=7, ncol=2)
    return {"fig_noise": _save(fig, out / "noise_study.png")}

