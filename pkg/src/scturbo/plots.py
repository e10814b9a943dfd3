"""Render the CSV data products as matplotlib figures (Agg, file output)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_transfer_grid(rows, path):
    """f_s and f_p versus x, one curve per y."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), sharey=True)
    ys = sorted({r["y"] for r in rows})
    for ax, key in zip(axes, ("f_s", "f_p")):
        for y in ys:
            pts = sorted((r["x"], r[key]) for r in rows if r["y"] == y)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=f"y={y:g}")
        ax.set_xlabel("x")
        ax.set_ylabel(key)
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=7)
    return _save(fig, path)


def plot_threshold(rows, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    labels = [f"q={r['q']},m={r['m']}\nlam={r['lambda']:g}" for r in rows]
    vals = [r["eps_bp"] for r in rows]
    ax.bar(range(len(rows)), vals, color="tab:blue")
    ax.set_xticks(range(len(rows)), labels, fontsize=7)
    ax.set_ylabel("BP threshold")
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.4f}", ha="center", va="bottom", fontsize=7)
    return _save(fig, path)


def plot_lambda_scan(rows, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    lam = [r["lambda"] for r in rows]
    eps = [r["eps_bp"] for r in rows]
    ax.plot(lam, eps, ".-", ms=3)
    best = max(eps)
    ax.axhline(best, color="tab:red", lw=0.7, ls="--")
    ax.set_xlabel("repetition ratio")
    ax.set_ylabel("BP threshold")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_potential(rows, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    eps_vals = sorted({r["eps"] for r in rows})
    for e in eps_vals:
        pts = sorted((r["x"], r["U"]) for r in rows if r["eps"] == e)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=f"eps={e:g}")
    ax.axhline(0.0, color="k", lw=0.7)
    ax.set_xlabel("x")
    ax.set_ylabel("potential U(x; eps)")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_exit(rows, path, eps_map=None, rate=None):
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    eps = [r["eps"] for r in rows]
    h = [r["h"] for r in rows]
    ax.plot(eps, h, "-")
    if eps_map is not None:
        ax.axvline(eps_map, color="tab:red", ls="--", lw=0.8,
                   label=f"MAP threshold {eps_map:.4f}")
        ax.legend(fontsize=8)
    ax.set_xlabel("channel erasure probability")
    ax.set_ylabel("BP-EXIT h")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_ber(rows, path, eps_bp=None):
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    eps = np.array([r["eps"] for r in rows])
    ber = np.array([r["ber"] for r in rows])
    lo = np.array([r["ci_low"] for r in rows])
    hi = np.array([r["ci_high"] for r in rows])
    floor = 1e-7
    ax.errorbar(eps, np.maximum(ber, floor),
                yerr=[np.maximum(ber - lo, 0), np.maximum(hi - ber, 0)],
                fmt="o-", ms=4, capsize=3)
    ax.set_yscale("log")
    if eps_bp is not None:
        ax.axvline(eps_bp, color="tab:red", ls="--", lw=0.8,
                   label=f"DE threshold {eps_bp:.4f}")
        ax.legend(fontsize=8)
    ax.set_xlabel("channel erasure probability")
    ax.set_ylabel("bit erasure rate")
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)


def plot_table_report(rows, path):
    fig, ax = plt.subplots(figsize=(6.5, 3.6))
    x = np.arange(len(rows))
    ref = [r["reference"] for r in rows]
    got = [r["computed"] for r in rows]
    ax.plot(x, ref, "s", label="reference", ms=5, mfc="none")
    ax.plot(x, got, "x", label="computed", ms=5)
    ax.set_xticks(x, [r["cell"] for r in rows], rotation=90, fontsize=6)
    ax.set_ylabel("threshold")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)
