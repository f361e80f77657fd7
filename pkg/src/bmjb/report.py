"""Deterministic report emission: CSV tables, SVG figures, manifests.

Numbers are written with 17 significant digits so every double survives a
round trip through the table.  Figures pin the SVG hash salt and drop the
date stamp, making reruns byte-identical; any rendering failure degrades
to tables-only with a warning on stderr, never a nonzero exit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys

import numpy as np


def fmt(value) -> str:
    """One CSV cell: shortest exact form for floats, str() otherwise."""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows) -> str:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return str(path)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(command: str, resolved: dict) -> str:
    """Hash of the semantic inputs only; formatting and machinery excluded."""
    blob = json.dumps({"command": command, "config": resolved},
                      sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()


def write_manifest(path, payload: dict) -> str:
    files = payload.get("files", {})
    digest = hashlib.sha256(
        json.dumps(files, sort_keys=True).encode()).hexdigest()
    payload = dict(payload, bundle_hash=digest)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return str(path)


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

_RC = {"svg.hashsalt": "bmjb", "svg.fonttype": "path"}


def _render(path, draw, xlabel, ylabel, logy=False):
    try:
        import matplotlib
        matplotlib.use("Agg", force=True)
        import matplotlib.pyplot as plt

        with matplotlib.rc_context(_RC):
            fig, ax = plt.subplots(figsize=(6.4, 4.0))
            draw(ax)
            if logy:
                ax.set_yscale("log")
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            if ax.get_legend_handles_labels()[0]:
                ax.legend(frameon=False)
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
    except Exception as exc:                      # degrade, never fail the run
        print(f"warning: skipped figure {path}: {exc}", file=sys.stderr)
        return None
    return str(path)


def density_figure(path, y, curves, sample=None, bins=60):
    """Density curves, optionally over a normalized sample histogram."""
    def draw(ax):
        if sample is not None:
            ax.hist(np.asarray(sample), bins=bins, density=True,
                    color="0.8", label="simulated")
        for label, values in curves:
            ax.plot(y, values, label=label)
    return _render(path, draw, "position", "density")


def log_survival_figure(path, t, curves):
    def draw(ax):
        for label, values in curves:
            v = np.asarray(values, dtype=float)
            ax.plot(t, np.where(v > 0, v, np.nan), label=label)
    return _render(path, draw, "t", "survival", logy=True)


def gap_sweep_figure(path, params, gaps, limit):
    def draw(ax):
        ax.plot(params, gaps, marker="o", label="gap")
        ax.axhline(limit, color="0.4", ls="--", label="limit")
    return _render(path, draw, "refinement parameter", "spectral gap")


def spectrum_figure(path, eigenvalues):
    def draw(ax):
        re = [lam.real for lam, _ in eigenvalues]
        im = [lam.imag for lam, _ in eigenvalues]
        size = [24.0 * m for _, m in eigenvalues]
        ax.scatter(re, im, s=size)
        ax.axhline(0.0, color="0.85", lw=0.8, zorder=0)
    return _render(path, draw, "Re", "Im")


def renewal_figure(path, t, z, limit):
    def draw(ax):
        ax.plot(t, z, label="Z(t)")
        ax.axhline(limit, color="0.4", ls="--", label="stationary limit")
    return _render(path, draw, "t", "Z")


def tv_decay_figure(path, t, tv, rate=None):
    def draw(ax):
        t_arr = np.asarray(t, dtype=float)
        tv_arr = np.asarray(tv, dtype=float)
        ax.plot(t_arr, tv_arr, marker="o", label="TV")
        if rate is not None and np.all(tv_arr > 0):
            # anchor the fitted slope at the first point
            ax.plot(t_arr, tv_arr[0] * np.exp(-rate * (t_arr - t_arr[0])),
                    ls="--", color="0.4", label=f"rate {rate:.4g}")
    return _render(path, draw, "t", "total variation", logy=True)
