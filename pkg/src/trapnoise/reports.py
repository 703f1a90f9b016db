"""Delimited output and figure rendering for batch runs.

CSV is the canonical, deterministic artifact: header row, '.' decimal,
scientific notation with 17 significant digits, bodies byte-identical across
reruns of the same (config, seed).  Figures are rendered next to each CSV as
PNG via the Agg backend; they are a convenience view, never an input.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from . import __version__  # noqa: E402


def format_value(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    return f"{v:.16e}"


def write_csv(path: Path, header: list[str], rows) -> None:
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_metadata(path: Path, payload: dict) -> None:
    payload = dict(payload)
    payload.setdefault("tool_version", __version__)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True,
                                     default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def render_curves(path: Path, x, series: dict, xlabel: str, ylabel: str,
                  logy: bool = False, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, y in series.items():
        y = np.asarray(y, dtype=float)
        mask = np.isfinite(y)
        if not mask.any():
            continue
        ax.plot(np.asarray(x)[mask], y[mask], label=label, lw=1.4)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if series:
        ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_band(path: Path, x, mean, stderr, xlabel: str, ylabel: str,
                title: str = "", reference=None, reference_label: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    mean = np.asarray(mean, float)
    stderr = np.asarray(stderr, float)
    ax.plot(x, mean, lw=1.4, label="ensemble mean")
    ax.fill_between(x, mean - 3 * stderr, mean + 3 * stderr, alpha=0.25,
                    label="3 standard errors")
    if reference is not None:
        ax.plot(x, reference, "k--", lw=1.0, label=reference_label or "reference")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_surface(path: Path, alpha2_vals, eps2_vals, grids: dict,
                   title: str = "") -> None:
    """Heatmaps of fidelity over the (|alpha|^2, |eps|^2) grid, one panel per
    series (analytic, Monte Carlo, ...)."""
    panels = [(label, g) for label, g in grids.items()
              if np.isfinite(np.asarray(g, float)).any()]
    if not panels:
        return
    fig, axes = plt.subplots(1, len(panels), figsize=(4.6 * len(panels), 4.0),
                             squeeze=False)
    vmin = min(float(np.nanmin(np.asarray(g, float))) for _, g in panels)
    vmax = max(float(np.nanmax(np.asarray(g, float))) for _, g in panels)
    for ax, (label, grid) in zip(axes[0], panels):
        im = ax.imshow(np.asarray(grid, float), origin="lower", aspect="auto",
                       extent=(min(eps2_vals), max(eps2_vals),
                               min(alpha2_vals), max(alpha2_vals)),
                       vmin=vmin, vmax=vmax, cmap="viridis")
        ax.set_xlabel("excited vibrational population")
        ax.set_ylabel("ground electronic population")
        ax.set_title(label, fontsize=10)
        fig.colorbar(im, ax=ax, shrink=0.85)
    if title:
        fig.suptitle(title, fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
