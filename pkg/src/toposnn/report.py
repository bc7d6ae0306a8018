"""Delimited output and figure rendering.

All CSV and JSON writers format floats with 17 significant digits and keep
key order fixed, so re-running a command with the same config and seed
reproduces the files byte for byte. Figures are matplotlib SVG/PNG files
written next to the CSVs.
"""

import json
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams["svg.hashsalt"] = "toposnn"

_FIG_KW = {"metadata": {"Date": None}}


def fmt(value):
    """Round-trip-exact text for one cell."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    v = float(value)
    if np.isnan(v):
        return "nan"
    return f"{v:.17g}"


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_manifest(path, payload):
    """Sorted-key JSON manifest with stable float text."""
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in sorted(obj.items())}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, (np.floating, float)):
            return float(fmt(obj)) if not np.isnan(obj) else None
        if isinstance(obj, (np.integer,)):
            return int(obj)
        if isinstance(obj, np.ndarray):
            return [clean(v) for v in obj.tolist()]
        return obj
    Path(path).write_text(
        json.dumps(clean(payload), indent=2, sort_keys=True) + "\n")


def write_training_log(path, history):
    if not history:
        write_csv(path, ["step"], [])
        return
    keys = list(history[0].keys())
    for row in history:
        for k in row:
            if k not in keys:
                keys.append(k)
    rows = [[row.get(k, "") for k in keys] for row in history]
    write_csv(path, keys, rows)


def save_pixel_map(path_stem, image):
    """Image (C,H,W) in [0,1] as both PNG and plain-text PPM."""
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.repeat(img[None], 3, axis=0)
    hwc = np.clip(img.transpose(1, 2, 0), 0, 1)
    plt.imsave(str(path_stem) + ".png", hwc)
    bytes8 = np.round(hwc * 255).astype(int)
    h, w, _ = bytes8.shape
    lines = ["P3", f"{w} {h}", "255"]
    for r in range(h):
        lines.append(" ".join(str(v) for v in bytes8[r].ravel()))
    Path(str(path_stem) + ".ppm").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def _save(fig, path):
    fig.savefig(path, **_FIG_KW)
    plt.close(fig)


def fig_preference_map(pmap, path, title=None):
    fig, ax = plt.subplots(figsize=(5, 4.4))
    ok = pmap.defined
    coords = pmap.sheet.coords
    if pmap.kind == "orientation":
        c = pmap.preference[ok] / np.pi
        cmap, vmax, label = "hsv", 1.0, "preferred orientation / pi"
    else:
        c = pmap.preference[ok]
        cmap, vmax, label = "viridis", None, f"preferred {pmap.kind}"
    sc = ax.scatter(coords[ok, 1], coords[ok, 0], c=c, s=6, cmap=cmap,
                    vmin=0.0 if vmax else None, vmax=vmax)
    ax.scatter(coords[~ok, 1], coords[~ok, 0], c="lightgray", s=4, marker="x")
    ax.set_xlabel("sheet y (mm)")
    ax.set_ylabel("sheet x (mm)")
    ax.set_title(title or f"{pmap.kind} preference map")
    fig.colorbar(sc, ax=ax, label=label)
    _save(fig, path)


def fig_selectivity_map(smap, category, path):
    idx = smap.categories.index(category)
    coords = smap.sheet.coords
    fig, ax = plt.subplots(figsize=(5, 4.4))
    t = smap.t_values[idx]
    lim = max(1e-9, np.abs(t).max())
    sc = ax.scatter(coords[:, 1], coords[:, 0], c=t, s=6, cmap="RdBu_r",
                    vmin=-lim, vmax=lim)
    sig = smap.significant[idx]
    ax.scatter(coords[sig, 1], coords[sig, 0], facecolors="none",
               edgecolors="k", s=14, linewidths=0.4)
    ax.set_xlabel("sheet y (mm)")
    ax.set_ylabel("sheet x (mm)")
    ax.set_title(f"{category} selectivity (t, ringed: t > {smap.t_crit})")
    fig.colorbar(sc, ax=ax, label="Welch t")
    _save(fig, path)


def fig_correlation_distance(centers, means, lo, hi, path, label=None):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ok = ~np.isnan(means)
    ax.plot(centers[ok], means[ok], "o-", label=label)
    ax.fill_between(centers[ok], lo[ok], hi[ok], alpha=0.25)
    ax.set_xlabel("pairwise distance (mm)")
    ax.set_ylabel("firing-rate correlation")
    ax.axhline(0.0, color="gray", lw=0.6)
    if label:
        ax.legend()
    _save(fig, path)


def fig_curves(x, series, path, xlabel, ylabel):
    """One line per named series over common x."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for name, y in series.items():
        ax.plot(x, y, "o-", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    _save(fig, path)


def fig_bars(names, values, path, ylabel):
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.bar(range(len(names)), values)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    _save(fig, path)
