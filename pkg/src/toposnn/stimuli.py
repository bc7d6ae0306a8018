"""Probe stimuli: sine gratings, synthetic category sets, training data.

All generators are pure functions of their parameters plus a seed and emit
float64 images in [0, 1], channel-first.
"""

from dataclasses import dataclass

import numpy as np

from toposnn.rng import named_rng

HUE_WEIGHTS = {
    "achromatic": np.array([1.0, 1.0, 1.0]),
    "red-green": np.array([1.0, -1.0, 0.0]),
}

CATEGORY_NAMES = ("faces-proxy", "places-proxy", "characters-proxy",
                  "bodies-proxy", "objects-proxy")


@dataclass(frozen=True)
class GratingSpec:
    orientation: float          # radians, [0, pi)
    frequency: float            # cycles per image
    phase: float = 0.0          # radians
    hue: str = "achromatic"
    size: int = 32
    channels: int = 3

    def __post_init__(self):
        if self.frequency <= 0:
            raise ValueError("spatial frequency must be positive")
        if self.hue not in HUE_WEIGHTS:
            raise ValueError(f"unknown hue {self.hue!r}")


def make_grating(spec):
    """Render a sine grating: 0.5 + 0.5 sin(2 pi f (x cos + y sin)/size + phi).

    x indexes rows, y columns; orientation 0 varies along x (horizontal
    stripe pattern constant within each row's y direction is the convention
    documented in the README). Hue weighting modulates around mid-gray per
    channel; output is clamped to [0, 1].
    """
    s = spec.size
    x, y = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    arg = 2.0 * np.pi * spec.frequency * (
        x * np.cos(spec.orientation) + y * np.sin(spec.orientation)) / s
    mono = 0.5 + 0.5 * np.sin(arg + spec.phase)
    w = HUE_WEIGHTS[spec.hue][:spec.channels]
    img = 0.5 + (mono - 0.5)[None, :, :] * w[:, None, None]
    return np.clip(img, 0.0, 1.0)


def grating_battery(n_orient=8, n_freq=4, n_phase=4, hues=1,
                    size=32, channels=3, f_min=1.0, f_max=8.0):
    """Cartesian battery of grating specs, orientation-major ordering.

    Orientations are evenly spaced over [0, pi), frequencies log-spaced in
    [f_min, f_max], phases evenly spaced over [0, 2 pi).
    """
    if min(n_orient, n_freq, n_phase, hues) < 1:
        raise ValueError("battery counts must be >= 1")
    orients = np.arange(n_orient) * np.pi / n_orient
    freqs = np.geomspace(f_min, f_max, n_freq) if n_freq > 1 else \
        np.array([f_min])
    phases = np.arange(n_phase) * 2.0 * np.pi / n_phase
    hue_names = list(HUE_WEIGHTS)[:hues]
    battery = []
    for th in orients:
        for f in freqs:
            for ph in phases:
                for hue in hue_names:
                    battery.append(GratingSpec(float(th), float(f), float(ph),
                                               hue, size, channels))
    return battery


def render_battery(battery):
    """Stacked images (n_specs, C, size, size) for a battery."""
    return np.stack([make_grating(s) for s in battery])


# ---------------------------------------------------------------------------
# Synthetic category stimuli (stand-ins for localizer image sets)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CategoryStimulusSet:
    category: str
    images: np.ndarray       # (n, C, size, size)
    seed: int


def _canvas(size):
    return np.zeros((size, size))


def _disk(img, cx, cy, r, value=1.0):
    s = img.shape[0]
    x, y = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
    img[(x - cx) ** 2 + (y - cy) ** 2 <= r * r] = value


def _faces(rng, size):
    img = _canvas(size)
    c = size / 2
    _disk(img, c, c, size * 0.38, 0.8)                       # head
    eye_dx = size * rng.uniform(0.12, 0.18)
    eye_dy = size * rng.uniform(0.10, 0.16)
    _disk(img, c - eye_dy, c - eye_dx, size * 0.05, 0.1)
    _disk(img, c - eye_dy, c + eye_dx, size * 0.05, 0.1)
    _disk(img, c + size * 0.18, c, size * rng.uniform(0.05, 0.1), 0.3)  # mouth
    return img


def _places(rng, size):
    img = _canvas(size)
    horizon = int(size * rng.uniform(0.4, 0.6))
    img[horizon:, :] = 0.35
    for _ in range(rng.integers(2, 5)):                       # buildings
        x0 = rng.integers(0, size - 6)
        wdt = rng.integers(3, 8)
        hgt = rng.integers(size // 4, horizon + 1)
        img[horizon - hgt:horizon, x0:x0 + wdt] = 0.8
    return img


def _characters(rng, size):
    img = _canvas(size)
    # strokes snap to a 3x3 glyph grid (like segments of a letterform) so
    # exemplars share pixel support and stay linearly identifiable
    grid = [size // 4, size // 2, 3 * size // 4]
    lo, hi = size // 4, 3 * size // 4
    for _ in range(rng.integers(3, 6)):                       # strokes
        pos = grid[rng.integers(0, 3)]
        if rng.random() < 0.5:
            img[pos, lo:hi + 1] = 1.0
        else:
            img[lo:hi + 1, pos] = 1.0
    return img


def _bodies(rng, size):
    img = _canvas(size)
    x, y = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    for _ in range(rng.integers(2, 4)):                       # elongated limbs
        # limbs radiate from the body midline so the canvas center is always
        # covered -- keeps the category consistent across exemplars
        cx, cy = rng.uniform(size * 0.45, size * 0.55, size=2)
        th = rng.uniform(0, np.pi)
        u = (x - cx) * np.cos(th) + (y - cy) * np.sin(th)
        v = -(x - cx) * np.sin(th) + (y - cy) * np.cos(th)
        img[(u / (size * 0.35)) ** 2 + (v / (size * 0.06)) ** 2 <= 1.0] = 0.7
    return img


def _objects(rng, size):
    img = _canvas(size)
    for _ in range(rng.integers(2, 5)):                       # generic blobs
        cx, cy = rng.uniform(size * 0.2, size * 0.8, size=2)
        # mid-gray blobs: distinct from characters-proxy strokes (value 1.0)
        # and bodies-proxy limbs (0.7, center-anchored)
        _disk(img, cx, cy, size * rng.uniform(0.06, 0.16),
              rng.uniform(0.4, 0.55))
    return img


_GENERATORS = {
    "faces-proxy": _faces, "places-proxy": _places,
    "characters-proxy": _characters, "bodies-proxy": _bodies,
    "objects-proxy": _objects,
}


def make_category_sets(seed, n_exemplars=32, size=32, channels=3):
    """Five procedurally drawn categories, n_exemplars each, seeded."""
    sets = []
    for cat in CATEGORY_NAMES:
        rng = named_rng(seed, f"category:{cat}")
        imgs = []
        for _ in range(n_exemplars):
            gray = _GENERATORS[cat](rng, size)
            gray = np.clip(gray + rng.normal(0, 0.03, gray.shape), 0, 1)
            imgs.append(np.repeat(gray[None], channels, axis=0))
        sets.append(CategoryStimulusSet(cat, np.stack(imgs), seed))
    return sets


# ---------------------------------------------------------------------------
# Synthetic classification task (4 orientation classes)
# ---------------------------------------------------------------------------

def make_orientation_dataset(n_per_class=75, size=32, channels=3, seed=0,
                             n_classes=4, noise=0.10):
    """Noisy gratings whose class is the orientation bin.

    The intended training task at desk scale: it forces early layers to
    become orientation tuned, which the topography analyses then probe.
    Returns (images (N,C,s,s), labels (N,)).
    """
    rng = named_rng(seed, "orientation-dataset")
    images, labels = [], []
    for k in range(n_classes):
        theta = k * np.pi / n_classes
        for _ in range(n_per_class):
            spec = GratingSpec(
                orientation=float((theta + rng.normal(0, np.pi / 40)) % np.pi),
                frequency=float(rng.uniform(2.0, 4.0)),
                phase=float(rng.uniform(0, 2 * np.pi)),
                hue="achromatic", size=size, channels=channels)
            img = make_grating(spec)
            img = np.clip(img + rng.normal(0, noise, img.shape), 0, 1)
            images.append(img)
            labels.append(k)
    order = rng.permutation(len(images))
    return (np.stack(images)[order],
            np.asarray(labels, dtype=np.intp)[order])
