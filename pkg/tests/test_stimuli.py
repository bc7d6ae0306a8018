"""Grating rendering, batteries, and the synthetic stimulus generators."""

import numpy as np
import pytest

from toposnn.stimuli import (CATEGORY_NAMES, GratingSpec, grating_battery,
                             make_category_sets, make_grating,
                             make_orientation_dataset, render_battery)


def test_zero_orientation_rows_constant():
    img = make_grating(GratingSpec(0.0, 2.0, 0.0, size=16))
    # theta = 0: the argument varies along x (rows) only, so each row is a
    # constant and the column direction carries the sinusoid
    assert np.ptp(img, axis=2).max() == 0.0
    assert np.ptp(img, axis=1).max() > 0.1


def test_phase_periodicity():
    a = make_grating(GratingSpec(0.7, 3.0, 1.2, size=16))
    b = make_grating(GratingSpec(0.7, 3.0, 1.2 + 2.0 * np.pi, size=16))
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_grating_per_pixel_formula_oracle():
    spec = GratingSpec(np.pi / 4, 2.0, 0.0, size=32)
    img = make_grating(spec)
    assert img.shape == (3, 32, 32)
    for (i, j) in [(0, 0), (5, 17), (31, 31), (12, 3)]:
        arg = 2 * np.pi * 2.0 * (i * np.cos(np.pi / 4) +
                                 j * np.sin(np.pi / 4)) / 32
        expect = np.clip(0.5 + 0.5 * np.sin(arg), 0, 1)
        for c in range(3):
            np.testing.assert_allclose(img[c, i, j], expect, rtol=1e-12)


def test_grating_range_and_hue():
    img = make_grating(GratingSpec(0.3, 4.0, 0.5, hue="red-green", size=16))
    assert img.min() >= 0.0 and img.max() <= 1.0
    # red and green channels modulate in antiphase, blue stays at mid-gray
    np.testing.assert_allclose(img[0] + img[1], np.ones((16, 16)), atol=1e-12)
    np.testing.assert_allclose(img[2], np.full((16, 16), 0.5), atol=1e-12)


def test_grating_validation():
    with pytest.raises(ValueError):
        GratingSpec(0.0, 0.0)
    with pytest.raises(ValueError):
        GratingSpec(0.0, 1.0, hue="ultraviolet")


def test_battery_single_spec():
    battery = grating_battery(1, 1, 1, 1)
    assert len(battery) == 1


def test_battery_orientation_spacing():
    battery = grating_battery(8, 1, 1, 1)
    got = sorted({s.orientation for s in battery})
    np.testing.assert_allclose(got, np.arange(8) * np.pi / 8)


def test_battery_enumeration_unique():
    battery = grating_battery(8, 4, 4, 2)
    assert len(battery) == 256
    keys = {(s.orientation, s.frequency, s.phase, s.hue) for s in battery}
    assert len(keys) == 256


def test_render_battery_shape():
    imgs = render_battery(grating_battery(2, 2, 1, 1, size=8))
    assert imgs.shape == (4, 3, 8, 8)


# ---------------------------------------------------------------------------
# Category sets
# ---------------------------------------------------------------------------

def test_category_sets_deterministic():
    a = make_category_sets(3, n_exemplars=4, size=16)
    b = make_category_sets(3, n_exemplars=4, size=16)
    for sa, sb in zip(a, b):
        assert sa.category == sb.category
        np.testing.assert_array_equal(sa.images, sb.images)


def test_category_counts():
    sets = make_category_sets(0, n_exemplars=32, size=16)
    assert [s.category for s in sets] == list(CATEGORY_NAMES)
    assert all(s.images.shape == (32, 3, 16, 16) for s in sets)


def test_linear_probe_separates_categories():
    """Ridge regression on raw pixels must exceed 90% held-out accuracy."""
    sets = make_category_sets(1, n_exemplars=32, size=16)
    xs = np.concatenate([s.images.reshape(32, -1) for s in sets])
    ys = np.repeat(np.arange(5), 32)
    rng = np.random.default_rng(0)
    order = rng.permutation(len(ys))
    xs, ys = xs[order], ys[order]
    n_train = 120
    xtr, xte = xs[:n_train], xs[n_train:]
    ytr, yte = ys[:n_train], ys[n_train:]
    onehot = np.eye(5)[ytr]
    xtr_b = np.hstack([xtr, np.ones((len(xtr), 1))])
    xte_b = np.hstack([xte, np.ones((len(xte), 1))])
    w = np.linalg.solve(xtr_b.T @ xtr_b + 1.0 * np.eye(xtr_b.shape[1]),
                        xtr_b.T @ onehot)
    acc = float(((xte_b @ w).argmax(axis=1) == yte).mean())
    assert acc > 0.9, f"probe accuracy {acc:.3f}"


# ---------------------------------------------------------------------------
# Orientation dataset
# ---------------------------------------------------------------------------

def test_orientation_dataset_shapes_and_labels():
    imgs, labels = make_orientation_dataset(n_per_class=5, size=8, seed=0)
    assert imgs.shape == (20, 3, 8, 8)
    assert imgs.min() >= 0 and imgs.max() <= 1
    np.testing.assert_array_equal(np.bincount(labels), np.full(4, 5))


def test_orientation_dataset_deterministic():
    a = make_orientation_dataset(n_per_class=4, size=8, seed=9)
    b = make_orientation_dataset(n_per_class=4, size=8, seed=9)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    c = make_orientation_dataset(n_per_class=4, size=8, seed=10)
    assert not np.array_equal(a[0], c[0])
