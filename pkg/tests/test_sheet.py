"""Cortical sheet embedding, clusters, annealing, and the text format."""

import numpy as np
import pytest

from toposnn import sheet as sh
from toposnn.sheet import (CorticalSheet, NeuronCluster, SheetConfigError,
                           embed_layer, geometric_schedule, load_sheet,
                           pairwise_inverse_distance, preoptimize_positions,
                           sample_clusters, save_sheet, sheet_objective)


def _all_pairs(n):
    return np.stack(np.triu_indices(n, k=1), axis=1)


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------

def test_embed_single_unit():
    sheet = embed_layer(1, 1, 1, 4.0, 6.0, seed=0)
    assert sheet.coords.shape == (1, 2)
    assert 0 <= sheet.coords[0, 0] <= 4.0
    assert 0 <= sheet.coords[0, 1] <= 6.0


def test_embed_injectivity_and_bounds():
    sheet = embed_layer(4, 5, 5, 10.0, 10.0, seed=11)
    assert sheet.coords[:, 0].min() >= 0 and sheet.coords[:, 0].max() <= 10.0
    assert sheet.coords[:, 1].min() >= 0 and sheet.coords[:, 1].max() <= 10.0
    d = sheet.distances(_all_pairs(sheet.n_units))
    assert d.min() >= sh.MIN_SEPARATION


def test_embed_2x2x2_distances_against_pairwise_loop():
    sheet = embed_layer(2, 2, 2, 10.0, 10.0, seed=7)
    assert sheet.n_units == 8
    assert len({tuple(c) for c in sheet.coords}) == 8
    pairs = _all_pairs(8)
    d = sheet.distances(pairs)
    full = np.zeros((8, 8))
    for i in range(8):
        for j in range(8):
            full[i, j] = np.sqrt(((sheet.coords[i] - sheet.coords[j]) ** 2).sum())
    np.testing.assert_array_equal(full, full.T)
    np.testing.assert_array_equal(np.diag(full), np.zeros(8))
    for (i, j), dist in zip(pairs, d):
        np.testing.assert_allclose(dist, full[i, j], rtol=1e-15)


def test_embed_determinism():
    a = embed_layer(3, 4, 4, 8.0, 8.0, seed=5)
    b = embed_layer(3, 4, 4, 8.0, 8.0, seed=5)
    np.testing.assert_array_equal(a.coords, b.coords)


def test_embed_rejects_bad_sheet():
    with pytest.raises(SheetConfigError):
        embed_layer(1, 1, 1, 0.0, 5.0, seed=0)


def test_sheet_validation():
    with pytest.raises(SheetConfigError):
        CorticalSheet("x", 5.0, 5.0, (1, 2, 2), np.zeros((3, 2)))
    with pytest.raises(SheetConfigError):
        CorticalSheet("x", 5.0, 5.0, (1, 1, 1), np.array([[6.0, 1.0]]))


# ---------------------------------------------------------------------------
# Inverse distance
# ---------------------------------------------------------------------------

def test_inverse_distance_one_mm():
    sheet = CorticalSheet("x", 5.0, 5.0, (2, 1, 1),
                          np.array([[1.0, 1.0], [2.0, 1.0]]))
    d = pairwise_inverse_distance(sheet, np.array([[0, 1]]))
    np.testing.assert_allclose(d, [1.0 / 1.01])


def test_inverse_distance_bound():
    sheet = embed_layer(4, 4, 4, 6.0, 6.0, seed=2)
    inv = pairwise_inverse_distance(sheet, _all_pairs(sheet.n_units))
    assert inv.max() <= 1.0 / (sh.DISTANCE_SOFTENING + sh.MIN_SEPARATION)


def test_inverse_distance_brute_force(rng):
    coords = rng.uniform(0, 5, size=(5, 2))
    sheet = CorticalSheet("x", 5.0, 5.0, (5, 1, 1), coords)
    pairs = _all_pairs(5)
    inv = pairwise_inverse_distance(sheet, pairs)
    for (i, j), v in zip(pairs, inv):
        ref = 1.0 / (0.01 + np.sqrt(((coords[i] - coords[j]) ** 2).sum()))
        np.testing.assert_allclose(v, ref, rtol=1e-15)
    assert len(inv) == 10


def test_self_pairs_rejected():
    sheet = embed_layer(2, 2, 2, 5.0, 5.0, seed=0)
    with pytest.raises(ValueError):
        pairwise_inverse_distance(sheet, np.array([[1, 1]]))


# ---------------------------------------------------------------------------
# Clusters
# ---------------------------------------------------------------------------

def test_full_sheet_cluster_contains_everything():
    sheet = embed_layer(2, 3, 3, 6.0, 6.0, seed=1)
    clusters = sample_clusters(sheet, 3, 6.0, seed=4)
    for c in clusters:
        assert c.n_members == sheet.n_units


def test_zero_clusters():
    sheet = embed_layer(2, 3, 3, 6.0, 6.0, seed=1)
    assert sample_clusters(sheet, 0, 2.0, seed=0) == []


def test_cluster_members_match_coordinate_filter():
    sheet = embed_layer(4, 6, 6, 10.0, 10.0, seed=9)
    clusters = sample_clusters(sheet, 8, 2.0, seed=3)
    assert len(clusters) == 8
    x, y = sheet.coords[:, 0], sheet.coords[:, 1]
    for c in clusters:
        ox, oy = c.origin
        inside = ((x >= ox) & (x <= ox + 2.0) & (y >= oy) & (y <= oy + 2.0))
        np.testing.assert_array_equal(c.members, np.nonzero(inside)[0])


def test_cluster_pairs_are_upper_triangle():
    sheet = embed_layer(2, 2, 2, 6.0, 6.0, seed=1)
    c = NeuronCluster(sheet, np.array([0, 3, 5]), (0.0, 0.0), 6.0)
    np.testing.assert_array_equal(c.pairs(), [[0, 1], [0, 2], [1, 2]])


def test_cluster_needs_two_members():
    sheet = embed_layer(2, 2, 2, 6.0, 6.0, seed=1)
    with pytest.raises(SheetConfigError):
        NeuronCluster(sheet, np.array([4]), (0.0, 0.0), 1.0)


def test_oversized_cluster_edge_rejected():
    sheet = embed_layer(2, 2, 2, 6.0, 6.0, seed=1)
    with pytest.raises(SheetConfigError):
        sample_clusters(sheet, 1, 7.0, seed=0)


# ---------------------------------------------------------------------------
# Pre-optimization
# ---------------------------------------------------------------------------

def test_preopt_zero_steps_is_identity(rng):
    sheet = embed_layer(2, 3, 3, 6.0, 6.0, seed=1)
    responses = rng.uniform(size=(sheet.n_units, 10))
    out, trace = preoptimize_positions(sheet, responses, steps=0, seed=0)
    np.testing.assert_array_equal(out.coords, sheet.coords)
    assert trace == []
    assert out is not sheet


def test_swap_of_identical_rows_leaves_objective_unchanged(rng):
    sheet = embed_layer(2, 3, 3, 6.0, 6.0, seed=1)
    responses = rng.uniform(size=(sheet.n_units, 10))
    responses[4] = responses[7]
    pairs = _all_pairs(sheet.n_units)
    j0 = sheet_objective(sheet, responses, pairs)
    coords = sheet.coords.copy()
    coords[[4, 7]] = coords[[7, 4]]
    j1 = sheet_objective(sheet.with_coords(coords), responses, pairs)
    np.testing.assert_allclose(j0, j1, rtol=1e-12)


def test_preopt_improves_objective_and_trace_is_monotone_at_zero_temp(rng):
    sheet = embed_layer(2, 4, 4, 8.0, 8.0, seed=1)
    # two response groups: their separation gives the anneal room to improve
    responses = np.where(rng.random(sheet.n_units) < 0.5, 1.0, -1.0)[:, None] \
        * np.ones(12) + rng.normal(0, 0.05, size=(sheet.n_units, 12))
    pairs = _all_pairs(sheet.n_units)
    j0 = sheet_objective(sheet, responses, pairs)
    out, trace = preoptimize_positions(sheet, responses, steps=2000,
                                       temperatures=[0.0] * 5, seed=0)
    js = [j for _, j in trace]
    assert all(b >= a - 1e-12 for a, b in zip(js, js[1:]))
    j1 = sheet_objective(out, responses, pairs)
    assert j1 > j0
    np.testing.assert_allclose(j1, js[-1], rtol=1e-10)
    # the coordinate multiset is preserved: only positions were swapped
    np.testing.assert_array_equal(
        np.sort(out.coords.view("f8,f8"), axis=0),
        np.sort(sheet.coords.view("f8,f8"), axis=0))


def test_preopt_response_shape_checked():
    sheet = embed_layer(2, 2, 2, 6.0, 6.0, seed=1)
    with pytest.raises(ValueError):
        preoptimize_positions(sheet, np.zeros((3, 4)), steps=10)


def test_geometric_schedule_ends_at_zero():
    temps = geometric_schedule(5, 0.1, 0.5)
    assert len(temps) == 5
    np.testing.assert_allclose(temps[:4], [0.1, 0.05, 0.025, 0.0125])
    assert temps[-1] == 0.0


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

def test_sheet_roundtrip_exact(tmp_path, rng):
    sheet = embed_layer(3, 4, 5, 7.0, 9.0, seed=13, layer_id="block2")
    path = tmp_path / "b.sheet"
    save_sheet(sheet, path)
    back = load_sheet(path)
    assert back.layer_id == "block2"
    assert back.dims == (3, 4, 5)
    assert back.sheet_h == 7.0 and back.sheet_w == 9.0
    np.testing.assert_array_equal(back.coords, sheet.coords)


def test_sheet_rewrite_is_byte_identical(tmp_path):
    sheet = embed_layer(2, 3, 3, 6.0, 6.0, seed=3)
    p1, p2 = tmp_path / "a.sheet", tmp_path / "b.sheet"
    save_sheet(sheet, p1)
    save_sheet(load_sheet(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_sheet_file_count_mismatch_detected(tmp_path):
    sheet = embed_layer(2, 2, 2, 6.0, 6.0, seed=3)
    path = tmp_path / "a.sheet"
    save_sheet(sheet, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValueError):
        load_sheet(path)
