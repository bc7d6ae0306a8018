"""Virtual 2D cortical sheets.

Every unit (c, h', w') of a constrained layer gets a unique millimeter
coordinate on a flat sheet. Channels sharing a retinotopic position are
placed inside the same grid cell with random jitter, so the embedding is
non-uniform but locally retinotopic. Sheets are immutable after
construction; position pre-optimization returns a new sheet.
"""

from dataclasses import dataclass

import numpy as np

from toposnn.rng import named_rng

#: softening constant for inverse distances (mm); keeps 1/d bounded
DISTANCE_SOFTENING = 0.01
#: minimum separation between any two units (mm); guarantees injectivity
MIN_SEPARATION = 1e-3


class SheetConfigError(ValueError):
    """Sheet cannot be built or sampled with the given parameters."""


@dataclass(frozen=True)
class CorticalSheet:
    """Injective map from layer units to sheet coordinates.

    coords[i] is the (x, y) position in mm of unit i, where i enumerates
    (c, h', w') in row-major order over a (C, H, W) layer. x runs along the
    sheet height (0..sheet_h), y along the width (0..sheet_w).
    """

    layer_id: str
    sheet_h: float
    sheet_w: float
    dims: tuple          # (C, H, W)
    coords: np.ndarray   # (N, 2) float64

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        object.__setattr__(self, "coords", coords)
        c, h, w = self.dims
        if coords.shape != (c * h * w, 2):
            raise SheetConfigError(
                f"{coords.shape[0]} coordinates for a {self.dims} layer")
        if coords[:, 0].min() < 0 or coords[:, 0].max() > self.sheet_h or \
           coords[:, 1].min() < 0 or coords[:, 1].max() > self.sheet_w:
            raise SheetConfigError("coordinates fall outside the sheet")

    @property
    def n_units(self):
        return self.coords.shape[0]

    def distances(self, pairs):
        """Euclidean distances for an (P, 2) array of unit index pairs."""
        pairs = np.asarray(pairs, dtype=np.intp)
        diff = self.coords[pairs[:, 0]] - self.coords[pairs[:, 1]]
        return np.hypot(diff[:, 0], diff[:, 1])

    def with_coords(self, coords):
        return CorticalSheet(self.layer_id, self.sheet_h, self.sheet_w,
                             self.dims, coords)


@dataclass(frozen=True)
class NeuronCluster:
    """Units whose coordinates fall inside one square sheet region."""

    sheet: CorticalSheet
    members: np.ndarray    # unit indices
    origin: tuple          # (x, y) mm
    edge_mm: float

    def __post_init__(self):
        members = np.asarray(self.members, dtype=np.intp)
        object.__setattr__(self, "members", members)
        if members.size < 2:
            raise SheetConfigError("a cluster needs at least 2 members")

    @property
    def n_members(self):
        return self.members.size

    def pairs(self):
        """All member index pairs (i, j), i < j, as local indices."""
        n = self.n_members
        iu = np.triu_indices(n, k=1)
        return np.stack(iu, axis=1)


def _separation_violations(coords, eps):
    """Indices of units closer than eps to an earlier unit (grid check)."""
    cells = {}
    bad = []
    keys = np.floor(coords / eps).astype(np.int64)
    for i, (kx, ky) in enumerate(keys):
        hit = False
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for j in cells.get((kx + dx, ky + dy), ()):
                    if np.hypot(*(coords[i] - coords[j])) < eps:
                        hit = True
                        break
                if hit:
                    break
            if hit:
                break
        if hit:
            bad.append(i)
        else:
            cells.setdefault((kx, ky), []).append(i)
    return bad


def embed_layer(c, h, w, sheet_h, sheet_w, seed, layer_id="layer"):
    """Jittered-grid embedding of a (C, H, W) layer onto a sheet.

    Retinotopic positions (h', w') tile the sheet as grid cells; all C
    channels of one position land inside its cell with uniform jitter.
    Injectivity is enforced by a minimum pairwise separation; colliding
    units are re-jittered a bounded number of times.
    """
    if sheet_h <= 0 or sheet_w <= 0:
        raise SheetConfigError("sheet dimensions must be positive")
    n = c * h * w
    cell_x, cell_y = sheet_h / h, sheet_w / w
    if n * np.pi * MIN_SEPARATION ** 2 > 2.0 * sheet_h * sheet_w:
        raise SheetConfigError(
            f"cannot place {n} units at {MIN_SEPARATION} mm separation on a "
            f"{sheet_h}x{sheet_w} mm sheet; use a larger sheet")
    rng = named_rng(seed, f"embed:{layer_id}")
    # base = cell center per (h', w'), shared by channels
    hi, wi = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    base = np.stack([(hi + 0.5) * cell_x, (wi + 0.5) * cell_y], axis=-1)
    base = np.broadcast_to(base, (c, h, w, 2)).reshape(n, 2)
    coords = None
    for _ in range(100):
        if coords is None:
            jitter = rng.uniform(-0.5, 0.5, size=(n, 2)) * (cell_x, cell_y)
            coords = np.clip(base + jitter, 0.0, (sheet_h, sheet_w))
        bad = _separation_violations(coords, MIN_SEPARATION)
        if not bad:
            return CorticalSheet(layer_id, sheet_h, sheet_w, (c, h, w), coords)
        jitter = rng.uniform(-0.5, 0.5, size=(len(bad), 2)) * (cell_x, cell_y)
        coords[bad] = np.clip(base[bad] + jitter, 0.0, (sheet_h, sheet_w))
    raise SheetConfigError(
        "could not satisfy minimum unit separation; use a larger sheet")


def pairwise_inverse_distance(sheet, pairs):
    """Softened inverse distances 1/(delta + |r_i - r_j|) for index pairs."""
    pairs = np.asarray(pairs, dtype=np.intp)
    if pairs.size and np.any(pairs[:, 0] == pairs[:, 1]):
        raise ValueError("self-pairs are not allowed")
    return 1.0 / (DISTANCE_SOFTENING + sheet.distances(pairs))


def sample_clusters(sheet, m, edge_mm, seed, max_tries_per_cluster=200):
    """m square clusters with uniformly random origins; < 2 members rejected."""
    if edge_mm > min(sheet.sheet_h, sheet.sheet_w):
        raise SheetConfigError(
            f"cluster edge {edge_mm} mm exceeds sheet "
            f"{sheet.sheet_h}x{sheet.sheet_w} mm")
    rng = named_rng(seed, f"clusters:{sheet.layer_id}")
    clusters = []
    x, y = sheet.coords[:, 0], sheet.coords[:, 1]
    for _ in range(m):
        for _ in range(max_tries_per_cluster):
            ox = rng.uniform(0.0, sheet.sheet_h - edge_mm)
            oy = rng.uniform(0.0, sheet.sheet_w - edge_mm)
            inside = ((x >= ox) & (x <= ox + edge_mm) &
                      (y >= oy) & (y <= oy + edge_mm))
            members = np.nonzero(inside)[0]
            if members.size >= 2:
                clusters.append(NeuronCluster(sheet, members, (ox, oy), edge_mm))
                break
        else:
            raise SheetConfigError(
                f"could not sample a cluster with >= 2 members at edge "
                f"{edge_mm} mm; sheet too sparse")
    return clusters


# ---------------------------------------------------------------------------
# Position pre-optimization (annealed coordinate swaps)
# ---------------------------------------------------------------------------

def _pair_table(n_units, max_pairs, rng):
    """Pair index array: all pairs when small, a random subset when large."""
    total = n_units * (n_units - 1) // 2
    iu = np.stack(np.triu_indices(n_units, k=1), axis=1)
    if total <= max_pairs:
        return iu
    sel = rng.choice(total, size=max_pairs, replace=False)
    return iu[sel]


def _pearson_np(x, y):
    xc, yc = x - x.mean(), y - y.mean()
    den = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if den < 1e-300:
        return 0.0
    return float((xc * yc).sum() / den)


def sheet_objective(sheet, responses, pairs):
    """J = Pearson(response correlation, inverse distance) over pairs."""
    r = _row_correlations(responses, pairs)
    d = pairwise_inverse_distance(sheet, pairs)
    return _pearson_np(r, d)


def _row_correlations(responses, pairs):
    resp = np.asarray(responses, dtype=np.float64)
    z = resp - resp.mean(axis=1, keepdims=True)
    norm = np.sqrt((z * z).sum(axis=1))
    norm[norm < 1e-300] = 1.0
    z = z / norm[:, None]
    return np.einsum("ij,ij->i", z[pairs[:, 0]], z[pairs[:, 1]])


def geometric_schedule(levels=8, t_start=0.05, decay=0.5):
    """Geometric temperature ladder ending at exactly 0."""
    temps = [t_start * decay ** i for i in range(max(levels - 1, 0))]
    temps.append(0.0)
    return temps


def preoptimize_positions(sheet, responses, steps, temperatures=None,
                          seed=0, max_pairs=20000):
    """Anneal coordinate swaps so nearby units have correlated responses.

    Proposes random unit-pair coordinate swaps; a proposal is accepted when
    the objective J = Pearson(r, d) does not decrease, otherwise with
    probability exp(dJ / temperature). Returns a new sheet; the input sheet
    is untouched. With the final temperature 0 the last stage is strictly
    monotone non-decreasing in J.
    """
    responses = np.asarray(responses, dtype=np.float64)
    if responses.shape[0] != sheet.n_units:
        raise ValueError(
            f"responses rows ({responses.shape[0]}) != units ({sheet.n_units})")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return sheet.with_coords(sheet.coords.copy()), []
    rng = named_rng(seed, f"preopt:{sheet.layer_id}")
    n = sheet.n_units
    pairs = _pair_table(n, max_pairs, rng)
    r = _row_correlations(responses, pairs)
    if temperatures is None:
        temperatures = geometric_schedule()
    coords = sheet.coords.copy()

    # incremental Pearson bookkeeping: r is fixed, only d entries move
    p = pairs.shape[0]
    by_unit = [[] for _ in range(n)]
    for k, (i, j) in enumerate(pairs):
        by_unit[i].append(k)
        by_unit[j].append(k)
    by_unit = [np.asarray(ks, dtype=np.intp) for ks in by_unit]

    def dvec(cs, ks):
        diff = cs[pairs[ks, 0]] - cs[pairs[ks, 1]]
        return 1.0 / (DISTANCE_SOFTENING + np.hypot(diff[:, 0], diff[:, 1]))

    d = dvec(coords, np.arange(p))
    r_mean = r.mean()
    rc = r - r_mean
    s_r2 = float((rc * rc).sum())

    def pearson_from(dv):
        dc = dv - dv.mean()
        den = np.sqrt(s_r2 * float((dc * dc).sum()))
        if den < 1e-300:
            return 0.0
        return float((rc * dc).sum() / den)

    j_cur = pearson_from(d)
    per_level = max(1, steps // len(temperatures))
    trace = []
    for temp in temperatures:
        for _ in range(per_level):
            a, b = rng.choice(n, size=2, replace=False)
            touched = np.union1d(by_unit[a], by_unit[b])
            coords[[a, b]] = coords[[b, a]]
            d_new = d.copy()
            d_new[touched] = dvec(coords, touched)
            j_new = pearson_from(d_new)
            dj = j_new - j_cur
            accept = dj >= 0 or (temp > 0 and rng.random() < np.exp(dj / temp))
            if accept:
                d = d_new
                j_cur = j_new
            else:
                coords[[a, b]] = coords[[b, a]]
        trace.append((temp, j_cur))
    return sheet.with_coords(coords), trace


# ---------------------------------------------------------------------------
# Text export / import
# ---------------------------------------------------------------------------

def save_sheet(sheet, path):
    """Plain-text sheet file: header then one 'c h w x y' line per unit.

    Coordinates are printed with 17 significant digits so that the
    round-trip through text is bit exact.
    """
    c, h, w = sheet.dims
    lines = [f"{sheet.layer_id} {sheet.sheet_h:.17g} {sheet.sheet_w:.17g} "
             f"{c} {h} {w}"]
    idx = 0
    for ci in range(1, c + 1):
        for hi in range(1, h + 1):
            for wi in range(1, w + 1):
                x, y = sheet.coords[idx]
                lines.append(f"{ci} {hi} {wi} {x:.17g} {y:.17g}")
                idx += 1
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_sheet(path):
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    head = lines[0].split()
    layer_id, sheet_h, sheet_w = head[0], float(head[1]), float(head[2])
    c, h, w = int(head[3]), int(head[4]), int(head[5])
    n = c * h * w
    if len(lines) - 1 != n:
        raise ValueError(f"sheet file has {len(lines) - 1} units, header says {n}")
    coords = np.empty((n, 2))
    for ln in lines[1:]:
        ci, hi, wi, x, y = ln.split()
        i = ((int(ci) - 1) * h + (int(hi) - 1)) * w + (int(wi) - 1)
        coords[i] = (float(x), float(y))
    return CorticalSheet(layer_id, sheet_h, sheet_w, (c, h, w), coords)
