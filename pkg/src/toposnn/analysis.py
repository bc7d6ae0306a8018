"""Post-training measurements on a frozen model.

Tuning curves and preference maps from grating probes, map smoothness
against a shuffle baseline, correlation-vs-distance curves, category
t-value selectivity, spike-train entropy, and per-timestep Fisher
information. Everything here is read-only on the model.
"""

from dataclasses import dataclass

import numpy as np

from toposnn import autodiff as ad
from toposnn.autodiff import Tensor
from toposnn.rng import named_rng
from toposnn.snn import no_grad


class AnalysisConfigError(ValueError):
    pass


#: conv blocks map onto ventral-stream stages in depth order; the readout
#: always maps to IT. Echoed in every report that groups by stage.
STAGE_NAMES = ("V1", "V2", "V4")


def layer_groups(spec):
    """{group: [param names]} mapping blocks + head to visual stages."""
    groups = {}
    for i in range(len(spec.block_channels)):
        stage = STAGE_NAMES[i] if i < len(STAGE_NAMES) else f"deep{i + 1}"
        groups[stage] = [f"block{i + 1}.w", f"block{i + 1}.b"]
    groups["IT"] = ["head.w", "head.b"]
    return groups


# ---------------------------------------------------------------------------
# Responses and tuning curves
# ---------------------------------------------------------------------------

def layer_rates(net, images, layer_id, batch_size=64):
    """Per-unit, per-stimulus firing rate (units, n_stimuli), grads off."""
    chunks = []
    with no_grad(net):
        for i in range(0, images.shape[0], batch_size):
            _, spikes = net.forward(Tensor(images[i:i + batch_size]),
                                    record=[layer_id])
            chunks.append(spikes[layer_id].data.mean(axis=2))
    return np.concatenate(chunks, axis=1)


def layer_spike_trains(net, images, layer_id, batch_size=64):
    """Full recorded spike trains (units, n_stimuli, T), grads off."""
    chunks = []
    with no_grad(net):
        for i in range(0, images.shape[0], batch_size):
            _, spikes = net.forward(Tensor(images[i:i + batch_size]),
                                    record=[layer_id])
            chunks.append(spikes[layer_id].data)
    return np.concatenate(chunks, axis=1)


def _fold_pi(v):
    v = float(v)
    while v >= np.pi:
        v -= np.pi
    while v < 0.0:
        v += np.pi
    return v


_PARAM_GETTERS = {
    "orientation": lambda s: s.orientation,
    "frequency": lambda s: s.frequency,
    "color": lambda s: s.hue,
}


@dataclass
class TuningCurve:
    unit: int
    param: str
    grid: np.ndarray      # swept parameter values
    rates: np.ndarray     # mean rate per grid value, nuisances marginalized


def tuning_curves(net, battery, layer_id, param="orientation", rates=None):
    """One curve per unit: mean rate vs the swept battery parameter."""
    if not battery:
        raise AnalysisConfigError("empty battery")
    if rates is None:
        from toposnn.stimuli import render_battery
        rates = layer_rates(net, render_battery(battery), layer_id)
    getter = _PARAM_GETTERS[param]
    values = [getter(s) for s in battery]
    if param == "orientation":
        # fold into [0, pi); theta and theta + pi are the same orientation,
        # and subtracting pi on [pi, 2 pi) is exact in float64
        # round after folding so theta and theta + pi (whose fold differs
        # by one rounding step) land in the same grid bin
        values = [round(_fold_pi(v), 12) for v in values]
    grid = sorted(set(values))
    masks = [np.array([v == g for v in values]) for g in grid]
    curves = []
    for u in range(rates.shape[0]):
        means = np.array([rates[u, m].mean() for m in masks])
        curves.append(TuningCurve(u, param, np.asarray(grid, dtype=object)
                                  if param == "color" else np.asarray(grid),
                                  means))
    return curves


# ---------------------------------------------------------------------------
# Preference maps and smoothness
# ---------------------------------------------------------------------------

@dataclass
class PreferenceMap:
    sheet: object
    kind: str                  # orientation | frequency | color
    preference: np.ndarray     # per unit; radians in [0, pi) for orientation
    magnitude: np.ndarray      # selectivity strength, >= 0
    defined: np.ndarray        # bool mask; undefined units excluded downstream


def preference_map(curves, sheet, kind="orientation"):
    """Per-unit preferred value on the sheet.

    Orientation uses doubled-angle vector summation of the tuning curve;
    frequency and color take the argmax with (max - mean)/max magnitude.
    """
    n = len(curves)
    pref = np.zeros(n)
    mag = np.zeros(n)
    defined = np.ones(n, dtype=bool)
    for i, c in enumerate(curves):
        if kind == "orientation":
            vec = np.sum(c.rates * np.exp(2j * c.grid.astype(np.float64)))
            total = c.rates.sum()
            if total <= 0 or np.abs(vec) < 1e-12:
                defined[i] = False
                continue
            pref[i] = (np.angle(vec) / 2.0) % np.pi
            mag[i] = np.abs(vec) / total
        else:
            if c.rates.max() <= 0:
                defined[i] = False
                continue
            j = int(np.argmax(c.rates))
            pref[i] = j if kind == "color" else float(c.grid[j])
            mag[i] = (c.rates.max() - c.rates.mean()) / c.rates.max()
    return PreferenceMap(sheet, kind, pref, mag, defined)


def _circ_dist(a, b):
    d = np.abs(a - b) % np.pi
    return np.minimum(d, np.pi - d)


def _circ_mean(angles):
    return (np.angle(np.mean(np.exp(2j * angles))) / 2.0) % np.pi


def _neighbor_deviation(prefs, coords, defined, radius, circular):
    """Mean deviation of each unit from its neighborhood average."""
    idx = np.nonzero(defined)[0]
    devs = []
    pts = coords[idx]
    vals = prefs[idx]
    for k in range(idx.size):
        d = np.hypot(pts[:, 0] - pts[k, 0], pts[:, 1] - pts[k, 1])
        nb = (d <= radius) & (d > 0)
        if not nb.any():
            continue
        if circular:
            devs.append(_circ_dist(vals[k], _circ_mean(vals[nb])))
        else:
            devs.append(abs(vals[k] - vals[nb].mean()))
    if not devs:
        raise AnalysisConfigError(
            f"no unit has neighbors within {radius} mm; increase the radius")
    return float(np.mean(devs))


def smoothness(pmap, radius_mm=1.0, n_shuffles=20, seed=0):
    """Normalized neighborhood agreement in [0, 1].

    1 - (observed neighborhood deviation / deviation of shuffled maps);
    a constant map scores 1, a random arrangement about 0.
    """
    if pmap.defined.sum() < 2:
        raise AnalysisConfigError("need >= 2 units with defined preference")
    circular = pmap.kind == "orientation"
    coords = pmap.sheet.coords
    observed = _neighbor_deviation(pmap.preference, coords, pmap.defined,
                                   radius_mm, circular)
    rng = named_rng(seed, "smoothness-shuffle")
    idx = np.nonzero(pmap.defined)[0]
    chance_vals = []
    for _ in range(n_shuffles):
        shuffled = pmap.preference.copy()
        shuffled[idx] = shuffled[rng.permutation(idx)]
        chance_vals.append(_neighbor_deviation(shuffled, coords, pmap.defined,
                                               radius_mm, circular))
    chance = float(np.mean(chance_vals))
    if chance < 1e-12:
        return 1.0 if observed < 1e-12 else 0.0
    return float(np.clip(1.0 - observed / chance, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Correlation vs distance
# ---------------------------------------------------------------------------

def correlation_vs_distance(spikes, sheet, n_bins=8, n_boot=1000, seed=0):
    """Pairwise rate correlation binned by sheet distance, bootstrap CIs.

    spikes: (units, trials, time) array with trials >= 2. Returns
    (bin_centers, means, ci_low, ci_high); empty bins hold NaN.
    """
    spikes = np.asarray(spikes, dtype=np.float64)
    if spikes.shape[1] < 2:
        raise AnalysisConfigError("need >= 2 trials")
    rates = spikes.mean(axis=2)
    z = rates - rates.mean(axis=1, keepdims=True)
    norm = np.sqrt((z * z).sum(axis=1))
    valid = norm > 1e-12
    norm[~valid] = 1.0
    z = z / norm[:, None]
    corr = z @ z.T
    iu = np.triu_indices(rates.shape[0], k=1)
    pair_ok = valid[iu[0]] & valid[iu[1]]
    cvals = corr[iu][pair_ok]
    dvals = sheet.distances(np.stack(iu, axis=1))[pair_ok]
    edges = np.linspace(0.0, dvals.max() * (1 + 1e-12), n_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    means = np.full(n_bins, np.nan)
    lo = np.full(n_bins, np.nan)
    hi = np.full(n_bins, np.nan)
    rng = named_rng(seed, "corr-dist-bootstrap")
    for b in range(n_bins):
        sel = cvals[(dvals >= edges[b]) & (dvals < edges[b + 1])]
        if sel.size == 0:
            continue
        means[b] = sel.mean()
        # resample in bounded chunks: a dense bin can hold ~10^6 pairs and a
        # single (n_boot, size) index matrix would not fit in memory; chunked
        # draws are bitwise identical because the generator consumes values
        # one at a time regardless of batch shape
        rows = max(1, min(n_boot, 2_000_000 // sel.size))
        boots = np.concatenate(
            [sel[rng.integers(0, sel.size,
                              size=(min(rows, n_boot - done), sel.size))
                 ].mean(axis=1)
             for done in range(0, n_boot, rows)])
        lo[b], hi[b] = np.percentile(boots, [2.5, 97.5])
    return centers, means, lo, hi


# ---------------------------------------------------------------------------
# Category selectivity
# ---------------------------------------------------------------------------

@dataclass
class SelectivityMap:
    sheet: object
    categories: list
    t_values: np.ndarray       # (n_categories, units)
    significant: np.ndarray    # bool, same shape
    t_crit: float


def welch_t(a, b):
    """Welch two-sample t along axis 0; 0 where both variances vanish."""
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    var_a = a.var(axis=0, ddof=1)
    var_b = b.var(axis=0, ddof=1)
    se2 = var_a / a.shape[0] + var_b / b.shape[0]
    t = np.zeros_like(mu_a)
    nz = se2 > 0
    t[nz] = (mu_a - mu_b)[nz] / np.sqrt(se2[nz])
    return t


def selectivity_tmap(net, category_sets, layer_id, sheet, t_crit=3.0):
    """Per unit and category Welch t of in-category vs out-category rates."""
    if len(category_sets) < 2:
        raise AnalysisConfigError("need >= 2 categories")
    rates = []
    for cs in category_sets:
        if cs.images.shape[0] < 2:
            raise AnalysisConfigError(
                f"category {cs.category} needs >= 2 exemplars")
        rates.append(layer_rates(net, cs.images, layer_id).T)  # (n_ex, units)
    t_values = []
    for i in range(len(category_sets)):
        others = np.concatenate([r for j, r in enumerate(rates) if j != i])
        t_values.append(welch_t(rates[i], others))
    t_values = np.stack(t_values)
    return SelectivityMap(sheet, [c.category for c in category_sets],
                          t_values, t_values > t_crit, t_crit)


def patch_overlap(smap, cat_a, cat_b):
    """(Pearson of t-value maps, Jaccard of significance masks)."""
    ia, ib = smap.categories.index(cat_a), smap.categories.index(cat_b)
    ta, tb = smap.t_values[ia], smap.t_values[ib]
    if ta.std() < 1e-12 or tb.std() < 1e-12:
        r = 0.0
    else:
        r = float(np.corrcoef(ta, tb)[0, 1])
    ma, mb = smap.significant[ia], smap.significant[ib]
    union = (ma | mb).sum()
    jaccard = float((ma & mb).sum() / union) if union else 0.0
    return r, jaccard


# ---------------------------------------------------------------------------
# Entropy and Fisher information
# ---------------------------------------------------------------------------

def binary_entropy(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    for q in (p, 1.0 - p):
        nz = q > 0
        out[nz] -= q[nz] * np.log2(q[nz])
    return out


def spike_entropy(spikes, per="layer"):
    """Mean per-neuron Shannon entropy of firing probability, in bits.

    per='layer': p over all trials and timesteps -> scalar.
    per='timestep': p over trials at each timestep -> length-T vector.
    """
    spikes = np.asarray(spikes, dtype=np.float64)
    if spikes.size == 0:
        raise AnalysisConfigError("empty spike tensor")
    if per == "layer":
        return float(binary_entropy(spikes.mean(axis=(1, 2))).mean())
    if per == "timestep":
        return binary_entropy(spikes.mean(axis=1)).mean(axis=0)
    raise ValueError(f"unknown aggregation {per!r}")


@dataclass
class FisherTrajectory:
    groups: dict      # {stage: [I_1 .. I_T]}
    total: np.ndarray
    n_samples: int


def fisher_information(net, images, labels, t):
    """Mean squared gradient norm of log p(true label) at readout cutoff t.

    Inputs after step t are zeroed and excluded from the readout average.
    Returns ({stage: value}, total) over the given samples.
    """
    spec = net.spec
    if not 1 <= t <= spec.timesteps:
        raise ValueError(f"t must be in [1, {spec.timesteps}]")
    labels = np.asarray(labels, dtype=np.intp)
    groups = layer_groups(spec)
    sums = {g: 0.0 for g in groups}
    n = images.shape[0]
    for i in range(n):
        logits, _ = net.forward(Tensor(images[i:i + 1]), record=False,
                                truncate_t=t)
        logp = ad.log_softmax(logits)[0, int(labels[i])]
        net.zero_grad()
        logp.backward()
        for g, names in groups.items():
            sums[g] += sum(float((net.params[k].grad ** 2).sum())
                           for k in names if net.params[k].grad is not None)
    per_group = {g: s / n for g, s in sums.items()}
    return per_group, float(sum(per_group.values()))


def fisher_trajectory(net, images, labels, timesteps=None):
    ts = range(1, (timesteps or net.spec.timesteps) + 1)
    groups = {g: [] for g in layer_groups(net.spec)}
    total = []
    for t in ts:
        per_group, tot = fisher_information(net, images, labels, t)
        for g, v in per_group.items():
            groups[g].append(v)
        total.append(tot)
    return FisherTrajectory({g: np.array(v) for g, v in groups.items()},
                            np.array(total), images.shape[0])
