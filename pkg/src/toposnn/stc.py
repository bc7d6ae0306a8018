"""Spatio-temporal constraint losses on recorded spike trains.

Two differentiable penalties pull the activity of units that sit close on
the cortical sheet toward each other:

* long timescale: pairwise Pearson correlation of per-trial firing rates,
  matched against inverse sheet distance;
* short timescale: pairwise spike-train cross-correlogram synchrony
  (autocorrelation-normalized, in [0, 1]), matched the same way.

Forward spike values stay binary; gradients reach them through the spike
threshold's surrogate backward.
"""

from dataclasses import dataclass, field

import numpy as np

from toposnn import autodiff as ad
from toposnn.autodiff import Tensor
from toposnn.rng import stream_seed
from toposnn.sheet import pairwise_inverse_distance, sample_clusters

#: variance below this is treated as degenerate (flagged, zero gradient)
DEGENERACY_EPS = 1e-12


@dataclass
class STCConfig:
    alpha: float = 50.0
    beta: float = 50.0
    ccg_window: int = 2
    clusters_per_layer: int = 4
    cluster_edge_mm: float = 2.0
    constrained_layers: list = field(default_factory=list)

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.ccg_window < 0:
            raise ValueError("ccg window must be >= 0")
        if self.clusters_per_layer < 1:
            raise ValueError("clusters_per_layer must be >= 1")


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Rates and Pearson
# ---------------------------------------------------------------------------

def firing_rate_vectors(spikes):
    """Per-unit, per-trial mean firing rate: (N, B, T) -> (N, B)."""
    spikes = _lift(spikes)
    if spikes.ndim != 3:
        raise ad.ShapeMismatchError(
            f"spike tensor must be (units, trials, time), got {spikes.shape}")
    return spikes.mean(axis=2)


def pearson(x, y):
    """Pearson's r between two vectors, as (scalar Tensor, degenerate flag).

    Zero variance on either side yields (0, True) with no gradient, so a
    silent layer cannot poison training with NaNs.
    """
    x, y = _lift(x), _lift(y)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ad.ShapeMismatchError(
            f"pearson needs equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ad.ShapeMismatchError("pearson needs length >= 2")
    if np.var(x.data) < DEGENERACY_EPS or np.var(y.data) < DEGENERACY_EPS:
        return Tensor(0.0), True
    xc = x - x.mean()
    yc = y - y.mean()
    num = (xc * yc).sum()
    den = ((xc * xc).sum() * (yc * yc).sum()).sqrt()
    return num / den, False


# ---------------------------------------------------------------------------
# Cross-correlograms
# ---------------------------------------------------------------------------

def ccg_norm(tau, t_steps):
    """Overlap normalization: number of valid products at lag tau."""
    return max(0, t_steps - abs(tau))


def _lag_product_sum(si, sj, tau):
    """sum_b sum_t si[b, t] * sj[b, t + tau] over valid t (Tensor)."""
    t_steps = si.shape[1]
    if tau >= 0:
        a = si[:, :t_steps - tau] if tau else si
        b = sj[:, tau:]
    else:
        a = si[:, -tau:]
        b = sj[:, :t_steps + tau]
    return (a * b).sum()


def ccg(si, sj, w):
    """Lag-summed, overlap-normalized cross-correlogram of two (B, T) trains."""
    si, sj = _lift(si), _lift(sj)
    if si.shape != sj.shape or si.ndim != 2:
        raise ad.ShapeMismatchError(
            f"spike trains must share (trials, time), got {si.shape}, {sj.shape}")
    b, t_steps = si.shape
    if w >= t_steps:
        raise ValueError(
            f"ccg window {w} must be < number of timesteps {t_steps}")
    total = Tensor(0.0)
    for tau in range(-w, w + 1):
        lam = ccg_norm(tau, t_steps)
        total = total + _lag_product_sum(si, sj, tau) * (1.0 / (b * lam))
    return total


def r_ccg(si, sj, w):
    """Synchrony in [0, 1]: CCG normalized by the two autocorrelograms.

    Returns (value, flag); a silent train has zero autocorrelogram and the
    pair is flagged with value 0 and no gradient.
    """
    si, sj = _lift(si), _lift(sj)
    acg_i = ccg(si, si, w)
    acg_j = ccg(sj, sj, w)
    if acg_i.data <= DEGENERACY_EPS or acg_j.data <= DEGENERACY_EPS:
        return Tensor(0.0), True
    raw = ccg(si, sj, w) / (acg_i * acg_j).sqrt()
    # the lag-summed ratio can exceed 1 by a sliver at very small T; the
    # stated range is [0, 1], so clamp (gradient 0 on the clamped branch)
    if raw.data > 1.0:
        return Tensor(1.0), False
    return raw, False


# ---------------------------------------------------------------------------
# Vectorized pairwise matrices (used inside the losses)
# ---------------------------------------------------------------------------

def _rate_corr_pairs(rates, pairs):
    """Pearson over trials for each unit pair: (N, B) x (P, 2) -> (P,).

    Rows with zero variance are masked to zero correlation (no gradient
    through them), matching the flagged scalar route.
    """
    n, b = rates.shape
    mu = rates.mean(axis=1, keepdims=True)
    centered = rates - mu
    sq = (centered * centered).sum(axis=1, keepdims=True)
    valid = sq.data[:, 0] > DEGENERACY_EPS
    # keep the normalization on the tape so the denominator contributes to
    # the gradient; zero-variance rows are masked out and padded to avoid
    # a division by zero (their z rows are exactly zero either way)
    mask = valid.astype(np.float64)[:, None]
    safe = sq * Tensor(mask) + Tensor(1.0 - mask)
    z = centered * Tensor(mask) / safe.sqrt()
    corr = z @ z.T
    return corr[pairs[:, 0], pairs[:, 1]]


def _ccg_matrix(spikes, w):
    """All-pairs CCG of (N, B, T) spikes as an (N, N) Tensor."""
    n, b, t_steps = spikes.shape
    if w >= t_steps:
        raise ValueError(
            f"ccg window {w} must be < number of timesteps {t_steps}")
    total = None
    for tau in range(-w, w + 1):
        lam = ccg_norm(tau, t_steps)
        if tau >= 0:
            a = spikes[:, :, :t_steps - tau] if tau else spikes
            c = spikes[:, :, tau:]
        else:
            a = spikes[:, :, -tau:]
            c = spikes[:, :, :t_steps + tau]
        span = t_steps - abs(tau)
        amat = a.reshape(n, b * span)
        cmat = c.reshape(n, b * span)
        term = (amat @ cmat.T) * (1.0 / (b * lam))
        total = term if total is None else total + term
    return total


def _r_ccg_pairs(spikes, w, pairs):
    """Pairwise synchrony vector; silent units masked to 0."""
    full = _ccg_matrix(spikes, w)
    idx = np.arange(full.shape[0])
    acg = full[idx, idx]
    valid = acg.data > DEGENERACY_EPS
    pair_ok = valid[pairs[:, 0]] & valid[pairs[:, 1]]
    # normalize on the tape so the autocorrelogram denominators carry
    # gradient; pairs with a silent unit are masked to zero and their
    # denominator padded to 1 to avoid dividing by zero
    mask = pair_ok.astype(np.float64)
    prod = acg[pairs[:, 0]] * acg[pairs[:, 1]]
    safe = prod * Tensor(mask) + Tensor(1.0 - mask)
    raw = full[pairs[:, 0], pairs[:, 1]] * Tensor(mask) / safe.sqrt()
    over = raw.data > 1.0
    if over.any():
        raw = raw * Tensor((~over).astype(np.float64)) + \
            Tensor(over.astype(np.float64))
    return raw


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------

def _similarity_loss(sim_vec, cluster):
    """1/2 (1 - Pearson(similarity, inverse distance)) over cluster pairs."""
    local_pairs = cluster.pairs()
    global_pairs = cluster.members[local_pairs]
    d = pairwise_inverse_distance(cluster.sheet, global_pairs)
    p, degenerate = pearson(sim_vec, Tensor(d))
    return (1.0 - p) * 0.5, degenerate


def long_timescale_loss(spikes, cluster, sheet=None):
    """Firing-rate topography penalty for one cluster; (value, flag)."""
    spikes = _lift(spikes)
    sheet = sheet if sheet is not None else cluster.sheet
    rates = firing_rate_vectors(spikes[cluster.members])
    local_pairs = cluster.pairs()
    r = _rate_corr_pairs(rates, local_pairs)
    return _similarity_loss(r, cluster)


def short_timescale_loss(spikes, cluster, sheet=None, w=2):
    """Spike-timing synchrony topography penalty for one cluster."""
    spikes = _lift(spikes)
    sub = spikes[cluster.members]
    local_pairs = cluster.pairs()
    r = _r_ccg_pairs(sub, w, local_pairs)
    return _similarity_loss(r, cluster)


def stc_total(spikes_per_layer, sheets, cfg, seed, step=0):
    """Cluster-averaged combined penalty over all constrained layers.

    Returns (scalar Tensor, breakdown dict). Clusters are drawn fresh per
    call from a seed derived from (seed, step). With alpha = beta = 0 no
    sampling happens and the value is exactly 0.
    """
    breakdown = {}
    if cfg.alpha == 0.0 and cfg.beta == 0.0:
        return Tensor(0.0), breakdown
    missing = [lid for lid in cfg.constrained_layers if lid not in sheets]
    if missing:
        raise ValueError(f"no cortical sheet for constrained layers {missing}")
    total = Tensor(0.0)
    for lid in cfg.constrained_layers:
        spikes = spikes_per_layer[lid]
        clusters = sample_clusters(
            sheets[lid], cfg.clusters_per_layer, cfg.cluster_edge_mm,
            stream_seed(seed, f"stc:{lid}:{step}"))
        ll_vals, ls_vals = [], []
        for cluster in clusters:
            ll, _ = long_timescale_loss(spikes, cluster)
            ls, _ = short_timescale_loss(spikes, cluster, w=cfg.ccg_window)
            total = total + ll * cfg.alpha + ls * cfg.beta
            ll_vals.append(ll.item())
            ls_vals.append(ls.item())
        breakdown[lid] = {"L_L": float(np.mean(ll_vals)),
                          "L_S": float(np.mean(ls_vals))}
    return total * (1.0 / cfg.clusters_per_layer), breakdown
