"""LIF dynamics, the feedforward spiking CNN, and the training loop.

The network is a small stack of conv blocks (conv -> LIF -> average pool)
with a non-spiking dense readout. A static image is presented at every
timestep (direct encoding); logits are the time average of the readout.
The spike trains of designated "constrained" layers are recorded as
(units, trials, time) tensors for the topography penalty.
"""

import json
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from toposnn import autodiff as ad
from toposnn.autodiff import Tensor
from toposnn.rng import named_rng, stream_seed
from toposnn.stc import STCConfig, stc_total


class CheckpointError(RuntimeError):
    """Checkpoint file is missing pieces or fails validation."""


@contextmanager
def no_grad(net):
    """Temporarily stop taping the network's parameters (read-only passes)."""
    flags = {k: p.requires_grad for k, p in net.params.items()}
    for p in net.params.values():
        p.requires_grad = False
    try:
        yield net
    finally:
        for k, p in net.params.items():
            p.requires_grad = flags[k]


@dataclass(frozen=True)
class LIFParams:
    tau_m: float = 2.0
    v_th: float = 1.0
    v_reset: float = 0.0
    reset_mode: str = "hard"

    def __post_init__(self):
        if self.tau_m < 1.0:
            raise ValueError("tau_m must be >= 1")
        if self.v_th <= self.v_reset:
            raise ValueError("v_th must exceed v_reset")
        if self.reset_mode not in ("hard", "soft"):
            raise ValueError(f"unknown reset mode {self.reset_mode!r}")


@dataclass
class LayerState:
    membrane: Tensor
    last_spikes: Tensor


def lif_step(state, input_current, params, smooth=False):
    """One discrete LIF update: leak toward the input, fire, reset.

    u' = u + (1/tau_m)(x - u); spikes where u' >= v_th (ties fire); hard
    reset pulls fired units to v_reset, soft reset subtracts v_th.
    """
    u = state.membrane + (input_current - state.membrane) * (1.0 / params.tau_m)
    spikes = ad.spike_threshold(u, params.v_th, smooth=smooth)
    if params.reset_mode == "hard":
        u_next = u * (1.0 - spikes) + spikes * params.v_reset
    else:
        u_next = u - spikes * params.v_th
    return LayerState(u_next, spikes), spikes


@dataclass
class NetworkSpec:
    """Shape of the spiking CNN and which layers carry cortical sheets."""

    input_shape: tuple = (3, 32, 32)        # (C, H, W)
    block_channels: tuple = (8, 16, 32)
    kernel: int = 3
    pool: int = 2
    timesteps: int = 4
    n_classes: int = 4
    constrained_layers: tuple = ("block1",)
    lif: LIFParams = field(default_factory=LIFParams)

    def __post_init__(self):
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        ids = set(self.layer_ids())
        bad = [l for l in self.constrained_layers if l not in ids]
        if bad:
            raise ValueError(f"constrained layers {bad} not in {sorted(ids)}")
        c, h, w = self.input_shape
        for _ in self.block_channels:
            if h % self.pool or w % self.pool:
                raise ValueError(
                    f"input {self.input_shape} not divisible by pool "
                    f"{self.pool} across {len(self.block_channels)} blocks")
            h, w = h // self.pool, w // self.pool

    def layer_ids(self):
        return [f"block{i + 1}" for i in range(len(self.block_channels))]

    def layer_shape(self, layer_id):
        """(C, H, W) of a block's LIF output (before its pool)."""
        idx = self.layer_ids().index(layer_id)
        _, h, w = self.input_shape
        for _ in range(idx):
            h, w = h // self.pool, w // self.pool
        return (self.block_channels[idx], h, w)

    def feature_size(self):
        _, h, w = self.input_shape
        for _ in self.block_channels:
            h, w = h // self.pool, w // self.pool
        return self.block_channels[-1] * h * w

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "block_channels": list(self.block_channels),
            "kernel": self.kernel, "pool": self.pool,
            "timesteps": self.timesteps, "n_classes": self.n_classes,
            "constrained_layers": list(self.constrained_layers),
            "lif": {"tau_m": self.lif.tau_m, "v_th": self.lif.v_th,
                    "v_reset": self.lif.v_reset,
                    "reset_mode": self.lif.reset_mode},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(input_shape=tuple(d["input_shape"]),
                   block_channels=tuple(d["block_channels"]),
                   kernel=d["kernel"], pool=d["pool"],
                   timesteps=d["timesteps"], n_classes=d["n_classes"],
                   constrained_layers=tuple(d["constrained_layers"]),
                   lif=LIFParams(**d["lif"]))


class SpikingNetwork:
    """Conv blocks with LIF units plus a time-averaged dense readout."""

    def __init__(self, spec, seed=0):
        self.spec = spec
        rng = named_rng(seed, "weights")
        self.params = {}
        in_c = spec.input_shape[0]
        k = spec.kernel
        for i, out_c in enumerate(spec.block_channels):
            fan_in = in_c * k * k
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_c, in_c, k, k))
            self.params[f"block{i + 1}.w"] = Tensor(w, requires_grad=True)
            self.params[f"block{i + 1}.b"] = Tensor(np.zeros(out_c),
                                                    requires_grad=True)
            in_c = out_c
        feat = spec.feature_size()
        w = rng.normal(0.0, np.sqrt(1.0 / feat), size=(feat, spec.n_classes))
        self.params["head.w"] = Tensor(w, requires_grad=True)
        self.params["head.b"] = Tensor(np.zeros(spec.n_classes),
                                       requires_grad=True)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def forward(self, images, record=True, truncate_t=None, smooth=False):
        """Run the network for T timesteps.

        images: Tensor or array, either (B, C, H, W) presented at every
        timestep, or (T, B, C, H, W) for per-timestep inputs. truncate_t
        limits the input drive and the readout average to the first t
        steps (later steps receive zero drive and are excluded). record
        may be False, True (the spec's constrained layers), or an explicit
        list of layer ids.

        Returns (logits (B, n_classes), {layer_id: spikes (units, B, T)}).
        """
        spec = self.spec
        t_total = spec.timesteps
        per_step = False
        if isinstance(images, Tensor):
            x_in = images
        else:
            x_in = Tensor(images)
        if x_in.ndim == 5:
            per_step = True
            if x_in.shape[0] != t_total:
                raise ad.ShapeMismatchError(
                    f"per-timestep input has {x_in.shape[0]} steps, "
                    f"net expects {t_total}")
            batch = x_in.shape[1]
        elif x_in.ndim == 4:
            batch = x_in.shape[0]
        else:
            raise ad.ShapeMismatchError(
                f"images must be (B,C,H,W) or (T,B,C,H,W), got {x_in.shape}")
        t_use = t_total if truncate_t is None else int(truncate_t)
        if not 1 <= t_use <= t_total:
            raise ValueError(f"truncate_t must be in [1, {t_total}]")

        states = {}
        for i, lid in enumerate(spec.layer_ids()):
            c, h, w = spec.layer_shape(lid)
            zero = Tensor(np.zeros((batch, c, h, w)))
            states[lid] = LayerState(zero, zero)
        if record is True:
            record_ids = spec.constrained_layers
        elif record:
            unknown = [l for l in record if l not in spec.layer_ids()]
            if unknown:
                raise ValueError(f"cannot record unknown layers {unknown}")
            record_ids = tuple(record)
        else:
            record_ids = ()
        recorded = {lid: [] for lid in record_ids}
        logit_steps = []
        for t in range(t_total):
            if t < t_use:
                x = x_in[t] if per_step else x_in
            else:
                x = Tensor(np.zeros(x_in.shape[-4:]))
            h = x
            for lid in spec.layer_ids():
                cur = ad.conv2d(h, self.params[f"{lid}.w"],
                                self.params[f"{lid}.b"],
                                stride=1, padding=spec.kernel // 2)
                states[lid], spikes = lif_step(states[lid], cur, spec.lif,
                                               smooth=smooth)
                if lid in recorded:
                    flat = spikes.reshape(batch, -1).transpose(1, 0)
                    recorded[lid].append(flat)
                h = ad.avg_pool2d(spikes, spec.pool)
            feats = h.reshape(batch, -1)
            logits_t = feats @ self.params["head.w"] + self.params["head.b"]
            if t < t_use:
                logit_steps.append(logits_t)
        logits = logit_steps[0]
        for lt in logit_steps[1:]:
            logits = logits + lt
        logits = logits * (1.0 / t_use)
        spike_trains = {lid: ad.stack(steps, axis=2)
                        for lid, steps in recorded.items()}
        return logits, spike_trains


def forward_pass(net, images, **kwargs):
    """Module-level alias for SpikingNetwork.forward."""
    return net.forward(images, **kwargs)


def calibrate(net, images, target_std=1.0):
    """Scale each conv layer so its input current has roughly unit std.

    LIF layers go silent when their drive never reaches threshold; fan-in
    based init cannot anticipate the sparsity of upstream spikes, so the
    scale is set from an actual calibration batch, block by block. The
    procedure is deterministic given the batch.
    """
    spec = net.spec
    for target in spec.layer_ids():
        x = np.asarray(images, dtype=np.float64)
        states = {lid: np.zeros((x.shape[0],) + spec.layer_shape(lid))
                  for lid in spec.layer_ids()}
        stds = []
        for _ in range(spec.timesteps):
            h = x
            for lid in spec.layer_ids():
                cur = ad.conv2d(Tensor(h), Tensor(net.params[f"{lid}.w"].data),
                                Tensor(net.params[f"{lid}.b"].data),
                                stride=1, padding=spec.kernel // 2).data
                if lid == target:
                    stds.append(cur.std())
                u = states[lid] + (cur - states[lid]) / spec.lif.tau_m
                s = (u >= spec.lif.v_th).astype(np.float64)
                if spec.lif.reset_mode == "hard":
                    states[lid] = u * (1 - s) + s * spec.lif.v_reset
                else:
                    states[lid] = u - s * spec.lif.v_th
                h = ad.avg_pool2d(Tensor(s), spec.pool).data
        std = float(np.mean(stds))
        if std > 1e-12:
            net.params[f"{target}.w"].data *= target_std / std
            net.params[f"{target}.b"].data *= target_std / std
    return net


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 20
    lr: float = 0.1
    momentum: float = 0.9
    lr_schedule: str = "cosine"      # cosine | constant
    seed: int = 0
    stc: STCConfig = field(default_factory=STCConfig)
    grad_clip: float = 0.0           # global-norm clip; 0 disables
    checkpoint_every: int = 0        # epochs; 0 = only final

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (pairwise correlations "
                             "need at least 2 trials)")
        if self.epochs < 1 or self.lr <= 0:
            raise ValueError("epochs and lr must be positive")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")


@dataclass
class TrainedModel:
    net: "SpikingNetwork"
    sheets: dict
    history: list          # one dict per step
    config: TrainConfig


def _check_sheets(spec, cfg, sheets):
    if cfg.stc.alpha == 0.0 and cfg.stc.beta == 0.0:
        return
    for lid in cfg.stc.constrained_layers:
        if lid not in sheets:
            raise ValueError(f"no sheet provided for constrained layer {lid}")
        expect = spec.layer_shape(lid)
        if tuple(sheets[lid].dims) != tuple(expect):
            raise ValueError(
                f"sheet for {lid} has dims {sheets[lid].dims}, layer is {expect}")


def train(net, data, cfg, sheets=None, checkpoint_path=None,
          start_epoch=0, history=None, velocity=None):
    """Minimize task loss plus the cluster-averaged topography penalty.

    data: object with .train_images (N,C,H,W), .train_labels (N,). Returns
    a TrainedModel whose history logs task and penalty components per step.
    Bit-reproducible for a fixed (cfg.seed, start state). Resuming from a
    checkpoint (start_epoch, history, velocity from load_checkpoint) yields
    exactly the weights of an uninterrupted run.
    """
    sheets = sheets or {}
    spec = net.spec
    _check_sheets(spec, cfg, sheets)
    images, labels = data.train_images, data.train_labels
    n = images.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    steps_per_epoch = max(1, n // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    if velocity is None:
        velocity = {k: np.zeros_like(p.data) for k, p in net.params.items()}
    history = list(history) if history else []
    step = start_epoch * steps_per_epoch
    for epoch in range(start_epoch, cfg.epochs):
        order = named_rng(cfg.seed, f"shuffle:{epoch}").permutation(n)
        for bi in range(steps_per_epoch):
            idx = order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]
            if idx.size < 2:
                continue
            logits, spikes = net.forward(
                Tensor(images[idx]),
                record=bool(cfg.stc.constrained_layers) and
                (cfg.stc.alpha > 0 or cfg.stc.beta > 0))
            task = ad.softmax_cross_entropy(logits, labels[idx])
            penalty, breakdown = stc_total(spikes, sheets, cfg.stc,
                                           cfg.seed, step=step)
            total = task + penalty
            net.zero_grad()
            total.backward()
            if cfg.lr_schedule == "cosine":
                lr = cfg.lr * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))
            else:
                lr = cfg.lr
            if cfg.grad_clip > 0.0:
                sq = sum(float(np.sum(p.grad * p.grad))
                         for p in net.params.values() if p.grad is not None)
                gnorm = np.sqrt(sq)
                scale = cfg.grad_clip / gnorm if gnorm > cfg.grad_clip else 1.0
            else:
                scale = 1.0
            for k, p in net.params.items():
                g = p.grad * scale if p.grad is not None else 0.0
                velocity[k] = cfg.momentum * velocity[k] - lr * g
                p.data += velocity[k]
            row = {"step": step, "epoch": epoch,
                   "L_task": task.item(), "L_total": total.item(),
                   "L_L_mean": float(np.mean([b["L_L"] for b in
                                              breakdown.values()]))
                   if breakdown else 0.0,
                   "L_S_mean": float(np.mean([b["L_S"] for b in
                                              breakdown.values()]))
                   if breakdown else 0.0}
            for lid, b in breakdown.items():
                row[f"L_L[{lid}]"] = b["L_L"]
                row[f"L_S[{lid}]"] = b["L_S"]
            history.append(row)
            step += 1
        if checkpoint_path and cfg.checkpoint_every and \
                (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, net, sheets,
                            extra={"epoch": epoch + 1,
                                   "history": history},
                            velocity=velocity)
    model = TrainedModel(net, sheets, history, cfg)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, net, sheets,
                        extra={"epoch": cfg.epochs, "history": history},
                        velocity=velocity)
    return model


def evaluate(net, images, labels, batch_size=50):
    """Classification accuracy with gradients off."""
    n = images.shape[0]
    correct = 0
    for i in range(0, n, batch_size):
        logits, _ = net.forward(Tensor(images[i:i + batch_size]), record=False)
        correct += int((logits.data.argmax(axis=1) ==
                        labels[i:i + batch_size]).sum())
    return correct / n


# ---------------------------------------------------------------------------
# Checkpoints (npz, versioned)
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, net, sheets, extra=None, velocity=None):
    """Portable npz: weights + network spec + sheet coordinates.

    velocity (the optimizer's momentum buffers) is stored when given so a
    resumed run continues bit-identically.
    """
    arrays = {f"param/{k}": p.data for k, p in net.params.items()}
    if velocity:
        arrays.update({f"velocity/{k}": v for k, v in velocity.items()})
    meta = {"version": CHECKPOINT_VERSION, "spec": net.spec.to_dict(),
            "sheets": {}, "extra": extra or {}}
    for lid, sheet in sheets.items():
        arrays[f"sheet/{lid}"] = sheet.coords
        meta["sheets"][lid] = {"sheet_h": sheet.sheet_h,
                               "sheet_w": sheet.sheet_w,
                               "dims": list(sheet.dims)}
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path):
    """Returns (net, sheets, extra). Raises CheckpointError on bad files."""
    from toposnn.sheet import CorticalSheet
    try:
        data = np.load(path)
        meta = json.loads(bytes(data["meta"]).decode())
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {meta.get('version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})")
    try:
        spec = NetworkSpec.from_dict(meta["spec"])
        net = SpikingNetwork(spec, seed=0)
        for k in list(net.params):
            net.params[k] = Tensor(data[f"param/{k}"], requires_grad=True)
        sheets = {}
        for lid, sm in meta["sheets"].items():
            sheets[lid] = CorticalSheet(lid, sm["sheet_h"], sm["sheet_w"],
                                        tuple(sm["dims"]), data[f"sheet/{lid}"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint {path} missing field {exc}") from exc
    extra = meta.get("extra", {})
    velocity = {k[len("velocity/"):]: data[k] for k in data.files
                if k.startswith("velocity/")}
    if velocity:
        extra["velocity"] = velocity
    return net, sheets, extra
