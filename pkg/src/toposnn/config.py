"""Run configuration: flat INI-style text with CLI overrides.

Every key is declared in a schema with a type and default; unknown
sections or keys are rejected before any compute starts, and the fully
resolved configuration is echoed into each run's metadata.
"""

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from toposnn.snn import LIFParams, NetworkSpec, TrainConfig
from toposnn.stc import STCConfig


class ConfigError(ValueError):
    pass


def _int_list(text):
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _str_list(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _float_list(text):
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# {section: {key: (parser, default)}}
SCHEMA = {
    "run": {
        "seed": (int, 0),
        "output_dir": (str, "runs/default"),
    },
    "network": {
        "input_channels": (int, 3),
        "input_size": (int, 32),
        "block_channels": (_int_list, (8, 16, 32)),
        "kernel": (int, 3),
        "pool": (int, 2),
        "timesteps": (int, 4),
        "n_classes": (int, 4),
        "constrained_layers": (_str_list, ("block1",)),
        "tau_m": (float, 2.0),
        "v_th": (float, 1.0),
        "v_reset": (float, 0.0),
        "reset_mode": (str, "hard"),
    },
    "train": {
        "epochs": (int, 30),
        "batch_size": (int, 20),
        "lr": (float, 0.1),
        "momentum": (float, 0.9),
        "lr_schedule": (str, "cosine"),
        "grad_clip": (float, 0.0),
        "checkpoint_every": (int, 0),
        "calibrate": (_bool, True),
    },
    "stc": {
        "alpha": (float, 50.0),
        "beta": (float, 50.0),
        "ccg_window": (int, 2),
        "clusters_per_layer": (int, 4),
        "cluster_edge_mm": (float, 2.0),
    },
    "sheet": {
        "height_mm": (float, 10.0),
        "width_mm": (float, 10.0),
    },
    "preopt": {
        "pretrain_epochs": (int, 5),
        "steps": (int, 2000),
        "temp_start": (float, 0.02),
        "temp_levels": (int, 6),
        "temp_decay": (float, 0.5),
    },
    "data": {
        "kind": (str, "synthetic"),          # synthetic | idx | csv | imagedir
        "path": (str, ""),
        "split_ratio": (float, 0.8),
        "n_per_class": (int, 75),
        "noise": (float, 0.10),
    },
    "battery": {
        "n_orient": (int, 8),
        "n_freq": (int, 4),
        "n_phase": (int, 4),
        "hues": (int, 2),
    },
    "analysis": {
        "v1_layer": (str, ""),               # default: first constrained
        "it_layer": (str, ""),               # default: deepest block
        "smoothness_radius_mm": (float, 1.0),
        "smoothness_shuffles": (int, 20),
        "corr_bins": (int, 8),
        "t_crit": (float, 3.0),
        "fisher_samples": (int, 16),
        "n_category_exemplars": (int, 32),
        "preference_maps": (_bool, True),
        "corr_distance": (_bool, True),
        "selectivity": (_bool, True),
        "entropy": (_bool, True),
        "fisher": (_bool, True),
    },
    "attack": {
        "kinds": (_str_list, ("gaussian", "fgsm", "pgd", "mask")),
        "strengths": (_float_list, (0.0, 0.02, 0.05, 0.1)),
        "pgd_steps": (int, 4),
        "n_samples": (int, 60),
    },
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        section, name = key.split(".")
        return self.values[section][name]

    def to_dict(self):
        return {s: dict(kv) for s, kv in self.values.items()}

    # -- typed views ------------------------------------------------------

    def network_spec(self):
        v = self.values["network"]
        return NetworkSpec(
            input_shape=(v["input_channels"], v["input_size"], v["input_size"]),
            block_channels=v["block_channels"], kernel=v["kernel"],
            pool=v["pool"], timesteps=v["timesteps"],
            n_classes=v["n_classes"],
            constrained_layers=v["constrained_layers"],
            lif=LIFParams(v["tau_m"], v["v_th"], v["v_reset"],
                          v["reset_mode"]))

    def stc_config(self):
        v = self.values["stc"]
        return STCConfig(alpha=v["alpha"], beta=v["beta"],
                         ccg_window=v["ccg_window"],
                         clusters_per_layer=v["clusters_per_layer"],
                         cluster_edge_mm=v["cluster_edge_mm"],
                         constrained_layers=list(
                             self.values["network"]["constrained_layers"]))

    def train_config(self, stc=None):
        v = self.values["train"]
        return TrainConfig(epochs=v["epochs"], batch_size=v["batch_size"],
                           lr=v["lr"], momentum=v["momentum"],
                           lr_schedule=v["lr_schedule"],
                           seed=self.values["run"]["seed"],
                           stc=stc if stc is not None else self.stc_config(),
                           grad_clip=v["grad_clip"],
                           checkpoint_every=v["checkpoint_every"])


def _defaults():
    return {s: {k: dv for k, (_, dv) in kv.items()} for s, kv in SCHEMA.items()}


def _apply(values, section, key, raw):
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    parse, _ = SCHEMA[section][key]
    try:
        values[section][key] = parse(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc


def _validate(cfg):
    try:
        cfg.network_spec()
        cfg.stc_config()
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["stc.ccg_window"] >= cfg["network.timesteps"]:
        raise ConfigError(
            f"stc.ccg_window ({cfg['stc.ccg_window']}) must be smaller "
            f"than network.timesteps ({cfg['network.timesteps']})")
    data = cfg.values["data"]
    if data["kind"] not in ("synthetic", "idx", "csv", "imagedir"):
        raise ConfigError(f"unknown data kind {data['kind']!r}")
    if data["kind"] != "synthetic" and not data["path"]:
        raise ConfigError("data.path required for on-disk datasets")
    if not 0 < data["split_ratio"] < 1:
        raise ConfigError("data.split_ratio must be in (0, 1)")


def load_config(path=None, overrides=()):
    """Parse an INI file plus 'section.key=value' overrides; validate all."""
    values = _defaults()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        parser = configparser.ConfigParser()
        try:
            parser.read_string(p.read_text())
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                _apply(values, section, key, raw)
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(
                f"override {ov!r} must look like section.key=value")
        target, raw = ov.split("=", 1)
        section, key = target.split(".", 1)
        _apply(values, section.strip(), key.strip(), raw.strip())
    cfg = RunConfig(values)
    _validate(cfg)
    return cfg
