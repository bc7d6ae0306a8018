"""Command-line entry point.

    topo-snn preopt  --config cfg.ini [--set section.key=value]...
    topo-snn train   --config cfg.ini [--set ...]
    topo-snn analyze --config cfg.ini [--set ...]
    topo-snn attack  --config cfg.ini [--set ...]

Outputs land in [run] output_dir, resolved against $TOPOSNN_OUTPUT_ROOT
when that variable is set. Exit codes: 0 success, 1 usage error,
2 configuration or data error, 3 artifact corruption.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from toposnn import analysis as an
from toposnn import attacks as atk
from toposnn import report
from toposnn import sheet as sh
from toposnn.config import ConfigError, load_config
from toposnn.datasets import DatasetError, load_dataset, make_handle
from toposnn.sheet import SheetConfigError
from toposnn.snn import (CheckpointError, SpikingNetwork, calibrate,
                         load_checkpoint, save_checkpoint, train, evaluate)
from toposnn.stimuli import (grating_battery, make_category_sets,
                             make_orientation_dataset, render_battery)

EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_CORRUPT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _out_dir(cfg):
    root = os.environ.get("TOPOSNN_OUTPUT_ROOT", ".")
    out = Path(root) / cfg["run.output_dir"]
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(cfg):
    d = cfg.values["data"]
    seed = cfg["run.seed"]
    if d["kind"] == "synthetic":
        size = cfg["network.input_size"]
        imgs, labels = make_orientation_dataset(
            n_per_class=d["n_per_class"], size=size,
            channels=cfg["network.input_channels"], seed=seed,
            n_classes=cfg["network.n_classes"], noise=d["noise"])
        return make_handle(imgs, labels, d["split_ratio"], seed,
                           source="synthetic")
    return load_dataset(d["path"], d["kind"], d["split_ratio"], seed)


def _battery(cfg):
    b = cfg.values["battery"]
    return grating_battery(b["n_orient"], b["n_freq"], b["n_phase"],
                           b["hues"], size=cfg["network.input_size"],
                           channels=cfg["network.input_channels"])


def _sheet_path(out, layer_id):
    return out / "sheets" / f"{layer_id}.sheet"


def _load_sheets(cfg, out):
    spec = cfg.network_spec()
    sheets = {}
    for lid in spec.constrained_layers:
        path = _sheet_path(out, lid)
        if not path.exists():
            raise ConfigError(
                f"sheet file {path} missing; run `topo-snn preopt` first "
                "(steps=0 gives fresh embeddings)")
        sheets[lid] = sh.load_sheet(path)
    return sheets


def _write_meta(out, cfg, command):
    report.write_manifest(out / f"{command}_meta.json",
                          {"command": command, "config": cfg.to_dict()})


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_preopt(cfg):
    out = _out_dir(cfg)
    seed = cfg["run.seed"]
    spec = cfg.network_spec()
    data = _dataset(cfg)
    # auxiliary net: task loss only
    aux = SpikingNetwork(spec, seed=seed)
    if cfg["train.calibrate"]:
        calibrate(aux, data.train_images[:min(40, len(data.train_images))])
    tc = cfg.train_config(stc=cfg.stc_config())
    tc.stc.alpha = 0.0
    tc.stc.beta = 0.0
    tc.epochs = cfg["preopt.pretrain_epochs"]
    train(aux, data, tc)
    battery_imgs = render_battery(_battery(cfg))
    p = cfg.values["preopt"]
    temps = sh.geometric_schedule(p["temp_levels"], p["temp_start"],
                                  p["temp_decay"])
    (out / "sheets").mkdir(exist_ok=True)
    log_rows = []
    for lid in spec.constrained_layers:
        c, h, w = spec.layer_shape(lid)
        sheet = sh.embed_layer(c, h, w, cfg["sheet.height_mm"],
                               cfg["sheet.width_mm"], seed, layer_id=lid)
        responses = an.layer_rates(aux, battery_imgs, lid)
        sheet, trace = sh.preoptimize_positions(
            sheet, responses, p["steps"], temperatures=temps, seed=seed)
        sh.save_sheet(sheet, _sheet_path(out, lid))
        for stage, (temp, j) in enumerate(trace):
            log_rows.append([lid, stage, temp, j])
    report.write_csv(out / "preopt_log.csv",
                     ["layer", "stage", "temperature", "J"], log_rows)
    _write_meta(out, cfg, "preopt")
    print(f"sheets written to {out / 'sheets'}")
    return 0


def cmd_train(cfg):
    out = _out_dir(cfg)
    seed = cfg["run.seed"]
    spec = cfg.network_spec()
    stc_cfg = cfg.stc_config()
    data = _dataset(cfg)
    sheets = {}
    if stc_cfg.alpha > 0 or stc_cfg.beta > 0:
        sheets = _load_sheets(cfg, out)
    net = SpikingNetwork(spec, seed=seed)
    if cfg["train.calibrate"]:
        calibrate(net, data.train_images[:min(40, len(data.train_images))])
    tc = cfg.train_config(stc=stc_cfg)
    model = train(net, data, tc, sheets,
                  checkpoint_path=out / "checkpoint.npz")
    report.write_training_log(out / "train_log.csv", model.history)
    val_acc = evaluate(net, data.val_images, data.val_labels) \
        if data.val_idx.size else float("nan")
    report.write_manifest(out / "train_summary.json", {
        "final_task_loss": model.history[-1]["L_task"],
        "final_total_loss": model.history[-1]["L_total"],
        "train_accuracy": evaluate(net, data.train_images, data.train_labels),
        "val_accuracy": val_acc,
        "steps": len(model.history),
    })
    _write_meta(out, cfg, "train")
    print(f"checkpoint written to {out / 'checkpoint.npz'}")
    return 0


def _analysis_layers(cfg, spec):
    v1 = cfg["analysis.v1_layer"] or spec.constrained_layers[0]
    it = cfg["analysis.it_layer"] or spec.layer_ids()[-1]
    return v1, it


def cmd_analyze(cfg):
    out = _out_dir(cfg)
    seed = cfg["run.seed"]
    net, sheets, _ = load_checkpoint(_out_dir(cfg) / "checkpoint.npz")
    spec = net.spec
    a = cfg.values["analysis"]
    v1_layer, it_layer = _analysis_layers(cfg, spec)
    figdir = out / "figures"
    figdir.mkdir(exist_ok=True)
    summary = {"stage_mapping": {g: names for g, names in
                                 an.layer_groups(spec).items()},
               "v1_layer": v1_layer, "it_layer": it_layer,
               "t_crit": a["t_crit"]}

    battery = _battery(cfg)
    battery_imgs = render_battery(battery)

    def sheet_for(lid):
        if lid in sheets:
            return sheets[lid]
        c, h, w = spec.layer_shape(lid)
        return sh.embed_layer(c, h, w, cfg["sheet.height_mm"],
                              cfg["sheet.width_mm"], seed, layer_id=lid)

    if a["preference_maps"]:
        rates = an.layer_rates(net, battery_imgs, v1_layer)
        v1_sheet = sheet_for(v1_layer)
        summary["smoothness"] = {}
        for kind in ("orientation", "frequency", "color"):
            curves = an.tuning_curves(net, battery, v1_layer, kind,
                                      rates=rates)
            pmap = an.preference_map(curves, v1_sheet, kind)
            rows = [[u, v1_sheet.coords[u, 0], v1_sheet.coords[u, 1],
                     pmap.preference[u], pmap.magnitude[u],
                     int(pmap.defined[u])] for u in range(len(curves))]
            report.write_csv(out / f"preference_{kind}.csv",
                             ["unit", "x_mm", "y_mm", "preference",
                              "magnitude", "defined"], rows)
            report.fig_preference_map(pmap, figdir / f"preference_{kind}.svg")
            try:
                s = an.smoothness(pmap, a["smoothness_radius_mm"],
                                  a["smoothness_shuffles"], seed)
            except an.AnalysisConfigError:
                s = float("nan")
            summary["smoothness"][kind] = s
        report.write_csv(out / "smoothness.csv", ["kind", "smoothness"],
                         [[k, v] for k, v in summary["smoothness"].items()])

    if a["corr_distance"]:
        spikes = an.layer_spike_trains(net, battery_imgs, v1_layer)
        centers, means, lo, hi = an.correlation_vs_distance(
            spikes, sheet_for(v1_layer), a["corr_bins"], seed=seed)
        report.write_csv(out / "correlation_distance.csv",
                         ["distance_mm", "mean_correlation",
                          "ci_low", "ci_high"],
                         zip(centers, means, lo, hi))
        report.fig_correlation_distance(centers, means, lo, hi,
                                        figdir / "correlation_distance.svg")
        nz = ~np.isnan(means)
        summary["corr_distance_nearest_bin"] = \
            float(means[nz][0]) if nz.any() else None

    if a["selectivity"]:
        cats = make_category_sets(seed, a["n_category_exemplars"],
                                  size=spec.input_shape[1],
                                  channels=spec.input_shape[0])
        smap = an.selectivity_tmap(net, cats, it_layer, sheet_for(it_layer),
                                   a["t_crit"])
        rows = []
        for ci, cname in enumerate(smap.categories):
            for u in range(smap.t_values.shape[1]):
                rows.append([cname, u, smap.t_values[ci, u],
                             int(smap.significant[ci, u])])
        report.write_csv(out / "selectivity_tvalues.csv",
                         ["category", "unit", "t_value", "significant"], rows)
        overlap_rows = []
        summary["patch_overlap"] = {}
        for i in range(len(smap.categories)):
            for j in range(i + 1, len(smap.categories)):
                r, jac = an.patch_overlap(smap, smap.categories[i],
                                          smap.categories[j])
                overlap_rows.append([smap.categories[i], smap.categories[j],
                                     r, jac])
                summary["patch_overlap"][
                    f"{smap.categories[i]}|{smap.categories[j]}"] = r
        report.write_csv(out / "patch_overlap.csv",
                         ["category_a", "category_b", "t_correlation",
                          "jaccard"], overlap_rows)
        for cname in smap.categories:
            report.fig_selectivity_map(
                smap, cname, figdir / f"selectivity_{cname}.svg")

    data = _dataset(cfg)
    if a["entropy"]:
        rows = []
        summary["entropy_per_layer"] = {}
        per_t = {}
        for lid in spec.layer_ids():
            spikes = an.layer_spike_trains(net, data.val_images[:64], lid)
            h_layer = an.spike_entropy(spikes, per="layer")
            h_t = an.spike_entropy(spikes, per="timestep")
            summary["entropy_per_layer"][lid] = h_layer
            per_t[lid] = h_t
            rows.append([lid, "layer", -1, h_layer])
            for t, h in enumerate(h_t):
                rows.append([lid, "timestep", t + 1, h])
        report.write_csv(out / "entropy.csv",
                         ["layer", "aggregation", "timestep", "entropy_bits"],
                         rows)
        report.fig_curves(np.arange(1, spec.timesteps + 1), per_t,
                          figdir / "entropy_timesteps.svg",
                          "timestep", "entropy (bits)")

    if a["fisher"]:
        n = min(a["fisher_samples"], data.val_images.shape[0])
        traj = an.fisher_trajectory(net, data.val_images[:n],
                                    data.val_labels[:n])
        rows = []
        for g, vals in traj.groups.items():
            for t, v in enumerate(vals):
                rows.append([g, t + 1, v])
        for t, v in enumerate(traj.total):
            rows.append(["total", t + 1, v])
        report.write_csv(out / "fisher.csv",
                         ["group", "timestep", "fisher_information"], rows)
        report.fig_curves(np.arange(1, spec.timesteps + 1), traj.groups,
                          figdir / "fisher.svg", "timestep",
                          "Fisher information")
        summary["fisher_total"] = traj.total
    report.write_manifest(out / "analysis_manifest.json", summary)
    _write_meta(out, cfg, "analyze")
    print(f"analysis written to {out}")
    return 0


def cmd_attack(cfg):
    out = _out_dir(cfg)
    seed = cfg["run.seed"]
    net, _, _ = load_checkpoint(out / "checkpoint.npz")
    data = _dataset(cfg)
    v = cfg.values["attack"]
    n = min(v["n_samples"], data.val_images.shape[0])
    images, labels = data.val_images[:n], data.val_labels[:n]
    rows = []
    series = {}
    for kind in v["kinds"]:
        accs = []
        for strength in v["strengths"]:
            _, clean, attacked = atk.attack(net, images, labels, kind,
                                            strength, seed=seed,
                                            pgd_steps=v["pgd_steps"])
            rows.append([kind, strength, clean, attacked, clean - attacked])
            accs.append(attacked)
        series[kind] = accs
    report.write_csv(out / "robustness.csv",
                     ["kind", "strength", "clean_accuracy",
                      "attacked_accuracy", "accuracy_drop"], rows)
    report.fig_curves(np.asarray(v["strengths"]), series,
                      out / "robustness.svg", "strength", "accuracy")
    _write_meta(out, cfg, "attack")
    print(f"robustness table written to {out / 'robustness.csv'}")
    return 0


# ---------------------------------------------------------------------------

def main(argv=None):
    parser = _Parser(prog="topo-snn",
                     description="Train and analyze topographic spiking nets")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)
    for name, fn in [("preopt", cmd_preopt), ("train", cmd_train),
                     ("analyze", cmd_analyze), ("attack", cmd_attack)]:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="INI config file (defaults used when omitted)")
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="SECTION.KEY=VALUE")
        p.set_defaults(fn=fn)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code else 0
    try:
        cfg = load_config(args.config, args.overrides)
        return args.fn(cfg)
    except (ConfigError, DatasetError, SheetConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT


if __name__ == "__main__":
    sys.exit(main())
