"""Command-line pipeline: simulate -> dataset -> train -> predict -> score.

Stages communicate through files inside the run's output directory, so each
stage can be invoked on its own or chained end to end by `run-all`. Every
output is deterministic for a fixed config and seed, and every exported file
round-trips byte-for-byte through its reader/writer pair.

Exit codes: 2 config validation, 3 integration-invariant failure, 4 missing
stage inputs, 5 malformed stage files (including an unusable dataset split),
6 run-all config mismatch.
"""

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import dataset as dsmod
from . import dynamics as dy
from . import memory_metric as mm
from . import mlp

EXIT_CONFIG = 2
EXIT_INTEGRATION = 3
EXIT_MISSING = 4
EXIT_MALFORMED = 5
EXIT_MISMATCH = 6

TRAJECTORY_CSV = "trajectory.csv"
DATASET_CSV = "dataset.csv"
PARAMS_JSON = "params.json"
LOSS_CSV = "loss.csv"
PREDICTIONS_CSV = "predictions.csv"
REPORT_JSON = "report.json"
TRUTH_REPORT_JSON = "truth_report.json"
SEGMENTS_CSV = "segments.csv"
COMPARISON_JSON = "comparison.json"
TRAJECTORY_SVG = "trajectory.svg"
PREDICTION_SVG = "prediction.svg"

_STATE_TAGS = (dy.STATE_EXCITED_EXCITED, dy.STATE_PLUS_EXCITED,
               dy.STATE_TILTED_EXCITED)


class ConfigError(ValueError):
    """Raised on any run-config schema or value violation."""


# ---------- run configuration ----------

@dataclass(frozen=True)
class RunConfig:
    channel: dy.ChannelSpec
    g: float
    grid: dy.TimeGrid
    initial_state: str
    train: mlp.TrainConfig
    output_dir: str
    window_len: int = 5
    epsilon: float = 0.015
    emit_plots: bool = False


def _check_keys(obj: dict, allowed, required, where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys {unknown} in {where}")
    missing = sorted(set(required) - set(obj))
    if missing:
        raise ConfigError(f"missing keys {missing} in {where}")


def _channel_from_doc(doc: dict, where: str) -> dy.ChannelSpec:
    _check_keys(doc, ("kind", "params", "rate_clamp"), ("kind",), where)
    kind = doc["kind"]
    params = doc.get("params", {})
    if kind == dy.KIND_AD:
        _check_keys(params, ("b", "lambda"), ("b", "lambda"), f"{where}.params")
    elif kind == dy.KIND_RTN:
        _check_keys(params, ("v", "kappa"), ("v", "kappa"), f"{where}.params")
    elif kind == dy.KIND_NONE:
        _check_keys(params, (), (), f"{where}.params")
    else:
        raise ConfigError(f"unknown channel kind {kind!r} in {where}")
    try:
        return dy.ChannelSpec.from_dict(doc)
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"{where}: {e}") from e


def run_config_from_dict(doc: dict, where: str = "config") -> RunConfig:
    _check_keys(doc,
                ("channel", "g", "grid", "initial_state", "window_len",
                 "train", "epsilon", "output_dir", "emit_plots"),
                ("channel", "g", "grid", "initial_state", "output_dir"),
                where)
    channel = _channel_from_doc(doc["channel"], f"{where}.channel")
    grid_doc = doc["grid"]
    _check_keys(grid_doc, ("t_end", "n_steps"), ("t_end", "n_steps"),
                f"{where}.grid")
    train_doc = doc.get("train", {})
    _check_keys(train_doc,
                ("epochs", "batch_size", "lr", "seed", "shuffle_within_train"),
                (), f"{where}.train")
    try:
        g = float(doc["g"])
        grid = dy.TimeGrid(t_end=float(grid_doc["t_end"]),
                           n_steps=int(grid_doc["n_steps"]))
        train = mlp.TrainConfig(
            epochs=int(train_doc.get("epochs", 500)),
            batch_size=int(train_doc.get("batch_size", 32)),
            lr=float(train_doc.get("lr", 1e-3)),
            seed=int(train_doc.get("seed", 0)),
            shuffle_within_train=bool(train_doc.get("shuffle_within_train", True)),
        )
        window_len = int(doc.get("window_len", 5))
        epsilon = float(doc.get("epsilon", 0.015))
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{where}: {e}") from e
    if not (math.isfinite(g) and g > 0):
        raise ConfigError(f"{where}.g must be positive and finite, got {g}")
    tag = doc["initial_state"]
    if tag not in _STATE_TAGS:
        raise ConfigError(f"{where}.initial_state must be one of {_STATE_TAGS}, "
                          f"got {tag!r}")
    if window_len < 2:
        raise ConfigError(f"{where}.window_len must be >= 2, got {window_len}")
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise ConfigError(f"{where}.epsilon must be positive, got {epsilon}")
    output_dir = doc["output_dir"]
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError(f"{where}.output_dir must be a non-empty string")
    emit_plots = doc.get("emit_plots", False)
    if not isinstance(emit_plots, bool):
        raise ConfigError(f"{where}.emit_plots must be a boolean")
    return RunConfig(channel=channel, g=g, grid=grid, initial_state=tag,
                     train=train, output_dir=output_dir, window_len=window_len,
                     epsilon=epsilon, emit_plots=emit_plots)


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e


def load_run_config(path) -> RunConfig:
    return run_config_from_dict(_load_json(path))


def load_pair_config(path):
    doc = _load_json(path)
    _check_keys(doc, ("ad", "rtn"), ("ad", "rtn"), "pair config")
    ad = run_config_from_dict(doc["ad"], "config.ad")
    rtn = run_config_from_dict(doc["rtn"], "config.rtn")
    if os.path.abspath(ad.output_dir) == os.path.abspath(rtn.output_dir):
        raise ConfigError("pair config runs must use distinct output_dir values")
    return ad, rtn


def _apply_overrides(cfg: RunConfig, args, out_dir=None) -> RunConfig:
    if out_dir is not None:
        cfg = dataclasses.replace(cfg, output_dir=out_dir)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, seed=args.seed))
    if args.epsilon is not None:
        if not (math.isfinite(args.epsilon) and args.epsilon > 0):
            raise ConfigError(f"--epsilon must be positive, got {args.epsilon}")
        cfg = dataclasses.replace(cfg, epsilon=args.epsilon)
    if args.plots:
        cfg = dataclasses.replace(cfg, emit_plots=True)
    return cfg


def _path(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.output_dir, name)


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------- pipeline stages ----------

def cmd_simulate(cfg: RunConfig) -> int:
    os.makedirs(cfg.output_dir, exist_ok=True)
    rho0 = dy.initial_state(cfg.initial_state)
    try:
        traj = dy.evolve(rho0, cfg.grid, cfg.g, cfg.channel,
                         initial_state_tag=cfg.initial_state)
    except ValueError as e:
        _err(f"integration failure: {e}")
        return EXIT_INTEGRATION
    dy.write_trajectory(traj, _path(cfg, TRAJECTORY_CSV))
    print(f"regime: {cfg.channel.regime()}")
    print(f"clamp events: {traj.clamp_events}")
    return 0


def cmd_dataset(cfg: RunConfig) -> int:
    src = _path(cfg, TRAJECTORY_CSV)
    if not os.path.exists(src):
        _err(f"missing input: {src}")
        return EXIT_MISSING
    try:
        traj = dy.read_trajectory(src)
        ds = dsmod.build_windows(traj, cfg.window_len)
        dsmod.write_dataset(ds, _path(cfg, DATASET_CSV))
    except ValueError as e:
        _err(f"malformed input: {e}")
        return EXIT_MALFORMED
    print(f"windows: {len(ds)} (split at {ds.split_index})")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    src = _path(cfg, DATASET_CSV)
    if not os.path.exists(src):
        _err(f"missing input: {src}")
        return EXIT_MISSING
    try:
        ds = dsmod.read_dataset(src)
        params, curve = mlp.train(ds, cfg.train)
    except ValueError as e:
        _err(f"malformed input: {e}")
        return EXIT_MALFORMED
    mlp.save_params(params, _path(cfg, PARAMS_JSON))
    mlp.write_loss_curve(curve, _path(cfg, LOSS_CSV))
    print(f"final train mse: {curve[-1]:.6e}")
    return 0


def write_predictions(t_indices, preds, path) -> None:
    """CSV `t_index,y_hat` at 12 significant digits."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t_index", "y_hat"])
        for ti, y in zip(t_indices, preds):
            w.writerow([str(int(ti)), f"{y:.12g}"])


def read_predictions(path):
    t_indices, preds = [], []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != ["t_index", "y_hat"]:
            raise ValueError(f"bad predictions header {header!r} in {path}")
        for row in r:
            if len(row) != 2:
                raise ValueError(f"bad predictions row {row!r} in {path}")
            t_indices.append(int(row[0]))
            preds.append(float(row[1]))
    return np.array(t_indices, dtype=int), np.array(preds, dtype=float)


def cmd_predict(cfg: RunConfig) -> int:
    ds_path = _path(cfg, DATASET_CSV)
    params_path = _path(cfg, PARAMS_JSON)
    for p in (ds_path, params_path):
        if not os.path.exists(p):
            _err(f"missing input: {p}")
            return EXIT_MISSING
    try:
        ds = dsmod.read_dataset(ds_path)
        params = mlp.load_params(params_path)
        _, test = dsmod.chronological_split(ds)
        if not test:
            raise ValueError("test split is empty")
        preds = mlp.predict_series(params, test)
    except ValueError as e:
        _err(f"malformed input: {e}")
        return EXIT_MALFORMED
    write_predictions([s.t_index for s in test], preds,
                      _path(cfg, PREDICTIONS_CSV))
    print(f"predictions: {len(preds)}")
    return 0


def cmd_score(cfg: RunConfig, on_truth: bool = False) -> int:
    if on_truth:
        # diagnostic: score the simulated test labels instead of predictions
        src = _path(cfg, DATASET_CSV)
        if not os.path.exists(src):
            _err(f"missing input: {src}")
            return EXIT_MISSING
        try:
            ds = dsmod.read_dataset(src)
            _, test = dsmod.chronological_split(ds)
            series = np.array([s.y for s in test])
            report = mm.score_pipeline(series, cfg.epsilon)
        except ValueError as e:
            _err(f"malformed input: {e}")
            return EXIT_MALFORMED
        mm.write_report(report, _path(cfg, TRUTH_REPORT_JSON))
    else:
        src = _path(cfg, PREDICTIONS_CSV)
        if not os.path.exists(src):
            _err(f"missing input: {src}")
            return EXIT_MISSING
        try:
            _, series = read_predictions(src)
            report = mm.score_pipeline(series, cfg.epsilon)
        except ValueError as e:
            _err(f"malformed input: {e}")
            return EXIT_MALFORMED
        mm.write_report(report, _path(cfg, REPORT_JSON))
        mm.write_segments_csv(report, _path(cfg, SEGMENTS_CSV))
    print(f"n_rev={report.n_rev} n_eval={report.n_eval} "
          f"score={report.score:.6f} epsilon={report.epsilon:g}")
    return 0


def run_pipeline(cfg: RunConfig) -> int:
    """All five stages in order; stops at the first failing stage."""
    for stage in (cmd_simulate, cmd_dataset, cmd_train, cmd_predict, cmd_score):
        rc = stage(cfg)
        if rc != 0:
            return rc
    if cfg.emit_plots:
        emit_plots(cfg)
    return 0


# ---------- regime comparison ----------

def cmd_run_all(ad_cfg: RunConfig, rtn_cfg: RunConfig, comparison_dir: str) -> int:
    if (ad_cfg.grid != rtn_cfg.grid or ad_cfg.epsilon != rtn_cfg.epsilon
            or ad_cfg.window_len != rtn_cfg.window_len):
        _err("config mismatch: run-all requires a shared grid, epsilon, "
             "and window length")
        return EXIT_MISMATCH
    for cfg in (ad_cfg, rtn_cfg):
        rc = run_pipeline(cfg)
        if rc != 0:
            return rc
    ad_rep = mm.read_report(_path(ad_cfg, REPORT_JSON))
    rtn_rep = mm.read_report(_path(rtn_cfg, REPORT_JSON))
    ratio = rtn_rep.score / ad_rep.score if ad_rep.score > 0 else None
    comparison = {
        "ad_score": ad_rep.score,
        "rtn_score": rtn_rep.score,
        "ratio": ratio,
        "ad_n_rev": ad_rep.n_rev,
        "rtn_n_rev": rtn_rep.n_rev,
        "n_eval": ad_rep.n_eval,
        "epsilon": ad_rep.epsilon,
    }
    os.makedirs(comparison_dir, exist_ok=True)
    out = os.path.join(comparison_dir, COMPARISON_JSON)
    with open(out, "w") as f:
        json.dump(comparison, f, indent=2, sort_keys=True)
        f.write("\n")
    ratio_txt = "undefined" if ratio is None else f"{ratio:.6f}"
    print(f"ad_score={ad_rep.score:.6f} ({ad_rep.n_rev}/{ad_rep.n_eval}) "
          f"rtn_score={rtn_rep.score:.6f} ({rtn_rep.n_rev}/{rtn_rep.n_eval}) "
          f"ratio={ratio_txt}")
    return 0


# ---------- SVG emission ----------

def _svg_chart(path, title, series, markers=()) -> None:
    """Minimal line chart: series = (label, xs, ys, color, dashed) tuples."""
    width, height = 800, 420
    ml, mr, mt, mb = 60, 20, 40, 45
    xs_all = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys_all = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    if x1 == x0:
        x1 = x0 + 1.0
    pad = 0.05 * (y1 - y0 or 1.0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * (width - ml - mr)

    def sy(y):
        return height - mb - (y - y0) / (y1 - y0) * (height - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" '
        f'y2="{height - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" '
        f'stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = x0 + frac * (x1 - x0)
        yv = y0 + frac * (y1 - y0)
        parts.append(f'<text x="{sx(xv):.1f}" y="{height - mb + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{xv:.3g}</text>')
        parts.append(f'<text x="{ml - 8}" y="{sy(yv) + 4:.1f}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{yv:.3g}</text>')
    legend_y = mt - 6
    legend_x = ml + 10
    for label, xs, ys, color, dashed in series:
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"{dash}/>')
        parts.append(f'<text x="{legend_x}" y="{legend_y}" '
                     f'font-family="sans-serif" font-size="12" '
                     f'fill="{color}">{label}</text>')
        legend_x += 9 * len(label) + 30
    for x, y in markers:
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="4" '
                     f'fill="none" stroke="#2ca02c" stroke-width="1.5"/>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts))
        f.write("\n")


def emit_plots(cfg: RunConfig) -> None:
    """Trajectory and prediction figures for a completed run directory."""
    traj = dy.read_trajectory(_path(cfg, TRAJECTORY_CSV))
    t_indices, preds = read_predictions(_path(cfg, PREDICTIONS_CSV))
    report = mm.read_report(_path(cfg, REPORT_JSON))
    kind = cfg.channel.kind
    _svg_chart(
        _path(cfg, TRAJECTORY_SVG),
        f"{kind}: simulated Z expectations",
        [("system", traj.times, traj.z_s, "#1f77b4", False),
         ("ancilla", traj.times, traj.z_a, "#d62728", True)],
    )
    t_test = traj.times[t_indices]
    truth = traj.z_s[t_indices]
    markers = [(float(t_test[peak]), float(preds[peak]))
               for _, peak in report.segments]
    _svg_chart(
        _path(cfg, PREDICTION_SVG),
        f"{kind}: test-half prediction (n_rev={report.n_rev})",
        [("truth", t_test, truth, "#888888", True),
         ("prediction", t_test, preds, "#1f77b4", False)],
        markers=markers,
    )


# ---------- entry point ----------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qrevival",
        description="two-qubit open-system simulation, windowed regression, "
                    "and revival scoring")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "dataset", "train", "predict", "score", "run-all"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out", help="override output directory")
        p.add_argument("--seed", type=int, help="override train.seed")
        p.add_argument("--epsilon", type=float, help="override epsilon")
        p.add_argument("--plots", action="store_true",
                       help="emit SVG figures")
        if name == "score":
            p.add_argument("--on-truth", action="store_true",
                           help="score the simulated test labels instead of "
                                "predictions (diagnostic)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run-all":
            ad_cfg, rtn_cfg = load_pair_config(args.config)
            if args.out is not None:
                ad_cfg = _apply_overrides(ad_cfg, args,
                                          os.path.join(args.out, "ad"))
                rtn_cfg = _apply_overrides(rtn_cfg, args,
                                           os.path.join(args.out, "rtn"))
                comparison_dir = args.out
            else:
                ad_cfg = _apply_overrides(ad_cfg, args)
                rtn_cfg = _apply_overrides(rtn_cfg, args)
                comparison_dir = "."
            return cmd_run_all(ad_cfg, rtn_cfg, comparison_dir)
        cfg = _apply_overrides(load_run_config(args.config), args, args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "dataset":
            return cmd_dataset(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "predict":
            return cmd_predict(cfg)
        if args.command == "score":
            return cmd_score(cfg, on_truth=args.on_truth)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as e:
        _err(f"config error: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
