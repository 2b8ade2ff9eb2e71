"""Command-line surface: synth, train, eval, predict, ablate, gradcheck.

Every TrainConfig key is exposed as a long flag (underscores become dashes)
and overrides the config-file value. Exit codes: 0 success, 2 config error,
3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import os
import sys

import numpy as np

from .config import TrainConfig, config_to_text, load_config
from .errors import ConfigError, DataError, NumericError
from .train import RunLog, emit_plot_data, format_ablation_table, format_row


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(TrainConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}",
                            metavar="V", default=None, help=f"override config key {f.name}")


def _config_from_args(args) -> TrainConfig:
    overrides = {}
    for key, value in vars(args).items():
        if key.startswith("cfg_") and value is not None:
            overrides[key[4:]] = value
    if getattr(args, "config", None):
        return load_config(args.config, overrides)
    from .config import config_from_text
    return config_from_text("", overrides)


def _schema_from_args(args):
    from .scene import CsvSchema
    return CsvSchema(units=args.units, frame_dt=args.frame_dt)


def _load_samples(data_path: str, cfg: TrainConfig, schema) -> list:
    from .scene import BuildStats, build_samples, load_csv
    if os.path.isdir(data_path):
        files = sorted(glob.glob(os.path.join(data_path, "*.csv")))
        if not files:
            raise DataError(f"no .csv files under '{data_path}'")
    else:
        files = [data_path]
    samples = []
    stats = BuildStats()
    for path in files:
        table = load_csv(path, schema)
        samples.extend(build_samples(
            table, cfg.history_steps, cfg.future_steps, stride=cfg.window_stride,
            dt=cfg.dt, grid_slots=cfg.grid_slots, grid_lanes=cfg.grid_lanes,
            slot_length=cfg.slot_length, maneuver_horizon=cfg.maneuver_horizon,
            braking_ratio=cfg.braking_ratio, stats=stats))
    print(format_row(kind="data", files=len(files), windows=stats.windows,
                     skipped_short=stats.skipped_short, skipped_gaps=stats.skipped_gaps))
    if not samples:
        raise DataError(f"'{data_path}' produced no usable windows")
    return samples


def _split(samples, cfg: TrainConfig):
    from .scene import split_samples
    return split_samples(samples, cfg.split_train, cfg.split_val)


def cmd_synth(args) -> int:
    from .synth import merge_tables, synth_tables
    from .scene import write_csv
    tables = synth_tables(args.scenario, args.n, args.seed, dt=args.frame_dt,
                          n_frames=args.frames, chain=args.chain)
    merged = merge_tables(tables)
    write_csv(merged, args.out)
    print(format_row(kind="synth", scenario=args.scenario, scenes=args.n,
                     out=args.out))
    return 0


def cmd_train(args) -> int:
    from .train import train
    cfg = _config_from_args(args)
    samples = _load_samples(args.data, cfg, _schema_from_args(args))
    dataset = _split(samples, cfg)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))
    log = RunLog(os.path.join(args.out, "train.log"), echo=True)
    model, _ = train(cfg, dataset, out_dir=args.out, log=log)
    from .losses import rmse_eval
    table = rmse_eval(model, dataset.test or dataset.train, cfg)
    for second, value in sorted(table.items()):
        print(format_row(kind="rmse", split="test", horizon_s=second, rmse=value))
    print(format_row(kind="done", checkpoint=os.path.join(args.out, "last.ckpt")))
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .losses import rmse_eval
    model, cfg = load_checkpoint(args.checkpoint)
    samples = _load_samples(args.data, cfg, _schema_from_args(args))
    table = rmse_eval(model, samples, cfg)
    for second, value in sorted(table.items()):
        print(format_row(kind="rmse", horizon_s=second, rmse=value))
    return 0


def cmd_predict(args) -> int:
    from .checkpoint import load_checkpoint
    from .decoder import mode_name
    model, cfg = load_checkpoint(args.checkpoint)
    samples = _load_samples(args.data, cfg, _schema_from_args(args))
    trajectories = []
    with open(args.out, "w", encoding="utf-8") as fh:
        for i in range(0, len(samples), cfg.batch_size):
            chunk = samples[i:i + cfg.batch_size]
            for j, traj in enumerate(model.predict_batch(chunk)):
                trajectories.append(traj)
                idx = i + j
                dist = traj.maneuvers
                fh.write(format_row(
                    sample=idx,
                    p_la=",".join(repr(float(p)) for p in dist.p_lateral),
                    p_lo=",".join(repr(float(p)) for p in dist.p_longitudinal)) + "\n")
                joint = dist.joint()
                for m in range(traj.means.shape[0]):
                    for t in range(traj.future_steps):
                        g = traj.step_params(m, t)
                        fh.write(format_row(
                            sample=idx, mode=mode_name(m), p=float(joint[m]),
                            t=round((t + 1) * cfg.dt, 6), mu_x=g.mu_x, mu_y=g.mu_y,
                            sigma_x=g.sigma_x, sigma_y=g.sigma_y, rho=g.rho) + "\n")
    print(format_row(kind="predict", samples=len(samples), out=args.out))
    if args.plot_data:
        emit_plot_data(samples, trajectories, args.plot_data, dt=cfg.dt)
        print(format_row(kind="plot-data", out=args.plot_data))
    return 0


def cmd_ablate(args) -> int:
    from .train import run_ablation
    cfg = _config_from_args(args)
    samples = _load_samples(args.data, cfg, _schema_from_args(args))
    dataset = _split(samples, cfg)
    os.makedirs(args.out, exist_ok=True)
    log = RunLog(os.path.join(args.out, "ablation.log"), echo=True)
    results = run_ablation(cfg, dataset, out_dir=args.out, log=log)
    table = format_ablation_table(results)
    with open(os.path.join(args.out, "ablation_table.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import run_gradcheck_suite
    ok = run_gradcheck_suite(verbose=True, quick=args.quick)
    if not ok:
        raise NumericError("gradient check suite failed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gava",
        description="Trajectory prediction with adaptive visual attention: "
                    "data synthesis, training, evaluation, and ablations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenario CSV data")
    p.add_argument("--scenario", required=True,
                   choices=("constant_velocity", "lane_change", "car_following"))
    p.add_argument("--n", type=int, default=64, help="number of scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=40, help="frames per scene")
    p.add_argument("--chain", type=int, default=2,
                   help="platoon length for car_following scenes")
    p.add_argument("--frame-dt", type=float, default=0.2)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_synth)

    def add_data_flags(p, with_config=True):
        p.add_argument("--data", required=True, help="CSV file or directory")
        p.add_argument("--units", choices=("meters", "feet"), default="meters")
        p.add_argument("--frame-dt", type=float, default=0.2, dest="frame_dt")
        if with_config:
            p.add_argument("--config", default=None, help="config file path")
            _add_config_flags(p)

    p = sub.add_parser("train", help="train a model")
    add_data_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (RMSE per second)")
    p.add_argument("--checkpoint", required=True)
    add_data_flags(p, with_config=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write per-mode Gaussian records")
    p.add_argument("--checkpoint", required=True)
    add_data_flags(p, with_config=False)
    p.add_argument("--out", required=True, help="records output path")
    p.add_argument("--plot-data", default=None, help="optional plot-data path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="train and compare all ablation variants")
    add_data_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="run the full gradient-check suite")
    p.add_argument("--quick", action="store_true", help="fewer coordinates per op")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    return code


if __name__ == "__main__":
    sys.exit(main())
