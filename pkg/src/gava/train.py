"""Training loop, ablation harness, and structured run logs.

Logs are append-only rows of space-separated key=value pairs, one record per
line, floats written with full precision so two identical runs produce
byte-identical traces.
"""

from __future__ import annotations

import dataclasses
import os
import time

import numpy as np

from .batch import make_batch
from .checkpoint import save_checkpoint
from .config import VARIANTS, TrainConfig
from .errors import DataError, NumericError
from .losses import rmse_eval, total_loss
from .model import GavaModel
from .nn import Adam
from .scene import DatasetSplit, compute_normalization
from .tensor import backward, no_grad


def format_row(**kv) -> str:
    parts = []
    for key, value in kv.items():
        if isinstance(value, float):
            parts.append(f"{key}={value!r}")
        else:
            parts.append(f"{key}={value}")
    return " ".join(parts)


class RunLog:
    """Append-only key=value row writer; optionally mirrors to stdout."""

    def __init__(self, path: str | None = None, echo: bool = False):
        self.path = path
        self.echo = echo
        self.rows: list[str] = []
        if path:
            open(path, "w").close()

    def write(self, **kv) -> None:
        row = format_row(**kv)
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(row + "\n")
        if self.echo:
            print(row)


def train(cfg: TrainConfig, dataset: DatasetSplit, out_dir: str | None = None,
          log: RunLog | None = None) -> tuple[GavaModel, list[str]]:
    """Mini-batch training; deterministic given config, seed, and data.

    Returns the trained model and the loss-trace rows. On a non-finite loss
    the last epoch checkpoint survives and NumericError says where it is.
    """
    if not dataset.train:
        raise DataError("training split is empty")
    log = log or RunLog()
    model = GavaModel(cfg)
    stats = compute_normalization(dataset.train)
    model.set_normalization(stats.mean, stats.scale)
    optimizer = Adam(model.parameters(), lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence(cfg.seed).spawn(3)[2])

    ckpt_path = os.path.join(out_dir, "last.ckpt") if out_dir else None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    n = len(dataset.train)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        optimizer.lr = cfg.learning_rate * cfg.lr_decay ** max(0, epoch - cfg.lr_decay_start)
        order = shuffle_rng.permutation(n)
        epoch_loss = epoch_nll = epoch_man = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            chunk = [dataset.train[i] for i in order[start:start + cfg.batch_size]]
            batch = make_batch(chunk)
            try:
                outputs = model(batch)
                loss, nll_val, man_val = total_loss(outputs, batch,
                                                    cfg.lambda_nll, cfg.lambda_man)
                if not np.isfinite(loss.data):
                    raise NumericError("non-finite training loss")
                model.zero_grad()
                backward(loss)
                optimizer.step()
            except NumericError as exc:
                hint = f"; last good checkpoint: {ckpt_path}" if ckpt_path and epoch > 1 else ""
                raise NumericError(f"training aborted at epoch {epoch}: {exc}{hint}") from exc
            epoch_loss += float(loss.data)
            epoch_nll += nll_val
            epoch_man += man_val
            n_batches += 1
        log.write(epoch=epoch, split="train", loss=epoch_loss / n_batches,
                  nll=epoch_nll / n_batches, man=epoch_man / n_batches)

        if dataset.val:
            model.eval()
            with no_grad():
                vbatch = make_batch(dataset.val)
                vloss, vnll, vman = total_loss(model(vbatch), vbatch,
                                               cfg.lambda_nll, cfg.lambda_man)
            log.write(epoch=epoch, split="val", loss=float(vloss.data),
                      nll=vnll, man=vman)
        if ckpt_path:
            save_checkpoint(model, cfg, ckpt_path)

    model.eval()
    return model, log.rows


def run_ablation(cfg: TrainConfig, dataset: DatasetSplit,
                 out_dir: str | None = None, log: RunLog | None = None,
                 eval_split: str = "test") -> dict[str, dict[int, float]]:
    """Train and evaluate all four variants with shared hyperparameters.

    Returns {variant: {horizon_second: rmse}}.
    """
    log = log or RunLog()
    results: dict[str, dict[int, float]] = {}
    eval_samples = getattr(dataset, eval_split) or dataset.train
    for variant in VARIANTS:
        vcfg = dataclasses.replace(cfg, variant=variant)
        t0 = time.time()
        vdir = os.path.join(out_dir, variant) if out_dir else None
        model, _ = train(vcfg, dataset, out_dir=vdir)
        table = rmse_eval(model, eval_samples, vcfg)
        results[variant] = table
        for second, value in sorted(table.items()):
            log.write(kind="ablation", variant=variant, horizon_s=second,
                      rmse=value)
        log.write(kind="ablation-done", variant=variant,
                  seconds=round(time.time() - t0, 2))
    return results


def format_ablation_table(results: dict[str, dict[int, float]]) -> str:
    """Rows = horizon seconds, columns = variants (full model last)."""
    order = [v for v in ("gava-iam", "gava-vam", "gava-nvm", "gava") if v in results]
    seconds = sorted({k for table in results.values() for k in table})
    header = "Time (s)  " + "  ".join(f"{v:>10}" for v in order)
    lines = [header]
    for s in seconds:
        cells = "  ".join(f"{results[v].get(s, float('nan')):10.3f}" for v in order)
        lines.append(f"{s:>8}  {cells}")
    return "\n".join(lines)


def emit_plot_data(samples: list, trajectories: list, path: str,
                   dt: float = 0.2) -> None:
    """Write history, truth, and per-mode predicted means with sigma envelopes
    as key=value rows any external plotter can consume."""
    from .decoder import mode_name

    with open(path, "w", encoding="utf-8") as fh:
        for i, (sample, traj) in enumerate(zip(samples, trajectories)):
            for t, (x, y) in enumerate(sample.target_pos):
                fh.write(format_row(sample=i, kind="history",
                                    t=(t - sample.history_steps + 1) * dt,
                                    x=float(x), y=float(y)) + "\n")
            for t, (x, y) in enumerate(sample.future):
                fh.write(format_row(sample=i, kind="truth", t=(t + 1) * dt,
                                    x=float(x), y=float(y)) + "\n")
            joint = traj.maneuvers.joint()
            for m in range(traj.means.shape[0]):
                for t in range(traj.future_steps):
                    fh.write(format_row(
                        sample=i, kind="prediction", mode=mode_name(m),
                        p=float(joint[m]), t=(t + 1) * dt,
                        x=float(traj.means[m, t, 0]), y=float(traj.means[m, t, 1]),
                        sigma_x=float(traj.sigmas[m, t, 0]),
                        sigma_y=float(traj.sigmas[m, t, 1])) + "\n")
