"""Training losses and the per-horizon-second RMSE evaluation."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .batch import Batch, make_batch
from .config import TrainConfig
from .decoder import mode_index
from .errors import DimensionError
from .tensor import Tensor


def bivariate_nll(mu: Tensor, sigma: Tensor, rho: Tensor, truth: np.ndarray) -> Tensor:
    """Per-step negative log-likelihood of truth (..., F, 2) under bivariate
    Gaussians with parameters (..., F, 2)/(..., F); returns (..., F)."""
    t = Tensor(truth)
    dx = (t[..., 0] - mu[..., 0]) / sigma[..., 0]
    dy = (t[..., 1] - mu[..., 1]) / sigma[..., 1]
    one_m = 1.0 - rho * rho
    quad = (dx * dx - 2.0 * rho * dx * dy + dy * dy) / one_m
    logdet = T.log(2.0 * math.pi * sigma[..., 0] * sigma[..., 1] * (one_m ** 0.5))
    return logdet + 0.5 * quad


def nll_loss(mu: Tensor, sigma: Tensor, rho: Tensor, truth: np.ndarray,
             label_lat: np.ndarray, label_lon: np.ndarray) -> Tensor:
    """Mean-over-steps NLL of the labeled mode, averaged over the batch.

    mu/sigma (B, M, F, 2), rho (B, M, F), truth (B, F, 2).
    """
    b = mu.shape[0]
    modes = np.array([mode_index(la, lo) for la, lo in zip(label_lat, label_lon)])
    bi = np.arange(b)
    per_step = bivariate_nll(mu[bi, modes], sigma[bi, modes], rho[bi, modes], truth)
    return per_step.mean()


def maneuver_loss(p_lat: Tensor, p_lon: Tensor,
                  label_lat: np.ndarray, label_lon: np.ndarray) -> Tensor:
    """Cross-entropy of both maneuver heads against the labels, summed."""
    b = p_lat.shape[0]
    bi = np.arange(b)
    ce_lat = -T.log(p_lat[bi, label_lat]).mean()
    ce_lon = -T.log(p_lon[bi, label_lon]).mean()
    return ce_lat + ce_lon


def total_loss(outputs, batch: Batch, lambda_nll: float = 1.0,
               lambda_man: float = 1.0):
    """Weighted sum of the trajectory NLL and the maneuver cross-entropy.

    Returns (loss, nll_value, maneuver_value) with the components as floats.
    """
    mu, sigma, rho, p_lat, p_lon = outputs
    nll = nll_loss(mu, sigma, rho, batch.future, batch.label_lat, batch.label_lon)
    man = maneuver_loss(p_lat, p_lon, batch.label_lat, batch.label_lon)
    loss = lambda_nll * nll + lambda_man * man
    return loss, float(nll.data), float(man.data)


# ---- RMSE evaluation -----------------------------------------------------------


def horizon_buckets(future_steps: int, dt: float) -> dict[int, np.ndarray]:
    """Step indices (0-based) grouped by the prediction second they fall in."""
    seconds = np.ceil((np.arange(1, future_steps + 1)) * dt - 1e-12).astype(int)
    return {int(k): np.nonzero(seconds == k)[0] for k in np.unique(seconds)}


def rmse_by_second(pred: np.ndarray, truth: np.ndarray, dt: float) -> dict[int, float]:
    """Root-mean-square Euclidean error bucketed by horizon second.

    pred/truth (n, F, 2). The mean is over all samples and steps in a bucket.
    """
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} vs truth {truth.shape}")
    sq = ((pred - truth) ** 2).sum(axis=-1)  # squared Euclidean per step
    out = {}
    for k, idx in horizon_buckets(pred.shape[1], dt).items():
        out[k] = float(np.sqrt(sq[:, idx].mean()))
    return out


def rmse_eval(model, samples: list, cfg: TrainConfig,
              batch_size: int | None = None) -> dict[int, float]:
    """Best-mode point predictions against ground truth, bucketed by second."""
    if not samples:
        raise DimensionError("rmse_eval needs at least one sample")
    batch_size = batch_size or cfg.batch_size
    preds, truths = [], []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        for s, traj in zip(chunk, model.predict_batch(chunk)):
            preds.append(traj.point_prediction(cfg.point_prediction))
            truths.append(s.future)
    return rmse_by_second(np.stack(preds), np.stack(truths), cfg.dt)
