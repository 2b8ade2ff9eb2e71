"""Priority decoder: transformer encoder over the visual feature, decoder
conditioned on the context feature, maneuver heads, and per-mode bivariate
Gaussian trajectory emission.

The six maneuver modes enumerate lateral {left_change, keep, right_change}
x longitudinal {normal, braking}. Mode m's trajectory is produced by fusing
the decoder output with the mode's one-hot labels and unrolling an LSTM over
the future steps; every step emits (mu_x, mu_y, sigma_x, sigma_y, rho) with
totality constraints on sigma and rho.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import (Dropout, LSTMCell, LayerNorm, Linear, Module, ModuleList,
                 MultiHeadAttention, Parameter, run_lstm)
from .scene import LAT_KEEP, LATERAL, LON_NORMAL, LONGITUDINAL
from .tensor import Tensor

N_LAT = len(LATERAL)
N_LON = len(LONGITUDINAL)
N_MODES = N_LAT * N_LON


def mode_index(lat: int, lon: int) -> int:
    return lat * N_LON + lon


def mode_components(mode: int) -> tuple[int, int]:
    return mode // N_LON, mode % N_LON


def mode_name(mode: int) -> str:
    lat, lon = mode_components(mode)
    return f"{LATERAL[lat]}/{LONGITUDINAL[lon]}"


def mode_onehots() -> np.ndarray:
    """(N_MODES, N_LAT + N_LON) one-hot lateral/longitudinal encodings."""
    enc = np.zeros((N_MODES, N_LAT + N_LON))
    for m in range(N_MODES):
        lat, lon = mode_components(m)
        enc[m, lat] = 1.0
        enc[m, N_LAT + lon] = 1.0
    return enc


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    """Standard fixed sine/cosine positional table (length, dim)."""
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


class FeedForward(Module):
    """2-layer MLP with ELU between, used inside every transformer layer."""

    def __init__(self, dim: int, ff_dim: int, rng, alpha: float = 1.0):
        super().__init__()
        self.l1 = Linear(dim, ff_dim, rng)
        self.l2 = Linear(ff_dim, dim, rng)
        self.alpha = alpha

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(T.elu(self.l1(x), self.alpha))


class EncoderLayer(Module):
    def __init__(self, dim: int, n_heads: int, ff_dim: int, rng, alpha: float = 1.0):
        super().__init__()
        self.mha = MultiHeadAttention(dim, n_heads, rng)
        self.ffn = FeedForward(dim, ff_dim, rng, alpha)
        self.ln1 = LayerNorm(dim)
        self.ln2 = LayerNorm(dim)

    def __call__(self, x: Tensor, key_valid: np.ndarray | None = None) -> Tensor:
        x = self.ln1(x + self.mha(x, x, x, key_valid=key_valid))
        return self.ln2(x + self.ffn(x))


class VisualEncoder(Module):
    """Self-attention stack over the 39 slot rows; no positional encoding, so
    the mapping is equivariant to slot permutations.

    `slot_valid` is a padding mask: attention keys on never-occupied slots are
    masked out so zero rows cannot dilute the occupied ones."""

    def __init__(self, dim: int, n_heads: int, ff_dim: int, n_layers: int, rng,
                 alpha: float = 1.0):
        super().__init__()
        self.layers = ModuleList(
            [EncoderLayer(dim, n_heads, ff_dim, rng, alpha) for _ in range(n_layers)])

    def __call__(self, z: Tensor, slot_valid: np.ndarray | None = None) -> Tensor:
        for layer in self.layers:
            z = layer(z, key_valid=slot_valid)
        return z


class DecoderLayer(Module):
    def __init__(self, dim: int, n_heads: int, ff_dim: int, rng, alpha: float = 1.0):
        super().__init__()
        self.self_mha = MultiHeadAttention(dim, n_heads, rng)
        self.cross_mha = MultiHeadAttention(dim, n_heads, rng)
        self.ffn = FeedForward(dim, ff_dim, rng, alpha)
        self.ln1 = LayerNorm(dim)
        self.ln2 = LayerNorm(dim)
        self.ln3 = LayerNorm(dim)

    def __call__(self, x: Tensor, memory: Tensor,
                 memory_valid: np.ndarray | None = None) -> Tensor:
        x = self.ln1(x + self.self_mha(x, x, x))
        x = self.ln2(x + self.cross_mha(x, memory, memory, key_valid=memory_valid))
        return self.ln3(x + self.ffn(x))


class ContextDecoder(Module):
    """Embeds the context feature with temporal positions, attends onto the
    encoded visual feature, and projects through dropout + GLU."""

    def __init__(self, dim: int, n_heads: int, ff_dim: int, n_layers: int,
                 history_steps: int, dropout: float, rng, dropout_rng,
                 alpha: float = 1.0):
        super().__init__()
        self.embed = Linear(dim, dim, rng)
        self.pos = sinusoidal_encoding(history_steps, dim)
        self.layers = ModuleList(
            [DecoderLayer(dim, n_heads, ff_dim, rng, alpha) for _ in range(n_layers)])
        self.out_proj = Linear(dim, 2 * dim, rng)
        self.drop = Dropout(dropout, dropout_rng)

    def __call__(self, memory: Tensor, context: Tensor,
                 memory_valid: np.ndarray | None = None) -> Tensor:
        if context.shape[-2] != self.pos.shape[0]:
            raise DimensionError(
                f"context has {context.shape[-2]} steps, decoder configured "
                f"for {self.pos.shape[0]}")
        x = self.embed(context) + Tensor(self.pos)
        for layer in self.layers:
            x = layer(x, memory, memory_valid)
        return T.glu(self.drop(self.out_proj(x)), axis=-1)


class ManeuverHeads(Module):
    """Temporal mean-pool then two softmax heads (lateral 3-way, longitudinal 2-way)."""

    def __init__(self, dim: int, rng):
        super().__init__()
        self.lat = Linear(dim, N_LAT, rng)
        self.lon = Linear(dim, N_LON, rng)

    def __call__(self, h: Tensor) -> tuple[Tensor, Tensor]:
        pooled = h.mean(axis=-2)
        return T.softmax(self.lat(pooled), axis=-1), T.softmax(self.lon(pooled), axis=-1)


class IntentionFuse(Module):
    """Maps T history steps to F future steps along the temporal axis, then
    fuses each mode's one-hot labels into every future step."""

    def __init__(self, dim: int, history_steps: int, future_steps: int, rng,
                 alpha: float = 1.0):
        super().__init__()
        self.t1 = Linear(history_steps, future_steps, rng)
        self.t2 = Linear(future_steps, future_steps, rng)
        self.fuse = Linear(dim + N_LAT + N_LON, dim, rng)
        self.alpha = alpha
        self.register_buffer("onehots", mode_onehots())
        # future-step positions enter the fused feature so the emitter reads
        # step identity directly instead of having to integrate time
        self.register_buffer("future_pos", sinusoidal_encoding(future_steps, dim))

    def future_feature(self, h: Tensor) -> Tensor:
        """(B, T, dim) -> (B, F, dim) via the temporal MLP."""
        x = h.swapaxes(-1, -2)                     # (B, dim, T)
        x = self.t2(T.elu(self.t1(x), self.alpha))
        return x.swapaxes(-1, -2)                  # (B, F, dim)

    def __call__(self, h: Tensor) -> Tensor:
        """(B, T, dim) -> (B, N_MODES, F, dim) mode-fused future features."""
        z = self.future_feature(h)
        b, f_steps, dim = z.shape
        z = z.reshape((b, 1, f_steps, dim))
        z = z + Tensor(np.zeros((1, N_MODES, 1, 1)))   # broadcast over modes
        hot = Tensor(np.broadcast_to(self.onehots[None, :, None, :],
                                     (b, N_MODES, f_steps, N_LAT + N_LON)).copy())
        return self.fuse(T.concat([z, hot], axis=-1)) + Tensor(self.future_pos)


class GaussianEmitter(Module):
    """LSTM over fused future steps; per-step linear map to 5 raw values.

    The linear map is factored as gain * (W h + b) with the mean channels'
    gain starting at `mu_gain`: displacement targets span tens of meters
    while tanh-bounded LSTM states are O(1), and the factored form lets the
    mean scale adapt in few steps instead of thousands.
    """

    def __init__(self, dim: int, rng, mu_gain: float = 16.0):
        super().__init__()
        self.lstm = LSTMCell(dim, dim, rng)
        self.head = Linear(dim, 5, rng)
        self.gain = Parameter(np.array([mu_gain, mu_gain, 1.0, 1.0, 1.0]))

    def __call__(self, e: Tensor) -> Tensor:
        b, modes, f_steps, dim = e.shape
        states = run_lstm(self.lstm, e.reshape((b * modes, f_steps, dim)))
        raw = self.head(states) * self.gain
        return raw.reshape((b, modes, f_steps, 5))


def gaussian_constrain(raw: Tensor, sigma_min: float = 1e-3, sigma_max: float = 1e3,
                       rho_max: float = 0.999) -> tuple[Tensor, Tensor, Tensor]:
    """Split raw 5-vectors into (mu, sigma, rho) with totality constraints.

    sigma is exp of the raw channel clamped into [sigma_min, sigma_max]
    (computed as exp of the clamped log so huge raw values cannot overflow);
    rho is rho_max * tanh(raw), strictly inside (-1, 1).
    """
    mu = raw[..., 0:2]
    sigma = T.exp(T.clamp(raw[..., 2:4], math.log(sigma_min), math.log(sigma_max)))
    rho = rho_max * T.tanh(raw[..., 4])
    return mu, sigma, rho


@dataclass
class GaussianParams:
    """One future step's bivariate Gaussian."""

    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    rho: float

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise DimensionError("sigma must be strictly positive")
        if not abs(self.rho) < 1:
            raise DimensionError("|rho| must be < 1")


@dataclass
class ManeuverDistribution:
    p_lateral: np.ndarray       # (3,)
    p_longitudinal: np.ndarray  # (2,)

    def joint(self) -> np.ndarray:
        """(N_MODES,) joint probabilities in mode_index order."""
        return (self.p_lateral[:, None] * self.p_longitudinal[None, :]).reshape(-1)


@dataclass
class GaussianTrajectory:
    """Per-mode Gaussian parameter sequences plus the maneuver distribution."""

    means: np.ndarray   # (N_MODES, F, 2)
    sigmas: np.ndarray  # (N_MODES, F, 2)
    rhos: np.ndarray    # (N_MODES, F)
    maneuvers: ManeuverDistribution

    @property
    def future_steps(self) -> int:
        return self.means.shape[1]

    def best_mode(self) -> int:
        """Highest joint-probability mode; ties prefer keep, then normal."""
        joint = self.maneuvers.joint()
        best = None
        for m in range(N_MODES):
            lat, lon = mode_components(m)
            key = (-joint[m], lat != LAT_KEEP, lon != LON_NORMAL, lat, lon)
            if best is None or key < best[0]:
                best = (key, m)
        return best[1]

    def point_prediction(self, how: str = "best_mode") -> np.ndarray:
        """(F, 2) single-trajectory reduction of the mixture."""
        if how == "best_mode":
            return self.means[self.best_mode()]
        if how == "weighted_mean":
            joint = self.maneuvers.joint()
            return np.einsum("m,mfk->fk", joint, self.means)
        raise DimensionError(f"unknown point prediction mode '{how}'")

    def step_params(self, mode: int, step: int) -> GaussianParams:
        return GaussianParams(
            mu_x=float(self.means[mode, step, 0]),
            mu_y=float(self.means[mode, step, 1]),
            sigma_x=float(self.sigmas[mode, step, 0]),
            sigma_y=float(self.sigmas[mode, step, 1]),
            rho=float(self.rhos[mode, step]),
        )

    def mode_log_density(self, mode: int, y: np.ndarray) -> float:
        """Log of the product over steps of this mode's step Gaussians at y (F, 2)."""
        mu = self.means[mode]
        sig = self.sigmas[mode]
        rho = self.rhos[mode]
        dx = (y[:, 0] - mu[:, 0]) / sig[:, 0]
        dy = (y[:, 1] - mu[:, 1]) / sig[:, 1]
        one_m = 1.0 - rho ** 2
        quad = (dx ** 2 - 2.0 * rho * dx * dy + dy ** 2) / one_m
        logdet = np.log(2.0 * np.pi * sig[:, 0] * sig[:, 1] * np.sqrt(one_m))
        return float(np.sum(-logdet - 0.5 * quad))

    def mixture_density(self, y: np.ndarray) -> float:
        """Total-probability mixture density at a full future trajectory y (F, 2)."""
        joint = self.maneuvers.joint()
        return float(sum(p * np.exp(self.mode_log_density(m, y))
                         for m, p in enumerate(joint)))
