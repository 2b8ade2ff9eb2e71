"""Run configuration: defaults, validation, and a key=value text format.

A config file is plain text, one `key = value` per line, `#` starts a
comment. Every field of TrainConfig has a key of the same name; the CLI
exposes one flag per key that overrides the file value. The sector band
table is encoded as `upper_kmh:radius_m:apex_deg` triples joined by commas,
with `inf` for the open last band.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass

from .errors import ConfigError

VARIANTS = ("gava", "gava-iam", "gava-vam", "gava-nvm")


@dataclass
class TrainConfig:
    # observation protocol: 3 s history / 5 s prediction at dt unless overridden
    dt: float = 0.2
    history_steps: int = 15
    future_steps: int = 25
    allow_custom_horizon: bool = False

    # neighbor grid
    grid_slots: int = 13
    grid_lanes: int = 3
    slot_length: float = 4.57
    lane_width: float = 3.7

    # model sizes
    dim: int = 64
    embed_dim: int = 32
    n_heads: int = 4
    n_layers: int = 2
    ff_dim: int = 128
    interaction_channels: int = 16
    interaction_gru_hidden: int = 16
    interaction_norm_after_act: bool = True
    iam_embed_dim: int = 16
    node_window: int = 1
    dropout: float = 0.1
    elu_alpha: float = 1.0
    gat_leaky_slope: float = 0.2
    gat_raw_score_norm: bool = False

    # adaptive visual sector: bands of (upper speed km/h, radius m, apex angle deg)
    sector_bands: tuple = (
        (30.0, 30.0, 90.0),
        (60.0, 50.0, 75.0),
        (90.0, 70.0, 60.0),
        (math.inf, 90.0, 45.0),
    )
    fringe_weight: float = 0.5
    peripheral_weight: float = 0.2
    heading_speed_min: float = 0.5

    # nearby area (boosted graph edges)
    safety_time: float = 2.0
    safety_floor: float = 10.0
    nearby_bias: float = 1.0

    # maneuver labeling
    maneuver_horizon: float = 2.0
    braking_ratio: float = 0.8

    # gaussian output constraints
    emitter_mu_gain: float = 16.0
    sigma_min: float = 1e-3
    sigma_max: float = 1e3
    rho_max: float = 0.999
    point_prediction: str = "best_mode"

    # training
    window_stride: int = 1
    learning_rate: float = 1e-3
    lr_decay: float = 1.0
    lr_decay_start: int = 1
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    lambda_nll: float = 1.0
    lambda_man: float = 1.0
    split_train: float = 0.7
    split_val: float = 0.15
    variant: str = "gava"

    def __post_init__(self):
        self.validate()

    # -- derived ------------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return self.grid_slots * self.grid_lanes

    def validate(self) -> None:
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        for key in ("history_steps", "future_steps", "grid_slots", "grid_lanes",
                    "dim", "embed_dim", "n_heads", "n_layers", "ff_dim",
                    "interaction_channels", "interaction_gru_hidden",
                    "iam_embed_dim", "batch_size", "epochs"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        if not self.allow_custom_horizon:
            if abs(self.history_steps * self.dt - 3.0) > 1e-9:
                raise ConfigError(
                    f"history_steps*dt must equal 3 s (got {self.history_steps * self.dt}); "
                    "set allow_custom_horizon to override")
            if abs(self.future_steps * self.dt - 5.0) > 1e-9:
                raise ConfigError(
                    f"future_steps*dt must equal 5 s (got {self.future_steps * self.dt}); "
                    "set allow_custom_horizon to override")
        if self.dim % self.n_heads != 0:
            raise ConfigError(f"dim {self.dim} must be divisible by n_heads {self.n_heads}")
        if self.node_window < 1 or self.node_window % 2 == 0:
            raise ConfigError(f"node_window must be odd and positive, got {self.node_window}")
        if not (1.0 >= self.fringe_weight >= self.peripheral_weight >= 0.0):
            raise ConfigError(
                f"band weights must satisfy 1 >= fringe ({self.fringe_weight}) "
                f">= peripheral ({self.peripheral_weight}) >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0,1), got {self.dropout}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got '{self.variant}'")
        if self.point_prediction not in ("best_mode", "weighted_mean"):
            raise ConfigError(f"unknown point_prediction '{self.point_prediction}'")
        bands = self.sector_bands
        if len(bands) < 1 or not math.isinf(bands[-1][0]):
            raise ConfigError("sector_bands must end with an open (inf) band")
        uppers = [b[0] for b in bands]
        if any(u2 <= u1 for u1, u2 in zip(uppers, uppers[1:])):
            raise ConfigError("sector_bands upper speeds must be strictly increasing")
        for _, radius, apex in bands:
            if radius <= 0 or not (0 < apex <= 360):
                raise ConfigError(f"invalid sector band (radius {radius}, apex {apex})")
        if self.split_train <= 0 or self.split_val < 0 or self.split_train + self.split_val >= 1.0:
            raise ConfigError("split_train/split_val must leave room for a test split")


# ---- (de)serialization ------------------------------------------------------


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):  # sector bands
        parts = []
        for upper, radius, apex in value:
            up = "inf" if math.isinf(upper) else f"{upper:g}"
            parts.append(f"{up}:{radius:g}:{apex:g}")
        return ",".join(parts)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_bands(text: str) -> tuple:
    bands = []
    for part in text.split(","):
        bits = part.strip().split(":")
        if len(bits) != 3:
            raise ConfigError(f"bad sector band '{part}', expected upper:radius:apex")
        upper = math.inf if bits[0] in ("inf", "Inf", "INF") else float(bits[0])
        bands.append((upper, float(bits[1]), float(bits[2])))
    return tuple(bands)


def _coerce(name: str, text: str, field_type) -> object:
    text = text.strip()
    try:
        if field_type is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if field_type is int:
            return int(text)
        if field_type is float:
            return float(text)
        if field_type is tuple:
            return _parse_bands(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"cannot parse config key '{name}' from '{text}'") from exc


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str, overrides: dict | None = None) -> TrainConfig:
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{raw.strip()}'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
        values[key] = _coerce(key, val, _field_type(fields[key]))
    if overrides:
        for key, val in overrides.items():
            if key not in fields:
                raise ConfigError(f"unknown config key '{key}'")
            values[key] = val if not isinstance(val, str) else _coerce(key, val, _field_type(fields[key]))
    return TrainConfig(**values)


def _field_type(f) -> type:
    # dataclass field types arrive as strings under `from __future__ import annotations`
    mapping = {"float": float, "int": int, "bool": bool, "tuple": tuple, "str": str}
    t = f.type
    if isinstance(t, str):
        return mapping.get(t, str)
    return t


def load_config(path: str, overrides: dict | None = None) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file '{path}': {exc}") from exc
    return config_from_text(text, overrides)


def config_fingerprint(cfg: TrainConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode("utf-8")).hexdigest()[:16]
