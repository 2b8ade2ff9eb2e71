"""Trajectory prediction with speed-adaptive visual attention fields,
dynamic traffic-graph interaction encoding, and maneuver-conditioned
bivariate-Gaussian decoding — plus the tensor/autodiff core it runs on."""

from .config import TrainConfig, config_from_text, config_to_text, load_config
from .errors import (ConfigError, DataError, DimensionError, GavaError,
                     NumericError, SchemaError)
from .model import GavaModel
from .scene import (AgentState, DatasetSplit, SceneSample, build_neighbor_grid,
                    build_samples, label_maneuvers, load_csv, normalize,
                    split_samples)
from .synth import synth_generate
from .tensor import Tensor, backward, no_grad

__all__ = [
    "AgentState", "ConfigError", "DataError", "DatasetSplit", "DimensionError",
    "GavaError", "GavaModel", "NumericError", "SceneSample", "SchemaError",
    "Tensor", "TrainConfig", "backward", "build_neighbor_grid", "build_samples",
    "config_from_text", "config_to_text", "label_maneuvers", "load_csv",
    "load_config", "no_grad", "normalize", "split_samples", "synth_generate",
]

__version__ = "0.1.0"
