"""Interaction encoder: relative-kinematics tensor and its conv/GRU reduction.

The interaction tensor stacks, per frame and grid cell, the neighbor-minus-
target velocity difference, acceleration difference, and a maneuver-match
indicator. A shared 1x1 -> 3x3 convolution stack turns it into per-frame
feature maps, and a per-cell GRU over time reduces those to one scalar per
cell per frame.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .batch import Batch
from .nn import BatchNorm2d, Conv2d, Dropout, GRUCell, Linear, Module, run_gru
from .tensor import Tensor

N_INTERACTION_CHANNELS = 3  # velocity diff, acceleration diff, maneuver match


def build_interaction_tensor(batch: Batch) -> np.ndarray:
    """(B, T, 3, slots, lanes); all channels zero at unoccupied cells."""
    occ = batch.occupancy
    v_t = batch.target_kin[:, :, 0][:, :, None, None]
    a_t = batch.target_kin[:, :, 1][:, :, None, None]
    d = np.zeros((batch.size, batch.history_steps, N_INTERACTION_CHANNELS,
                  batch.grid_slots, batch.grid_lanes))
    d[:, :, 0] = (batch.vel_grid - v_t) * occ
    d[:, :, 1] = (batch.acc_grid - a_t) * occ
    d[:, :, 2] = batch.man_match * occ
    return d


class InteractionEncoder(Module):
    def __init__(self, channels: int, gru_hidden: int, dropout: float,
                 rng, dropout_rng, alpha: float = 1.0, norm_after_act: bool = True):
        super().__init__()
        self.conv1 = Conv2d(N_INTERACTION_CHANNELS, channels, 1, rng)
        self.norm = BatchNorm2d(channels)
        self.conv2 = Conv2d(channels, channels, 3, rng)
        self.drop = Dropout(dropout, dropout_rng)
        self.reduce = Linear(channels, 1, rng)
        self.gru = GRUCell(1, gru_hidden, rng)
        self.out = Linear(gru_hidden, 1, rng)
        self.alpha = alpha
        self.norm_after_act = norm_after_act

    def conv_stack(self, d: Tensor) -> Tensor:
        """Per-frame feature maps from the interaction tensor.

        Input (B*T, 3, slots, lanes) -> (B*T, C, slots, lanes). Weights are
        shared across frames; the 3x3 stage pads to preserve the grid shape.
        """
        x = self.conv1(d, padding=0)
        if self.norm_after_act:
            x = self.norm(T.elu(x, self.alpha))
        else:
            x = T.elu(self.norm(x), self.alpha)
        x = T.elu(self.conv2(x, padding=1), self.alpha)
        return self.drop(x)

    def __call__(self, d: np.ndarray) -> Tensor:
        """Interaction tensor (B,T,3,S,L) -> conv feature (B, T, S*L)."""
        b, t_steps, _, slots, lanes = d.shape
        cells = slots * lanes
        maps = self.conv_stack(Tensor(d.reshape(b * t_steps, N_INTERACTION_CHANNELS,
                                                slots, lanes)))
        c = maps.shape[1]
        # (B*T, C, S, L) -> (B, cells, T, C) so the GRU runs per cell over time
        per_cell = maps.reshape((b, t_steps, c, cells)).transpose((0, 3, 1, 2))
        scalars = self.reduce(per_cell)                       # (B, cells, T, 1)
        states, _ = run_gru(self.gru, scalars)                # (B, cells, T, H)
        h_conv = self.out(states)                             # (B, cells, T, 1)
        return h_conv.reshape((b, cells, t_steps)).transpose((0, 2, 1))
