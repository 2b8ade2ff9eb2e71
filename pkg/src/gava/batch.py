"""Packs SceneSamples into padded arrays for batched model evaluation.

Neighbor cells are packed sparsely: only cells occupied at some history frame
become entries, padded to the batch maximum. `nbr_slot` keeps the flat grid
slot index of each entry so grid-aligned outputs can be scattered back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import STATE_DIM


@dataclass
class Batch:
    size: int
    history_steps: int
    future_steps: int
    grid_slots: int
    grid_lanes: int
    dt: float

    target_feats: np.ndarray    # (B, T, STATE_DIM)
    target_speed: np.ndarray    # (B, T)
    target_pos: np.ndarray      # (B, T, 2)
    target_kin: np.ndarray      # (B, T, 2)
    target_man: np.ndarray      # (B, T, 2) int
    future: np.ndarray          # (B, F, 2)
    label_lat: np.ndarray       # (B,) int
    label_lon: np.ndarray       # (B,) int

    nbr_feats: np.ndarray       # (B, N, T, STATE_DIM)
    nbr_frame_mask: np.ndarray  # (B, N, T)
    nbr_mask: np.ndarray        # (B, N)
    nbr_slot: np.ndarray        # (B, N) int flat cell index
    nbr_dist: np.ndarray        # (B, N, T) distance to target, big where absent

    occupancy: np.ndarray       # (B, T, slots, lanes)
    vel_grid: np.ndarray        # (B, T, slots, lanes)
    acc_grid: np.ndarray        # (B, T, slots, lanes)
    man_match: np.ndarray       # (B, T, slots, lanes) in {0,1}

    @property
    def n_nbrs(self) -> int:
        return self.nbr_feats.shape[1]

    @property
    def n_cells(self) -> int:
        return self.grid_slots * self.grid_lanes


ABSENT_DISTANCE = 1e9


def make_batch(samples: list) -> Batch:
    """Assemble one padded batch from a list of SceneSamples."""
    b = len(samples)
    s0 = samples[0]
    t_steps = s0.history_steps
    f_steps = s0.future_steps
    slots, lanes = s0.occupancy.shape[:2]

    ever = [np.argwhere(s.occupancy.any(axis=2)) for s in samples]  # list of (n_i, 2)
    n_max = max((len(e) for e in ever), default=0)

    nbr_feats = np.zeros((b, n_max, t_steps, STATE_DIM))
    nbr_frame_mask = np.zeros((b, n_max, t_steps))
    nbr_mask = np.zeros((b, n_max))
    nbr_slot = np.zeros((b, n_max), dtype=np.int64)
    nbr_dist = np.full((b, n_max, t_steps), ABSENT_DISTANCE)

    occupancy = np.zeros((b, t_steps, slots, lanes))
    vel_grid = np.zeros((b, t_steps, slots, lanes))
    acc_grid = np.zeros((b, t_steps, slots, lanes))
    man_match = np.zeros((b, t_steps, slots, lanes))

    for i, s in enumerate(samples):
        occupancy[i] = s.occupancy.transpose(2, 0, 1)
        vel_grid[i] = (s.neighbor_kin[..., 0] * s.occupancy).transpose(2, 0, 1)
        acc_grid[i] = (s.neighbor_kin[..., 1] * s.occupancy).transpose(2, 0, 1)
        match = ((s.neighbor_man[..., 0] == s.target_man[None, None, :, 0])
                 & (s.neighbor_man[..., 1] == s.target_man[None, None, :, 1]))
        man_match[i] = (match * s.occupancy).transpose(2, 0, 1)
        for j, (slot, col) in enumerate(ever[i]):
            nbr_feats[i, j] = s.neighbor_feats[slot, col]
            fm = s.occupancy[slot, col]
            nbr_frame_mask[i, j] = fm
            nbr_mask[i, j] = 1.0
            nbr_slot[i, j] = slot * lanes + col
            d = np.linalg.norm(s.rel_geometry[slot, col], axis=-1)
            nbr_dist[i, j] = np.where(fm > 0, d, ABSENT_DISTANCE)

    return Batch(
        size=b, history_steps=t_steps, future_steps=f_steps,
        grid_slots=slots, grid_lanes=lanes, dt=s0.dt,
        target_feats=np.stack([s.target_feats for s in samples]),
        target_speed=np.stack([s.target_speed for s in samples]),
        target_pos=np.stack([s.target_pos for s in samples]),
        target_kin=np.stack([s.target_kin for s in samples]),
        target_man=np.stack([s.target_man for s in samples]),
        future=np.stack([s.future for s in samples]),
        label_lat=np.array([s.label_lat for s in samples], dtype=np.int64),
        label_lon=np.array([s.label_lon for s in samples], dtype=np.int64),
        nbr_feats=nbr_feats, nbr_frame_mask=nbr_frame_mask,
        nbr_mask=nbr_mask, nbr_slot=nbr_slot, nbr_dist=nbr_dist,
        occupancy=occupancy, vel_grid=vel_grid, acc_grid=acc_grid,
        man_match=man_match,
    )
