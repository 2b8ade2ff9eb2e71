"""Speed-adaptive visual sector weighting and graph attention over masked nodes.

A driver's forward attention sector narrows and lengthens with speed. The
band table maps speed to a (radius, apex angle) sector; grid cells inside the
sector get weight 1.0, cells within radius but outside the sector up to 90
degrees off-heading get the fringe weight, and everything else (including the
rear) gets the peripheral weight. The resulting visual matrix multiplies the
interaction features elementwise before they enter the graph attention stack.

Edges between vehicles inside the circular nearby area around the target
receive an additive attention-score bias before normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .batch import Batch
from .config import TrainConfig
from .errors import DimensionError, NumericError
from .nn import Dropout, Module, Parameter, masked_softmax, xavier_uniform
from .tensor import Tensor

MS_TO_KMH = 3.6


@dataclass
class VisualSectorSpec:
    """A forward attention sector: radius, half apex angle, and band weights."""

    radius: float
    half_angle: float  # degrees, sector symmetric about the heading axis
    band_weights: dict = field(default_factory=lambda: {
        "central": 1.0, "fringe": 0.5, "peripheral": 0.2})

    def __post_init__(self):
        if self.radius <= 0:
            raise DimensionError(f"sector radius must be positive, got {self.radius}")
        if not 0 < self.half_angle <= 180:
            raise DimensionError(f"half angle must be in (0, 180], got {self.half_angle}")
        w = self.band_weights
        if not (1.0 >= w["fringe"] >= w["peripheral"] >= 0.0):
            raise DimensionError(f"band weights must be ordered 1 >= fringe >= peripheral >= 0, got {w}")


def sector_for_speed(speed: float, cfg: TrainConfig) -> VisualSectorSpec:
    """Piecewise-constant sector from the band table; speed in m/s."""
    if speed < 0:
        raise DimensionError(f"speed must be >= 0, got {speed}")
    kmh = speed * MS_TO_KMH
    for upper, radius, apex in cfg.sector_bands:
        if kmh < upper:
            return VisualSectorSpec(
                radius=radius, half_angle=apex / 2.0,
                band_weights={"central": 1.0, "fringe": cfg.fringe_weight,
                              "peripheral": cfg.peripheral_weight})
    raise DimensionError("sector band table has no open band")  # unreachable: validated


def _band_arrays(cfg: TrainConfig, kmh: np.ndarray):
    """Vectorized radius/half-angle lookup for an array of speeds in km/h."""
    conds = [kmh < b[0] for b in cfg.sector_bands]
    radius = np.select(conds, [b[1] for b in cfg.sector_bands])
    half = np.select(conds, [b[2] / 2.0 for b in cfg.sector_bands])
    return radius, half


def heading_vectors(target_pos: np.ndarray, target_speed: np.ndarray,
                    speed_min: float) -> np.ndarray:
    """Per-frame unit heading from position deltas; +y when nearly stopped."""
    delta = np.diff(target_pos, axis=-2)
    delta = np.concatenate([delta[..., :1, :], delta], axis=-2)
    norm = np.linalg.norm(delta, axis=-1, keepdims=True)
    slow = (target_speed[..., None] < speed_min) | (norm[..., 0:1] < 1e-12)
    unit = np.where(slow, np.array([0.0, 1.0]), delta / np.maximum(norm, 1e-12))
    return unit / np.maximum(np.linalg.norm(unit, axis=-1, keepdims=True), 1e-12)


def cell_centers(grid_slots: int, grid_lanes: int, slot_length: float,
                 lane_width: float) -> np.ndarray:
    """(slots, lanes, 2) relative (dx, dy) of every cell center."""
    dy = (np.arange(grid_slots) - grid_slots // 2) * slot_length
    dx = (np.arange(grid_lanes) - grid_lanes // 2) * lane_width
    centers = np.zeros((grid_slots, grid_lanes, 2))
    centers[..., 0] = dx[None, :]
    centers[..., 1] = dy[:, None]
    return centers


def visual_weight(dx: float, dy: float, radius: float, half_angle: float,
                  heading: np.ndarray, fringe: float, peripheral: float) -> float:
    """Band weight of a single relative position (scalar form of the matrix)."""
    dist = float(np.hypot(dx, dy))
    if dist < 1e-12:
        bearing = 0.0
    else:
        cosang = float(np.dot(heading, (dx, dy))) / dist
        bearing = float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    if dist <= radius and bearing <= half_angle:
        return 1.0
    if dist <= radius and bearing <= 90.0:
        return fringe
    return peripheral


def build_visual_matrix(batch: Batch, cfg: TrainConfig) -> np.ndarray:
    """(B, T, slots, lanes) of weights in [0, 1] from per-frame speed sectors."""
    radius, half = _band_arrays(cfg, batch.target_speed * MS_TO_KMH)   # (B,T)
    heading = heading_vectors(batch.target_pos, batch.target_speed,
                              cfg.heading_speed_min)                   # (B,T,2)
    centers = cell_centers(batch.grid_slots, batch.grid_lanes,
                           cfg.slot_length, cfg.lane_width)            # (S,L,2)
    ranges = np.linalg.norm(centers, axis=-1)                          # (S,L)
    dots = np.einsum("btk,slk->btsl", heading, centers)
    with np.errstate(invalid="ignore"):
        cos = np.where(ranges[None, None] < 1e-12, 1.0,
                       dots / np.maximum(ranges[None, None], 1e-12))
    bearing = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    in_range = ranges[None, None] <= radius[..., None, None]
    central = in_range & (bearing <= half[..., None, None])
    fringe = in_range & (bearing <= 90.0) & ~central
    return np.where(central, 1.0,
                    np.where(fringe, cfg.fringe_weight, cfg.peripheral_weight))


def apply_visual_mask(h_conv, visual: np.ndarray, occupancy: np.ndarray):
    """Elementwise product of conv features and visual weights on occupied cells.

    `h_conv` is (..., T, cells); `visual` and `occupancy` are (..., T, S, L).
    Unoccupied cells come out exactly zero (they produce no graph node).
    """
    lead = visual.shape[:-2]
    flat = (visual * occupancy).reshape(lead + (-1,))
    if isinstance(h_conv, Tensor):
        return h_conv * Tensor(flat)
    return h_conv * flat


def nearby_radius(speed: np.ndarray, safety_time: float, safety_floor: float):
    """Safety-distance radius of the nearby area; reaction-time rule with floor."""
    return np.maximum(safety_time * speed, safety_floor)


@dataclass
class EdgeGraph:
    """Dense adjacency over one frame's nodes (self-loops always present)."""

    node_ids: list
    adjacency: np.ndarray  # (n, n) in {0,1}, symmetric
    nearby: np.ndarray     # (n, n) in {0,1}, 1 where both endpoints are nearby


def build_edge_graph(frame_states: list, target, safety_time: float = 2.0,
                     safety_floor: float = 10.0) -> EdgeGraph:
    """Fully connected graph over the target and its grid neighbors.

    Edges whose two endpoints both lie within the circular nearby area around
    the target (radius max(safety_time * speed, safety_floor)) carry the
    nearby flag that later biases attention scores.
    """
    nodes = [target] + [s for s in frame_states if s.agent_id != target.agent_id]
    n = len(nodes)
    radius = float(nearby_radius(np.asarray(target.velocity), safety_time, safety_floor))
    dist = np.array([np.hypot(s.x - target.x, s.y - target.y) for s in nodes])
    inside = dist <= radius
    adjacency = np.ones((n, n))
    nearby = (inside[:, None] & inside[None, :]).astype(np.float64)
    return EdgeGraph(node_ids=[s.agent_id for s in nodes],
                     adjacency=adjacency, nearby=nearby)


class GraphAttentionLayer(Module):
    """Single-head graph attention: shared linear lift, additive pairwise scores
    through LeakyReLU, normalized per node over its neighborhood, ELU output."""

    def __init__(self, in_dim: int, out_dim: int, rng, slope: float = 0.2,
                 alpha: float = 1.0):
        super().__init__()
        self.weight = Parameter(xavier_uniform(rng, in_dim, out_dim))
        self.att = Parameter(xavier_uniform(rng, 2 * out_dim, 1, (2 * out_dim,)))
        self.out_dim = out_dim
        self.slope = slope
        self.alpha = alpha

    def attention(self, nodes: Tensor, valid: np.ndarray, nearby: np.ndarray | None,
                  beta: float, raw_score_norm: bool = False):
        """Returns (lifted nodes (...,N,out), attention rows (...,N,N))."""
        lifted = T.matmul(nodes, self.weight)
        a_src = self.att[:self.out_dim].reshape((self.out_dim, 1))
        a_dst = self.att[self.out_dim:].reshape((self.out_dim, 1))
        s_src = T.matmul(lifted, a_src)              # (...,N,1)
        s_dst = T.matmul(lifted, a_dst)
        scores = T.leaky_relu(s_src + s_dst.swapaxes(-1, -2), self.slope)
        if nearby is not None and beta != 0.0:
            scores = scores + Tensor(beta * nearby)
        pair_valid = (valid[..., :, None] * valid[..., None, :])
        if raw_score_norm:
            masked = scores * Tensor(pair_valid)
            denom = masked.sum(axis=-1, keepdims=True)
            if np.any(np.abs(denom.data) < 1e-12):
                raise NumericError(
                    "raw-score normalization hit a zero denominator; "
                    "disable gat_raw_score_norm or change the graph")
            att = masked / denom
        else:
            att = masked_softmax(scores, pair_valid, axis=-1)
        return lifted, att

    def __call__(self, nodes: Tensor, valid: np.ndarray,
                 nearby: np.ndarray | None = None, beta: float = 0.0,
                 raw_score_norm: bool = False) -> Tensor:
        lifted, att = self.attention(nodes, valid, nearby, beta, raw_score_norm)
        out = T.elu(T.matmul(att, lifted), self.alpha)
        return out * Tensor(valid[..., None])


class VisionModule(Module):
    """Two GAT layers alternating with dropout, plus the slot-aligned readout."""

    def __init__(self, node_dim: int, dim: int, dropout: float, rng, dropout_rng,
                 slope: float = 0.2, alpha: float = 1.0,
                 raw_score_norm: bool = False):
        super().__init__()
        self.gat1 = GraphAttentionLayer(node_dim, dim, rng, slope, alpha)
        self.gat2 = GraphAttentionLayer(dim, dim, rng, slope, alpha)
        self.drop1 = Dropout(dropout, dropout_rng)
        self.drop2 = Dropout(dropout, dropout_rng)
        self.raw_score_norm = raw_score_norm

    def gat_stack(self, nodes: Tensor, valid: np.ndarray, nearby: np.ndarray,
                  beta: float) -> Tensor:
        x = self.gat1(nodes, valid, nearby, beta, self.raw_score_norm)
        x = self.drop1(x)
        x = self.gat2(x, valid, nearby, beta, self.raw_score_norm)
        return self.drop2(x)

    def __call__(self, nodes: Tensor, valid: np.ndarray, nearby: np.ndarray,
                 beta: float, slot_index: np.ndarray, frame_mask: np.ndarray,
                 n_cells: int, copies: int = 1) -> Tensor:
        """Run the stack per frame and assemble the visual feature.

        nodes (B,T,Nn,f) with the target at node 0 and cell entries after it;
        slot_index (B,T,Nn-1) flat cell slots. Each occupied slot row of the
        output is the time-mean of that cell node's output summed with the
        target node's output at the same frame; slots never occupied stay
        exactly zero. Returns (B, n_cells, dim).
        """
        b, t_steps, n_nodes = nodes.shape[:3]
        out = self.gat_stack(nodes, valid, nearby, beta)          # (B,T,Nn,dim)
        target_out = out[:, :, 0:1, :]
        nbr_out = out[:, :, 1:, :]
        contrib = (nbr_out + target_out) * Tensor(frame_mask[..., None])
        bi = np.broadcast_to(np.arange(b)[:, None, None], slot_index.shape)
        z = T.scatter_add(contrib, (bi, slot_index), (b, n_cells, out.shape[-1]))
        return z * (1.0 / (t_steps * copies))
