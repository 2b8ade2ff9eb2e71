"""Scene data model: ingestion, windowing, neighbor grids, maneuver labels.

Coordinates follow the highway convention: x lateral (meters, increasing to
the right), y longitudinal (meters, increasing in the direction of travel).
All sample positions are expressed relative to the target's position at the
last observed frame, so the model never sees absolute coordinates.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, SchemaError

VEHICLE_CLASSES = ("car", "truck", "motorcycle")
LATERAL = ("left_change", "keep", "right_change")
LONGITUDINAL = ("normal", "braking")
LAT_KEEP = LATERAL.index("keep")
LON_NORMAL = LONGITUDINAL.index("normal")

# feature vector layout per frame (state-dim = 12)
FEATURE_NAMES = (
    "x", "y", "velocity", "acceleration",
    "class_car", "class_truck", "class_motorcycle",
    "lat_left", "lat_keep", "lat_right",
    "lon_normal", "lon_braking",
)
STATE_DIM = len(FEATURE_NAMES)
N_CONTINUOUS = 4  # x, y, velocity, acceleration are standardized

# NGSIM-style class codes
CLASS_CODE_TO_NAME = {1: "motorcycle", 2: "car", 3: "truck"}
CLASS_NAME_TO_CODE = {v: k for k, v in CLASS_CODE_TO_NAME.items()}


@dataclass
class AgentState:
    """One vehicle's kinematic and categorical state at one frame."""

    agent_id: int
    frame: int
    x: float
    y: float
    velocity: float
    acceleration: float
    vehicle_class: str = "car"
    lane_id: int = 1
    lateral_maneuver: str = "keep"
    longitudinal_maneuver: str = "normal"

    def __post_init__(self):
        if self.velocity < 0:
            raise DataError(f"agent {self.agent_id}: velocity must be >= 0, got {self.velocity}")
        if self.lane_id < 1:
            raise DataError(f"agent {self.agent_id}: lane_id must be >= 1, got {self.lane_id}")
        if self.vehicle_class not in VEHICLE_CLASSES:
            raise DataError(f"unknown vehicle class '{self.vehicle_class}'")
        if self.lateral_maneuver not in LATERAL:
            raise DataError(f"unknown lateral maneuver '{self.lateral_maneuver}'")
        if self.longitudinal_maneuver not in LONGITUDINAL:
            raise DataError(f"unknown longitudinal maneuver '{self.longitudinal_maneuver}'")


@dataclass
class AgentTrack:
    """One agent's full trajectory as frame-sorted arrays."""

    agent_id: int
    frames: np.ndarray
    x: np.ndarray
    y: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    lane: np.ndarray
    vclass: np.ndarray          # index into VEHICLE_CLASSES
    lat: np.ndarray = None      # filled by label_maneuvers
    lon: np.ndarray = None

    def __len__(self):
        return len(self.frames)


@dataclass
class TrajectoryTable:
    """All agents of one recording on a common frame clock."""

    recording: str
    frame_dt: float
    agents: dict = field(default_factory=dict)


@dataclass
class CsvSchema:
    """Column map and unit convention for a trajectory CSV."""

    units: str = "meters"            # "meters" or "feet"
    frame_dt: float = 0.2
    agent_col: str = "Vehicle_ID"
    frame_col: str = "Frame_ID"
    x_col: str = "Local_X"
    y_col: str = "Local_Y"
    vel_col: str = "v_Vel"
    acc_col: str = "v_Acc"
    lane_col: str = "Lane_ID"
    class_col: str = "v_Class"


FEET_TO_METERS = 0.3048


def load_csv(path: str, schema: CsvSchema | None = None) -> TrajectoryTable:
    """Read one recording; group rows by agent and sort by frame.

    Applies unit conversion per the schema. Duplicate (agent, frame) rows are
    a data error; so is a missing column.
    """
    schema = schema or CsvSchema()
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open '{path}': {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"'{path}': empty file, no header row")
        required = [schema.agent_col, schema.frame_col, schema.x_col, schema.y_col,
                    schema.vel_col, schema.acc_col, schema.lane_col, schema.class_col]
        for col in required:
            if col not in reader.fieldnames:
                raise SchemaError(f"'{path}': missing required column '{col}'")
        rows: dict[int, list] = {}
        for rec in reader:
            try:
                aid = int(float(rec[schema.agent_col]))
                rows.setdefault(aid, []).append((
                    int(float(rec[schema.frame_col])),
                    float(rec[schema.x_col]),
                    float(rec[schema.y_col]),
                    float(rec[schema.vel_col]),
                    float(rec[schema.acc_col]),
                    int(float(rec[schema.lane_col])),
                    int(float(rec[schema.class_col])),
                ))
            except (TypeError, ValueError) as exc:
                raise DataError(f"'{path}': unparseable row {rec}") from exc

    scale = FEET_TO_METERS if schema.units == "feet" else 1.0
    if schema.units not in ("feet", "meters"):
        raise ConfigError(f"unknown units '{schema.units}', expected feet or meters")

    table = TrajectoryTable(recording=path, frame_dt=schema.frame_dt)
    for aid, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        frames = np.array([e[0] for e in entries], dtype=np.int64)
        if len(np.unique(frames)) != len(frames):
            raise DataError(f"'{path}': duplicate frame for agent {aid}")
        vclass = np.array([_class_index(path, e[6]) for e in entries], dtype=np.int64)
        table.agents[aid] = AgentTrack(
            agent_id=aid,
            frames=frames,
            x=np.array([e[1] for e in entries]) * scale,
            y=np.array([e[2] for e in entries]) * scale,
            velocity=np.array([e[3] for e in entries]) * scale,
            acceleration=np.array([e[4] for e in entries]) * scale,
            lane=np.array([e[5] for e in entries], dtype=np.int64),
            vclass=vclass,
        )
    return table


def _class_index(path: str, code: int) -> int:
    name = CLASS_CODE_TO_NAME.get(code)
    if name is None:
        raise DataError(f"'{path}': unknown vehicle class code {code}")
    return VEHICLE_CLASSES.index(name)


def write_csv(table: TrajectoryTable, path: str, schema: CsvSchema | None = None) -> None:
    """Write a table back out in the standard (meters) schema."""
    schema = schema or CsvSchema()
    cols = [schema.agent_col, schema.frame_col, schema.x_col, schema.y_col,
            schema.vel_col, schema.acc_col, schema.lane_col, schema.class_col]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for aid in sorted(table.agents):
            tr = table.agents[aid]
            code = [CLASS_NAME_TO_CODE[VEHICLE_CLASSES[c]] for c in tr.vclass]
            for i in range(len(tr)):
                writer.writerow([aid, int(tr.frames[i]),
                                 repr(float(tr.x[i])), repr(float(tr.y[i])),
                                 repr(float(tr.velocity[i])),
                                 repr(float(tr.acceleration[i])),
                                 int(tr.lane[i]), code[i]])


# ---- maneuver labeling --------------------------------------------------------


def label_maneuvers(track: AgentTrack, horizon_frames: int,
                    braking_ratio: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame lateral/longitudinal labels.

    Lateral: left/right change if the lane id changes within +-horizon_frames
    of the frame (nearest transition decides direction), else keep. Lower lane
    ids are further left. Longitudinal: braking if the mean velocity over the
    next horizon_frames is below braking_ratio times the current velocity.
    """
    n = len(track)
    lat = np.full(n, LAT_KEEP, dtype=np.int64)
    lon = np.full(n, LON_NORMAL, dtype=np.int64)
    lane = track.lane
    transitions = np.nonzero(np.diff(lane) != 0)[0]  # change between i and i+1
    for i in range(n):
        best = None
        for tr in transitions:
            # transition happens between frame tr and tr+1
            dist = min(abs(i - tr), abs(i - (tr + 1)))
            if dist <= horizon_frames and (best is None or dist < best[0]):
                best = (dist, int(np.sign(lane[tr + 1] - lane[tr])))
        if best is not None:
            lat[i] = LATERAL.index("left_change") if best[1] < 0 else LATERAL.index("right_change")
        fut = track.velocity[i + 1:i + 1 + horizon_frames]
        if fut.size and fut.mean() < braking_ratio * track.velocity[i]:
            lon[i] = LONGITUDINAL.index("braking")
    track.lat = lat
    track.lon = lon
    return lat, lon


# ---- neighbor grid ------------------------------------------------------------


def grid_cell_for(dx_lane: int, dy: float, grid_slots: int = 13, grid_lanes: int = 3,
                  slot_length: float = 4.57) -> tuple[int, int] | None:
    """Map a relative (lane offset, longitudinal offset) to a grid cell, or None."""
    center = grid_slots // 2
    slot = center + int(math.floor(dy / slot_length + 0.5))
    col = grid_lanes // 2 + dx_lane
    if 0 <= slot < grid_slots and 0 <= col < grid_lanes:
        return slot, col
    return None


def build_neighbor_grid(frame_states: list, target: AgentState,
                        grid_slots: int = 13, grid_lanes: int = 3,
                        slot_length: float = 4.57) -> dict:
    """Assign surrounding agents to the grid centered on the target.

    Returns {(slot, lane_col): AgentState}. The nearest agent wins an
    over-full cell; exact distance ties go to the lower agent id.
    """
    cells: dict[tuple, tuple] = {}
    for st in frame_states:
        if st.agent_id == target.agent_id:
            continue
        cell = grid_cell_for(st.lane_id - target.lane_id, st.y - target.y,
                             grid_slots, grid_lanes, slot_length)
        if cell is None:
            continue
        dist = math.hypot(st.x - target.x, st.y - target.y)
        cur = cells.get(cell)
        if cur is None or (dist, st.agent_id) < (cur[0], cur[1].agent_id):
            cells[cell] = (dist, st)
    return {cell: st for cell, (dist, st) in cells.items()}


# ---- scene samples ------------------------------------------------------------


@dataclass
class SceneSample:
    """One training/eval window: target + neighbor-grid histories and the future.

    Feature arrays follow FEATURE_NAMES; positions are relative to the target
    at the last history frame. The raw kinematic side arrays stay in SI units
    regardless of feature normalization.
    """

    target_feats: np.ndarray        # (T, STATE_DIM)
    neighbor_feats: np.ndarray      # (slots, lanes, T, STATE_DIM)
    occupancy: np.ndarray           # (slots, lanes, T) in {0,1}
    future: np.ndarray              # (F, 2) meters, relative
    target_speed: np.ndarray        # (T,) m/s raw
    target_pos: np.ndarray          # (T, 2) meters, relative, raw
    target_kin: np.ndarray          # (T, 2) raw velocity/acceleration
    neighbor_kin: np.ndarray        # (slots, lanes, T, 2) raw velocity/acceleration
    rel_geometry: np.ndarray        # (slots, lanes, T, 2) per-frame (dx, dy) to target
    target_man: np.ndarray          # (T, 2) lateral/longitudinal label indices
    neighbor_man: np.ndarray        # (slots, lanes, T, 2)
    label_lat: int                  # mode label at last history frame
    label_lon: int
    recording: str = ""
    agent_id: int = -1
    window_start: int = 0
    dt: float = 0.2

    @property
    def history_steps(self) -> int:
        return self.target_feats.shape[0]

    @property
    def future_steps(self) -> int:
        return self.future.shape[0]


def _features_for(track: AgentTrack, idx: np.ndarray, origin: np.ndarray) -> np.ndarray:
    n = len(idx)
    feats = np.zeros((n, STATE_DIM))
    feats[:, 0] = track.x[idx] - origin[0]
    feats[:, 1] = track.y[idx] - origin[1]
    feats[:, 2] = track.velocity[idx]
    feats[:, 3] = track.acceleration[idx]
    feats[np.arange(n), 4 + track.vclass[idx]] = 1.0
    feats[np.arange(n), 7 + track.lat[idx]] = 1.0
    feats[np.arange(n), 10 + track.lon[idx]] = 1.0
    return feats


@dataclass
class BuildStats:
    windows: int = 0
    skipped_short: int = 0
    skipped_gaps: int = 0


def build_samples(table: TrajectoryTable, history_steps: int, future_steps: int,
                  stride: int = 1, dt: float = 0.2,
                  grid_slots: int = 13, grid_lanes: int = 3, slot_length: float = 4.57,
                  maneuver_horizon: float = 2.0, braking_ratio: float = 0.8,
                  target_ids: list | None = None,
                  stats: BuildStats | None = None) -> list[SceneSample]:
    """Slide windows over every (or the selected) agent and build samples.

    The table is downsampled so consecutive kept frames are dt apart; dt must
    be an integer multiple of the table's frame_dt. Trajectories shorter than
    one window are counted and skipped, never an error.
    """
    if stats is None:
        stats = BuildStats()
    k = dt / table.frame_dt
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise ConfigError(
            f"dt {dt} is not an integer multiple of the file frame_dt {table.frame_dt}")
    k = int(round(k))

    # downsample every agent on the shared frame clock
    ds: dict[int, AgentTrack] = {}
    for aid, tr in table.agents.items():
        keep = tr.frames % k == 0
        if not keep.any():
            continue
        sub = AgentTrack(
            agent_id=aid,
            frames=tr.frames[keep] // k,
            x=tr.x[keep], y=tr.y[keep],
            velocity=tr.velocity[keep], acceleration=tr.acceleration[keep],
            lane=tr.lane[keep], vclass=tr.vclass[keep],
        )
        label_maneuvers(sub, horizon_frames=int(round(maneuver_horizon / dt)),
                        braking_ratio=braking_ratio)
        ds[aid] = sub

    # frame -> [(agent_id, index into its arrays)]
    frame_index: dict[int, list] = {}
    for aid, tr in ds.items():
        for i, f in enumerate(tr.frames):
            frame_index.setdefault(int(f), []).append((aid, i))

    window = history_steps + future_steps
    samples: list[SceneSample] = []
    for aid in sorted(ds):
        if target_ids is not None and aid not in target_ids:
            continue
        tr = ds[aid]
        if len(tr) < window:
            stats.skipped_short += 1
            continue
        for start in range(0, len(tr) - window + 1, stride):
            idx = np.arange(start, start + window)
            frames = tr.frames[idx]
            if not np.all(np.diff(frames) == 1):
                stats.skipped_gaps += 1
                continue
            samples.append(_build_one(ds, frame_index, tr, idx,
                                      history_steps, future_steps,
                                      grid_slots, grid_lanes, slot_length,
                                      table.recording, dt))
            stats.windows += 1
    return samples


def _build_one(ds, frame_index, tr: AgentTrack, idx: np.ndarray,
               history_steps: int, future_steps: int,
               grid_slots: int, grid_lanes: int, slot_length: float,
               recording: str, dt: float) -> SceneSample:
    hist = idx[:history_steps]
    fut = idx[history_steps:]
    last = hist[-1]
    origin = np.array([tr.x[last], tr.y[last]])

    target_feats = _features_for(tr, hist, origin)
    future = np.stack([tr.x[fut] - origin[0], tr.y[fut] - origin[1]], axis=-1)

    shape = (grid_slots, grid_lanes)
    neighbor_feats = np.zeros(shape + (history_steps, STATE_DIM))
    occupancy = np.zeros(shape + (history_steps,))
    neighbor_kin = np.zeros(shape + (history_steps, 2))
    rel_geometry = np.zeros(shape + (history_steps, 2))
    neighbor_man = np.zeros(shape + (history_steps, 2), dtype=np.int64)

    for t, hi in enumerate(hist):
        frame = int(tr.frames[hi])
        best: dict[tuple, tuple] = {}
        for aid2, i2 in frame_index.get(frame, ()):  # choose occupants
            if aid2 == tr.agent_id:
                continue
            other = ds[aid2]
            cell = grid_cell_for(int(other.lane[i2] - tr.lane[hi]),
                                 other.y[i2] - tr.y[hi],
                                 grid_slots, grid_lanes, slot_length)
            if cell is None:
                continue
            dist = math.hypot(other.x[i2] - tr.x[hi], other.y[i2] - tr.y[hi])
            cur = best.get(cell)
            if cur is None or (dist, aid2) < (cur[0], cur[1]):
                best[cell] = (dist, aid2, i2)
        for (slot, col), (_, aid2, i2) in best.items():
            other = ds[aid2]
            one = np.arange(i2, i2 + 1)
            neighbor_feats[slot, col, t] = _features_for(other, one, origin)[0]
            occupancy[slot, col, t] = 1.0
            neighbor_kin[slot, col, t] = (other.velocity[i2], other.acceleration[i2])
            rel_geometry[slot, col, t] = (other.x[i2] - tr.x[hi], other.y[i2] - tr.y[hi])
            neighbor_man[slot, col, t] = (other.lat[i2], other.lon[i2])

    return SceneSample(
        target_feats=target_feats,
        neighbor_feats=neighbor_feats,
        occupancy=occupancy,
        future=future,
        target_speed=tr.velocity[hist].copy(),
        target_pos=np.stack([tr.x[hist] - origin[0], tr.y[hist] - origin[1]], axis=-1),
        target_kin=np.stack([tr.velocity[hist], tr.acceleration[hist]], axis=-1),
        neighbor_kin=neighbor_kin,
        rel_geometry=rel_geometry,
        target_man=np.stack([tr.lat[hist], tr.lon[hist]], axis=-1),
        neighbor_man=neighbor_man,
        label_lat=int(tr.lat[last]),
        label_lon=int(tr.lon[last]),
        recording=recording,
        agent_id=tr.agent_id,
        window_start=int(tr.frames[hist[0]]),
        dt=dt,
    )


# ---- splits and normalization --------------------------------------------------


@dataclass
class NormalizationStats:
    mean: np.ndarray   # (N_CONTINUOUS,)
    scale: np.ndarray  # (N_CONTINUOUS,)


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    stats: NormalizationStats | None = None

    def all_samples(self):
        return list(self.train) + list(self.val) + list(self.test)


def split_samples(samples: list, split_train: float = 0.7,
                  split_val: float = 0.15) -> DatasetSplit:
    """Deterministic split, disjoint by (recording, agent id)."""
    train, val, test = [], [], []
    for s in samples:
        key = f"{s.recording}:{s.agent_id}".encode("utf-8")
        u = int(hashlib.sha1(key).hexdigest()[:8], 16) / 2 ** 32
        if u < split_train:
            train.append(s)
        elif u < split_train + split_val:
            val.append(s)
        else:
            test.append(s)
    return DatasetSplit(train=train, val=val, test=test)


def compute_normalization(samples: list) -> NormalizationStats:
    """Per-feature mean/scale of the continuous features over a sample list."""
    chunks = [s.target_feats[:, :N_CONTINUOUS] for s in samples]
    for s in samples:
        occ = s.occupancy.astype(bool)
        if occ.any():
            chunks.append(s.neighbor_feats[occ][:, :N_CONTINUOUS])
    data = np.concatenate(chunks, axis=0)
    mean = data.mean(axis=0)
    scale = data.std(axis=0)
    scale[scale < 1e-8] = 1.0
    return NormalizationStats(mean=mean, scale=scale)


def normalize(split: DatasetSplit) -> DatasetSplit:
    """Standardize continuous features in place using train-split statistics."""
    stats = compute_normalization(split.train)
    split.stats = stats
    for s in split.all_samples():
        _apply_stats(s, stats, forward=True)
    return split


def denormalize(split: DatasetSplit) -> DatasetSplit:
    if split.stats is None:
        raise DataError("split has no normalization stats to invert")
    for s in split.all_samples():
        _apply_stats(s, split.stats, forward=False)
    stats = split.stats
    split.stats = None
    return split


def _apply_stats(s: SceneSample, stats: NormalizationStats, forward: bool) -> None:
    occ = s.occupancy.astype(bool)
    if forward:
        s.target_feats[:, :N_CONTINUOUS] = (
            s.target_feats[:, :N_CONTINUOUS] - stats.mean) / stats.scale
        s.neighbor_feats[occ, :N_CONTINUOUS] = (
            s.neighbor_feats[occ, :N_CONTINUOUS] - stats.mean) / stats.scale
    else:
        s.target_feats[:, :N_CONTINUOUS] = (
            s.target_feats[:, :N_CONTINUOUS] * stats.scale) + stats.mean
        s.neighbor_feats[occ, :N_CONTINUOUS] = (
            s.neighbor_feats[occ, :N_CONTINUOUS] * stats.scale) + stats.mean
