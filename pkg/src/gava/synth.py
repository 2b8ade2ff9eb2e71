"""Synthetic scenario generation with closed-form oracles.

Three scenario families:

* constant_velocity — lone vehicle, straight motion; the future is v*t exactly.
* lane_change — one smooth lateral half-cosine of one lane width over 4 s.
* car_following — a leader with a time-varying speed profile and a follower
  governed by intelligent-driver-model dynamics, so the follower's future is
  determined by the leader (the interaction-critical set).

All scenarios are deterministic per seed. Samples come out of the standard
windowing pipeline so every invariant of build_samples holds here too.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .scene import AgentTrack, BuildStats, TrajectoryTable, build_samples

SCENARIOS = ("constant_velocity", "lane_change", "car_following")

# intelligent-driver-model constants (SI); accel/decel chosen so the
# speed-difference term dominates the follower's response
IDM_DESIRED_SPEED = 18.0
IDM_TIME_HEADWAY = 1.2
IDM_MIN_GAP = 2.0
IDM_MAX_ACCEL = 1.2
IDM_COMFORT_DECEL = 1.5
IDM_EXPONENT = 4.0
VEHICLE_LENGTH = 4.5


def idm_acceleration(v: float, v_lead: float, center_gap: float,
                     time_headway: float = IDM_TIME_HEADWAY) -> float:
    """IDM acceleration of a follower given its speed, the leader speed, and
    the center-to-center gap."""
    gap = max(center_gap - VEHICLE_LENGTH, 1e-3)
    dv = v - v_lead
    s_star = (IDM_MIN_GAP + v * time_headway
              + v * dv / (2.0 * np.sqrt(IDM_MAX_ACCEL * IDM_COMFORT_DECEL)))
    acc = IDM_MAX_ACCEL * (1.0 - (v / IDM_DESIRED_SPEED) ** IDM_EXPONENT
                           - (max(s_star, 0.0) / gap) ** 2)
    return float(np.clip(acc, -2.0 * IDM_COMFORT_DECEL, IDM_MAX_ACCEL))


def _track(agent_id, frames, x, y, v, a, lane, vclass=0):
    n = len(frames)
    return AgentTrack(
        agent_id=agent_id,
        frames=np.asarray(frames, dtype=np.int64),
        x=np.asarray(x, dtype=np.float64),
        y=np.asarray(y, dtype=np.float64),
        velocity=np.asarray(v, dtype=np.float64),
        acceleration=np.asarray(a, dtype=np.float64),
        lane=np.asarray(lane, dtype=np.int64),
        vclass=np.full(n, vclass, dtype=np.int64),
    )


def _constant_velocity_table(i: int, rng: np.random.Generator, n_frames: int,
                             dt: float, lane_width: float,
                             speed_range: tuple) -> TrajectoryTable:
    v = float(rng.uniform(*speed_range))
    lane = int(rng.integers(1, 4))
    t = np.arange(n_frames)
    table = TrajectoryTable(recording=f"constant_velocity-{i}", frame_dt=dt)
    table.agents[1] = _track(1, t, np.full(n_frames, lane * lane_width),
                             v * dt * t, np.full(n_frames, v),
                             np.zeros(n_frames), np.full(n_frames, lane))
    return table


def _lane_change_table(i: int, rng: np.random.Generator, n_frames: int,
                       dt: float, lane_width: float,
                       speed_range: tuple) -> TrajectoryTable:
    v = float(rng.uniform(*speed_range))
    lane0 = int(rng.integers(1, 4))
    if lane0 == 1:
        direction = 1
    elif lane0 == 3:
        direction = -1
    else:
        direction = int(rng.choice([-1, 1]))
    duration = 4.0
    dur_frames = int(round(duration / dt))
    # start so the change straddles the history/future boundary somewhere useful
    start = int(rng.integers(2, max(3, n_frames - dur_frames - 2)))
    t = np.arange(n_frames)
    x0 = lane0 * lane_width
    phase = np.clip((t - start) * dt / duration, 0.0, 1.0)
    x = x0 + direction * lane_width * 0.5 * (1.0 - np.cos(np.pi * phase))
    lane = np.clip(np.round(x / lane_width).astype(np.int64), 1, 3)
    table = TrajectoryTable(recording=f"lane_change-{i}", frame_dt=dt)
    table.agents[1] = _track(1, t, x, v * dt * t, np.full(n_frames, v),
                             np.zeros(n_frames), lane)
    return table


def _car_following_table(i: int, rng: np.random.Generator, n_frames: int,
                         dt: float, lane_width: float,
                         chain: int = 2) -> TrajectoryTable:
    """A platoon: vehicle 1 drives the speed profile, each following vehicle
    obeys IDM behind its predecessor. The prediction target is the last one.

    Chains longer than two run a tighter time headway so every upstream
    vehicle stays inside the neighbor grid of the trailing target.
    """
    if chain == 2:
        v_base = float(rng.uniform(9.0, 14.0))
        headway = IDM_TIME_HEADWAY
    else:
        v_base = float(rng.uniform(8.0, 11.5))
        headway = 0.6
    amp = float(rng.uniform(2.5, 4.0))
    period = float(rng.uniform(5.0, 9.0))
    phase0 = float(rng.uniform(0.0, 2.0 * np.pi))
    lane = 2
    x_lane = lane * lane_width

    # near-equilibrium start: the head's oscillation, not the initial gap,
    # carries the predictive signal
    eq_gap = IDM_MIN_GAP + v_base * headway + VEHICLE_LENGTH

    substeps = 4
    h = dt / substeps

    def v_head(time):
        return max(0.1, v_base + amp * np.sin(2.0 * np.pi * time / period + phase0))

    n_veh = chain
    pos = np.zeros(n_veh)
    vel = np.zeros(n_veh)
    for j in range(n_veh):
        pos[j] = (n_veh - 1 - j) * eq_gap + float(rng.uniform(-2.0, 3.0)) \
            if j > 0 else (n_veh - 1) * eq_gap
        vel[j] = max(0.0, v_base + float(rng.uniform(-1.5, 1.5))) if j > 0 \
            else v_head(0.0)
    pos = np.sort(pos)[::-1].copy()  # strictly decreasing: head first

    ys = [[float(p)] for p in pos]
    vs = [[float(v)] for v in vel]
    accs = [[] for _ in range(n_veh)]
    time = 0.0
    for _ in range(n_frames - 1):
        frame_acc = [None] * n_veh
        for _ in range(substeps):
            vel[0] = v_head(time)
            acc_list = [0.0]
            for j in range(1, n_veh):
                acc_list.append(idm_acceleration(vel[j], vel[j - 1],
                                                 pos[j - 1] - pos[j], headway))
            for j in range(n_veh):
                if frame_acc[j] is None:
                    frame_acc[j] = acc_list[j]
                pos[j] += vel[j] * h
                if j > 0:
                    vel[j] = max(0.0, vel[j] + acc_list[j] * h)
            time += h
        frame_acc[0] = (v_head(time) - v_head(time - dt)) / dt
        for j in range(n_veh):
            ys[j].append(float(pos[j]))
            vs[j].append(float(vel[j]) if j > 0 else v_head(time))
            accs[j].append(frame_acc[j])
    for j in range(n_veh):
        accs[j].append(accs[j][-1])

    t = np.arange(n_frames)
    table = TrajectoryTable(recording=f"car_following-{i}", frame_dt=dt)
    for j in range(n_veh):
        table.agents[j + 1] = _track(j + 1, t, np.full(n_frames, x_lane),
                                     ys[j], vs[j], accs[j],
                                     np.full(n_frames, lane))
    return table


def synth_tables(scenario: str, n: int, seed: int, dt: float = 0.2,
                 n_frames: int = 40, lane_width: float = 3.7,
                 speed_range: tuple = (8.0, 16.0),
                 chain: int = 2) -> list[TrajectoryTable]:
    """Generate `n` independent scenes as trajectory tables."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario '{scenario}', expected one of {SCENARIOS}")
    if chain < 2:
        raise ConfigError(f"car_following chain needs >= 2 vehicles, got {chain}")
    rng = np.random.default_rng(seed)
    tables = []
    for i in range(n):
        if scenario == "constant_velocity":
            tables.append(_constant_velocity_table(i, rng, n_frames, dt, lane_width, speed_range))
        elif scenario == "lane_change":
            tables.append(_lane_change_table(i, rng, n_frames, dt, lane_width, speed_range))
        else:
            tables.append(_car_following_table(i, rng, n_frames, dt, lane_width, chain))
    return tables


def synth_generate(scenario: str, n: int, seed: int, history_steps: int = 15,
                   future_steps: int = 25, dt: float = 0.2,
                   lane_width: float = 3.7, slot_length: float = 4.57,
                   speed_range: tuple = (8.0, 16.0), chain: int = 2) -> list:
    """Generate `n` SceneSamples (one window per scene) for a scenario.

    For car_following the prediction target is the trailing follower.
    """
    n_frames = history_steps + future_steps
    tables = synth_tables(scenario, n, seed, dt=dt, n_frames=n_frames,
                          lane_width=lane_width, speed_range=speed_range,
                          chain=chain)
    samples = []
    stats = BuildStats()
    for table in tables:
        target_ids = [max(table.agents)] if scenario == "car_following" else [1]
        built = build_samples(table, history_steps, future_steps, stride=1, dt=dt,
                              slot_length=slot_length, target_ids=target_ids,
                              stats=stats)
        samples.extend(built)
    return samples


def merge_tables(tables: list, frame_stride: int = 100000) -> TrajectoryTable:
    """Merge scenes into one table on disjoint frame ranges with unique ids.

    Windows can never span scenes because the merged frame clock jumps
    between them.
    """
    merged = TrajectoryTable(recording="synthetic", frame_dt=tables[0].frame_dt)
    next_id = 1
    for k, table in enumerate(tables):
        base = k * frame_stride
        for aid in sorted(table.agents):
            tr = table.agents[aid]
            merged.agents[next_id] = AgentTrack(
                agent_id=next_id,
                frames=tr.frames + base,
                x=tr.x.copy(), y=tr.y.copy(),
                velocity=tr.velocity.copy(), acceleration=tr.acceleration.copy(),
                lane=tr.lane.copy(), vclass=tr.vclass.copy(),
            )
            next_id += 1
    return merged
