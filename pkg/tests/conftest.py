import numpy as np
import pytest

from gava.config import TrainConfig


@pytest.fixture(autouse=True)
def clear_tape():
    """Ops recorded by a test that never calls backward must not leak."""
    from gava.tensor import _tape
    _tape().records.clear()
    yield
    _tape().records.clear()


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_cfg():
    """Small configuration for fast model-level tests."""
    return TrainConfig(dim=8, embed_dim=8, n_heads=2, n_layers=1, ff_dim=16,
                       interaction_channels=4, interaction_gru_hidden=4,
                       history_steps=5, future_steps=5, allow_custom_horizon=True,
                       dropout=0.0, grid_slots=7, seed=3)


def make_states(rows):
    """Build AgentState list from (agent_id, x, y, v, lane) tuples."""
    from gava.scene import AgentState
    return [AgentState(agent_id=a, frame=0, x=x, y=y, velocity=v,
                       acceleration=0.0, lane_id=lane)
            for a, x, y, v, lane in rows]
