import numpy as np
import pytest

from actraj.synth import SynthSpec, generate_with_plans
from actraj.ingest import build_tracklets
from actraj.vocab import DT, ActionClass, AgentClass, State, Tracklet, scenario_vocabulary


@pytest.fixture
def vocab():
    return scenario_vocabulary("Scenarios2and3")


@pytest.fixture
def full_vocab():
    return scenario_vocabulary("Full")


def make_tracklet(positions, actions=None, agent_class=AgentClass.VisitorsAlone, t0=0.0,
                  dt=DT, source="traj", index=0):
    positions = np.asarray(positions, float)
    n = len(positions)
    if actions is None:
        actions = [ActionClass.Walk] * n
    vel = np.gradient(positions, dt, axis=0) if n > 1 else np.zeros_like(positions)
    states = tuple(State(t0 + i * dt, float(p[0]), float(p[1]), float(v[0]), float(v[1]), a)
                   for i, (p, v, a) in enumerate(zip(positions, vel, actions)))
    return Tracklet("agent", agent_class, states[:8], states[8:], source, index)


@pytest.fixture
def straight_tracklet():
    pos = np.stack([np.arange(20) * 0.4, np.zeros(20)], axis=1)
    return make_tracklet(pos)


@pytest.fixture(scope="session")
def synth_data():
    trajs, plans = generate_with_plans(SynthSpec(n_trajectories=12, duration_s=24.0, seed=11))
    return trajs, plans, build_tracklets(trajs)
