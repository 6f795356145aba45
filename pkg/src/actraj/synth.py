"""Seeded generator of piecewise-linear trajectories that follow per-class action schedules.

Heading changes happen only at phase boundaries, so every noiseless trajectory
has a closed-form position at any time (see :func:`closed_form_future`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .vocab import DT, ActionClass, AgentClass, State, Tracklet, Trajectory

A, C = ActionClass, AgentClass


class SynthSpecError(ValueError):
    pass


class UnsupportedError(ValueError):
    pass


@dataclass(frozen=True)
class Phase:
    action: ActionClass
    duration_s: float
    speed: float  # m/s; 0 for static actions


# Speeds loosely follow the real profiles: carrying is brisk, moving alongside the
# robot or with a large object is slow, picking/delivering/drawing is static.
DEFAULT_TEMPLATES: dict[AgentClass, tuple[Phase, ...]] = {
    C.CarrierBox: (Phase(A.PickBox, 2.0, 0.0), Phase(A.WalkBox, 4.0, 1.2),
                   Phase(A.DeliverBox, 2.0, 0.0), Phase(A.Walk, 4.0, 1.0)),
    C.CarrierBucket: (Phase(A.PickBucket, 2.0, 0.0), Phase(A.WalkBucket, 4.0, 1.1),
                      Phase(A.DeliverBucket, 2.0, 0.0), Phase(A.Walk, 4.0, 1.0)),
    C.CarrierLargeObject: (Phase(A.WalkLO, 6.0, 0.6), Phase(A.Walk, 4.0, 0.9)),
    C.VisitorsAlone: (Phase(A.Walk, 6.0, 1.0), Phase(A.DrawCard, 2.4, 0.0)),
    C.VisitorsGroup: (Phase(A.Walk, 6.0, 0.9), Phase(A.DrawCard, 2.0, 0.0),
                      Phase(A.ObserveCardDraw, 2.0, 0.0)),
    C.VisitorsAloneHRI: (Phase(A.Walk, 6.0, 1.0), Phase(A.HRI, 3.2, 0.5),
                         Phase(A.DrawCard, 2.0, 0.0)),
    C.CarrierStorageBinHRI: (Phase(A.PickStorageBin, 2.0, 0.0), Phase(A.WalkStorageBin, 4.0, 0.7),
                             Phase(A.DeliverStorageBin, 2.0, 0.0), Phase(A.HRI, 2.0, 0.5),
                             Phase(A.Walk, 4.0, 1.0)),
}

SCENARIO_2_3_MIX = {C.CarrierBox: 0.2, C.CarrierBucket: 0.2, C.CarrierLargeObject: 0.2,
                    C.VisitorsAlone: 0.2, C.VisitorsGroup: 0.2}


@dataclass
class SynthSpec:
    n_trajectories: int = 40
    duration_s: float = 48.0
    class_mix: dict = field(default_factory=lambda: dict(SCENARIO_2_3_MIX))
    templates: dict = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))
    noise_std: float = 0.0
    seed: int = 0
    dt: float = DT
    random_phase_offset: bool = True

    def validate(self) -> None:
        if self.n_trajectories < 0:
            raise SynthSpecError("n_trajectories must be >= 0")
        if not self.duration_s > 0:
            raise SynthSpecError("duration_s must be > 0")
        w = np.array(list(self.class_mix.values()), float)
        if len(w) == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise SynthSpecError("class weights must be >= 0 and sum to 1")
        for cls in self.class_mix:
            phases = self.templates.get(AgentClass(cls))
            if not phases:
                raise SynthSpecError(f"no phase template for {cls}")
            for ph in phases:
                if not ph.duration_s > 0:
                    raise SynthSpecError(f"phase {ph.action.value} needs a positive duration")
                if ph.speed < 0:
                    raise SynthSpecError(f"phase {ph.action.value} has a negative speed")
        if self.noise_std < 0:
            raise SynthSpecError("noise_std must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "class_mix" in d:
            d["class_mix"] = {AgentClass(k): float(v) for k, v in d["class_mix"].items()}
        if "templates" in d:
            d["templates"] = {
                AgentClass(k): tuple(Phase(ActionClass(p[0]), float(p[1]), float(p[2])) for p in v)
                for k, v in d["templates"].items()}
        return cls(**d)


@dataclass(frozen=True)
class PlannedPhase:
    action: ActionClass
    start: float
    end: float
    origin: tuple[float, float]
    velocity: tuple[float, float]


@dataclass(frozen=True)
class Plan:
    """Exact piecewise-linear motion of one synthetic agent."""
    agent_id: str
    agent_class: AgentClass
    phases: tuple[PlannedPhase, ...]
    noise_std: float

    def phase_at(self, t: float) -> PlannedPhase:
        for ph in self.phases:
            if t < ph.end - 1e-9:
                return ph
        return self.phases[-1]

    def position_at(self, t: float) -> tuple[float, float]:
        ph = self.phase_at(t)
        dt = t - ph.start
        return ph.origin[0] + ph.velocity[0] * dt, ph.origin[1] + ph.velocity[1] * dt


def _plan(agent_id: str, cls: AgentClass, phases: tuple[Phase, ...], duration: float,
          rng: np.random.Generator, offset: bool, noise_std: float) -> Plan:
    start_idx = int(rng.integers(len(phases))) if offset else 0
    pos = tuple(float(v) for v in rng.uniform(-5.0, 5.0, size=2))
    t, i, out = 0.0, start_idx, []
    # run one step past the end so the final sample sits inside a phase
    while t <= duration + 1e-9:
        ph = phases[i % len(phases)]
        heading = float(rng.uniform(-math.pi, math.pi))
        vel = (ph.speed * math.cos(heading), ph.speed * math.sin(heading))
        end = t + ph.duration_s
        out.append(PlannedPhase(ph.action, t, end, pos, vel))
        pos = (pos[0] + vel[0] * ph.duration_s, pos[1] + vel[1] * ph.duration_s)
        t, i = end, i + 1
    return Plan(agent_id, cls, tuple(out), noise_std)


def generate_with_plans(spec: SynthSpec) -> tuple[list[Trajectory], dict[str, Plan]]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    classes = list(spec.class_mix)
    weights = np.array([spec.class_mix[c] for c in classes], float)
    n_steps = int(math.floor(spec.duration_s / spec.dt + 1e-9)) + 1
    trajs, plans = [], {}
    for k in range(spec.n_trajectories):
        cls = AgentClass(classes[int(rng.choice(len(classes), p=weights))])
        agent_id = f"synth{k:04d}"
        plan = _plan(agent_id, cls, spec.templates[cls], spec.duration_s, rng,
                     spec.random_phase_offset, spec.noise_std)
        noise = rng.normal(0.0, spec.noise_std, size=(n_steps, 2)) if spec.noise_std > 0 \
            else np.zeros((n_steps, 2))
        states = []
        for j in range(n_steps):
            t = j * spec.dt
            x, y = plan.position_at(t)
            states.append(State(t, float(x + noise[j, 0]), float(y + noise[j, 1]), 0.0, 0.0,
                                plan.phase_at(t).action))
        trajs.append(Trajectory(agent_id, cls, tuple(states)))
        plans[agent_id] = plan
    return trajs, plans


def generate(spec: SynthSpec) -> list[Trajectory]:
    return generate_with_plans(spec)[0]


def closed_form_future(tracklet: Tracklet, plan: Plan) -> np.ndarray:
    """Exact future positions [12, 2] of a tracklet cut from a noiseless synthetic trajectory."""
    if plan.noise_std > 0:
        raise UnsupportedError("closed-form future needs noiseless generation")
    if plan.agent_id != tracklet.agent_id:
        raise UnsupportedError("plan belongs to a different agent")
    return np.array([plan.position_at(s.t) for s in tracklet.future])


def constant_velocity_tracklets(n: int, seed: int = 0, speed_range=(0.5, 1.5),
                                action: ActionClass = A.Walk,
                                agent_class: AgentClass = C.VisitorsAlone) -> list[Tracklet]:
    """Straight-line noiseless tracklets with exact velocities, for overfit checks."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        speed = rng.uniform(*speed_range)
        heading = rng.uniform(-math.pi, math.pi)
        vx, vy = speed * math.cos(heading), speed * math.sin(heading)
        x0, y0 = rng.uniform(-5, 5, size=2)
        states = tuple(State(j * DT, x0 + vx * j * DT, y0 + vy * j * DT, vx, vy, action)
                       for j in range(20))
        out.append(Tracklet(f"cv{k:03d}", agent_class, states[:8], states[8:], f"cv{k:03d}", 0))
    return out
