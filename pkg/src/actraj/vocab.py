"""Domain types and label vocabularies.

Enumeration order of :class:`ActionClass` and :class:`AgentClass` is fixed;
it defines the one-hot index of every label in the full vocabulary.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DT = 0.4  # seconds between resampled states
OBS_LEN = 8
PRED_LEN = 12
SEQ_LEN = OBS_LEN + PRED_LEN
DT_TOL = 1e-6


class VocabularyError(ValueError):
    pass


class ActionClass(str, enum.Enum):
    Walk = "Walk"
    DrawCard = "DrawCard"
    ObserveCardDraw = "ObserveCardDraw"
    WalkLO = "WalkLO"
    PickBucket = "PickBucket"
    WalkBucket = "WalkBucket"
    DeliverBucket = "DeliverBucket"
    PickBox = "PickBox"
    WalkBox = "WalkBox"
    DeliverBox = "DeliverBox"
    PickStorageBin = "PickStorageBin"
    WalkStorageBin = "WalkStorageBin"
    DeliverStorageBin = "DeliverStorageBin"
    HRI = "HRI"

    @property
    def index(self) -> int:
        return _ACTION_ORDER.index(self)


class AgentClass(str, enum.Enum):
    CarrierBox = "CarrierBox"
    CarrierBucket = "CarrierBucket"
    CarrierLargeObject = "CarrierLargeObject"
    VisitorsAlone = "VisitorsAlone"
    VisitorsGroup = "VisitorsGroup"
    VisitorsAloneHRI = "VisitorsAloneHRI"
    CarrierStorageBinHRI = "CarrierStorageBinHRI"


_ACTION_ORDER = list(ActionClass)

STATIC_ACTIONS = frozenset({
    ActionClass.DrawCard,
    ActionClass.ObserveCardDraw,
    ActionClass.PickBucket,
    ActionClass.DeliverBucket,
    ActionClass.PickBox,
    ActionClass.DeliverBox,
    ActionClass.PickStorageBin,
    ActionClass.DeliverStorageBin,
})

# Which actions each agent class performs (shared: Walk, DrawCard).
AGENT_ACTIONS: dict[AgentClass, tuple[ActionClass, ...]] = {
    AgentClass.CarrierBox: (ActionClass.PickBox, ActionClass.WalkBox, ActionClass.DeliverBox,
                            ActionClass.Walk),
    AgentClass.CarrierBucket: (ActionClass.PickBucket, ActionClass.WalkBucket,
                               ActionClass.DeliverBucket, ActionClass.Walk),
    AgentClass.CarrierLargeObject: (ActionClass.WalkLO, ActionClass.Walk),
    AgentClass.VisitorsAlone: (ActionClass.Walk, ActionClass.DrawCard),
    AgentClass.VisitorsGroup: (ActionClass.Walk, ActionClass.DrawCard,
                               ActionClass.ObserveCardDraw),
    AgentClass.VisitorsAloneHRI: (ActionClass.Walk, ActionClass.DrawCard, ActionClass.HRI),
    AgentClass.CarrierStorageBinHRI: (ActionClass.PickStorageBin, ActionClass.WalkStorageBin,
                                      ActionClass.DeliverStorageBin, ActionClass.HRI,
                                      ActionClass.Walk),
}


def parse_action(label: str) -> ActionClass:
    try:
        return ActionClass(label.strip())
    except ValueError:
        raise VocabularyError(f"unknown action label {label!r}") from None


def parse_agent_class(label: str) -> AgentClass:
    key = label.strip().replace("–", "").replace("-", "").replace("_", "").replace(" ", "")
    for member in AgentClass:
        if member.value.lower() == key.lower():
            return member
    raise VocabularyError(f"unknown agent class {label!r}")


@dataclass(frozen=True)
class State:
    t: float
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0
    action: ActionClass = ActionClass.Walk

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.t, self.x, self.y, self.vx, self.vy))


@dataclass(frozen=True)
class Trajectory:
    agent_id: str
    agent_class: AgentClass
    states: tuple[State, ...]
    scenario_tag: str = ""

    def __post_init__(self):
        if not self.states:
            raise ValueError("trajectory needs at least one state")
        ts = [s.t for s in self.states]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"timestamps of {self.agent_id} are not strictly increasing")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def trajectory_id(self) -> str:
        return f"{self.scenario_tag}/{self.agent_id}" if self.scenario_tag else self.agent_id


@dataclass(frozen=True)
class Tracklet:
    agent_id: str
    agent_class: AgentClass
    observed: tuple[State, ...]
    future: tuple[State, ...]
    source_trajectory_id: str
    index: int = 0  # position of the window within its source trajectory

    @property
    def tracklet_id(self) -> str:
        return f"{self.source_trajectory_id}#{self.index}"

    @property
    def states(self) -> tuple[State, ...]:
        return self.observed + self.future

    def positions(self) -> np.ndarray:
        return np.array([(s.x, s.y) for s in self.states], dtype=np.float64)

    def velocities(self) -> np.ndarray:
        return np.array([(s.vx, s.vy) for s in self.states], dtype=np.float64)

    def actions(self) -> list[ActionClass]:
        return [s.action for s in self.states]

    def to_record(self) -> dict:
        def enc(s: State) -> dict:
            return {"t": s.t, "x": s.x, "y": s.y, "vx": s.vx, "vy": s.vy,
                    "action": s.action.value}
        return {
            "agent_id": self.agent_id,
            "agent_class": self.agent_class.value,
            "source_trajectory_id": self.source_trajectory_id,
            "index": self.index,
            "observed": [enc(s) for s in self.observed],
            "future": [enc(s) for s in self.future],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Tracklet":
        def dec(d: dict) -> State:
            return State(float(d["t"]), float(d["x"]), float(d["y"]), float(d["vx"]),
                         float(d["vy"]), parse_action(d["action"]))
        return cls(
            agent_id=str(rec["agent_id"]),
            agent_class=parse_agent_class(rec["agent_class"]),
            observed=tuple(dec(d) for d in rec["observed"]),
            future=tuple(dec(d) for d in rec["future"]),
            source_trajectory_id=str(rec["source_trajectory_id"]),
            index=int(rec.get("index", 0)),
        )


@dataclass(frozen=True)
class Vocabulary:
    actions: tuple[ActionClass, ...]
    agent_classes: tuple[AgentClass, ...]
    _action_index: dict = field(init=False, repr=False, compare=False)
    _agent_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.actions or not self.agent_classes:
            raise VocabularyError("vocabulary must be non-empty")
        if len(set(self.actions)) != len(self.actions):
            raise VocabularyError("duplicate action in vocabulary")
        if len(set(self.agent_classes)) != len(self.agent_classes):
            raise VocabularyError("duplicate agent class in vocabulary")
        object.__setattr__(self, "_action_index", {a: i for i, a in enumerate(self.actions)})
        object.__setattr__(self, "_agent_index", {c: i for i, c in enumerate(self.agent_classes)})

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_agent_classes(self) -> int:
        return len(self.agent_classes)

    def action_index(self, label: ActionClass) -> int:
        try:
            return self._action_index[ActionClass(label)]
        except (KeyError, ValueError):
            raise VocabularyError(f"action {label} not in vocabulary") from None

    def agent_index(self, label: AgentClass) -> int:
        try:
            return self._agent_index[AgentClass(label)]
        except (KeyError, ValueError):
            raise VocabularyError(f"agent class {label} not in vocabulary") from None

    def decode_action(self, index: int) -> ActionClass:
        return self.actions[index]

    def to_dict(self) -> dict:
        return {"actions": [a.value for a in self.actions],
                "agent_classes": [c.value for c in self.agent_classes]}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(tuple(ActionClass(a) for a in d["actions"]),
                   tuple(AgentClass(c) for c in d["agent_classes"]))


FULL = "Full"
SCENARIOS_2_AND_3 = "Scenarios2and3"


def scenario_vocabulary(selector: str = SCENARIOS_2_AND_3) -> Vocabulary:
    """Label sets for the full dataset or for the merged scenarios 2 and 3."""
    if selector == FULL:
        return Vocabulary(tuple(ActionClass), tuple(AgentClass))
    if selector == SCENARIOS_2_AND_3:
        A = ActionClass
        actions = (A.DrawCard, A.Walk, A.WalkLO, A.PickBucket, A.WalkBucket, A.DeliverBucket,
                   A.ObserveCardDraw, A.PickBox, A.WalkBox, A.DeliverBox)
        C = AgentClass
        agents = (C.CarrierBox, C.CarrierBucket, C.CarrierLargeObject, C.VisitorsAlone,
                  C.VisitorsGroup)
        return Vocabulary(actions, agents)
    raise VocabularyError(f"unknown scenario selector {selector!r}")


def one_hot(label: ActionClass, vocab: Vocabulary) -> np.ndarray:
    out = np.zeros(vocab.n_actions)
    out[vocab.action_index(label)] = 1.0
    return out


def validate_tracklet(tr: Tracklet, vocab: Vocabulary, dt: float = DT) -> list[str]:
    """Return human-readable invariant violations; empty when the tracklet is well-formed."""
    problems = []
    if len(tr.observed) != OBS_LEN:
        problems.append(f"observed length {len(tr.observed)} ≠ {OBS_LEN}")
    if len(tr.future) != PRED_LEN:
        problems.append(f"future length {len(tr.future)} ≠ {PRED_LEN}")
    states = tr.states
    steps = np.diff([s.t for s in states])
    if len(steps) and np.any(np.abs(steps - dt) > DT_TOL):
        problems.append("non-uniform/incorrect timestep")
    if not all(s.is_finite() for s in states):
        problems.append("non-finite state value")
    if tr.agent_class not in vocab._agent_index:
        problems.append(f"agent class {tr.agent_class.value} not in vocabulary")
    missing = sorted({s.action.value for s in states if s.action not in vocab._action_index})
    if missing:
        problems.append(f"actions not in vocabulary: {', '.join(missing)}")
    return problems
