"""Action-aware human trajectory prediction: data pipeline, statistics, transformer models."""
from .vocab import (
    ActionClass,
    AgentClass,
    State,
    Tracklet,
    Trajectory,
    Vocabulary,
    one_hot,
    scenario_vocabulary,
    validate_tracklet,
)

__version__ = "0.1.0"
