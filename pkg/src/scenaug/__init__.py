"""scenaug: language-driven traffic scenario augmentation.

The package turns natural-language editing instructions into validated
scenario modifications via pluggable chat-model backends, renders scenes to
bird's-eye-view images, scores placements against references, hosts a blinded
pairwise preference arena, and benchmarks modified scenes with a closed-loop
rule-based planner.
"""

from __future__ import annotations

__version__ = "0.1.0"

from . import errors
from .scenario import (
    AgentState,
    AgentType,
    Area,
    AreaKind,
    Lane,
    LaneConnector,
    LaneGeometry,
    ModAction,
    ModificationDict,
    ModificationResult,
    RelativeDirection,
    Scenario,
    ScenarioType,
    TrafficLightState,
    TurnType,
    apply_modification,
    load_scenario,
    save_scenario,
)

__all__ = [
    "errors",
    "AgentState",
    "AgentType",
    "Area",
    "AreaKind",
    "Lane",
    "LaneConnector",
    "LaneGeometry",
    "ModAction",
    "ModificationDict",
    "ModificationResult",
    "RelativeDirection",
    "Scenario",
    "ScenarioType",
    "TrafficLightState",
    "TurnType",
    "apply_modification",
    "load_scenario",
    "save_scenario",
    "__version__",
]
