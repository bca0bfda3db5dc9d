"""Feedback-driven refinement of tool documentation for LLM tool use."""

__version__ = "0.1.0"

from docrefine.config import RefinementConfig
from docrefine.model import (
    ExplorationInstance,
    ParameterSpec,
    RefinementTrajectory,
    ToolDocumentation,
    ToolResponse,
    parse_documentation_set,
)

__all__ = [
    "ExplorationInstance",
    "ParameterSpec",
    "RefinementConfig",
    "RefinementTrajectory",
    "ToolDocumentation",
    "ToolResponse",
    "parse_documentation_set",
]
