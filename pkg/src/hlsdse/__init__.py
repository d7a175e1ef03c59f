"""Directive design-space exploration with cooperating agents.

The usual entry points are :func:`load_space`, :class:`SurrogateEvaluator`,
:func:`explore` and :func:`greedy_explore`; ``hlsdse.cli`` wraps them.
"""

from .agents import AgentConfig, Agents
from .baseline import greedy_explore
from .config import load_config, run
from .evaluator import (
    AdapterEvaluator,
    EvalResult,
    ResourceBudget,
    Status,
    SurrogateEvaluator,
    evaluate,
    parse_report,
    surrogate_evaluate,
)
from .explorer import Budget, ExploreResult, explore, stop_condition
from .history import ExplorationTree, HistoryLog, best, curate, persist, replay
from .space import (
    DesignPoint,
    DesignSpace,
    default_point,
    legal_values,
    load_space,
    render,
    space_size,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterEvaluator", "AgentConfig", "Agents", "Budget", "DesignPoint", "DesignSpace",
    "EvalResult", "ExplorationTree", "ExploreResult", "HistoryLog", "ResourceBudget",
    "Status", "SurrogateEvaluator", "best", "curate", "default_point", "evaluate",
    "explore", "greedy_explore", "legal_values", "load_config", "load_space", "parse_report",
    "persist", "render", "replay", "run", "space_size", "stop_condition", "surrogate_evaluate",
]
