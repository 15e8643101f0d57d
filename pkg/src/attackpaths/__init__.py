"""Exhaustive attack-path enumeration over rule-fact network models."""

from .engine import EngineConfig, EngineError, plan_workers, run_multi, run_single
from .filters import bind_filter, evaluate_filter, format_filter, parse_filter
from .model import (
    Action,
    CommonProperty,
    Container,
    CustomProperty,
    Fact,
    FactCondition,
    GenericRule,
    Link,
    ModelError,
    ModelParseError,
    ModelValidationError,
    Network,
    NormalRule,
    Position,
    PropertyAssignment,
    PropertyCondition,
    RuleImpacts,
    apply_fact_override,
    dump_network,
    export_dot,
    load_network,
    load_network_file,
    omit_rule,
    validate_network,
)
from .pathstore import MergedStore, MetricVector, SortKey, compute_metrics
from .synth import SyntheticSpec, generate_model
from .traversal import (
    ActionExecutor,
    ActionMode,
    RunSummary,
    StopReason,
    TraversalConfig,
    TraversalPath,
    single_threaded_search,
)

__all__ = [name for name in dir() if not name.startswith("_")]
