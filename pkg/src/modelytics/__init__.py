"""Model-driven analytics engine.

A domain model binds raw temporal data to derived formulas and learned
profiles; numeric series are stored as error-bounded polynomials; each
write incrementally refines only the affected knowledge; what-if
scenarios run in copy-on-write world forks.
"""

from .dsl import (
    Diagnostic,
    DurationLiteral,
    MetaModel,
    parse_expr,
    parse_model,
    print_model,
    slot_count,
    validate,
)
from .engine import RefinementEngine, RefinementReport, TaskFailure, eval_expr
from .polystore import SegmentChain, Segment
from .profiler import INSUFFICIENT, MixtureProfile, ProfilerConfig
from .store import NOVALUE, ROOT_WORLD, Receipt, Store
from .whatif import Scenario, ScenarioResult, compare_scenarios, parse_scenario, run_scenario

__all__ = [
    "Diagnostic", "DurationLiteral", "MetaModel", "parse_expr", "parse_model",
    "print_model", "slot_count", "validate",
    "RefinementEngine", "RefinementReport", "TaskFailure", "eval_expr",
    "SegmentChain", "Segment",
    "INSUFFICIENT", "MixtureProfile", "ProfilerConfig",
    "NOVALUE", "ROOT_WORLD", "Receipt", "Store",
    "Scenario", "ScenarioResult", "compare_scenarios", "parse_scenario", "run_scenario",
]

__version__ = "0.1.0"
