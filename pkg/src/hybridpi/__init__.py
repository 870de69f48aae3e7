"""Workbench for a hybrid pi-calculus: terms mixing discrete channels and
ODE-driven continuous variables, with a closed-system simulator, strong,
weak, and approximate bisimulation checks, an RK4 discretization
transform, and sample-based barrier-certificate checking."""

from .certificates import (
    BarrierCertificate,
    Edge,
    HybridAutomaton,
    Location,
    Polynomial,
    SetDesc,
    automaton_from_json,
    automaton_to_json,
    certificate_from_json,
    certificate_to_json,
    check_certificate,
    invariant_region,
    lie_derivative,
)
from .equivalence import (
    approx_bisim,
    bind_env,
    build_lts,
    discretize,
    lipschitz_estimate,
    rk4_increment,
    strong_bisim,
    suggest_step,
    weak_bisim,
)
from .kernel import IntegratorConfig, discrete_transitions
from .parser import ModelFile, ParseError, parse, parse_term, pretty
from .simulator import (
    Environment,
    SimConfig,
    SimResult,
    TraceEvent,
    detect_zeno,
    exhaustive_traces,
    simulate,
    trace_to_jsonl,
    trajectory_series,
    trajectory_to_csv,
)
from .syntax import HpiError, free_names, prune, refresh, substitute

__version__ = "0.1.0"

__all__ = [
    "BarrierCertificate",
    "Edge",
    "Environment",
    "HpiError",
    "HybridAutomaton",
    "IntegratorConfig",
    "Location",
    "ModelFile",
    "ParseError",
    "Polynomial",
    "SetDesc",
    "SimConfig",
    "SimResult",
    "TraceEvent",
    "approx_bisim",
    "automaton_from_json",
    "automaton_to_json",
    "bind_env",
    "build_lts",
    "certificate_from_json",
    "certificate_to_json",
    "check_certificate",
    "detect_zeno",
    "discrete_transitions",
    "discretize",
    "exhaustive_traces",
    "free_names",
    "invariant_region",
    "lie_derivative",
    "lipschitz_estimate",
    "parse",
    "parse_term",
    "pretty",
    "prune",
    "refresh",
    "rk4_increment",
    "simulate",
    "strong_bisim",
    "substitute",
    "suggest_step",
    "trace_to_jsonl",
    "trajectory_series",
    "trajectory_to_csv",
    "weak_bisim",
]
