"""Pontryagin-based optimal control of a driven, dissipative qubit."""
from .model import RHO_F, RHO_I, PureState, SystemSpec, psi_initial, psi_target
from .propagate import (
    Sampled,
    Segment,
    Segmented,
    SingularControlError,
    evolve_costate,
    evolve_state,
    expm_oracle,
    terminal_cost,
)
from .geometry import quantum_speed_limit, singular_control_closed, singular_control_open
from .pmp import OptimalityReport, adjoint_gradient, verify, verify_protocol
from .optimize import (
    DEFAULT_CATALOG,
    OptimizeResult,
    ProtocolStructure,
    gradient_descent_control,
    optimize_switching_times,
    search_structures,
)
from .experiments import Scenario, SweepRecord, retention_scan, sweep_tf, zero_control_baseline

__version__ = "0.1.0"
