"""Numeric substrate: integration, derivatives, brackets, steady states."""

from .calculus import (
    bracket_field,
    central_difference,
    directional,
    gradient,
    jacobian,
    jacobian_input,
    lie_bracket,
    lie_derivative,
)
from .dde import integrate_dde
from .integrate import (
    DenseSolution,
    DomainExitError,
    IntegrationError,
    IntegratorConfig,
    StepSizeUnderflow,
    BlowUpError,
    Trajectory,
    integrate,
    solve,
)
from .steady import SteadyStateError, steady_state

__all__ = [
    "DenseSolution",
    "DomainExitError",
    "IntegrationError",
    "IntegratorConfig",
    "StepSizeUnderflow",
    "BlowUpError",
    "SteadyStateError",
    "Trajectory",
    "bracket_field",
    "central_difference",
    "directional",
    "gradient",
    "integrate",
    "integrate_dde",
    "jacobian",
    "jacobian_input",
    "lie_bracket",
    "lie_derivative",
    "solve",
    "steady_state",
]
