"""Gradient-flow minimisation of penalised control energies.

Controls are piecewise constant on a uniform grid, states follow
``dx/ds = F(x) u`` with polynomial fields, and the energy
``|u|^2 / 2 + beta a(x_u(1))`` is decreased along its L^2 gradient flow.
"""

from .errors import (
    ConfigError,
    GridTooCoarse,
    InsufficientDecay,
    MalformedPolynomial,
    MissingHint,
    NoConvergence,
    NonFiniteState,
    ParseError,
    SingularSolve,
    StallError,
    SubflowError,
    UnknownSystem,
    ValidationError,
)
from .flow import (
    FlowConfig,
    FlowTrace,
    flow_step,
    lojasiewicz_estimate,
    run_flow,
    sobolev_seminorm,
    stationarity_residual,
)
from .gamma import BetaSchedule, SweepResult, beta_sweep, check_gamma_trends, radius_check
from .gradient import (
    CostParams,
    GradientRep,
    cost,
    cost_and_gradient,
    endpoint,
    endpoint_rows,
    gradient_continuous,
    gradient_discrete,
)
from .oracle import fd_gradient, heisenberg_arc_search, heisenberg_reference, linear_closed_form
from .second_order import HessianOperator, hessian_apply, second_variation, spectrum_probe
from .system import (
    ControlSystem,
    EndpointCost,
    load_system,
    make_grushin,
    make_heisenberg,
    make_linear,
    make_quadratic_cost,
)
from .trajectory import (
    Control,
    Trajectory,
    first_variation,
    integrate_adjoint,
    integrate_fundamental,
    integrate_state,
)

__version__ = "0.1.0"
