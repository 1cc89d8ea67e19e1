"""End-point map, penalised energy and its L^2 gradient.

The energy is ``F_beta(u) = |u|^2 / 2 + beta * a(x_u(1))`` and its gradient is
``G_beta[u] = u + beta * h_u`` with ``h_u(s) = F(x_u(s))^T lam_u(s)^T``.

Two gradient routes are provided:

* ``gradient_discrete`` differentiates the RK4-discretised energy exactly
  (reverse sweep through the integrator). The flow uses this one, so energy
  decrease and gradient are mutually consistent to round-off.
* ``gradient_continuous`` integrates the costate ODE backwards and averages
  ``F^T lam^T`` over each cell. It converges to the same object as ``N`` grows.

Grid gradients are scaled by ``N`` so that ``(1/N) sum_j g[j] . v[j]`` is the
directional derivative, i.e. they represent L^2 gradients rather than
derivatives with respect to the raw array entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .system import ControlSystem, EndpointCost
from .trajectory import (
    Control,
    Trajectory,
    _check,
    integrate_adjoint,
    integrate_fundamental,
    integrate_state,
    midpoint_states,
)


@dataclass(frozen=True)
class CostParams:
    """Penalty weight ``beta``, initial state ``x0`` and optional control radius."""

    beta: float
    x0: np.ndarray
    radius: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=np.float64)))
        # beta = 0 is allowed here (pure energy); configs require beta > 0.
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"beta must be a non-negative finite number, got {self.beta}")
        if self.radius is not None and not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")

    def with_beta(self, beta: float) -> "CostParams":
        return CostParams(beta, self.x0, self.radius)


@dataclass(frozen=True, eq=False)
class GradientRep:
    """``h`` represents ``d a(x_u(1))``; ``g_full = u + beta h`` represents ``dF_beta``."""

    h: Control
    g_full: Control
    mode: str

    def norm(self) -> float:
        return self.g_full.l2_norm()


@dataclass(frozen=True, eq=False)
class EndpointRows:
    """``rows[j]`` represents the ``j``-th component of the end-point differential.

    Shape ``(n, N, k)``: one control-shaped array per state component.
    """

    rows: np.ndarray

    def apply(self, v: Control) -> np.ndarray:
        """``(<g^j, v>_{L^2})_j``, i.e. the end-point differential applied to ``v``."""
        N = self.rows.shape[1]
        return np.einsum("jck,ck->j", self.rows, v.values) / N


def endpoint(sys: ControlSystem, params: CostParams, u: Control) -> np.ndarray:
    """``x_u(1)``."""
    return integrate_state(sys, params.x0, u).final.copy()


def cost(sys: ControlSystem, cost_fn: EndpointCost, params: CostParams, u: Control) -> float:
    """``|u|^2 / 2 + beta a(x_u(1))``."""
    return 0.5 * u.inner(u) + params.beta * cost_fn.value(endpoint(sys, params, u))


def cost_and_gradient(
    sys: ControlSystem, cost_fn: EndpointCost, params: CostParams, u: Control
) -> tuple[float, GradientRep, Trajectory]:
    """Energy and exact discrete gradient from one forward and one reverse sweep."""
    traj = integrate_state(sys, params.x0, u)
    xN = traj.final
    energy = 0.5 * u.inner(u) + params.beta * cost_fn.value(xN)
    lam_end = np.asarray(cost_fn.gradient(xN), dtype=np.float64)
    with np.errstate(all="ignore"):
        _, G = _kernels.discrete_adjoint(traj.nodes, u.values, lam_end, sys.table)
    h = _check(G * u.grid_size, "discrete adjoint")
    rep = GradientRep(Control(h), Control(u.values + params.beta * h), "discrete-adjoint")
    return energy, rep, traj


def gradient_discrete(
    sys: ControlSystem, cost_fn: EndpointCost, params: CostParams, u: Control
) -> GradientRep:
    """Exact L^2 gradient of the RK4-discretised energy."""
    return cost_and_gradient(sys, cost_fn, params, u)[1]


def gradient_continuous(
    sys: ControlSystem,
    cost_fn: EndpointCost,
    params: CostParams,
    u: Control,
    midpoint: str = "stage",
) -> GradientRep:
    """Gradient from the backward costate ODE, cell-averaged by Simpson's rule.

    ``midpoint="stage"`` samples the midpoint from the first midpoint RK4 stage
    of the state and costate sweeps (second-order accurate cell averages);
    ``midpoint="refined"`` recomputes it with half-cell RK4 steps
    (fourth-order).
    """
    traj = integrate_state(sys, params.x0, u)
    lam_end = cost_fn.gradient(traj.final)
    adj = integrate_adjoint(sys, traj, u, lam_end)
    h = _simpson_rep(sys, traj, u, adj.lam, midpoint)
    return GradientRep(Control(h), Control(u.values + params.beta * h), "continuous-adjoint")


def _simpson_rep(sys, traj, u, lam, midpoint="stage") -> np.ndarray:
    if midpoint == "stage":
        XM, LM = _kernels.stage_midpoints(traj.nodes, u.values, lam, sys.table)
    elif midpoint == "refined":
        XM = midpoint_states(sys, traj, u)
        LM = _kernels.midpoint_costates(traj.nodes, u.values, lam, sys.table)
    else:
        raise ValueError(f"unknown midpoint rule {midpoint!r}")
    return _check(_kernels.simpson_field_pairing(traj.nodes, XM, lam, LM, sys.table), "gradient")


def endpoint_rows(sys: ControlSystem, params: CostParams, u: Control, midpoint: str = "refined") -> EndpointRows:
    """Representations of the components of the end-point differential.

    Row ``j`` at time ``tau`` is ``e_j^T M(1) M(tau)^{-1} F(x_u(tau))``, averaged
    over each cell with the Simpson rule of ``gradient_continuous``. The default
    ``"refined"`` midpoints keep the rows fourth-order accurate, so pairing them
    with ``v`` reproduces the first variation closely even for rough controls.
    """
    traj = integrate_state(sys, params.x0, u)
    fm = integrate_fundamental(sys, traj, u)
    n = sys.state_dim
    # propagator rows P[j] = M(1) N_inv[j]; row c of P[j] is the costate for e_c
    P = np.einsum("ab,jbc->jac", fm.M[-1], fm.N_inv)
    rows = np.empty((n, u.grid_size, sys.control_dim))
    for c in range(n):
        rows[c] = _simpson_rep(sys, traj, u, np.ascontiguousarray(P[:, c, :]), midpoint)
    return EndpointRows(rows)


def bracket_rate(sys: ControlSystem, traj: Trajectory, lam: np.ndarray, u: Control) -> np.ndarray:
    """``lam(s) . sum_i u^i [F^i, F^j](x(s))`` at the left node of every cell.

    This is the time derivative of ``h^j`` along an exact trajectory.
    """
    N, k = u.values.shape
    out = np.empty((N, k))
    for c in range(N):
        x = traj.nodes[c]
        for j in range(k):
            acc = np.zeros(sys.state_dim)
            for i in range(k):
                if u.values[c, i] != 0.0 and i != j:
                    acc += u.values[c, i] * sys.lie_bracket(x, i, j)
            out[c, j] = lam[c] @ acc
    return out
