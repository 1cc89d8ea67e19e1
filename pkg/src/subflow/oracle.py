"""Independent reference values: finite differences, linear closed forms, Heisenberg energies."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize, minimize_scalar

from .errors import SingularSolve
from .gradient import CostParams, cost
from .system import ControlSystem, EndpointCost
from .trajectory import Control


def fd_gradient(
    sys: ControlSystem, cost_fn: EndpointCost, params: CostParams, u: Control, eps: float = 1e-5
) -> np.ndarray:
    """Central differences of the energy in every grid value, scaled by ``N``.

    Returns an ``(N, k)`` array representing the L^2 gradient; ``2 N k`` energy
    evaluations.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    base = np.array(u.values)
    out = np.empty_like(base)
    for idx in np.ndindex(base.shape):
        plus = base.copy()
        minus = base.copy()
        plus[idx] += eps
        minus[idx] -= eps
        fp = cost(sys, cost_fn, params, Control(plus))
        fm = cost(sys, cost_fn, params, Control(minus))
        out[idx] = (fp - fm) / (2.0 * eps)
    return out * u.grid_size


@dataclass(frozen=True)
class LinearSolution:
    control: np.ndarray
    energy: float

    def as_control(self, N: int) -> Control:
        return Control.constant(self.control, N)


def linear_closed_form(B, x0, x1, beta: float) -> LinearSolution:
    """Minimiser of ``|u|^2/2 + beta |x0 + B int u - x1|^2 / 2`` for constant fields.

    ``u* = -beta (I + beta B^T B)^{-1} B^T (x0 - x1)``, constant in ``s``.
    """
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    x1 = np.atleast_1d(np.asarray(x1, dtype=np.float64))
    if not np.all(np.isfinite(B)):
        raise SingularSolve("B has non-finite entries")
    k = B.shape[1]
    lhs = np.eye(k) + beta * B.T @ B
    try:
        u = -beta * np.linalg.solve(lhs, B.T @ (x0 - x1))
    except np.linalg.LinAlgError as exc:
        raise SingularSolve(str(exc)) from None
    miss = x0 + B @ u - x1
    return LinearSolution(u, 0.5 * float(u @ u) + 0.5 * beta * float(miss @ miss))


# constant-speed arcs u = c (cos(theta s), sin(theta s)) from the origin


def arc_endpoint(c: float, theta: float) -> np.ndarray:
    """End point of the Heisenberg arc control with speed ``c`` and turning ``theta``."""
    if abs(theta) < 1e-4:
        # series to avoid cancellation in theta - sin(theta)
        t2 = theta * theta
        sx = 1.0 - t2 / 6.0
        sy = theta / 2.0 - theta * t2 / 24.0
        sz = theta / 12.0 - theta * t2 / 240.0
    else:
        sx = math.sin(theta) / theta
        sy = (1.0 - math.cos(theta)) / theta
        sz = (theta - math.sin(theta)) / (2.0 * theta * theta)
    return np.array([c * sx, c * sy, c * c * sz])


def _arc_endpoint_ode(c: float, theta: float) -> np.ndarray:
    def rhs(s, q):
        u1, u2 = c * math.cos(theta * s), c * math.sin(theta * s)
        return [u1, u2, 0.5 * (q[0] * u2 - q[1] * u1)]

    sol = solve_ivp(rhs, (0.0, 1.0), [0.0, 0.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-14)
    return sol.y[:, -1]


def heisenberg_arc_search(z1: float, theta_max: float = 6 * math.pi, samples: int = 20001):
    """Least energy over arc controls that reach ``(0, 0, z1)``, by dense search.

    For each turning angle the speed is fixed by the height constraint; the
    planar miss distance is scanned on a dense grid and every local minimum is
    polished. Arcs that close up (miss below ``1e-9``) are integrated once more
    with an independent ODE solver. Returns ``(energy, theta)``.
    """
    if z1 == 0.0:
        raise ValueError("z1 must be non-zero")
    z = abs(z1)

    def speed(theta):
        return math.sqrt(z / arc_endpoint(1.0, theta)[2])

    def miss(theta):
        p = arc_endpoint(speed(theta), theta)
        return math.hypot(p[0], p[1])

    thetas = np.linspace(0.5, theta_max, samples)
    gaps = np.array([miss(t) for t in thetas])
    best = (math.inf, math.nan)
    for i in range(1, samples - 1):
        if gaps[i] <= gaps[i - 1] and gaps[i] <= gaps[i + 1]:
            res = minimize_scalar(
                miss, bracket=(thetas[i - 1], thetas[i], thetas[i + 1]), method="brent", tol=1e-14
            )
            if res.fun < 1e-9:
                c = speed(res.x)
                end = _arc_endpoint_ode(c, res.x)
                if np.hypot(end[0], end[1]) < 1e-7 and abs(end[2] - z) < 1e-9:
                    best = min(best, (0.5 * c * c, float(res.x)))
    if not math.isfinite(best[0]):
        raise ValueError("no closing arc found in the search range")
    return best


def heisenberg_reference(z1: float) -> float:
    """Least energy ``|u|^2/2`` of a horizontal curve from the origin to ``(0, 0, z1)``: ``2 pi |z1|``."""
    if z1 == 0.0:
        raise ValueError("z1 must be non-zero")
    return 2.0 * math.pi * abs(z1)


@dataclass(frozen=True)
class PenalizedReference:
    half_norm: float
    endpoint_gap: float
    total: float
    speed: float
    theta: float


def heisenberg_penalized_reference(z1: float, beta: float) -> PenalizedReference:
    """Global minimum of ``|u|^2/2 + beta |x_u(1) - (0,0,z1)|^2 / 2`` on the Heisenberg group.

    Critical points satisfy ``u = -beta h_u``, so they are constant-speed arcs
    from the origin; the cost is rotation invariant, leaving the two arc
    parameters ``(c, theta)`` to optimise. ``u = 0`` is included.
    """
    target = np.array([0.0, 0.0, abs(z1)])

    def total(p):
        c, theta = p
        d = arc_endpoint(c, theta) - target
        return 0.5 * c * c + 0.5 * beta * float(d @ d)

    best = PenalizedReference(0.0, 0.5 * z1 * z1, 0.5 * beta * z1 * z1, 0.0, 0.0)
    for theta0 in np.linspace(0.5, 4 * math.pi, 16):
        c0 = math.sqrt(max(abs(z1), 1e-12) / arc_endpoint(1.0, theta0)[2])
        res = minimize(
            total,
            [c0, theta0],
            method="Nelder-Mead",
            options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 20000},
        )
        if res.fun < best.total:
            c, theta = res.x
            d = arc_endpoint(c, theta) - target
            best = PenalizedReference(
                0.5 * float(c) ** 2, 0.5 * float(d @ d), float(res.fun), abs(float(c)), float(theta)
            )
    return best
