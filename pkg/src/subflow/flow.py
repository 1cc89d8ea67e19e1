"""Gradient flow ``dU/dt = -G_beta[U]`` on the control space.

Time stepping freezes ``h_U`` over a step. A step is kept only if the energy
does not increase; otherwise the step is halved (by ``backtrack_factor``) and
retried, so the recorded energy sequence is monotone by construction.

"Does not increase" is judged up to a few ulps of the energy: once the flow
is within ``sqrt(eps_machine)`` of a minimiser the true decrease falls below
round-off, and a strict comparison would reject correct steps at random.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridTooCoarse, InsufficientDecay, StallError
from .gradient import CostParams, GradientRep, cost, cost_and_gradient, gradient_discrete
from .system import ControlSystem, EndpointCost
from .trajectory import Control

log = logging.getLogger(__name__)

SCHEMES = ("explicit-euler", "exponential-euler")
_ROUNDOFF = 64 * np.finfo(np.float64).eps


@dataclass(frozen=True)
class FlowConfig:
    """Step control and stopping rules for ``run_flow``.

    ``dt0`` is both the first step and the cap for later step growth;
    ``eps_stop`` bounds ``|G_beta[U]|_{L^2}`` at convergence; ``t_max`` is the
    flow-time horizon. ``max_rejects`` consecutive rejections raise
    ``StallError``.
    """

    dt0: float = 0.1
    scheme: str = "exponential-euler"
    eps_stop: float = 1e-6
    t_max: float = 1e4
    backtrack_factor: float = 0.5
    max_rejects: int = 60
    grow_after: int = 5

    def __post_init__(self):
        if not self.dt0 > 0:
            raise ValueError("dt0 must be positive")
        if not self.eps_stop > 0:
            raise ValueError("eps_stop must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.max_rejects < 1:
            raise ValueError("max_rejects must be at least 1")


@dataclass(frozen=True)
class FlowStep:
    t: float
    energy: float
    grad_norm: float
    dt: float
    accepted: bool
    cum_length: float
    h1: float


@dataclass
class FlowTrace:
    steps: list[FlowStep] = field(default_factory=list)
    final_control: Control | None = None
    final_gradient: GradientRep | None = None
    converged: bool = False

    def accepted(self) -> list[FlowStep]:
        return [s for s in self.steps if s.accepted]

    @property
    def final_energy(self) -> float:
        return self.accepted()[-1].energy

    @property
    def final_residual(self) -> float:
        return self.accepted()[-1].grad_norm

    @property
    def n_accepted(self) -> int:
        return sum(1 for s in self.steps if s.accepted)

    def as_array(self) -> np.ndarray:
        """Columns ``t, energy, grad_norm, dt, accepted, cum_length, h1``."""
        return np.array(
            [[s.t, s.energy, s.grad_norm, s.dt, float(s.accepted), s.cum_length, s.h1] for s in self.steps]
        )


def flow_step(
    sys: ControlSystem,
    cost_fn: EndpointCost,
    params: CostParams,
    u: Control,
    dt: float,
    scheme: str = "exponential-euler",
    rep: GradientRep | None = None,
) -> Control:
    """One step of the flow with ``h_u`` frozen.

    ``explicit-euler``: ``u - dt (u + beta h)``.
    ``exponential-euler``: ``exp(-dt) u - (1 - exp(-dt)) beta h``, exact for the
    linear ``-u`` part.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if rep is None:
        rep = gradient_discrete(sys, cost_fn, params, u)
    if scheme == "explicit-euler":
        return Control(u.values - dt * rep.g_full.values)
    if scheme == "exponential-euler":
        decay = math.exp(-dt)
        return Control(decay * u.values + math.expm1(-dt) * params.beta * rep.h.values)
    raise ValueError(f"unknown scheme {scheme!r}")


def _h1(u: Control) -> float:
    return sobolev_seminorm(u, 1) if u.grid_size >= 2 else float("nan")


def run_flow(
    sys: ControlSystem,
    cost_fn: EndpointCost,
    params: CostParams,
    u0: Control,
    cfg: FlowConfig | None = None,
) -> FlowTrace:
    """Integrate the gradient flow from ``u0`` until stationary or ``t_max``."""
    cfg = cfg or FlowConfig()
    u = u0
    energy, rep, _ = cost_and_gradient(sys, cost_fn, params, u)
    gnorm = rep.norm()
    trace = FlowTrace()
    t, length = 0.0, 0.0
    trace.steps.append(FlowStep(t, energy, gnorm, 0.0, True, length, _h1(u)))
    dt = cfg.dt0
    streak = 0
    warned = False

    while gnorm > cfg.eps_stop and t < cfg.t_max:
        rejects = 0
        while True:
            cand = flow_step(sys, cost_fn, params, u, dt, cfg.scheme, rep)
            e_new, rep_new, _ = cost_and_gradient(sys, cost_fn, params, cand)
            if e_new <= energy + _ROUNDOFF * (1.0 + abs(energy)):
                break
            trace.steps.append(FlowStep(t, e_new, rep_new.norm(), dt, False, length, float("nan")))
            rejects += 1
            streak = 0
            if rejects >= cfg.max_rejects:
                raise StallError(
                    f"{rejects} consecutive rejected steps at t={t:.6g} (dt={dt:.3e}, |G|={gnorm:.3e})"
                )
            dt *= cfg.backtrack_factor
        length += (cand - u).l2_norm()
        t += dt
        u, energy, rep = cand, e_new, rep_new
        gnorm = rep.norm()
        trace.steps.append(FlowStep(t, energy, gnorm, dt, True, length, _h1(u)))
        if params.radius is not None and not warned and u.l2_norm() > params.radius:
            log.warning("flow left the control ball of radius %g at t=%g", params.radius, t)
            warned = True
        streak += 1
        if streak >= cfg.grow_after:
            dt = min(2.0 * dt, cfg.dt0)
            streak = 0

    trace.final_control = u
    trace.final_gradient = rep
    trace.converged = gnorm <= cfg.eps_stop
    log.info(
        "flow %s: t=%.4g, %d accepted steps, energy=%.12g, |G|=%.3e",
        "converged" if trace.converged else "stopped",
        t,
        trace.n_accepted,
        energy,
        gnorm,
    )
    return trace


def stationarity_residual(
    sys: ControlSystem, cost_fn: EndpointCost, params: CostParams, u: Control
) -> float:
    """``|u + beta h_u|_{L^2}``; zero exactly at critical points."""
    return gradient_discrete(sys, cost_fn, params, u).norm()


def sobolev_seminorm(u: Control, m: int = 1) -> float:
    """Discrete ``H^m`` seminorm from ``m``-fold forward difference quotients."""
    if m not in (1, 2):
        raise ValueError("order must be 1 or 2")
    N = u.grid_size
    if N < m + 1:
        raise GridTooCoarse(f"need at least {m + 1} cells for order {m}, got {N}")
    d = u.values
    for _ in range(m):
        d = N * np.diff(d, axis=0)
    return float(np.sqrt(np.sum(d * d) / N))


def dissipation_ratio(
    sys: ControlSystem, cost_fn: EndpointCost, params: CostParams, u: Control, dt: float = 1e-3
) -> float:
    """``(F(u) - F(u - dt G)) / (dt |G|^2)`` for one explicit Euler step; tends to 1."""
    energy, rep, _ = cost_and_gradient(sys, cost_fn, params, u)
    g2 = rep.g_full.inner(rep.g_full)
    stepped = flow_step(sys, cost_fn, params, u, dt, "explicit-euler", rep)
    return (energy - cost(sys, cost_fn, params, stepped)) / (dt * g2)


def tail_length_fraction(trace: FlowTrace, tail: float = 0.1) -> float:
    """Share of the flow length travelled during the last ``tail`` of accepted steps."""
    lengths = np.array([s.cum_length for s in trace.accepted()])
    total = lengths[-1]
    if total == 0.0:
        return 0.0
    n_steps = len(lengths) - 1
    cut = max(n_steps - max(1, int(math.ceil(tail * n_steps))), 0)
    return float((total - lengths[cut]) / total)


def lojasiewicz_estimate(trace: FlowTrace, f_inf: float | None = None, skip_decades: float = 1.0) -> float:
    """Fit ``gamma`` in ``F - f_inf ~ C |dF|^gamma`` over one decade of gradient decay.

    ``f_inf`` defaults to the final energy. Points whose gradient norm is within
    ``10**skip_decades`` of the final one are skipped, since there the offset
    between the true limit and ``f_inf`` dominates the energy gap; the fit then
    uses the following decade up.
    """
    steps = trace.accepted()
    if len(steps) < 10:
        raise InsufficientDecay(f"trace has only {len(steps)} accepted points")
    if f_inf is None:
        f_inf = steps[-1].energy
    g_final = steps[-1].grad_norm
    lo = g_final * 10.0**skip_decades
    hi = lo * 10.0
    pts = [
        (s.grad_norm, s.energy - f_inf)
        for s in steps[:-1]
        if lo <= s.grad_norm <= hi and s.energy - f_inf > 0 and s.grad_norm > 0
    ]
    if len(pts) < 10:
        raise InsufficientDecay(f"only {len(pts)} usable points in the fitting decade")
    g, gap = np.array(pts).T
    slope, _ = np.polyfit(np.log(g), np.log(gap), 1)
    return float(slope)
