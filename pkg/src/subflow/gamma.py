"""Penalty continuation: minimise ``F_beta`` along an increasing ladder of ``beta``.

As ``beta`` grows the penalised minimisers should approach minimisers of the
constrained energy (``|u|^2 / 2`` subject to ``a(x_u(1)) = 0``). The sweep only
finds critical points reachable by the flow; ``check_gamma_trends`` reports
whether the rows behave like global minimisers, it does not enforce it.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .errors import SubflowError
from .flow import FlowConfig, run_flow
from .gradient import CostParams, endpoint
from .system import ControlSystem, EndpointCost
from .trajectory import Control

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BetaSchedule:
    """Strictly increasing positive penalty weights and per-weight flow settings."""

    betas: tuple
    warm_start: bool = True
    flow: FlowConfig = field(default_factory=FlowConfig)
    overrides: Mapping[float, FlowConfig] = field(default_factory=dict)

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        if not betas:
            raise ValueError("schedule needs at least one beta")
        if any(not (math.isfinite(b) and b > 0) for b in betas):
            raise ValueError("every beta must be positive and finite")
        if any(b1 >= b2 for b1, b2 in zip(betas, betas[1:])):
            raise ValueError("betas must be strictly increasing")
        object.__setattr__(self, "betas", betas)

    @classmethod
    def geometric(cls, beta0: float, count: int, factor: float = 10.0, **kwargs) -> "BetaSchedule":
        return cls(tuple(beta0 * factor**i for i in range(count)), **kwargs)

    def config_for(self, beta: float) -> FlowConfig:
        return self.overrides.get(beta, self.flow)


@dataclass(frozen=True, eq=False)
class SweepRow:
    beta: float
    control: Optional[Control]
    half_norm: float
    endpoint_gap: float
    total: float
    residual: float
    steps: int
    converged: bool
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True, eq=False)
class SweepResult:
    rows: tuple

    def ok_rows(self) -> list[SweepRow]:
        return [r for r in self.rows if r.ok]

    @property
    def limit_energy_estimate(self) -> float:
        """``|u_beta|^2 / 2`` at the largest successfully solved ``beta``."""
        ok = self.ok_rows()
        return ok[-1].half_norm if ok else math.nan

    def to_csv(self, path) -> None:
        """``beta,half_norm,endpoint_gap,total,residual,steps``; failed rows hold ``nan``."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["beta", "half_norm", "endpoint_gap", "total", "residual", "steps"])
            for r in self.rows:
                w.writerow(
                    [f"{v:.17g}" for v in (r.beta, r.half_norm, r.endpoint_gap, r.total, r.residual)]
                    + [str(r.steps)]
                )


def _solve_row(sys, cost_fn, params, beta, u_start, cfg) -> SweepRow:
    p = params.with_beta(beta)
    try:
        trace = run_flow(sys, cost_fn, p, u_start, cfg)
    except SubflowError as exc:
        log.warning("beta=%g failed: %s", beta, exc)
        nan = math.nan
        return SweepRow(beta, None, nan, nan, nan, nan, 0, False, f"{type(exc).__name__}: {exc}")
    u = trace.final_control
    half = 0.5 * u.inner(u)
    gap = cost_fn.value(endpoint(sys, p, u))
    return SweepRow(
        beta,
        u,
        half,
        gap,
        half + beta * gap,
        trace.final_residual,
        trace.n_accepted - 1,
        trace.converged,
    )


def beta_sweep(
    sys: ControlSystem,
    cost_fn: EndpointCost,
    params: CostParams,
    schedule: BetaSchedule,
    u0: Control,
    jobs: int = 1,
) -> SweepResult:
    """Run the flow for every ``beta`` of the schedule.

    With ``warm_start`` each row starts from the previous row's minimiser (from
    ``u0`` for the first row, or after a failed row). Cold-started rows are
    independent and run on ``jobs`` threads. ``params.beta`` is ignored.
    """
    if schedule.warm_start or jobs <= 1:
        rows = []
        u_start = u0
        for beta in schedule.betas:
            row = _solve_row(sys, cost_fn, params, beta, u_start, schedule.config_for(beta))
            rows.append(row)
            if schedule.warm_start:
                u_start = row.control if row.ok else u0
        return SweepResult(tuple(rows))
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(_solve_row, sys, cost_fn, params, b, u0, schedule.config_for(b))
            for b in schedule.betas
        ]
        return SweepResult(tuple(f.result() for f in futures))


@dataclass(frozen=True)
class TrendReport:
    totals_nondecreasing: bool
    gaps_decreasing: bool
    minimizers_converging: bool
    gap_ratios: tuple
    distances: tuple

    def as_dict(self) -> dict:
        return {
            "totals_nondecreasing": self.totals_nondecreasing,
            "gaps_decreasing": self.gaps_decreasing,
            "minimizers_converging": self.minimizers_converging,
            "gap_ratios": list(self.gap_ratios),
            "distances": list(self.distances),
        }


def check_gamma_trends(result: SweepResult, max_gap_ratio: float = 0.5) -> TrendReport:
    """Report the limiting trends of a sweep over its successful rows.

    (a) totals nondecreasing in ``beta``; (b) end-point gaps strictly
    decreasing, and for a tenfold ``beta`` increase shrinking by at least
    ``max_gap_ratio`` (for other ratios ``b'/b`` the bound is scaled to
    ``max_gap_ratio ** log10(b'/b)``); (c) L^2 distances between successive
    minimisers decreasing.
    """
    rows = result.ok_rows()
    if len(rows) < 2:
        raise ValueError("trend checks need at least two successful rows")
    totals = [r.total for r in rows]
    # rows are exact penalised energies; allow round-off in the comparison
    tot_ok = all(t2 >= t1 - 1e-12 * (1 + abs(t1)) for t1, t2 in zip(totals, totals[1:]))

    ratios = []
    gaps_ok = True
    for r1, r2 in zip(rows, rows[1:]):
        ratio = r2.endpoint_gap / r1.endpoint_gap if r1.endpoint_gap > 0 else math.nan
        ratios.append(ratio)
        bound = max_gap_ratio ** math.log10(r2.beta / r1.beta)
        if not (r2.endpoint_gap < r1.endpoint_gap and ratio <= bound):
            gaps_ok = False

    dists = [(r2.control - r1.control).l2_norm() for r1, r2 in zip(rows, rows[1:])]
    dist_ok = all(d2 < d1 for d1, d2 in zip(dists, dists[1:]))
    return TrendReport(tot_ok, gaps_ok, dist_ok, tuple(ratios), tuple(dists))


def radius_check(result: SweepResult, rho: float) -> list[bool]:
    """``|u_beta|_{L^2} <= rho`` for every row (``False`` for failed rows)."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    return [r.ok and r.control.l2_norm() <= rho for r in result.rows]


def penalised_totals(sys: ControlSystem, cost_fn: EndpointCost, params: CostParams, result: SweepResult) -> np.ndarray:
    """``T[i, j] = F_{beta_i}(u_{beta_j})``: every stored minimiser re-evaluated at every weight."""
    rows = result.ok_rows()
    out = np.empty((len(rows), len(rows)))
    for j, rj in enumerate(rows):
        u = rj.control
        half = 0.5 * u.inner(u)
        gap = cost_fn.value(endpoint(sys, params, u))
        for i, ri in enumerate(rows):
            out[i, j] = half + ri.beta * gap
    return out
