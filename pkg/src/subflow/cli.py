"""Command-line runner: ``subflow simulate|flow|sweep|hessian|verify --config FILE``.

Experiments are described by a JSON document (see ``parse_config``); flags only
choose paths, worker count and nothing else. Verbosity comes from the
``SUBFLOW_LOG`` environment variable (a logging level name, default WARNING).

Exit status: 0 on success, 1 on a numerical/domain error (or a failed
``verify`` check), 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ConfigError, ParseError, SubflowError, ValidationError
from .flow import FlowConfig, run_flow
from .gamma import BetaSchedule, beta_sweep, check_gamma_trends, radius_check
from .gradient import CostParams, cost, endpoint, gradient_discrete
from .oracle import fd_gradient, heisenberg_arc_search, heisenberg_reference, linear_closed_form
from .second_order import HessianOperator, spectrum_probe
from .system import ControlSystem, EndpointCost, load_system, make_quadratic_cost
from .trajectory import Control, integrate_fundamental, integrate_state, write_csv

log = logging.getLogger("subflow")

COMMANDS = ("simulate", "flow", "sweep", "hessian", "verify")


@dataclass(frozen=True, eq=False)
class RunConfig:
    system: ControlSystem
    system_spec: dict
    x0: np.ndarray
    target: np.ndarray
    grid_n: int = 100
    beta: Optional[float] = None
    betas: Optional[tuple] = None
    warm_start: bool = True
    flow: FlowConfig = field(default_factory=FlowConfig)
    u0: Any = "zeros"
    radius: Optional[float] = None
    output_dir: str = "out"
    seed: int = 0
    hessian_count: int = 6
    hessian_mode: str = "discrete"
    hessian_at: str = "minimizer"
    verify_samples: int = 3
    fd_eps: float = 1e-5

    @property
    def cost_fn(self) -> EndpointCost:
        return make_quadratic_cost(self.target)

    def params(self, beta: Optional[float] = None) -> CostParams:
        b = self.beta if beta is None else beta
        return CostParams(b if b is not None else 0.0, self.x0, self.radius)


def _vector(raw, name: str, n: int) -> np.ndarray:
    try:
        v = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise ValidationError(name, "expected a list of numbers") from None
    if v.ndim != 1 or v.size != n:
        raise ValidationError(name, f"expected {n} components, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(name, "entries must be finite")
    return v


def _positive(raw, name: str) -> float:
    try:
        val = float(raw)
    except (TypeError, ValueError):
        raise ValidationError(name, "expected a number") from None
    if not (math.isfinite(val) and val > 0):
        raise ValidationError(name, f"must be positive, got {raw!r}")
    return val


def _flow_config(raw) -> FlowConfig:
    if raw is None:
        return FlowConfig()
    if not isinstance(raw, dict):
        raise ValidationError("flow", "expected an object")
    known = {f.name for f in fields(FlowConfig)}
    for key in raw:
        if key not in known:
            raise ValidationError(f"flow.{key}", "unknown setting")
    for key in ("dt0", "eps_stop", "t_max"):
        if key in raw:
            _positive(raw[key], f"flow.{key}")
    bf = raw.get("backtrack_factor", 0.5)
    if not isinstance(bf, (int, float)) or not 0 < bf < 1:
        raise ValidationError("flow.backtrack_factor", "must lie in (0, 1)")
    scheme = raw.get("scheme", "exponential-euler")
    if scheme not in ("explicit-euler", "exponential-euler"):
        raise ValidationError("flow.scheme", f"unknown scheme {scheme!r}")
    for key in ("max_rejects", "grow_after"):
        if key in raw and (not isinstance(raw[key], int) or raw[key] < 1):
            raise ValidationError(f"flow.{key}", "must be a positive integer")
    return FlowConfig(**raw)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON run description, filling defaults.

    Required keys: ``system``, ``x0``, ``cost`` (``{"type": "quadratic",
    "target": [...]}``). Optional: ``grid_n`` (100), ``beta``,
    ``beta_schedule`` (list, or ``{"betas": [...], "warm_start": bool}``),
    ``flow`` (``FlowConfig`` fields), ``u0`` (``"zeros"``, ``"random"``, a
    constant ``k``-vector or an ``N x k`` table), ``radius``, ``output_dir``,
    ``seed``, ``hessian`` (``count``, ``mode``, ``at``) and ``verify``
    (``samples``, ``eps``).
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError("config", f"malformed JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ParseError("config", "top level must be a JSON object")

    if "system" not in raw:
        raise ValidationError("system", "missing")
    try:
        system = load_system(raw["system"])
    except SubflowError as exc:
        raise ValidationError("system", str(exc)) from None
    n, k = system.state_dim, system.control_dim

    if "x0" not in raw:
        raise ValidationError("x0", "missing")
    x0 = _vector(raw["x0"], "x0", n)

    cost_raw = raw.get("cost")
    if not isinstance(cost_raw, dict):
        raise ValidationError("cost", "expected {'type': 'quadratic', 'target': [...]}")
    if cost_raw.get("type", "quadratic") != "quadratic":
        raise ValidationError("cost.type", f"unsupported cost {cost_raw.get('type')!r}")
    if "target" not in cost_raw:
        raise ValidationError("cost.target", "missing")
    target = _vector(cost_raw["target"], "cost.target", n)

    grid_n = raw.get("grid_n", 100)
    if not isinstance(grid_n, int) or isinstance(grid_n, bool) or grid_n < 2:
        raise ValidationError("grid_n", f"must be an integer >= 2, got {grid_n!r}")

    beta = _positive(raw["beta"], "beta") if "beta" in raw else None
    betas, warm = None, True
    if "beta_schedule" in raw:
        sched = raw["beta_schedule"]
        if isinstance(sched, dict):
            warm = bool(sched.get("warm_start", True))
            sched = sched.get("betas")
        if not isinstance(sched, list) or not sched:
            raise ValidationError("beta_schedule", "expected a non-empty list of betas")
        betas = tuple(_positive(b, "beta_schedule") for b in sched)
        if any(b1 >= b2 for b1, b2 in zip(betas, betas[1:])):
            raise ValidationError("beta_schedule", "betas must be strictly increasing")

    u0 = raw.get("u0", "zeros")
    if isinstance(u0, str):
        if u0 not in ("zeros", "random"):
            raise ValidationError("u0", f"unknown initial control {u0!r}")
    else:
        try:
            arr = np.asarray(u0, dtype=np.float64)
        except (TypeError, ValueError):
            raise ValidationError("u0", "expected numbers") from None
        if not (arr.shape == (k,) or arr.shape == (grid_n, k) or (k == 1 and arr.shape == (grid_n,))):
            raise ValidationError("u0", f"expected {k} values or a {grid_n} x {k} table")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("u0", "entries must be finite")
        u0 = arr

    radius = _positive(raw["radius"], "radius") if "radius" in raw else None
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValidationError("seed", "must be an integer")
    out = raw.get("output_dir", "out")
    if not isinstance(out, str):
        raise ValidationError("output_dir", "must be a string")

    hess = raw.get("hessian", {})
    if not isinstance(hess, dict):
        raise ValidationError("hessian", "expected an object")
    count = hess.get("count", min(6, grid_n * k))
    if not isinstance(count, int) or not 1 <= count <= grid_n * k:
        raise ValidationError("hessian.count", f"must be an integer in [1, {grid_n * k}]")
    mode = hess.get("mode", "discrete")
    if mode not in ("discrete", "structural"):
        raise ValidationError("hessian.mode", f"unknown mode {mode!r}")
    at = hess.get("at", "minimizer")
    if at not in ("minimizer", "initial"):
        raise ValidationError("hessian.at", f"expected 'minimizer' or 'initial', got {at!r}")

    ver = raw.get("verify", {})
    if not isinstance(ver, dict):
        raise ValidationError("verify", "expected an object")
    samples = ver.get("samples", 3)
    if not isinstance(samples, int) or samples < 1:
        raise ValidationError("verify.samples", "must be a positive integer")
    fd_eps = _positive(ver.get("eps", 1e-5), "verify.eps")

    return RunConfig(
        system=system,
        system_spec=raw["system"],
        x0=x0,
        target=target,
        grid_n=grid_n,
        beta=beta,
        betas=betas,
        warm_start=warm,
        flow=_flow_config(raw.get("flow")),
        u0=u0,
        radius=radius,
        output_dir=out,
        seed=seed,
        hessian_count=count,
        hessian_mode=mode,
        hessian_at=at,
        verify_samples=samples,
        fd_eps=fd_eps,
    )


def initial_control(cfg: RunConfig) -> Control:
    N, k = cfg.grid_n, cfg.system.control_dim
    if isinstance(cfg.u0, str):
        if cfg.u0 == "zeros":
            return Control.zeros(N, k)
        return Control(0.1 * np.random.default_rng(cfg.seed).standard_normal((N, k)))
    arr = np.asarray(cfg.u0, dtype=np.float64)
    if arr.shape == (k,):
        return Control.constant(arr, N)
    return Control(arr.reshape(N, k))


def _require_beta(cfg: RunConfig) -> float:
    if cfg.beta is None:
        raise ValidationError("beta", "this command needs a penalty weight")
    return cfg.beta


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _cmd_simulate(cfg: RunConfig, out: Path, jobs: int) -> int:
    u = initial_control(cfg)
    traj = integrate_state(cfg.system, cfg.x0, u)
    traj.to_csv(out / "trajectory.csv")
    write_csv(out / "control.csv", "u", u.values, cells=True)
    return 0


def _cmd_flow(cfg: RunConfig, out: Path, jobs: int) -> int:
    params = cfg.params(_require_beta(cfg))
    trace = run_flow(cfg.system, cfg.cost_fn, params, initial_control(cfg), cfg.flow)
    rows = trace.as_array()
    with (out / "trace.csv").open("w") as fh:
        fh.write("t,energy,grad_norm,dt,accepted,cum_length,h1\n")
        for r in rows:
            fh.write(",".join([f"{r[0]:.17g}", f"{r[1]:.17g}", f"{r[2]:.17g}", f"{r[3]:.17g}",
                               str(int(r[4])), f"{r[5]:.17g}", f"{r[6]:.17g}"]) + "\n")
    u = trace.final_control
    write_csv(out / "control.csv", "u", u.values, cells=True)
    last = trace.accepted()[-1]
    _write_json(
        out / "summary.json",
        {
            "final_energy": last.energy,
            "converged": trace.converged,
            "final_residual": last.grad_norm,
            "t_final": last.t,
            "accepted_steps": trace.n_accepted - 1,
            "rejected_steps": len(trace.steps) - trace.n_accepted,
            "half_norm": 0.5 * u.inner(u),
            "endpoint_gap": cfg.cost_fn.value(endpoint(cfg.system, params, u)),
            "flow_length": last.cum_length,
        },
    )
    return 0


def _cmd_sweep(cfg: RunConfig, out: Path, jobs: int) -> int:
    betas = cfg.betas or ((cfg.beta,) if cfg.beta is not None else None)
    if betas is None:
        raise ValidationError("beta_schedule", "sweep needs beta_schedule (or beta)")
    schedule = BetaSchedule(betas, warm_start=cfg.warm_start, flow=cfg.flow)
    result = beta_sweep(cfg.system, cfg.cost_fn, cfg.params(betas[0]), schedule, initial_control(cfg), jobs)
    result.to_csv(out / "sweep.csv")
    report: dict = {
        "rows": [{"beta": r.beta, "status": r.status, "converged": r.converged} for r in result.rows],
        "limit_energy_estimate": result.limit_energy_estimate,
    }
    try:
        report["trends"] = check_gamma_trends(result).as_dict()
    except ValueError as exc:
        report["trends"] = None
        report["trends_note"] = str(exc)
    if cfg.radius is not None:
        report["within_radius"] = radius_check(result, cfg.radius)
    _write_json(out / "trends.json", report)
    return 0 if all(r.ok for r in result.rows) else 1


def _cmd_hessian(cfg: RunConfig, out: Path, jobs: int) -> int:
    params = cfg.params(_require_beta(cfg))
    u = initial_control(cfg)
    if cfg.hessian_at == "minimizer":
        u = run_flow(cfg.system, cfg.cost_fn, params, u, cfg.flow).final_control
    op = HessianOperator(cfg.system, cfg.cost_fn, params, u, cfg.hessian_mode)
    spec = spectrum_probe(op, cfg.hessian_count, seed=cfg.seed)
    _write_json(
        out / "hessian.json",
        {
            "eigenvalues": spec.eigenvalues.tolist(),
            "symmetric_residual": op.symmetric_residual(seed=cfg.seed),
            "residuals": spec.residuals.tolist(),
            "iterations": spec.iterations,
            "at": cfg.hessian_at,
            "mode": cfg.hessian_mode,
        },
    )
    return 0


def _check(name: str, value: float, tol: float) -> dict:
    return {"name": name, "value": value, "tol": tol, "pass": bool(value <= tol)}


def verification_checks(cfg: RunConfig) -> list[dict]:
    """Oracle comparisons for the configured system and cost."""
    sys_, cost_fn = cfg.system, cfg.cost_fn
    params = cfg.params(cfg.beta if cfg.beta is not None else 1.0)
    rng = np.random.default_rng(cfg.seed)
    shape = (cfg.grid_n, sys_.control_dim)
    checks = []
    grad_err = fm_err = sym_err = hvp_err = 0.0
    for _ in range(cfg.verify_samples):
        u = Control(0.5 * rng.standard_normal(shape))
        g = gradient_discrete(sys_, cost_fn, params, u).g_full.values
        fd = fd_gradient(sys_, cost_fn, params, u, cfg.fd_eps)
        grad_err = max(grad_err, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-300)))
        traj = integrate_state(sys_, cfg.x0, u)
        fm_err = max(fm_err, integrate_fundamental(sys_, traj, u).identity_defect())
        op = HessianOperator(sys_, cost_fn, params, u)
        sym_err = max(sym_err, op.symmetric_residual(pairs=3, seed=int(rng.integers(1 << 31))))
        v = Control(rng.standard_normal(shape))
        eps = 1e-6
        gp = gradient_discrete(sys_, cost_fn, params, u + eps * v).g_full
        gm = gradient_discrete(sys_, cost_fn, params, u - eps * v).g_full
        fd_h = (gp - gm) * (0.5 / eps)
        hv = op.apply(v)
        hvp_err = max(hvp_err, (hv - fd_h).l2_norm() / max(fd_h.l2_norm(), 1e-300))
    checks.append(_check("gradient_vs_fd_max_rel", grad_err, 1e-6))
    checks.append(_check("fundamental_identity_defect", fm_err, 1e-8))
    checks.append(_check("hessian_symmetry_rel", sym_err, 1e-8))
    checks.append(_check("hessian_vs_fd_rel", hvp_err, 1e-5))

    spec = cfg.system_spec if isinstance(cfg.system_spec, dict) else {}
    if spec.get("builtin") == "linear":
        B = np.atleast_2d(np.asarray(spec["B"], dtype=np.float64))
        sol = linear_closed_form(B, cfg.x0, cfg.target, params.beta)
        u = sol.as_control(cfg.grid_n)
        checks.append(_check("linear_closed_form_residual",
                             gradient_discrete(sys_, cost_fn, params, u).norm(), 1e-10))
        checks.append(_check("linear_closed_form_energy",
                             abs(cost(sys_, cost_fn, params, u) - sol.energy), 1e-12))
    if spec.get("builtin") == "heisenberg" and np.all(cfg.x0 == 0) and cfg.target[:2].tolist() == [0.0, 0.0] \
            and cfg.target[2] != 0:
        arc, _ = heisenberg_arc_search(float(cfg.target[2]))
        checks.append(_check("heisenberg_arc_search", abs(arc - heisenberg_reference(float(cfg.target[2]))), 1e-6))
    return checks


def _cmd_verify(cfg: RunConfig, out: Path, jobs: int) -> int:
    checks = verification_checks(cfg)
    ok = all(c["pass"] for c in checks)
    _write_json(out / "verify.json", {"checks": checks, "all_pass": ok})
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}: {c['value']:.3e} (tol {c['tol']:.0e})", file=sys.stderr)
    return 0 if ok else 1


_DISPATCH = {
    "simulate": _cmd_simulate,
    "flow": _cmd_flow,
    "sweep": _cmd_sweep,
    "hessian": _cmd_hessian,
    "verify": _cmd_verify,
}


def run_command(cmd: str, cfg: RunConfig, out_dir=None, jobs: int = 1) -> int:
    """Run one subcommand and return its exit status; errors are reported on stderr."""
    if cmd not in _DISPATCH:
        print(f"subflow: unknown command {cmd!r}", file=sys.stderr)
        return 2
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return _DISPATCH[cmd](cfg, out, jobs)
    except ConfigError as exc:
        print(f"subflow: configuration error: {exc}", file=sys.stderr)
        return 2
    except SubflowError as exc:
        print(f"subflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def _setup_logging() -> None:
    level = os.environ.get("SUBFLOW_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="subflow", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run description")
    parser.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    parser.add_argument("--jobs", type=int, default=1, help="worker threads for cold-started sweeps")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging()
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"subflow: configuration error: config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        print(f"subflow: configuration error: {exc}", file=sys.stderr)
        return 2
    if args.jobs < 1:
        print("subflow: configuration error: --jobs must be at least 1", file=sys.stderr)
        return 2
    return run_command(args.command, cfg, args.out, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
