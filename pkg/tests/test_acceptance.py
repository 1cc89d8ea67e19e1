"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (or ``python3 tests/test_acceptance.py``).
"""

import math
import time

import numpy as np
import pytest

from subflow import (
    BetaSchedule,
    Control,
    CostParams,
    HessianOperator,
    beta_sweep,
    check_gamma_trends,
    cost,
    fd_gradient,
    first_variation,
    gradient_continuous,
    gradient_discrete,
    hessian_apply,
    heisenberg_reference,
    integrate_fundamental,
    integrate_state,
    linear_closed_form,
    lojasiewicz_estimate,
    make_grushin,
    make_heisenberg,
    make_linear,
    make_quadratic_cost,
    run_flow,
    sobolev_seminorm,
    spectrum_probe,
    stationarity_residual,
)
from subflow.flow import FlowConfig, dissipation_ratio, tail_length_fraction
from subflow.oracle import heisenberg_penalized_reference

from conftest import circle_control, make_rot

EPS_STOP = FlowConfig().eps_stop
HEIS_TARGET = [0.0, 0.0, 0.1]


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def _scalar():
    return make_linear([[1.0]]), make_quadratic_cost([0.0]), CostParams(1.0, [1.0])


@pytest.fixture(scope="module")
def scalar_run():
    lin, a, params = _scalar()
    run_flow(lin, a, params, Control.zeros(2, 1))  # load compiled kernels outside the timing
    t0 = time.perf_counter()
    trace = run_flow(lin, a, params, Control.zeros(64, 1))
    return trace, time.perf_counter() - t0


@pytest.fixture(scope="module")
def converged_runs(scalar_run):
    """Converged flows on every benchmark: (label, system, cost, params, trace)."""
    lin, a, params = _scalar()
    runs = [("scalar", lin, a, params, scalar_run[0])]
    H, ha = make_heisenberg(), make_quadratic_cost(HEIS_TARGET)
    for beta, u0 in ((10.0, Control.zeros(100, 2)), (100.0, circle_control(100))):
        p = CostParams(beta, [0, 0, 0])
        runs.append((f"heisenberg beta={beta:g}", H, ha, p, run_flow(H, ha, p, u0)))
    rot, ra, rp = make_rot(), make_quadratic_cost([0.5, 0.4]), CostParams(2.0, [0.3, -0.2])
    u0 = Control.from_function(lambda s: np.c_[np.cos(3 * s), np.sin(2 * s)], 64)
    runs.append(("rot", rot, ra, rp, run_flow(rot, ra, rp, u0)))
    g, ga, gp = make_grushin(), make_quadratic_cost([0.5, 0.3]), CostParams(5.0, [0.0, 0.0])
    runs.append(("grushin", g, ga, gp, run_flow(g, ga, gp, Control.constant([0.3, 0.2], 64))))
    return runs


@pytest.fixture(scope="module")
def heis_sweep():
    H, a = make_heisenberg(), make_quadratic_cost(HEIS_TARGET)
    sched = BetaSchedule((1.0, 10.0, 100.0, 1000.0), warm_start=True)
    t0 = time.perf_counter()
    result = beta_sweep(H, a, CostParams(1.0, [0, 0, 0]), sched, circle_control(200))
    return result, time.perf_counter() - t0


def test_c01_closed_form_benchmark(scalar_run, report):
    trace, elapsed = scalar_run
    ref = linear_closed_form([[1.0]], [1.0], [0.0], 1.0)
    err_u = (trace.final_control - ref.as_control(64)).l2_norm()
    err_f = abs(trace.final_energy - ref.energy)
    ok = trace.converged and err_u <= 1e-6 and err_f <= 1e-8 and elapsed < 1.0
    report(1, ok, f"|u-u*|={err_u:.2e} (<=1e-6), |F-1/4|={err_f:.2e} (<=1e-8), {elapsed:.3f}s (<1s)")
    assert ok


def test_c02_gradient_exactness(report):
    H, a = make_heisenberg(), make_quadratic_cost(HEIS_TARGET)
    params = CostParams(10.0, [0, 0, 0])
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(5):
        u = Control(rng.standard_normal((32, 2)))
        g = gradient_discrete(H, a, params, u).g_full.values
        fd = fd_gradient(H, a, params, u, 1e-5)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.abs(fd))))
    ok = worst <= 1e-6
    report(2, ok, f"max componentwise rel. err {worst:.2e} (<=1e-6), Heisenberg N=32, 5 controls")
    assert ok


def test_c03_adjoint_consistency(report):
    # Heisenberg trajectories are polynomial in s, so both gradients agree there to
    # round-off; the convergence order is measured on a nonlinear system.
    rot, a, params = make_rot(), make_quadratic_cost([0.5, 0.4]), CostParams(2.0, [0.3, -0.2])
    f = lambda s: np.c_[np.cos(3 * s) + 0.2, np.sin(2 * s)]
    gaps = []
    for N in (32, 64):
        u = Control.from_function(f, N)
        gaps.append((gradient_discrete(rot, a, params, u).g_full - gradient_continuous(rot, a, params, u).g_full).l2_norm())
    ratio = gaps[0] / gaps[1]
    H, ha = make_heisenberg(), make_quadratic_cost([0.1, 0.2, 0.3])
    u = Control.from_function(lambda s: np.c_[np.cos(3 * s), np.sin(2 * s)], 32)
    hp = CostParams(2.0, [0, 0, 0])
    heis_gap = (gradient_discrete(H, ha, hp, u).g_full - gradient_continuous(H, ha, hp, u).g_full).l2_norm()
    ok = 2.5 <= ratio <= 6.0 and heis_gap <= 1e-12
    report(3, ok, f"gap ratio N=32/64 {ratio:.3f} in [2.5, 6] (gaps {gaps[0]:.2e}, {gaps[1]:.2e}); Heisenberg gap {heis_gap:.1e}")
    assert ok


def test_c04_dissipation(converged_runs, report):
    worst_increase = -math.inf
    for _, _, _, _, trace in converged_runs:
        e = np.array([s.energy for s in trace.accepted()])
        if len(e) > 1:
            worst_increase = max(worst_increase, float(np.max(np.diff(e) / (1 + np.abs(e[:-1])))))
    rng = np.random.default_rng(4)
    ratios = []
    for sys_, x0, x1 in (
        (make_linear([[1.0]]), [1.0], [0.0]),
        (make_heisenberg(), [0, 0, 0], HEIS_TARGET),
        (make_rot(), [0.3, -0.2], [0.5, 0.4]),
        (make_grushin(), [0.0, 0.0], [0.5, 0.3]),
    ):
        u = Control(rng.standard_normal((32, sys_.control_dim)))
        ratios.append(dissipation_ratio(sys_, make_quadratic_cost(x1), CostParams(2.0, x0), u, 1e-3))
    rate_err = max(abs(r - 1) for r in ratios)
    ok = worst_increase <= 1e-12 and rate_err <= 0.1
    report(4, ok, f"max rel. energy increase {worst_increase:.1e} (<=1e-12); dissipation ratio error {rate_err:.2e} (<=0.1)")
    assert ok


def test_c05_gamma_benchmark(heis_sweep, report):
    result, elapsed = heis_sweep
    ref = heisenberg_reference(0.1)
    half = result.limit_energy_estimate
    rel = abs(half - ref) / ref
    gaps = [r.endpoint_gap for r in result.rows]
    trends = check_gamma_trends(result)
    ok = rel <= 0.05 and trends.gaps_decreasing and elapsed < 60
    pen = heisenberg_penalized_reference(0.1, 1000.0)
    report(
        5,
        ok,
        f"half_norm(1000)={half:.5f} vs 2pi*0.1={ref:.5f} (rel {rel:.3f}, <=0.05); "
        f"gaps {', '.join(f'{g:.2e}' for g in gaps)}; ratios {', '.join(f'{q:.2f}' for q in trends.gap_ratios)} (<=0.5); "
        f"{elapsed:.1f}s (<60s); exact penalised optimum at beta=1000 has half_norm {pen.half_norm:.5f}",
    )
    assert ok


def test_c06_monotone_totals(heis_sweep, report):
    result, _ = heis_sweep
    totals = [r.total for r in result.rows]
    ok = check_gamma_trends(result).totals_nondecreasing
    report(6, ok, "totals " + ", ".join(f"{t:.6f}" for t in totals) + " nondecreasing")
    assert ok


def test_c07_hessian(report):
    rng = np.random.default_rng(7)
    sym = 0.0
    for sys_, x0, x1 in ((make_heisenberg(), [0, 0, 0], HEIS_TARGET), (make_rot(), [0.3, -0.2], [0.5, 0.4])):
        u = Control(rng.standard_normal((32, 2)))
        sym = max(sym, HessianOperator(sys_, make_quadratic_cost(x1), CostParams(10.0, x0), u).symmetric_residual(20))
    H, a, params = make_heisenberg(), make_quadratic_cost(HEIS_TARGET), CostParams(10.0, [0, 0, 0])
    u, v = Control(rng.standard_normal((32, 2))), Control(rng.standard_normal((32, 2)))
    e = 1e-5
    fd = (gradient_discrete(H, a, params, u + e * v).g_full - gradient_discrete(H, a, params, u).g_full) * (1 / e)
    hv = hessian_apply(H, a, params, u, v)
    fd_err = (hv - fd).l2_norm() / fd.l2_norm()
    lin, la, lp = _scalar()
    top_err = 0.0
    for beta in (1.0, 5.0):
        spec = spectrum_probe(HessianOperator(lin, la, lp.with_beta(beta), Control.zeros(64, 1)), 3)
        top_err = max(top_err, abs(spec.eigenvalues[0] - (1 + beta)))
    ok = sym <= 1e-8 and fd_err <= 1e-5 and top_err <= 1e-6
    report(7, ok, f"symmetry {sym:.1e} (<=1e-8); vs FD-of-gradient {fd_err:.1e} (<=1e-5); top eigenvalue err {top_err:.1e} (<=1e-6)")
    assert ok


def test_c08_fundamental_identity(report):
    rng = np.random.default_rng(8)
    benchmarks = (
        (make_heisenberg(), [0.0, 0.0, 0.0]),
        (make_grushin(), [0.5, -0.5]),
        (make_rot(), [0.3, -0.2]),
        (make_linear([[1.0]]), [1.0]),
        (make_linear([[1.0, 0.5], [0.0, 2.0], [1.0, -1.0]]), [1.0, 0.0, -1.0]),
    )
    worst = 0.0
    for sys_, x0 in benchmarks:
        for _ in range(5):
            u = Control(rng.standard_normal((64, sys_.control_dim)))
            worst = max(worst, integrate_fundamental(sys_, integrate_state(sys_, x0, u), u).identity_defect())
    ok = worst <= 1e-8
    report(8, ok, f"max node |M N_inv - I|_F {worst:.1e} (<=1e-8) over 5 systems x 5 controls")
    assert ok


def test_c09_variation_orders(report):
    first, second = [], []
    for sys_, x0, x1 in ((make_heisenberg(), [0.1, 0.1, 0.1], HEIS_TARGET), (make_rot(), [0.3, -0.2], [0.5, 0.4])):
        u = Control.from_function(lambda s: np.c_[np.cos(3 * s), np.sin(2 * s) + 0.3], 32)
        v = Control.from_function(lambda s: np.c_[s**2, np.cos(5 * s)], 32)
        base = integrate_state(sys_, x0, u).final
        y = first_variation(sys_, x0, u, v)[-1]
        errs = [np.linalg.norm(integrate_state(sys_, x0, u + e * v).final - base - e * y) for e in (1e-2, 5e-3, 2.5e-3)]
        first += [errs[0] / errs[1], errs[1] / errs[2]]
        a, params = make_quadratic_cost(x1), CostParams(2.0, x0)
        f0 = cost(sys_, a, params, u)
        g = gradient_discrete(sys_, a, params, u).g_full.inner(v)
        q = hessian_apply(sys_, a, params, u, v).inner(v)
        rem = [abs(cost(sys_, a, params, u + e * v) - f0 - e * g - 0.5 * e * e * q) for e in (4e-2, 2e-2, 1e-2)]
        second += [rem[0] / rem[1], rem[1] / rem[2]]
    ok = min(first) >= 3.5 and min(second) >= 6
    report(9, ok, f"first-variation ratios min {min(first):.2f} (>=3.5); Taylor remainder ratios min {min(second):.2f} (>=6)")
    assert ok


def test_c10_stationarity(converged_runs, heis_sweep, report):
    worst = 0.0
    count = 0
    for _, sys_, a, params, trace in converged_runs:
        assert trace.converged
        worst = max(worst, stationarity_residual(sys_, a, params, trace.final_control))
        count += 1
    H, ha = make_heisenberg(), make_quadratic_cost(HEIS_TARGET)
    for row in heis_sweep[0].rows:
        if row.converged:
            worst = max(worst, stationarity_residual(H, ha, CostParams(row.beta, [0, 0, 0]), row.control))
            count += 1
    ok = worst <= EPS_STOP
    report(10, ok, f"max |u + beta h_u| {worst:.2e} (<=eps_stop={EPS_STOP:g}) over {count} converged runs")
    assert ok


def test_c11_lojasiewicz(scalar_run, report):
    gamma = lojasiewicz_estimate(scalar_run[0])
    ok = 1.8 <= gamma <= 2.2
    report(11, ok, f"fitted gamma {gamma:.4f} in [1.8, 2.2]")
    assert ok


def test_c12_sobolev_fixed_point(converged_runs, report):
    label, H, a, params, trace = converged_runs[2]
    assert label.startswith("heisenberg beta=100")
    h = gradient_discrete(H, a, params, trace.final_control).h
    lhs = trace.accepted()[-1].h1
    rhs = params.beta * sobolev_seminorm(h, 1)
    sup = max(s.h1 for s in trace.accepted())
    rel = abs(lhs - rhs) / rhs
    ok = rel <= 0.01 and math.isfinite(sup)
    report(12, ok, f"H1(u_final)={lhs:.6f} vs beta*H1(h)={rhs:.6f} (rel {rel:.1e}, <=0.01); sup_t H1 = {sup:.3f}")
    assert ok


def test_c13_finite_length(converged_runs, report):
    fractions = {label: tail_length_fraction(trace) for label, *_, trace in converged_runs if trace.n_accepted > 1}
    worst = max(fractions.values())
    ok = worst <= 0.01
    report(13, ok, f"max tail length fraction {worst:.1e} (<=0.01) over {len(fractions)} moving runs")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
