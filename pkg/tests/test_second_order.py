import numpy as np
import pytest

from subflow import (
    Control,
    CostParams,
    HessianOperator,
    NoConvergence,
    cost,
    first_variation,
    gradient_discrete,
    hessian_apply,
    make_linear,
    make_quadratic_cost,
    run_flow,
    second_variation,
    spectrum_probe,
)

from conftest import BENCHMARKS, circle_control


def test_second_variation_linear():
    lin = make_linear([[1.0, 2.0], [0.0, 1.0]])
    rng = np.random.default_rng(0)
    u, v, w = (Control(rng.standard_normal((8, 2))) for _ in range(3))
    assert not np.any(second_variation(lin, [0, 0], u, v, w))


@pytest.mark.parametrize("name", ["heisenberg", "rot"])
def test_second_variation_symmetric_bilinear(name):
    factory, x0, _ = BENCHMARKS[name]
    sys = factory()
    rng = np.random.default_rng(1)
    u, v, v2, w = (Control(rng.standard_normal((32, 2))) for _ in range(4))
    z = second_variation(sys, x0, u, v, w)
    np.testing.assert_allclose(z, second_variation(sys, x0, u, w, v), atol=1e-9)
    lhs = second_variation(sys, x0, u, 2.5 * v + v2, w)
    rhs = 2.5 * z + second_variation(sys, x0, u, v2, w)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_second_variation_fd(rot):
    x0 = [0.3, -0.2]
    rng = np.random.default_rng(2)
    u, v, w = (Control(rng.standard_normal((32, 2))) for _ in range(3))
    z = second_variation(rot, x0, u, v, w)
    y0 = first_variation(rot, x0, u, v)[-1]
    errs = [np.linalg.norm((first_variation(rot, x0, u + e * w, v)[-1] - y0) / e - z) for e in (1e-3, 5e-4, 2.5e-4)]
    for e1, e2 in zip(errs, errs[1:]):
        assert 1.8 <= e1 / e2 <= 2.2


def test_second_variation_heisenberg_exact(heis):
    # z is a quadratic form for Heisenberg: the forward quotient is exact up to round-off
    x0 = [0.0, 0.0, 0.0]
    rng = np.random.default_rng(3)
    u, v, w = (Control(rng.standard_normal((32, 2))) for _ in range(3))
    z = second_variation(heis, x0, u, v, w)
    e = 1e-3
    y = (first_variation(heis, x0, u + e * w, v)[-1] - first_variation(heis, x0, u, v)[-1]) / e
    np.testing.assert_allclose(y, z, atol=1e-9)


def test_scalar_hessian_closed_form(scalar):
    lin, a, params = scalar
    rng = np.random.default_rng(4)
    u = Control(rng.standard_normal((16, 1)))
    v = Control(rng.standard_normal((16, 1)))
    for mode in ("discrete", "structural"):
        Hv = hessian_apply(lin, a, params, u, v, mode)
        np.testing.assert_allclose(Hv.values, v.values + v.values.mean(), atol=1e-14)
        np.testing.assert_allclose(hessian_apply(lin, a, params, u, Control.constant([1.0], 16), mode).values, 2.0)


def test_beta_zero_identity(heis):
    rng = np.random.default_rng(5)
    u, v = Control(rng.standard_normal((8, 2))), Control(rng.standard_normal((8, 2)))
    Hv = hessian_apply(heis, make_quadratic_cost([0, 0, 1]), CostParams(0.0, [0, 0, 0]), u, v)
    assert np.array_equal(Hv.values, v.values)


@pytest.mark.parametrize("name", list(BENCHMARKS))
def test_hessian_symmetric_and_matches_fd(name):
    factory, x0, x1 = BENCHMARKS[name]
    sys = factory()
    rng = np.random.default_rng(6)
    params, a = CostParams(2.0, x0), make_quadratic_cost(x1)
    u = Control(rng.standard_normal((32, sys.control_dim)))
    op = HessianOperator(sys, a, params, u)
    assert op.symmetric_residual(pairs=20) <= 1e-8
    v = Control(rng.standard_normal((32, sys.control_dim)))
    e = 1e-5
    fd = (gradient_discrete(sys, a, params, u + e * v).g_full - gradient_discrete(sys, a, params, u - e * v).g_full) * (0.5 / e)
    assert (op.apply(v) - fd).l2_norm() <= 1e-5 * fd.l2_norm()


def test_structural_mode_converges(rot):
    params, a = CostParams(2.0, [0.3, -0.2]), make_quadratic_cost([0.5, 0.4])
    rng = np.random.default_rng(7)
    u0, v0 = Control(rng.standard_normal((32, 2))), Control(rng.standard_normal((32, 2)))
    gaps = []
    for r in (1, 2, 4):
        u, v = u0.refine(r), v0.refine(r)
        d = hessian_apply(rot, a, params, u, v)
        s = hessian_apply(rot, a, params, u, v, "structural")
        gaps.append((d - s).l2_norm() / d.l2_norm())
    for g1, g2 in zip(gaps, gaps[1:]):
        assert 3.0 <= g1 / g2 <= 5.0


@pytest.mark.parametrize("name", ["heisenberg", "rot"])
def test_second_order_taylor(name):
    factory, x0, x1 = BENCHMARKS[name]
    sys = factory()
    rng = np.random.default_rng(8)
    params, a = CostParams(2.0, x0), make_quadratic_cost(x1)
    u, v = Control(rng.standard_normal((16, 2))), Control(rng.standard_normal((16, 2)))
    f0 = cost(sys, a, params, u)
    g = gradient_discrete(sys, a, params, u).g_full.inner(v)
    q = hessian_apply(sys, a, params, u, v).inner(v)
    errs = [abs(cost(sys, a, params, u + e * v) - f0 - e * g - 0.5 * e * e * q) for e in (4e-2, 2e-2, 1e-2)]
    for e1, e2 in zip(errs, errs[1:]):
        assert e1 / e2 >= 6


def test_spectrum_scalar(scalar):
    lin, a, params = scalar
    op = HessianOperator(lin, a, params, Control.zeros(32, 1))
    spec = spectrum_probe(op, 4)
    assert spec.eigenvalues[0] == pytest.approx(2.0, abs=1e-6)
    np.testing.assert_allclose(spec.eigenvalues[1:], 1.0, atol=1e-6)
    op0 = HessianOperator(lin, a, params.with_beta(0.0), Control.zeros(32, 1))
    np.testing.assert_allclose(spectrum_probe(op0, 3).eigenvalues, 1.0)


def test_spectrum_bounds_and_cap(heis):
    op = HessianOperator(heis, make_quadratic_cost([0, 0, 0.1]), CostParams(10.0, [0, 0, 0]), Control.zeros(8, 2))
    with pytest.raises(ValueError):
        spectrum_probe(op, 17)
    with pytest.raises(NoConvergence):
        spectrum_probe(op, 6, oversample=0, max_iter=1, seed=3)


def test_spectrum_at_stationary_point(heis):
    params, a = CostParams(100.0, [0, 0, 0]), make_quadratic_cost([0, 0, 0.1])
    trace = run_flow(heis, a, params, circle_control(64))
    assert trace.converged
    op = HessianOperator(heis, a, params, trace.final_control)
    spec = spectrum_probe(op, 24)
    mags = np.abs(spec.shifted)
    assert np.all(np.diff(mags) <= 1e-9)
    assert np.max(mags[20:]) <= 0.1 * mags[0]
    # rotating the loop about the vertical axis is a symmetry: one flat direction
    assert spec.near_zero_count(1e-4) == 1
