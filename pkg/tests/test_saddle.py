import math
from dataclasses import replace

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import HALF_ONES, TANH_RHO1, TANH_RHO_STAR2, literal_slice_margins, saddle_margins, solved, tanh_spec
from rfcurves.regularizers import ElasticNet, Lasso, Ridge, SignalSpec, smooth_bump
from rfcurves.saddle import (
    ProblemSpec,
    SaddleNonConvergence,
    SolverOptions,
    UnboundedDirection,
    coupling_constants,
    psi,
    psi_gradient,
    psi_tau1_partial,
    solve_saddle,
    stationarity_residual,
    tau1_star,
    tau2_star,
)


def _spec(**kw):
    base = dict(gamma=1.0, eta=1.0, delta=1.0, sigma_eps2=0.1, rho1=0.6, rho_star2=0.03,
                reg=ElasticNet(1e-3, 1e-2), signal=HALF_ONES)
    base.update(kw)
    return ProblemSpec(**base)


# ---------------------------------------------------------------- coupling constants


def test_coupling_without_residual_part():
    spec = _spec(gamma=2.0, eta=1.5, delta=3.0, rho1=0.7, rho_star2=0.0)
    b, q, x, t = 0.9, 1.3, 0.4, 2.1
    c1, c2 = coupling_constants(b, q, x, t, spec)
    assert c1 == pytest.approx(b * b * 0.49 * x / (2 * q * q * t), rel=1e-15)
    assert c2 == pytest.approx(b * 0.7 * x * math.sqrt(1.5) / q, rel=1e-15)


def test_coupling_without_linear_part():
    spec = _spec(rho1=0.0, rho_star2=0.2)
    b, q = 0.9, 1.3
    c1, c2 = coupling_constants(b, q, 0.4, 2.1, spec)
    assert c1 == pytest.approx(b * 0.2 / (2 * q), rel=1e-15)
    assert c2 == pytest.approx(b * math.sqrt(0.2), rel=1e-15)


def test_coupling_arithmetic():
    spec = _spec(rho1=math.sqrt(0.5), rho_star2=0.5)
    c1, c2 = coupling_constants(1.0, 1.0, 1.0, 1.0, spec)
    assert c1 == pytest.approx(0.5, rel=1e-15)
    assert c2 == pytest.approx(1.0, rel=1e-15)


def test_perturbation_too_large_is_a_domain_error():
    spec = _spec()
    with pytest.raises(ValueError):
        psi(1.0, 1.0, 1.0, 1.0, spec, tau1=-1.0)


# ---------------------------------------------------------------- spec validation


def test_spec_ratio_consistency():
    with pytest.raises(ValueError):
        _spec(gamma=2.0, eta=1.0, delta=1.0)


def test_spec_lasso_allows_no_perturbation():
    with pytest.raises(ValueError):
        _spec(reg=Lasso(1e-3), tau1=1e-6)


def test_spec_tau_bounds():
    spec = _spec()
    with pytest.raises(ValueError):
        replace(spec, tau1=2 * tau1_star(spec))
    ok = replace(spec, tau1=0.5 * tau1_star(spec))
    assert ok.tau1 > 0
    h = smooth_bump(0.5)
    probe = replace(spec, test_fn=h)
    with pytest.raises(ValueError):
        replace(probe, tau2=2 * tau2_star(probe))


def test_tau_bound_formulas():
    spec = _spec(delta=4.0, gamma=2.0, eta=2.0)
    assert tau1_star(spec) == pytest.approx((1e-2 / 8) / (0.36 * 25 + 0.03), rel=1e-15)
    probe = replace(spec, test_fn=smooth_bump(1.0))
    assert tau2_star(probe) == pytest.approx(1e-2 / (4 * smooth_bump(1.0).curvature), rel=1e-15)


def test_spec_rejects_degenerate_features():
    with pytest.raises(ValueError):
        _spec(rho1=0.0, rho_star2=0.0)


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(grid_points=2)
    with pytest.raises(ValueError):
        SolverOptions(shrink=1.0)
    assert set(SolverOptions().to_dict()) == {"grid_points", "shrink", "param_tol", "grad_tol", "max_rounds", "quad_order"}


# ---------------------------------------------------------------- psi


def _tail(b, q, x, t, eta):
    return x * t / 2 + b * q / 2 + x * b * b / (2 * t * eta) - b * x * x / (2 * q) - q * b / (2 * eta) - b * b / 2


def test_psi_algebraic_tail_only():
    gamma, eta = 1.5, 0.8
    spec = ProblemSpec(gamma, eta, gamma * eta, 0.0, 0.6, 0.03, Ridge(1e8), SignalSpec(((0.0, 1.0),)))
    b, q, x, t = 0.3, 1.1, 0.5, 0.9
    assert abs(psi(b, q, x, t, spec) - _tail(b, q, x, t, eta)) <= 1e-10


def test_psi_stiff_ridge_exact_remainder():
    # with a zero signal the ridge part is exactly -B**2 / (2 (2 c1 + alpha))
    gamma, eta, alpha = 1.5, 0.8, 1e8
    spec = ProblemSpec(gamma, eta, gamma * eta, 0.0, 0.6, 0.03, Ridge(alpha), SignalSpec(((0.0, 1.0),)))
    b, q, x, t = 0.7, 1.1, 0.5, 0.9
    c1, c2 = coupling_constants(b, q, x, t, spec)
    rest = -(c2 * c2 * gamma) / (2 * (2 * c1 + alpha))
    assert abs(psi(b, q, x, t, spec) - _tail(b, q, x, t, eta) - rest) <= 1e-15


points = st.tuples(*[st.floats(0.05, 5.0)] * 4)


@given(points, st.sampled_from([1e-4, 1e-3, 1e-1]), st.sampled_from([0.0, 1e-4, 1e-2]), st.floats(0.2, 3.0))
@settings(max_examples=40, deadline=None)
def test_psi_closed_form_matches_quadrature(pt, lam, alpha, gamma):
    spec = tanh_spec(gamma, lam, alpha)
    a = psi(*pt, spec, method="closed")
    b = psi(*pt, spec, method="quadrature")
    assert abs(a - b) <= 1e-8 * max(1.0, abs(a))


@given(points, st.floats(0.2, 3.0))
@settings(max_examples=30, deadline=None)
def test_psi_gradient_matches_differences(pt, gamma):
    spec = tanh_spec(gamma, 1e-2, 1e-2)
    g = psi_gradient(*pt, spec)
    for i in range(4):
        h = 1e-6 * pt[i]
        up, dn = list(pt), list(pt)
        up[i] += h
        dn[i] -= h
        fd = (psi(*up, spec) - psi(*dn, spec)) / (2 * h)
        assert abs(fd - g[i]) <= 1e-5 * max(1.0, abs(g[i]))


def test_tau1_partial_matches_differences():
    spec = tanh_spec(1.2, 1e-3, 1e-2)
    pt = (0.3, 0.4, 0.2, 0.3)
    h = 1e-6
    fd = (psi(*pt, spec, tau1=h) - psi(*pt, spec, tau1=-h)) / (2 * h)
    assert abs(psi_tau1_partial(*pt, spec) - fd) <= 1e-6 * max(1.0, abs(fd))


def test_psi_at_saddle_is_training_error():
    from rfcurves import predictor

    spec, pt = solved(1.0)
    assert psi(*pt.coords, spec) == predictor.train_error(spec, saddle=pt)
    assert pt.value == psi(*pt.coords, spec)


# ---------------------------------------------------------------- solver


def _symbolic_gradient(spec):
    """Gradient of psi built symbolically for the elastic-net family."""
    b, q, x, t = sp.symbols("beta q xi t", positive=True)
    lam, alpha = sp.Float(spec.reg.lam, 30), sp.Float(spec.reg.alpha, 30)
    gamma, eta, s2 = sp.Float(spec.gamma, 30), sp.Float(spec.eta, 30), sp.Float(spec.sigma_eps2, 30)
    r1, rs2 = sp.Float(spec.rho1, 30), sp.Float(spec.rho_star2, 30)
    c1 = b**2 * r1**2 * x / (2 * q**2 * t) + b * rs2 / (2 * q)
    c2 = sp.sqrt(b**2 * r1**2 * x**2 * eta / q**2 + b**2 * rs2)
    B = c2 * sp.sqrt(gamma)
    kappa = 2 * c1 + alpha
    Q = lambda z: sp.erfc(z / sp.sqrt(2)) / 2
    p = lambda z: sp.exp(-z**2 / 2) / sp.sqrt(2 * sp.pi)
    G = 0
    for a, w in spec.signal.atoms:
        A = 2 * c1 * a
        z1, z2 = (lam - A) / B, (lam + A) / B
        K = (z1**2 + 1) * Q(z1) - z1 * p(z1) + (z2**2 + 1) * Q(z2) - z2 * p(z2)
        G += w * (c1 * a**2 - B**2 * K / (2 * kappa))
    expr = G + x * t / 2 + b * q / 2 + b * s2 / (2 * q) + x * b**2 / (2 * t * eta) - b * x**2 / (2 * q) - q * b / (2 * eta) - b**2 / 2
    grad = [sp.diff(expr, v) for v in (b, q, x, t)]
    return sp.lambdify((b, q, x, t), grad, modules="mpmath")


def test_pure_noise_features_symbolic_stationarity():
    spec = ProblemSpec.from_ratios(1.3, 1.0, 0.1, 0.0, 0.4, ElasticNet(1e-2, 1e-2), HALF_ONES)
    pt = solve_saddle(spec)
    grad = _symbolic_gradient(spec)(*pt.coords)
    assert max(abs(float(g)) for g in grad) < 1e-6
    # the (xi, t) block decouples: t = beta / sqrt(eta), xi = q / sqrt(eta)
    assert pt.t == pytest.approx(pt.beta / math.sqrt(spec.eta), rel=1e-6)
    assert pt.xi == pytest.approx(pt.q / math.sqrt(spec.eta), rel=1e-6)


def test_symbolic_stationarity_tanh_point():
    spec, pt = solved(1.5)
    grad = _symbolic_gradient(spec)(*pt.coords)
    assert max(abs(float(g)) for g in grad) < 1e-6


def test_ridge_limit_continuity():
    a = solve_saddle(tanh_spec(1.2, reg=ElasticNet(1e-9, 1e-2)))
    b = solve_saddle(tanh_spec(1.2, reg=Ridge(1e-2)))
    assert np.max(np.abs(a.coords / b.coords - 1)) < 1e-4


def test_double_descent_ordering():
    from rfcurves import predictor

    gens = {g: predictor.gen_error(tanh_spec(g, 1e-3, 1e-4)) for g in (0.5, 1.05, 2.0)}
    assert gens[1.05] > gens[0.5] and gens[1.05] > gens[2.0]


def test_residual_at_solution_and_after_perturbation():
    spec, pt = solved(0.7)
    opts = SolverOptions()
    assert stationarity_residual(pt, spec) <= opts.grad_tol
    assert pt.residual == stationarity_residual(pt, spec)
    for i in range(4):
        c = pt.coords.copy()
        c[i] *= 1.5
        moved = replace(pt, **dict(zip(("beta", "q", "xi", "t"), c)))
        assert stationarity_residual(moved, spec) > 10 * opts.grad_tol


def test_residual_rejects_nonpositive_point():
    spec, pt = solved(0.7)
    with pytest.raises(ValueError):
        stationarity_residual(replace(pt, q=0.0), spec)


def test_solution_determinism():
    spec = tanh_spec(0.8, 1e-3, 1e-3)
    assert solve_saddle(spec) == solve_saddle(spec)


def test_solution_carries_coupling_constants():
    spec, pt = solved(1.3)
    c1, c2 = coupling_constants(*pt.coords, spec)
    assert (c1, c2) == (pt.c1, pt.c2)
    assert all(v > 0 for v in pt.coords)


def test_saddle_inequalities_nested():
    spec, pt = solved(1.2, alpha=1e-3)
    margins = saddle_margins(spec, pt, np.random.default_rng(3), samples=20)
    slack = 1e-10 * max(1.0, abs(pt.value))
    assert all(m >= -slack for m in margins.values()), margins


def test_frozen_slices_of_the_inner_pair():
    spec, pt = solved(0.6, alpha=1e-1)
    margins = literal_slice_margins(spec, pt, np.random.default_rng(4))
    slack = 1e-10 * max(1.0, abs(pt.value))
    assert margins["t"] >= -slack and margins["xi"] >= -slack


def test_value_nondecreasing_in_noise():
    values = [solve_saddle(tanh_spec(1.1, sigma_eps2=s)).value for s in (0.0, 0.05, 0.1, 0.5, 1.0)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_gamma_convention_from_sizes():
    n, m, d = 400, 600, 500
    direct = ProblemSpec(m / n, n / d, m / d, 0.1, TANH_RHO1, TANH_RHO_STAR2, ElasticNet(1e-3, 1e-2), HALF_ONES)
    derived = ProblemSpec.from_ratios(m / n, (m / n) * (n / d), 0.1, TANH_RHO1, TANH_RHO_STAR2, ElasticNet(1e-3, 1e-2), HALF_ONES)
    a, b = solve_saddle(direct), solve_saddle(derived)
    assert np.max(np.abs(a.coords - b.coords) / b.coords) <= 1e-10
    assert abs(a.value - b.value) <= 1e-10


def test_nonconvergence_carries_best_point():
    spec = tanh_spec(0.9)
    with pytest.raises(SaddleNonConvergence) as info:
        solve_saddle(spec, SolverOptions(grad_tol=1e-30))
    assert info.value.best.residual == info.value.residual > 1e-30
    assert stationarity_residual(info.value.best, spec) < 1e-6


def test_unbounded_direction_after_expansion_cap():
    spec = tanh_spec(0.9, sigma_eps2=1e4)
    with pytest.raises(UnboundedDirection):
        solve_saddle(spec, SolverOptions(max_expansions=0))


def test_large_noise_is_reached_by_expansion():
    spec = tanh_spec(0.9, sigma_eps2=1e4)
    pt = solve_saddle(spec)
    assert pt.q > 10 and pt.residual <= 1e-6


def test_warm_start_reuses_solution():
    spec, pt = solved(1.1)
    again = solve_saddle(spec, warm_start=pt)
    assert "warm_root" in again.flags
    assert np.max(np.abs(again.coords / pt.coords - 1)) < 1e-8


def test_noiseless_flag():
    spec = tanh_spec(0.5, sigma_eps2=0.0)
    pt = solve_saddle(spec)
    assert "noiseless_q_floor" in pt.flags


def test_custom_regularizer_matches_elastic_net():
    from rfcurves.regularizers import CustomSeparable

    reg = CustomSeparable(
        value=lambda x: 1e-2 * np.abs(x) + 0.05 * x * x,
        mu=0.1,
        derivative=lambda x: 1e-2 * np.where(x >= 0, 1.0, -1.0) + 0.1 * x,
        kinks=((0.0, -1e-2, 1e-2),),
    )
    a = solve_saddle(tanh_spec(0.8, reg=reg))
    b = solve_saddle(tanh_spec(0.8, reg=ElasticNet(1e-2, 1e-1)))
    assert np.max(np.abs(a.coords / b.coords - 1)) < 1e-6
