import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg

from lqkernel import ConfigError, InputError, PenaltySpec, SolverConfig, fit, gram_matrix, objective
from lqkernel.solvers import (
    BudgetExceeded,
    GramFactors,
    kkt_residual,
    lipschitz_estimate,
    solve_closed_form_q2,
    solve_irls,
    solve_proximal_gradient,
    solve_rkhs_rls,
)
from lqkernel.synth import TargetSpec, make_target, sample_dataset
from lqkernel.theory import coefficient_radius


def _instance(rng, m, sigma=0.3, noise=0.2):
    X = rng.random((m, 1))
    y = np.cos(2 * np.pi * X[:, 0]) * 0.7 + rng.uniform(-noise, noise, m)
    return gram_matrix(X, sigma), y


def test_closed_form_examples():
    np.testing.assert_allclose(solve_closed_form_q2([[1.0]], [2.0], 1.0), [1.0])
    np.testing.assert_allclose(solve_closed_form_q2(np.eye(2), [2.0, -2.0], 1.0), [2 / 3, -2 / 3])


def test_closed_form_matches_dense_normal_equations(rng):
    A = rng.random((3, 3))
    G = A @ A.T
    y = rng.normal(size=3)
    lam = 0.05
    # independent route: stacked least squares [G; sqrt(m lam) I] a = [y; 0]
    stacked = np.vstack([G, np.sqrt(3 * lam) * np.eye(3)])
    ref, *_ = linalg.lstsq(stacked, np.concatenate([y, np.zeros(3)]))
    np.testing.assert_allclose(solve_closed_form_q2(G, y, lam), ref, atol=1e-10)


def test_rkhs_rls_examples(rng):
    np.testing.assert_allclose(solve_rkhs_rls([[1.0]], [3.0], 1.0), [1.5])
    y = np.array([0.4, -1.0])
    np.testing.assert_allclose(solve_rkhs_rls(np.eye(2), y, 0.5), y / 2)
    A = rng.random((4, 4))
    G = A @ A.T
    y = rng.normal(size=4)
    b = solve_rkhs_rls(G, y, 0.1)
    assert np.linalg.norm((G + 4 * 0.1 * np.eye(4)) @ b - y) <= 1e-10


def test_lipschitz_examples(rng):
    assert lipschitz_estimate(np.eye(2)) == pytest.approx(1.0, rel=0.02)
    assert lipschitz_estimate(np.ones((2, 2))) == pytest.approx(4.0, rel=0.02)
    A = rng.random((6, 6))
    G = A @ A.T
    ref = 2.0 / 6 * np.linalg.eigvalsh(G.T @ G).max()
    est = lipschitz_estimate(G)
    assert ref <= est <= 1.01 * ref * 1.0001


def test_kkt_examples(rng):
    spec = PenaltySpec(1, 1.0)
    assert kkt_residual([1.5], [[1.0]], [2.0], spec) == pytest.approx(0.0, abs=1e-14)
    assert kkt_residual([0.0], [[1.0]], [2.0], spec) == pytest.approx(3.0)
    G, y = _instance(rng, 12)
    a = solve_closed_form_q2(G, y, 1e-3)
    assert kkt_residual(a, G, y, PenaltySpec(2, 1e-3)) <= 1e-8
    with pytest.raises(ConfigError):
        kkt_residual(a, G, y, PenaltySpec(0.5, 1e-3))


def test_prox_grad_scalar_lasso():
    res = fit([[1.0]], [2.0], PenaltySpec(1, 1.0), SolverConfig(tol=1e-12))
    assert res.coeffs[0] == pytest.approx(1.5, abs=1e-9)
    assert res.converged and res.status == "optimal"


@pytest.mark.parametrize("seed", range(5))
def test_prox_grad_matches_closed_form(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(5, 51))
    G, y = _instance(rng, m)
    lam = 10 ** rng.uniform(-4, -2)
    pg = fit(G, y, PenaltySpec(2, lam), SolverConfig(tol=1e-12, max_iters=100000))
    cf = solve_closed_form_q2(G, y, lam)
    assert np.max(np.abs(pg.coeffs - cf)) <= 1e-6


@pytest.mark.parametrize("q", [0.5, 1.0, 1.5, 3.0])
@pytest.mark.parametrize("step_rule", ["fixed-lipschitz", "backtracking"])
def test_prox_grad_trace_monotone(q, step_rule, rng):
    G, y = _instance(rng, 20)
    res = fit(G, y, PenaltySpec(q, 1e-3), SolverConfig(tol=1e-9, max_iters=3000, step_rule=step_rule))
    tr = np.array(res.objective_trace)
    assert np.all(np.diff(tr) <= 1e-15 * np.abs(tr[:-1]))
    assert tr[0] == pytest.approx(np.mean(y**2))
    assert res.objective == pytest.approx(objective(res.coeffs, G, y, PenaltySpec(q, 1e-3)), rel=1e-9)


@pytest.mark.parametrize("q", [1.0, 1.5, 3.0])
def test_convex_kkt_reached(q, rng):
    G, y = _instance(rng, 25)
    spec = PenaltySpec(q, 1e-3)
    res = fit(G, y, spec, SolverConfig(tol=1e-8, max_iters=200000))
    assert res.converged
    assert kkt_residual(res.coeffs, G, y, spec) <= 1e-8 * (1 + np.max(np.abs(y)))


def test_half_q_from_zeros_beats_both_candidates():
    tgt = make_target(TargetSpec(amplitude=0.7, noise=0.2))
    data = sample_dataset(tgt, 40, 0.2, 1.0, seed=11)
    G = gram_matrix(data.X, 0.25)
    spec = PenaltySpec(0.5, 1e-4)
    res = fit(G, data.y, spec, SolverConfig(tol=1e-9, max_iters=20000))
    assert res.status == "stationary"
    f0 = objective(np.zeros(40), G, data.y, spec)
    f_rls = objective(solve_rkhs_rls(G, data.y, 1 / 40), G, data.y, spec)
    assert res.objective <= f0
    assert res.objective <= f_rls


def test_warm_start_never_worse_than_start(rng):
    G, y = _instance(rng, 30)
    spec = PenaltySpec(0.5, 1e-4)
    res = fit(G, y, spec, SolverConfig(init="rls-warm-start", max_iters=500))
    start = objective(solve_rkhs_rls(G, y, 1 / 30), G, y, spec)
    assert res.objective <= start


def test_irls_matches_prox_grad_for_lasso(rng):
    G, y = _instance(rng, 15)
    spec = PenaltySpec(1, 1e-3)
    ir = solve_irls(G, y, spec, SolverConfig(method="irls", tol=1e-10, max_iters=500))
    pg = solve_proximal_gradient(G, y, spec, SolverConfig(tol=1e-12, max_iters=200000))
    assert ir.meta["final_objective"] == pytest.approx(pg.objective, abs=1e-4)
    assert ir.meta["chosen"] in ("irls", "prox-grad")
    assert np.all(np.diff(ir.objective_trace) <= 1e-12)


def test_irls_zero_data_and_half_q(rng):
    G, _ = _instance(rng, 10)
    res = solve_irls(G, np.zeros(10), PenaltySpec(1, 0.1))
    np.testing.assert_array_equal(res.coeffs, 0.0)
    G, y = _instance(rng, 20)
    spec = PenaltySpec(0.5, 1e-3)
    res = fit(G, y, spec, SolverConfig(method="irls", max_iters=200))
    assert objective(res.coeffs, G, y, spec) <= objective(np.zeros(20), G, y, spec)


def test_irls_rejects_large_q(rng):
    G, y = _instance(rng, 5)
    with pytest.raises(ConfigError):
        solve_irls(G, y, PenaltySpec(1.5, 0.1))


def test_closed_form_dispatch_requires_q2(rng):
    G, y = _instance(rng, 5)
    with pytest.raises(ConfigError):
        fit(G, y, PenaltySpec(1, 0.1), SolverConfig(method="closed-form-q2"))


def test_shape_mismatch(rng):
    with pytest.raises(InputError):
        fit(np.eye(3), np.zeros(4), PenaltySpec(1, 0.1))


@pytest.mark.parametrize(
    "kwargs",
    [{"method": "cg"}, {"step_rule": "armijo"}, {"init": "random"}, {"max_iters": 0}, {"tol": 0.0}],
)
def test_solver_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        SolverConfig(**kwargs)


def test_deadline_raises(rng):
    G, y = _instance(rng, 30)
    with pytest.raises(BudgetExceeded):
        fit(G, y, PenaltySpec(0.5, 1e-6), SolverConfig(tol=1e-15, max_iters=10**6),
            deadline=time.monotonic() - 1.0)


def test_shared_factors_give_identical_results(rng):
    G, y = _instance(rng, 25)
    spec = PenaltySpec(1.5, 1e-3)
    cfg = SolverConfig(tol=1e-8, max_iters=2000)
    a = fit(G, y, spec, cfg).coeffs
    b = fit(G, y, spec, cfg, factors=GramFactors(G)).coeffs
    np.testing.assert_array_equal(a, b)


@given(st.integers(0, 10**6), st.sampled_from([0.5, 1.0, 2.0, 4.0]), st.floats(1e-4, 1e-1))
def test_fitted_models_respect_bounds(seed, q, lam):
    rng = np.random.default_rng(seed)
    m = 12
    X = rng.random((m, 1))
    y = rng.uniform(-1, 1, m)
    G = gram_matrix(X, 0.3)
    spec = PenaltySpec(q, lam)
    res = fit(G, y, spec, SolverConfig(max_iters=300, tol=1e-8))
    a = res.coeffs
    assert res.objective <= np.mean(y**2) + 1e-12 <= 1.0 + 1e-12
    assert np.sum(np.abs(a)) <= coefficient_radius(m, lam, q, 1.0) * (1 + 1e-9)
    assert np.sqrt(max(a @ G @ a, 0.0)) <= np.sum(np.abs(a)) + 1e-12
