import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentfair import oracles
from latentfair.errors import InvalidArgumentError, SeparationError
from latentfair.fair import (
    OptimizerConfig,
    fit_fair_logistic,
    fit_fair_ls,
    logistic_loss,
    penalty_gradient,
    penalty_hessian,
    penalty_value,
    predict_linear,
    r2_on_groups,
    residualize,
    sample_covs,
    tradeoff_curve,
)
from latentfair.mixture import EmConfig, fit_gaussian_em
from latentfair.simulate import Scenario, gen_logistic_scenario


def _instance(seed, n=120, K=2, p=3, signal=1.0):
    r = np.random.default_rng(seed)
    A = r.dirichlet(np.full(K, 0.5), size=n)
    X = r.normal(size=(n, p)) + signal * A[:, :1]
    U = residualize(X, A).residuals
    y = 2.0 * A[:, 0] + U @ r.normal(size=p) + 0.5 * r.normal(size=n)
    return y, A, U


def _ols_sse(D, y):
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    r = y - D @ coef
    return coef, float(r @ r)


# residualize -----------------------------------------------------------------


def test_residualize_orthogonal_input_is_centered(rng):
    n = 100
    A = np.repeat(np.eye(2), n // 2, axis=0)
    X = np.tile(np.array([[1.0], [-1.0]]), (n // 2, 1)) + 3.0
    res = residualize(X, A)
    np.testing.assert_allclose(res.residuals, X - X.mean(axis=0), atol=1e-12)


def test_residualize_removes_pure_group_signal(rng):
    A = rng.dirichlet([1, 1, 1], size=50)
    mu = rng.normal(size=(3, 4))
    res = residualize(A @ mu, A)
    np.testing.assert_allclose(res.residuals, 0.0, atol=1e-10)


def test_residualize_reconstruction(rng):
    A = rng.dirichlet([1, 1], size=40)
    X = rng.normal(size=(40, 3))
    res = residualize(X, A)
    np.testing.assert_allclose(res.residuals, X - res.intercept[None, :] - A @ res.coefficients, atol=0)
    np.testing.assert_allclose(res.apply(X, A), res.residuals, atol=1e-14)
    assert any("rank deficient" in w for w in res.warnings)
    np.testing.assert_array_equal(res.coefficients[-1], 0.0)


def test_residualize_needs_rows(rng):
    with pytest.raises(InvalidArgumentError):
        residualize(rng.normal(size=(3, 2)), rng.dirichlet([1, 1], size=3))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(2, 4), p=st.integers(1, 4))
def test_residual_orthogonality(seed, K, p):
    r = np.random.default_rng(seed)
    n = 60
    A = r.dirichlet(np.ones(K), size=n)
    X = r.normal(size=(n, p)) + A @ r.normal(scale=5, size=(K, p))
    U = residualize(X, A).residuals
    Ac = A - A.mean(axis=0)
    Uc = U - U.mean(axis=0)
    num = Uc.T @ Ac
    den = np.outer(np.linalg.norm(Uc, axis=0), np.linalg.norm(Ac, axis=0)) + 1e-300
    assert np.max(np.abs(num / den)) < 1e-8


# sample covariances ------------------------------------------------------------


def test_sample_covs_examples(rng):
    A = np.repeat(np.eye(2), 5, axis=0)
    U = np.column_stack([np.ones(10), rng.normal(size=10)])
    covs = sample_covs(A, U)
    np.testing.assert_allclose(covs.S_A, 0.25 * np.array([[1, -1], [-1, 1]]), atol=1e-15)
    np.testing.assert_allclose(covs.S_U[0], 0.0, atol=1e-15)
    np.testing.assert_allclose(covs.S_U[:, 0], 0.0, atol=1e-15)


def test_sample_covs_textbook(rng):
    U = rng.normal(size=(50, 3))
    S = np.zeros((3, 3))
    m = [sum(U[i, j] for i in range(50)) / 50 for j in range(3)]
    for i in range(50):
        for a in range(3):
            for b in range(3):
                S[a, b] += (U[i, a] - m[a]) * (U[i, b] - m[b]) / 50
    covs = sample_covs(rng.dirichlet([1, 1], size=50), U)
    np.testing.assert_allclose(covs.S_U, S, atol=1e-12)
    assert np.linalg.eigvalsh(covs.S_A).min() > -1e-10


# fair least squares ----------------------------------------------------------------


def test_ls_epsilon_one_is_ols():
    y, A, U = _instance(1)
    fit = fit_fair_ls(y, A, U, 1.0)
    D = np.column_stack([np.ones(len(y)), A[:, :1], U])
    _, sse = _ols_sse(D, y)
    assert fit.sse == pytest.approx(sse, rel=1e-8)
    assert fit.multiplier == 0.0


def test_ls_epsilon_zero_drops_groups():
    y, A, U = _instance(2)
    fit = fit_fair_ls(y, A, U, 0.0)
    assert np.max(np.abs(fit.alpha)) < 1e-10
    coef, sse = _ols_sse(np.column_stack([np.ones(len(y)), U]), y)
    np.testing.assert_allclose(fit.beta, coef[1:], atol=1e-8)
    assert fit.sse == pytest.approx(sse, rel=1e-10)


def test_ls_matches_dual_scan_and_kkt():
    y, A, U = _instance(3)
    fit = fit_fair_ls(y, A, U, 0.1)
    _, sse = oracles.dual_scan_fair_ls(y, A, U, 0.1)
    assert fit.sse == pytest.approx(sse, abs=1e-6)
    assert fit.r2_given_A == pytest.approx(0.1, abs=1e-6)
    # stationarity: gradient of SSE plus t * gradient of the constraint vanishes
    covs = sample_covs(A, U)
    n = len(y)
    Ac, Uc, yc = A - A.mean(0), U - U.mean(0), y - y.mean()
    t = fit.multiplier
    ga = covs.S_A @ fit.alpha - Ac.T @ yc / n + t * 0.9 * covs.S_A @ fit.alpha
    gb = covs.S_U @ fit.beta - Uc.T @ yc / n - t * 0.1 * covs.S_U @ fit.beta
    assert max(np.max(np.abs(ga)), np.max(np.abs(gb))) < 1e-6


def test_ls_inactive_constraint_returns_ols():
    y, A, U = _instance(4, signal=0.0)
    y = U @ np.ones(U.shape[1]) + 0.1 * np.random.default_rng(0).normal(size=len(y))
    fit = fit_fair_ls(y, A, U, 0.5)
    assert fit.multiplier == 0.0
    assert fit.r2_given_A <= 0.5


@pytest.mark.parametrize("eps", [-0.1, 1.1])
def test_ls_epsilon_range(eps):
    y, A, U = _instance(5)
    with pytest.raises(InvalidArgumentError):
        fit_fair_ls(y, A, U, eps)


def test_ls_singular_su_gets_jitter():
    y, A, U = _instance(6)
    U = np.column_stack([U, U[:, 0]])
    fit = fit_fair_ls(y, A, U, 0.2)
    assert any("jitter" in w for w in fit.warnings)
    assert np.isfinite(fit.sse)


def test_ls_sse_recomputes():
    y, A, U = _instance(7)
    fit = fit_fair_ls(y, A, U, 0.3)
    pred = np.array([predict_linear(fit, A[i], U[i]) for i in range(len(y))])
    assert np.sum((y - pred) ** 2) == pytest.approx(fit.sse, rel=1e-9)
    np.testing.assert_allclose(fit.predict(A, U), pred, rtol=1e-12)


def test_predict_linear_trivial():
    y, A, U = _instance(8)
    fit = fit_fair_ls(y, A, U, 0.0)
    assert predict_linear(fit, A[0], np.zeros(U.shape[1])) == pytest.approx(fit.beta0)
    assert predict_linear(fit, A[0], U[0]) == pytest.approx(predict_linear(fit, A[1], U[0]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), e1=st.floats(0, 1), e2=st.floats(0, 1))
def test_ls_feasibility_and_monotone(seed, e1, e2):
    lo, hi = sorted((e1, e2))
    y, A, U = _instance(seed, n=60)
    f_lo, f_hi = fit_fair_ls(y, A, U, lo), fit_fair_ls(y, A, U, hi)
    assert f_lo.sse >= f_hi.sse - 1e-8 * max(1.0, f_hi.sse)
    for f, eps in ((f_lo, lo), (f_hi, hi)):
        assert f.r2_given_A <= eps + 1e-6
        if np.isfinite(f.multiplier) and f.multiplier > 0:
            assert abs(f.r2_given_A - eps) < 1e-6


def test_r2_on_groups_constant_prediction(rng):
    assert r2_on_groups(np.ones(10), rng.dirichlet([1, 1], size=10)) == 0.0


# penalty ---------------------------------------------------------------------------


def _aug(A, U):
    return np.column_stack([np.ones(len(A)), A, U])


def test_penalty_constant_cases(rng):
    A = rng.dirichlet([1, 1, 1], size=30)
    assert penalty_value(A, np.full(30, 0.4), 1e-6) == pytest.approx(1e-3, rel=1e-10)
    assert penalty_value(np.tile([0.2, 0.8], (30, 1)), rng.random(30), 1e-6) == pytest.approx(1e-3, rel=1e-10)


def test_penalty_matches_naive(rng):
    A = rng.dirichlet([1, 1, 1], size=40)
    pi = rng.random(40)
    assert penalty_value(A, pi, 1e-8) == pytest.approx(oracles.naive_penalty(A, pi, 1e-8), abs=1e-12)


def _penalty_fd_points(rng, count=20):
    for _ in range(count):
        n, K, p = 50, 3, 2
        A = rng.dirichlet(np.ones(K), size=n)
        U = rng.normal(size=(n, p))
        yield A, _aug(A, U), rng.normal(scale=0.7, size=1 + K + p)


def test_penalty_gradient_finite_differences(rng):
    for A, X, c in _penalty_fd_points(rng):
        g = penalty_gradient(A, X, c, 1e-8)
        fd = oracles.finite_diff_gradient(lambda v: penalty_value(A, 1 / (1 + np.exp(-X @ v)), 1e-8), c)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5


def test_penalty_hessian_finite_differences(rng):
    for A, X, c in _penalty_fd_points(rng, 10):
        H = penalty_hessian(A, X, c, 1e-8)
        fd = np.column_stack(
            [oracles.finite_diff_gradient(lambda v: penalty_gradient(A, X, v, 1e-8)[j], c, h=1e-5) for j in range(len(c))]
        )
        assert np.linalg.norm(H - fd) / np.linalg.norm(fd) < 1e-5


def test_logistic_gradient_finite_differences(rng):
    for A, X, c in _penalty_fd_points(rng):
        y = (rng.random(len(A)) < 0.5).astype(float)
        _, g = logistic_loss(y, X, c)
        fd = oracles.finite_diff_gradient(lambda v: logistic_loss(y, X, v)[0], c)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5


def test_penalty_gradient_scales_linearly(rng):
    A, X, c = next(_penalty_fd_points(rng, 1))
    g = penalty_gradient(A, X, c, 1e-8)
    fd = oracles.finite_diff_gradient(lambda v: 3.5 * penalty_value(A, 1 / (1 + np.exp(-X @ v)), 1e-8), c)
    np.testing.assert_allclose(3.5 * g, fd, rtol=1e-5)


def test_penalty_gradient_at_zero_balanced(rng):
    # at coefs = 0, pi is constant; moving only the intercept keeps it constant
    n = 40
    A = np.repeat(np.eye(2), n // 2, axis=0)
    X = _aug(A, rng.normal(size=(n, 2)))
    g = penalty_gradient(A, X, np.zeros(5), 1e-8)
    assert abs(g[0]) < 1e-12
    e = np.zeros(5)
    e[0] = 1.0
    fd = (penalty_value(A, 1 / (1 + np.exp(-X @ (1e-6 * e))), 1e-8) - penalty_value(A, 1 / (1 + np.exp(X @ (1e-6 * e))), 1e-8)) / 2e-6
    assert abs(fd) < 1e-8


# penalized logistic ------------------------------------------------------------------


def _logistic_instance(seed, n=300):
    r = np.random.default_rng(seed)
    A = r.dirichlet([0.5, 0.5], size=n)
    U = residualize(r.normal(size=(n, 2)) + A[:, :1], A).residuals
    eta = -0.3 + 1.5 * A[:, 0] + U @ [1.0, -0.7]
    y = (r.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return y, A, U


def test_logistic_lambda_zero_matches_irls():
    y, A, U = _logistic_instance(1)
    fit = fit_fair_logistic(y, A, U, 0.0)
    ref = oracles.irls_logistic(np.column_stack([np.ones(len(y)), A[:, :1], U]), y)
    np.testing.assert_allclose(np.r_[fit.beta0, fit.alpha[:1], fit.beta], ref, atol=1e-5)
    assert fit.alpha[1] == 0.0 and fit.converged and fit.grad_norm < 1e-6


def test_logistic_objective_recomputes():
    y, A, U = _logistic_instance(2)
    fit = fit_fair_logistic(y, A, U, 2.0)
    eta = fit.decision_function(A, U)
    loss = np.sum(np.logaddexp(0, eta) - y * eta)
    C = penalty_value(A, fit.predict_proba(A, U), fit.delta)
    assert fit.objective == pytest.approx(loss + 2.0 * C, rel=1e-9)
    assert fit.penalty_value >= np.sqrt(fit.delta)


def test_logistic_constant_response():
    y, A, U = _logistic_instance(3)
    fit = fit_fair_logistic(np.zeros_like(y), A, U, 0.0)
    assert np.all(fit.predict_proba(A, U) < 1e-9)
    np.testing.assert_allclose(fit.beta, 0.0)
    assert fit.converged


def test_logistic_large_lambda_removes_dependence():
    scn = Scenario("logistic", {"mu": 6.0}, seed=3)
    A, Z, y = gen_logistic_scenario(scn, 0)
    post = fit_gaussian_em(Z[:, :2], 2, EmConfig(seed=1)).posterior
    U = residualize(Z[:, [0, 1, 4, 5, 6]], post).residuals
    f0 = fit_fair_logistic(y, post, U, 0.0)
    f1 = fit_fair_logistic(y, post, U, 1e3)
    assert f1.converged
    assert f1.penalty_value - np.sqrt(f1.delta) < 1e-5
    assert np.mean(f1.predict(post, U) != y) > np.mean(f0.predict(post, U) != y)


def test_logistic_separation():
    x = np.linspace(-2, 2, 40)
    y = (x > 0).astype(float)
    A = np.random.default_rng(0).dirichlet([1, 1], size=40)
    with pytest.raises(SeparationError):
        fit_fair_logistic(y, A, x[:, None], 0.0)


def test_logistic_input_checks():
    y, A, U = _logistic_instance(4, n=50)
    with pytest.raises(InvalidArgumentError):
        fit_fair_logistic(y + 0.5, A, U)
    with pytest.raises(InvalidArgumentError):
        fit_fair_logistic(y, A, U, lam=-1.0)
    with pytest.raises(InvalidArgumentError):
        fit_fair_logistic(y, A, U, delta=0.0)
    with pytest.raises(InvalidArgumentError):
        OptimizerConfig(method="sgd")


def test_logistic_adam_option_agrees_at_lambda_zero():
    y, A, U = _logistic_instance(5, n=200)
    newton = fit_fair_logistic(y, A, U, 0.0)
    adam = fit_fair_logistic(y, A, U, 0.0, opt=OptimizerConfig(method="adam", step=0.05, max_iter=20_000))
    assert adam.converged
    np.testing.assert_allclose(adam.beta, newton.beta, atol=1e-4)


def test_logistic_nonconvergence_flag():
    y, A, U = _logistic_instance(6, n=200)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_fair_logistic(y, A, U, 1.0, opt=OptimizerConfig(method="adam", max_iter=5))
    assert not fit.converged and fit.n_iter == 5
    assert any("grad_tol" in w for w in fit.warnings)


def test_logistic_monotone_in_lambda():
    y, A, U = _logistic_instance(7, n=400)
    fits = [fit_fair_logistic(y, A, U, lam) for lam in (0, 0.1, 1, 3, 5, 10)]
    conv = [f for f in fits if f.converged]
    assert len(conv) == 6
    for a, b in zip(conv, conv[1:]):
        assert b.penalty_value <= a.penalty_value + 1e-6
        assert b.logit_loss >= a.logit_loss - 1e-6


def test_logistic_json():
    y, A, U = _logistic_instance(8, n=80)
    d = fit_fair_logistic(y, A, U, 1.0).to_json()
    assert d["task"] == "classification" and d["tuning"]["lambda"] == 1.0
    assert set(d["diagnostics"]) >= {"objective", "penalty_value", "grad_norm"}


# trade-off curve -----------------------------------------------------------------------


def test_tradeoff_single_point_is_single_fit():
    y, A, U = _instance(9)
    curve = tradeoff_curve(y, A, U, [0.2], task="regression")
    fit = fit_fair_ls(y, A, U, 0.2)
    assert curve.points[0].fit.sse == fit.sse
    assert curve.points[0].loss == pytest.approx(fit.sse / np.sum((y - y.mean()) ** 2))


def test_tradeoff_regression_shape():
    y, A, U = _instance(10)
    curve = tradeoff_curve(y, A, U, np.linspace(0, 1, 11), task="regression")
    loss = [p.loss for p in curve.points]
    assert all(a >= b - 1e-12 for a, b in zip(loss, loss[1:]))
    assert curve.monotone


def test_tradeoff_classification_grid():
    y, A, U = _logistic_instance(11)
    curve = tradeoff_curve(y, A, U, [0, 0.1, 1, 3, 5, 10], task="classification")
    assert [p.tuning for p in curve.points] == [0, 0.1, 1, 3, 5, 10]
    assert curve.monotone
    assert all(p.error is None for p in curve.points)


def test_tradeoff_keeps_going_after_failure():
    x = np.linspace(-2, 2, 40)
    y = (x > 0).astype(float)
    A = np.random.default_rng(0).dirichlet([1, 1], size=40)
    curve = tradeoff_curve(y, A, x[:, None], [0.0, 1.0], task="classification")
    assert "SeparationError" in curve.points[0].error
    assert len(curve.points) == 2


def test_tradeoff_grid_checks():
    y, A, U = _instance(12)
    with pytest.raises(InvalidArgumentError):
        tradeoff_curve(y, A, U, [], task="regression")
    with pytest.raises(InvalidArgumentError):
        tradeoff_curve(y, A, U, [0.5, 0.1], task="regression")
