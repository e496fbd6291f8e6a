import math

import numpy as np
import pytest
from scipy import linalg
from scipy import stats as sps

from speedbias import ssm, temporal
from speedbias._ssm_py import stationary_cov, transition
from speedbias.temporal import MaternHyper, TimeSeries

BACKENDS = ["python"] + (["compiled"] if ssm.HAVE_COMPILED else [])


def companion(lam):
    return np.array([[0, 1, 0], [0, 0, 1], [-lam**3, -3 * lam**2, -3 * lam]], dtype=float)


def random_series(rng, n, dup=False):
    t = np.sort(rng.uniform(0, 100, n))
    if dup and n > 3:
        t[1] = t[0]
        t[-1] = t[-2]
    y = rng.normal(50, 5, n)
    return TimeSeries(t, y, center=float(y.mean()))


# --- kernel and state-space pieces -----------------------------------------


def test_matern_examples():
    h = MaternHyper(2.0, 3.0, 0.1)
    assert temporal.matern52(0.0, h) == 2.0
    assert temporal.matern52(3.0 / math.sqrt(5), h) == pytest.approx(2.0 * 7 / 3 * math.exp(-1))
    d = np.linspace(0, 60, 400)
    k = temporal.matern52(d, h)
    assert np.all(np.diff(k) < 0) and k[-1] < 1e-10


def test_matern_against_scipy_bessel():
    # general Matern with nu = 5/2 via the modified Bessel function
    from scipy.special import gamma as G, kv

    h = MaternHyper(1.5, 7.0, 0.0)
    nu = 2.5
    for d in (0.3, 2.0, 9.0, 30.0):
        a = math.sqrt(2 * nu) * d / h.gamma
        ref = h.sigma2 * 2 ** (1 - nu) / G(nu) * a**nu * kv(nu, a)
        assert temporal.matern52(d, h) == pytest.approx(ref, rel=1e-10)


def test_stationary_cov_solves_lyapunov():
    for lam in (0.05, 0.7, 4.0):
        F = companion(lam)
        L = np.array([0, 0, 1.0])
        P = stationary_cov(lam)
        # F P + P F' + q L L' = 0 with q fixed by P[0,0] = 1
        M = F @ P + P @ F.T
        q = -M[2, 2]
        assert np.allclose(M + q * np.outer(L, L), 0, atol=1e-10 * max(1, lam**5))
        # the covariance of f and its derivatives matches the kernel derivatives at 0
        assert P[0, 0] == 1.0 and P[1, 1] == pytest.approx(lam**2 / 3)


@pytest.mark.parametrize("lam", [0.01, 0.3, 2.0, 15.0])
def test_transition_matches_expm(lam):
    for dt in (0.0, 1e-6, 0.1, 1.0, 7.5, 50.0):
        G, W = transition(dt, lam)
        ref = linalg.expm(companion(lam) * dt)
        assert np.abs(G - ref).max() <= 1e-12 * max(1.0, np.abs(ref).max())


def test_process_noise_psd():
    for lam in (0.05, 1.0, 10.0):
        for dt in np.concatenate([[0.0], np.logspace(-4, 3, 60)]):
            _, W = transition(dt, lam)
            assert np.allclose(W, W.T)
            assert np.linalg.eigvalsh(W).min() >= -1e-10 * max(1.0, lam**4)


def test_gram_positive_definite(rng):
    for n in (10, 100, 500):
        t = np.unique(rng.uniform(0, 200, n))
        R = temporal._corr(t, t, rng.uniform(0.5, 20))
        assert np.linalg.eigvalsh(R).min() > -1e-10


# --- likelihood ------------------------------------------------------------


def test_dense_scalar_case():
    ts = TimeSeries(np.array([3.0]), np.array([2.0]))
    h = MaternHyper(1.0, 5.0, 0.3)
    p = temporal.dense_loglik(ts, h)
    assert p.S2 == pytest.approx(4.0 / 1.3)
    for b in BACKENDS:
        assert temporal.ssm_loglik(ts, h, backend=b).loglik == pytest.approx(p.loglik, rel=1e-14)


def test_dense_far_apart_matches_independent():
    ts = TimeSeries(np.array([0.0, 1e6]), np.array([1.0, -2.0]))
    h = MaternHyper(1.0, 1.0, 0.5)
    p = temporal.dense_loglik(ts, h)
    s2 = (1 + 4) / 1.5 / 2
    ref = sps.norm.logpdf([1.0, -2.0], 0, math.sqrt(s2 * 1.5)).sum()
    assert p.loglik == pytest.approx(ref, abs=1e-10)


def test_dense_matches_scipy_mvn(rng):
    ts = random_series(rng, 40)
    h = MaternHyper(1.0, 8.0, 0.2)
    p = temporal.dense_loglik(ts, h)
    cov = p.sigma2 * (temporal._corr(ts.t, ts.t, 8.0) + 0.2 * np.eye(40))
    assert p.loglik == pytest.approx(sps.multivariate_normal(np.zeros(40), cov).logpdf(ts.centered), rel=1e-10)


@pytest.mark.parametrize("backend", BACKENDS)
def test_ssm_equals_dense(rng, backend):
    for n in (10, 50, 200, 500):
        for _ in range(3):
            ts = random_series(rng, n, dup=True)
            h = MaternHyper(1.0, float(np.exp(rng.uniform(-1, 4))), float(np.exp(rng.uniform(-5, 1))))
            a = temporal.ssm_loglik(ts, h, backend=backend).loglik
            b = temporal.dense_loglik(ts, h).loglik
            assert abs(a - b) / abs(b) <= 1e-6


def test_backends_agree(rng):
    if not ssm.HAVE_COMPILED:
        pytest.skip("compiled extension not built")
    ts = random_series(rng, 3000, dup=True)
    lam, eta = 0.4, 0.3
    for f in ("loglik_terms", "innovations"):
        a = getattr(ssm, f)(ts.t, ts.centered, lam, eta, backend="python")
        b = getattr(ssm, f)(ts.t, ts.centered, lam, eta, backend="compiled")
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)
    obs = (rng.uniform(size=ts.n) > 0.2).astype(np.uint8)
    a = ssm.smooth(ts.t, ts.centered, obs, lam, eta, backend="python")
    b = ssm.smooth(ts.t, ts.centered, obs, lam, eta, backend="compiled")
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-12)
    z = rng.normal(size=(ts.n, 3))
    np.testing.assert_allclose(
        ssm.simulate(ts.t, lam, z, backend="python"), ssm.simulate(ts.t, lam, z, backend="compiled"), atol=1e-10
    )


def test_backend_selection(monkeypatch):
    assert ssm.get_backend("python").__name__.endswith("_ssm_py")
    with pytest.raises(ValueError):
        ssm.get_backend("fortran")
    monkeypatch.setenv("SPEEDBIAS_PURE_PYTHON", "1")
    assert ssm.get_backend().__name__.endswith("_ssm_py")


def test_dense_size_guard():
    ts = TimeSeries(np.arange(3001.0), np.zeros(3001))
    with pytest.raises(ValueError):
        temporal.dense_loglik(ts, MaternHyper(1, 1, 1))


# --- prediction ------------------------------------------------------------


@pytest.mark.parametrize("backend", BACKENDS)
def test_prediction_matches_dense(rng, backend):
    ts = random_series(rng, 300, dup=True)
    h = MaternHyper(4.0, 6.0, 0.15)
    grid = np.concatenate([rng.uniform(-10, 110, 48), ts.t[[5, 6]]])
    p = temporal.predict_gp(h, ts, grid, backend=backend)
    q = temporal.dense_predict(ts, h, grid)
    np.testing.assert_allclose(p.mean, q.mean, rtol=1e-6)
    np.testing.assert_allclose(p.var, q.var, rtol=1e-6, atol=1e-8)
    np.testing.assert_array_equal(p.extrapolated, (grid < ts.t[0]) | (grid > ts.t[-1]))


def test_noiseless_interpolation(rng):
    t = np.sort(rng.uniform(0, 50, 30))
    y = rng.normal(size=30)
    ts = TimeSeries(t, y, center=0.2)
    h = MaternHyper(1.0, 4.0, 0.0)
    p = temporal.predict_gp(h, ts, t[[3, 17]])
    np.testing.assert_allclose(p.mean, y[[3, 17]], atol=1e-6)
    assert np.all(p.var <= 1e-6)


def test_reversion_far_from_data(rng):
    ts = random_series(rng, 50)
    h = MaternHyper(3.0, 2.0, 0.4)
    p = temporal.predict_gp(h, ts, [1e5])
    assert p.mean[0] == pytest.approx(ts.center)
    assert p.var[0] == pytest.approx(3.0 * 1.4)
    assert p.extrapolated[0]


def test_innovations_white(rng):
    h = MaternHyper(1.0, 5.0, 0.3)
    from speedbias.synth import simulate_gp_path

    t = np.sort(rng.uniform(0, 500, 4000))
    y = simulate_gp_path(h, t, seed=2)
    e = temporal.standardized_innovations(TimeSeries(t, y), h)
    r1 = np.corrcoef(e[:-1], e[1:])[0, 1]
    assert abs(r1) <= 3 / math.sqrt(t.size)
    assert e.var() == pytest.approx(1.0, abs=0.1)


# --- linear trend ----------------------------------------------------------


def test_linear_examples():
    f = temporal.fit_linear_trend(TimeSeries(np.array([0.0, 1, 2]), np.array([0.0, 1, 2])))
    assert f.beta1 == pytest.approx(1.0) and f.beta0 == pytest.approx(0.0, abs=1e-12)
    assert f.sigma2 == pytest.approx(0.0, abs=1e-20)
    g = temporal.fit_linear_trend(TimeSeries(np.array([0.0, 1, 2, 5]), np.full(4, 3.0)))
    assert g.beta1 == 0.0
    with pytest.raises(ValueError):
        temporal.fit_linear_trend(TimeSeries(np.ones(5), np.arange(5.0)))


def test_linear_closed_form_and_scipy(rng):
    t = np.sort(rng.uniform(0, 500, 1000))
    y = 3 + 0.02 * t + rng.normal(0, 4, 1000)
    f = temporal.fit_linear_trend(TimeSeries(t, y))
    closed = np.sum((t - t.mean()) * (y - y.mean())) / np.sum((t - t.mean()) ** 2)
    assert abs(f.beta1 - closed) <= 1e-10
    ref = sps.linregress(t, y)
    assert f.se1 == pytest.approx(ref.stderr, rel=1e-10)


# --- GP fit ----------------------------------------------------------------


def test_fit_gp_needs_distinct_times():
    with pytest.raises(ValueError):
        temporal.fit_gp(TimeSeries(np.repeat(np.arange(5.0), 3), np.arange(15.0)))


def test_fit_gp_white_noise(rng):
    t = np.sort(rng.uniform(0, 580, 1500))
    y = 100 + rng.normal(0, 30, 1500)
    fit = temporal.fit_gp(TimeSeries(t, y), grid=np.linspace(0, 580, 30))
    assert fit.hyper.eta >= 10
    assert np.ptp(fit.pred_mean) < 5 and abs(fit.pred_mean.mean() - y.mean()) < 3
    assert fit.center == pytest.approx(y.mean())


def test_fit_gp_with_duplicates_and_bounds(rng):
    t = np.sort(np.repeat(rng.uniform(0, 100, 200), 2))
    y = 10 * np.sin(t / 10) + rng.normal(0, 1, t.size)
    ts = TimeSeries(t, y)
    fit = temporal.fit_gp(ts)
    lo, hi = temporal.gamma_bounds(ts)
    assert lo * (1 - 1e-9) <= fit.hyper.gamma <= hi * (1 + 1e-9)
    assert temporal.ETA_BOUNDS[0] * (1 - 1e-9) <= fit.hyper.eta <= temporal.ETA_BOUNDS[1] * (1 + 1e-9)
    centred = TimeSeries(t, y, center=float(y.mean()))
    assert fit.loglik == pytest.approx(temporal.dense_loglik(centred, MaternHyper(1, fit.hyper.gamma, fit.hyper.eta)).loglik, rel=1e-8)
    assert set(fit.meta()) == {"sigma2", "gamma", "eta", "loglik", "converged", "n"}


def test_fit_gp_budget_flag(rng):
    t = np.sort(rng.uniform(0, 100, 300))
    fit = temporal.fit_gp(TimeSeries(t, np.sin(t / 7) + rng.normal(0, 0.3, 300)), max_iter=3)
    assert fit.converged is False


def test_trend_report_identity_and_rows(rng):
    t = np.sort(rng.uniform(0, 60, 400))
    ts = TimeSeries(t, 20 + 0.3 * t + rng.normal(0, 2, 400))
    rep = temporal.trend_report(ts, ts)
    s = rep.slopes()
    assert s["original"]["beta1"] == s["resampled"]["beta1"] > 0
    rows = list(rep.rows())
    assert {r[1] for r in rows} == {"original", "resampled"} and {r[2] for r in rows} == {"linear", "gp"}
    assert all(r[4] <= r[3] <= r[5] for r in rows)
    np.testing.assert_array_equal(rep.grid, np.arange(0.0, 61.0))


def test_integral_process_noise():
    from speedbias._ssm_py import process_noise

    for lam in (0.05, 0.4, 3.0):
        for dt in (0.2, 1.0, 10.0, 500.0):
            _, W = transition(dt, lam)
            assert np.abs(process_noise(dt, lam) - W).max() <= 1e-12 * max(1.0, lam**4)
        # tiny steps: the subtraction form loses the small eigenvalues, the integral keeps them
        for dt in (1e-6, 1e-4, 1e-2):
            W = process_noise(dt, lam)
            assert np.linalg.eigvalsh(W).min() > 0
            if lam * dt < 1e-4:
                assert W[0, 0] == pytest.approx(16 * lam**5 / 3 * dt**5 / 20, rel=1e-3)
