"""Temporal trends: OLS slope and a Matern-5/2 Gaussian process.

The GP log-likelihood and predictions are computed exactly in O(n) by
Kalman filtering / RTS smoothing of the equivalent three-dimensional state
space model (see :mod:`speedbias.ssm`). ``dense_loglik`` and
``dense_predict`` are the O(n^3) references used to check them.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import linalg, optimize

from . import ssm, stats
from .data import Dataset

log = logging.getLogger(__name__)

SQRT5 = math.sqrt(5.0)
DENSE_MAX_N = 3000
ETA_BOUNDS = (1e-6, 1e3)


@dataclass(frozen=True)
class TimeSeries:
    """Speeds ``y`` at times ``t`` (days), sorted by time; ties allowed."""

    t: np.ndarray
    y: np.ndarray
    center: float = 0.0
    source: str = "original"

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if t.shape != y.shape or t.ndim != 1:
            raise ValueError("t and y must be 1-d arrays of equal length")
        if not (np.isfinite(t).all() and np.isfinite(y).all()):
            raise ValueError("t and y must be finite")
        if np.any(np.diff(t) < 0):
            raise ValueError("t must be sorted non-decreasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.t.size

    @property
    def centered(self) -> np.ndarray:
        return self.y - self.center

    @classmethod
    def from_arrays(cls, t, y, source="original") -> TimeSeries:
        t = np.asarray(t, dtype=float)
        order = np.argsort(t, kind="stable")
        return cls(t[order], np.asarray(y, dtype=float)[order], source=source)

    @classmethod
    def from_dataset(cls, d: Dataset, aggregate: str = "raw") -> TimeSeries:
        """Pool all measurements; ``aggregate="daily"`` averages within calendar days.

        Daily averages are placed at the middle of each day.
        """
        ts = cls.from_arrays(d.all_times(), d.all_values(), source=d.source)
        if aggregate == "raw":
            return ts
        if aggregate != "daily":
            raise ValueError(f"unknown aggregation {aggregate!r}")
        day = np.floor(ts.t)
        days, inverse = np.unique(day, return_inverse=True)
        sums = np.bincount(inverse, weights=ts.y)
        counts = np.bincount(inverse)
        return cls(days + 0.5, sums / counts, source=d.source)


# ---------------------------------------------------------------------------
# linear trend


@dataclass(frozen=True)
class LinearTrendFit:
    beta0: float
    beta1: float
    se1: float
    ci95: tuple[float, float]
    sigma2: float
    n: int
    source: str = "original"

    def predict(self, t) -> np.ndarray:
        return self.beta0 + self.beta1 * np.asarray(t, dtype=float)


def fit_linear_trend(ts: TimeSeries) -> LinearTrendFit:
    """OLS of speed on time; slope interval uses the normal 97.5% quantile."""
    if ts.n < 2 or np.all(ts.t == ts.t[0]):
        raise ValueError("linear trend needs at least 2 distinct time points")
    tbar, ybar = ts.t.mean(), ts.y.mean()
    dt = ts.t - tbar
    sxx = float(dt @ dt)
    beta1 = float(dt @ (ts.y - ybar)) / sxx
    beta0 = ybar - beta1 * tbar
    resid = ts.y - beta0 - beta1 * ts.t
    sigma2 = float(resid @ resid) / (ts.n - 2) if ts.n > 2 else math.nan
    se1 = math.sqrt(sigma2 / sxx) if ts.n > 2 else math.nan
    half = stats.Z975 * se1
    return LinearTrendFit(beta0, beta1, se1, (beta1 - half, beta1 + half), sigma2, ts.n, ts.source)


# ---------------------------------------------------------------------------
# Matern-5/2 GP


@dataclass(frozen=True)
class MaternHyper:
    """Matern kernel parameters: variance, range (days) and nugget ratio."""

    sigma2: float
    gamma: float
    eta: float
    nu: float = 2.5

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.eta >= 0:
            raise ValueError("eta must be non-negative")
        if self.nu != 2.5:
            raise NotImplementedError("only nu = 5/2 is implemented")

    @property
    def lam(self) -> float:
        return SQRT5 / self.gamma


def matern52(d, hyper: MaternHyper):
    """sigma2 (1 + sqrt5 d/gamma + 5 d^2 / (3 gamma^2)) exp(-sqrt5 d/gamma)."""
    r = SQRT5 * np.abs(np.asarray(d, dtype=float)) / hyper.gamma
    return hyper.sigma2 * (1.0 + r + r * r / 3.0) * np.exp(-r)


def _corr(a, b, gamma):
    r = SQRT5 * np.abs(a[:, None] - b[None, :]) / gamma
    return (1.0 + r + r * r / 3.0) * np.exp(-r)


class ProfileLik(NamedTuple):
    loglik: float
    sigma2: float
    S2: float
    logdet: float


def _profile(S2: float, logdet: float, n: int) -> ProfileLik:
    # log-likelihood at sigma2 = S2 / n, constants included
    sigma2 = S2 / n
    ll = -0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi * sigma2) - 0.5 * n
    return ProfileLik(ll, sigma2, S2, logdet)


def dense_loglik(ts: TimeSeries, hyper: MaternHyper) -> ProfileLik:
    """Profile log-likelihood of (gamma, eta) from the full n x n correlation matrix."""
    if ts.n > DENSE_MAX_N:
        raise ValueError(f"dense likelihood limited to n <= {DENSE_MAX_N}, got {ts.n}")
    R = _corr(ts.t, ts.t, hyper.gamma) + hyper.eta * np.eye(ts.n)
    try:
        c, lower = linalg.cho_factor(R, lower=True)
    except linalg.LinAlgError as exc:
        pivots = np.linalg.eigvalsh(R)
        raise linalg.LinAlgError(
            f"correlation matrix not positive definite (smallest eigenvalue {pivots[0]:.3e})"
        ) from exc
    y = ts.centered
    alpha = linalg.cho_solve((c, lower), y)
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    return _profile(float(y @ alpha), logdet, ts.n)


def ssm_loglik(ts: TimeSeries, hyper: MaternHyper, backend: str | None = None) -> ProfileLik:
    """Same quantity as :func:`dense_loglik`, by forward Kalman filtering in O(n)."""
    if ts.n == 0:
        raise ValueError("empty time series")
    S2, logdet = ssm.loglik_terms(ts.t, ts.centered, hyper.lam, hyper.eta, backend=backend)
    return _profile(S2, logdet, ts.n)


class Prediction(NamedTuple):
    mean: np.ndarray
    var: np.ndarray
    extrapolated: np.ndarray

    def band(self, z: float = stats.Z975):
        half = z * np.sqrt(self.var)
        return self.mean - half, self.mean + half


def dense_predict(ts: TimeSeries, hyper: MaternHyper, grid) -> Prediction:
    """Predictive mean and variance of y(t) by direct solves against R + eta I."""
    grid = np.asarray(grid, dtype=float)
    R = _corr(ts.t, ts.t, hyper.gamma) + hyper.eta * np.eye(ts.n)
    c = linalg.cho_factor(R, lower=True)
    r = _corr(grid, ts.t, hyper.gamma)
    mean = r @ linalg.cho_solve(c, ts.centered) + ts.center
    K = 1.0 + hyper.eta - np.einsum("ij,ji->i", r, linalg.cho_solve(c, r.T))
    return Prediction(mean, hyper.sigma2 * K, _outside(ts, grid))


def _outside(ts, grid):
    if ts.n == 0:
        return np.ones(grid.shape, dtype=bool)
    return (grid < ts.t[0]) | (grid > ts.t[-1])


@dataclass(frozen=True)
class GpTrendFit:
    hyper: MaternHyper
    loglik: float
    converged: bool
    n: int
    center: float
    source: str = "original"
    evaluations: int = 0
    pred_t: np.ndarray = field(default_factory=lambda: np.empty(0))
    pred_mean: np.ndarray = field(default_factory=lambda: np.empty(0))
    pred_var: np.ndarray = field(default_factory=lambda: np.empty(0))

    def meta(self) -> dict:
        return {
            "sigma2": self.hyper.sigma2,
            "gamma": self.hyper.gamma,
            "eta": self.hyper.eta,
            "loglik": self.loglik,
            "converged": self.converged,
            "n": self.n,
        }


def predict_gp(fit, ts: TimeSeries, grid, backend: str | None = None) -> Prediction:
    """Predictive distribution of y(t) on ``grid`` in O(n + len(grid)).

    ``fit`` is a :class:`GpTrendFit` (its centring is applied to ``ts``) or a
    bare :class:`MaternHyper` (``ts.center`` is used as is). Grid times are
    merged into the observation sequence as missing values, filtered forward
    and smoothed backward. The variance includes the nugget,
    sigma2 (K(t,t) + eta - r' R~^-1 r).
    """
    if isinstance(fit, GpTrendFit):
        hyper = fit.hyper
        ts = replace(ts, center=fit.center)
    else:
        hyper = fit
    grid = np.asarray(grid, dtype=float)
    t_all = np.concatenate([ts.t, grid])
    y_all = np.concatenate([ts.centered, np.zeros(grid.size)])
    observed = np.concatenate([np.ones(ts.n, dtype=np.uint8), np.zeros(grid.size, dtype=np.uint8)])
    order = np.argsort(t_all, kind="stable")
    mean, var = ssm.smooth(t_all[order], y_all[order], observed[order], hyper.lam, hyper.eta, backend)
    where = np.empty_like(order)
    where[order] = np.arange(order.size)
    idx = where[ts.n :]
    f_var = np.maximum(var[idx], 0.0)
    extrapolated = _outside(ts, grid)
    if extrapolated.any():
        log.info("%d prediction times lie outside the observed range", int(extrapolated.sum()))
    return Prediction(
        mean[idx] + ts.center, hyper.sigma2 * (f_var + hyper.eta), extrapolated
    )


def gamma_bounds(ts: TimeSeries) -> tuple[float, float]:
    """Search range for the lengthscale: smallest positive gap to 10x the time span."""
    gaps = np.diff(np.unique(ts.t))
    span = ts.t[-1] - ts.t[0]
    return float(gaps.min()), float(10.0 * span)


def fit_gp(
    ts: TimeSeries,
    grid=None,
    backend: str | None = None,
    max_iter: int = 400,
) -> GpTrendFit:
    """Maximum-likelihood Matern-5/2 fit with sigma2 profiled out.

    ``y`` is centred on its mean first. The search runs over
    (log gamma, log eta) within :func:`gamma_bounds` and :data:`ETA_BOUNDS`:
    a 3 x 3 starting grid, then bounded Nelder-Mead from the best start. If
    the optimiser hits its budget the best point found is returned with
    ``converged=False``.
    """
    distinct = np.unique(ts.t).size
    if distinct < 10:
        raise ValueError(f"GP fit needs at least 10 distinct time points, got {distinct}")
    ts = replace(ts, center=float(ts.y.mean()))
    lo_g, hi_g = gamma_bounds(ts)
    bounds = [(math.log(lo_g), math.log(hi_g)), tuple(math.log(b) for b in ETA_BOUNDS)]
    S2_tol = 1e-300
    evals = 0

    def negll(theta):
        nonlocal evals
        evals += 1
        gamma, eta = math.exp(theta[0]), math.exp(theta[1])
        S2, logdet = ssm.loglik_terms(ts.t, ts.centered, SQRT5 / gamma, eta, backend=backend)
        if not (S2 > S2_tol and math.isfinite(logdet)):
            return math.inf
        return -_profile(S2, logdet, ts.n).loglik

    span = ts.t[-1] - ts.t[0]
    starts = [
        (math.log(min(max(g, lo_g), hi_g)), math.log(e))
        for g in (span / 100, span / 10, span)
        for e in (1e-3, 1e-1, 1.0)
    ]
    values = [negll(s) for s in starts]
    x0 = np.array(starts[int(np.argmin(values))])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = optimize.minimize(
            negll,
            x0,
            method="Nelder-Mead",
            bounds=bounds,
            options={"maxiter": max_iter, "xatol": 1e-6, "fatol": 1e-8},
        )
    converged = bool(res.success)
    if not converged:
        log.warning("GP hyperparameter search stopped early: %s", res.message)
    gamma, eta = math.exp(res.x[0]), math.exp(res.x[1])
    prof = ssm_loglik(ts, MaternHyper(1.0, gamma, eta), backend=backend)
    hyper = MaternHyper(prof.sigma2, gamma, eta)
    fit = GpTrendFit(hyper, prof.loglik, converged, ts.n, ts.center, ts.source, evals)
    if grid is not None:
        pred = predict_gp(hyper, ts, grid, backend=backend)
        fit = replace(
            fit, pred_t=np.asarray(grid, dtype=float), pred_mean=pred.mean, pred_var=pred.var
        )
    return fit


def standardized_innovations(ts: TimeSeries, hyper: MaternHyper, backend=None) -> np.ndarray:
    e, q = ssm.innovations(ts.t, ts.centered, hyper.lam, hyper.eta, backend=backend)
    return e / np.sqrt(q)


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class TrendReport:
    linear: dict[str, LinearTrendFit]
    gp: dict[str, GpTrendFit]
    grid: np.ndarray
    time_moments: dict[str, tuple[float, float]]  # source -> (mean t, sum (t - mean)^2)

    def rows(self):
        """Rows of (t, source, method, mean, ci_low, ci_high)."""
        for source in self.linear:
            lin = self.linear[source]
            for t in self.grid:
                yield (float(t), source, "linear", float(lin.predict(t)), *self._line_band(lin, t))
            g = self.gp[source]
            half = stats.Z975 * np.sqrt(g.pred_var)
            for t, m, h in zip(g.pred_t, g.pred_mean, half):
                yield float(t), source, "gp", float(m), float(m - h), float(m + h)

    def _line_band(self, lin: LinearTrendFit, t):
        tbar, sxx = self.time_moments[lin.source]
        se = math.sqrt(lin.sigma2 * (1.0 / lin.n + (t - tbar) ** 2 / sxx))
        m = float(lin.predict(t))
        return m - stats.Z975 * se, m + stats.Z975 * se

    def slopes(self) -> dict:
        return {
            src: {"beta1": f.beta1, "se1": f.se1, "ci95": list(f.ci95), "beta0": f.beta0, "n": f.n}
            for src, f in self.linear.items()
        }


def trend_report(
    original: TimeSeries, resampled: TimeSeries, grid=None, backend=None, max_iter: int = 400
) -> TrendReport:
    """Linear and GP trends for both sources on a shared grid (daily by default)."""
    if original.n == 0 or resampled.n == 0:
        raise ValueError("both time series must be non-empty")
    if grid is None:
        lo = math.floor(min(original.t[0], resampled.t[0]))
        hi = math.ceil(max(original.t[-1], resampled.t[-1]))
        grid = np.arange(lo, hi + 1, 1.0)
    grid = np.asarray(grid, dtype=float)
    linear, gp, moments = {}, {}, {}
    for name, ts in (("original", original), ("resampled", resampled)):
        linear[name] = replace(fit_linear_trend(ts), source=name)
        gp[name] = replace(fit_gp(ts, grid, backend=backend, max_iter=max_iter), source=name)
        moments[name] = (float(ts.t.mean()), float(np.sum((ts.t - ts.t.mean()) ** 2)))
    return TrendReport(linear, gp, grid, moments)
