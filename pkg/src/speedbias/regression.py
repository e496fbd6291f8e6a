"""Speed vs. demographic regression at individual and region level.

Each measurement inherits the covariates of its region, so the individual
design ``V`` repeats region rows ``n_i`` times. The region-level fit is WLS
of region means on ``X`` with weights ``n_i``; both give the same
coefficients, while the individual-level noise variance estimate is the more
efficient of the two.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import stats
from .data import DEMOGRAPHIC_NAMES, Dataset

log = logging.getLogger(__name__)

AIC_PENALTIES = {"unit": 1.0, "standard": 2.0}


class RankDeficientError(ValueError):
    """Design matrix lacks full column rank; ``columns`` names the dependent ones."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__("collinear covariates: " + ", ".join(self.columns))


@dataclass(frozen=True)
class DesignMatrices:
    """Individual- and region-level designs for the regressions.

    Only regions with at least one measurement enter. Column 0 of ``V`` and
    ``X`` is the intercept; ``names`` labels the remaining columns.
    """

    V: np.ndarray
    X: np.ndarray
    w: np.ndarray  # sqrt(n_i)
    y: np.ndarray
    ybar: np.ndarray
    counts: np.ndarray
    names: tuple[str, ...]
    region_ids: tuple[str, ...]
    center: np.ndarray  # per retained covariate; zeros when not standardised
    scale: np.ndarray  # ones when not standardised
    dropped: tuple[str, ...] = ()
    source: str = "original"

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def k(self) -> int:
        return self.ybar.size

    @property
    def p(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class RegressionFit:
    included: tuple[int, ...]
    names: tuple[str, ...]  # intercept first
    beta: np.ndarray
    se: np.ndarray
    ci95: np.ndarray  # (p+1, 2)
    sigma2: float
    loglik: float  # maximised log-likelihood
    aic: float
    penalty: float
    n: int
    k: int
    level: str = "individual"  # or "aggregated"
    source: str = "original"
    trace: tuple[dict, ...] = ()
    corr: np.ndarray | None = None
    corr_names: tuple[str, ...] = ()
    dropped: tuple[str, ...] = ()
    raw_beta: np.ndarray | None = None
    raw_se: np.ndarray | None = None

    @property
    def p(self) -> int:
        return len(self.included)

    @property
    def dim(self) -> int:
        # coefficients plus the noise variance
        return self.p + 2

    def as_dict(self) -> dict:
        def named(values):
            return {name: float(v) for name, v in zip(self.names, values)}

        out = {
            "source": self.source,
            "included": list(self.names[1:]),
            "beta": named(self.beta),
            "se": named(self.se),
            "ci95": {name: [float(lo), float(hi)] for name, (lo, hi) in zip(self.names, self.ci95)},
            "sigma2": self.sigma2,
            "aic": self.aic,
            "trace": list(self.trace),
            "corr_matrix": [] if self.corr is None else self.corr.tolist(),
            "corr_names": list(self.corr_names),
            "dropped": list(self.dropped),
        }
        if self.raw_beta is not None:
            out["raw_beta"] = named(self.raw_beta)
            out["raw_se"] = named(self.raw_se)
        return out


def build_design(d: Dataset, standardize: bool = True, source: str | None = None) -> DesignMatrices:
    """Stack the individual-level and region-level designs.

    Constant covariates are dropped with a warning. With ``standardize`` each
    remaining covariate is centred and scaled by its mean and sample sd over
    the sampled regions; the transform is kept for back-conversion.
    """
    counts_all = d.counts()
    keep = counts_all > 0
    ids = tuple(np.array(d.region_ids, dtype=object)[keep])
    demo = d.demographics()[keep]
    if np.isnan(demo).any():
        bad = sorted({ids[i] for i in np.nonzero(np.isnan(demo).any(axis=1))[0]})
        raise ValueError("regions with missing demographics: " + ", ".join(bad))
    if not ids:
        raise ValueError("dataset has no measurements")

    sd = demo.std(axis=0, ddof=1) if len(ids) > 1 else np.zeros(demo.shape[1])
    spread = np.ptp(demo, axis=0)
    constant = spread <= 1e-12 * np.maximum(1.0, np.abs(demo).max(axis=0))
    dropped = tuple(name for name, c in zip(DEMOGRAPHIC_NAMES, constant) if c)
    if dropped:
        log.warning("dropping constant covariates: %s", ", ".join(dropped))
    cov = demo[:, ~constant]
    names = tuple(name for name, c in zip(DEMOGRAPHIC_NAMES, constant) if not c)
    if standardize:
        center = cov.mean(axis=0)
        scale = sd[~constant]
        cov = (cov - center) / scale
    else:
        center = np.zeros(cov.shape[1])
        scale = np.ones(cov.shape[1])

    X = np.column_stack([np.ones(len(ids)), cov])
    counts = counts_all[keep]
    V = np.repeat(X, counts, axis=0)
    y = np.concatenate([d.samples[rid].value for rid in ids])
    ybar = np.array([d.samples[rid].value.mean() for rid in ids])
    return DesignMatrices(
        V, X, np.sqrt(counts.astype(float)), y, ybar, counts, names, ids, center, scale,
        dropped, source or d.source,
    )


def _columns(included) -> list[int]:
    return [0] + [i + 1 for i in included]


def _check_rank(A: np.ndarray, labels) -> None:
    _, R, piv = linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag.max() * max(A.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < A.shape[1]:
        raise RankDeficientError([labels[j] for j in sorted(piv[rank:])])


def _gaussian_loglik(rss: float, n: int) -> float:
    if rss <= 0:
        return math.inf
    return -0.5 * n * (math.log(2.0 * math.pi * rss / n) + 1.0)


def _aic(loglik: float, dim: int, penalty: float) -> float:
    if math.isinf(loglik):
        return -math.inf
    return -2.0 * loglik + penalty * dim


def _penalty(aic: str | float) -> float:
    if isinstance(aic, str):
        try:
            return AIC_PENALTIES[aic]
        except KeyError:
            raise ValueError(f"unknown AIC variant {aic!r}") from None
    return float(aic)


def _raw(dm: DesignMatrices, included, beta, cov):
    # back-transform standardised coefficients to raw covariate units
    scale = dm.scale[list(included)]
    center = dm.center[list(included)]
    T = np.eye(len(beta))
    T[1:, 1:] = np.diag(1.0 / scale)
    T[0, 1:] = -center / scale
    raw = T @ beta
    raw_cov = T @ cov @ T.T
    return raw, np.sqrt(np.maximum(np.diag(raw_cov), 0.0))


def covariate_correlation(dm: DesignMatrices) -> np.ndarray:
    """Pairwise Pearson correlation of covariates over measurement rows."""
    Z = dm.V[:, 1:]
    if Z.shape[1] == 0:
        return np.empty((0, 0))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.atleast_2d(np.corrcoef(Z, rowvar=False))


def fit_individual(dm: DesignMatrices, included=None, aic: str | float = "unit") -> RegressionFit:
    """Least squares on the individual-level design.

    sigma2 is RSS / (n - p - 1); standard errors are sqrt(sigma2 diag((V'V)^-1))
    and intervals use the normal 97.5% quantile.
    """
    included = tuple(range(dm.p)) if included is None else tuple(sorted(included))
    cols = _columns(included)
    labels = ["intercept"] + [dm.names[i] for i in included]
    A = dm.V[:, cols]
    n, q = A.shape
    if n <= q:
        raise ValueError(f"need n > p + 1 observations, got n={n}, p+1={q}")
    _check_rank(A, labels)
    Q, R = linalg.qr(A, mode="economic")
    beta = linalg.solve_triangular(R, Q.T @ dm.y)
    resid = dm.y - A @ beta
    rss = float(resid @ resid)
    sigma2 = rss / (n - q)
    Rinv = linalg.solve_triangular(R, np.eye(q))
    unscaled = Rinv @ Rinv.T
    se = np.sqrt(sigma2 * np.diag(unscaled))
    ci = np.column_stack([beta - stats.Z975 * se, beta + stats.Z975 * se])
    penalty = _penalty(aic)
    ll = _gaussian_loglik(rss, n)
    raw_beta, raw_se = _raw(dm, included, beta, sigma2 * unscaled)
    return RegressionFit(
        included, tuple(labels), beta, se, ci, sigma2, ll, _aic(ll, q + 1, penalty), penalty,
        n, dm.k, "individual", dm.source, dropped=dm.dropped, raw_beta=raw_beta, raw_se=raw_se,
    )


def fit_aggregated(dm: DesignMatrices, included=None, aic: str | float = "unit") -> RegressionFit:
    """Weighted least squares of region means on ``X`` with weights n_i.

    The returned ``sigma2`` is the region-level estimator
    sum n_i (ybar_i - x_i' b)^2 / (k - p - 1).
    """
    included = tuple(range(dm.p)) if included is None else tuple(sorted(included))
    cols = _columns(included)
    labels = ["intercept"] + [dm.names[i] for i in included]
    WX = dm.w[:, None] * dm.X[:, cols]
    Wy = dm.w * dm.ybar
    k, q = WX.shape
    if k <= q:
        raise ValueError(f"need k > p + 1 regions, got k={k}, p+1={q}")
    _check_rank(WX, labels)
    Q, R = linalg.qr(WX, mode="economic")
    beta = linalg.solve_triangular(R, Q.T @ Wy)
    resid = Wy - WX @ beta
    rss = float(resid @ resid)
    sigma2 = rss / (k - q)
    Rinv = linalg.solve_triangular(R, np.eye(q))
    se = np.sqrt(sigma2 * np.sum(Rinv * Rinv, axis=1))
    ci = np.column_stack([beta - stats.Z975 * se, beta + stats.Z975 * se])
    # maximised aggregated log-likelihood, sigma2 at its MLE rss / k
    ll = (
        _gaussian_loglik(rss, k) + 0.5 * float(np.sum(np.log(dm.counts)))
        if rss > 0 else math.inf
    )
    penalty = _penalty(aic)
    return RegressionFit(
        included, tuple(labels), beta, se, ci, sigma2, ll, _aic(ll, q + 1, penalty), penalty,
        dm.n, k, "aggregated", dm.source, dropped=dm.dropped,
    )


def projection_individual(dm: DesignMatrices, included=None) -> np.ndarray:
    """J = V (V'V)^-1 V' (n x n); for small designs only."""
    A = dm.V[:, _columns(tuple(range(dm.p)) if included is None else included)]
    Q, _ = linalg.qr(A, mode="economic")
    return Q @ Q.T


def projection_aggregated(dm: DesignMatrices, included=None) -> np.ndarray:
    """H = WX (X'W^2X)^-1 X'W (k x k)."""
    A = dm.w[:, None] * dm.X[:, _columns(tuple(range(dm.p)) if included is None else included)]
    Q, _ = linalg.qr(A, mode="economic")
    return Q @ Q.T


def loglik_individual(dm: DesignMatrices, beta, sigma2: float, included=None) -> float:
    A = dm.V[:, _columns(tuple(range(dm.p)) if included is None else included)]
    r = dm.y - A @ np.asarray(beta, dtype=float)
    return -0.5 * dm.n * math.log(2.0 * math.pi * sigma2) - float(r @ r) / (2.0 * sigma2)


def loglik_aggregated(dm: DesignMatrices, beta, sigma2: float, included=None) -> float:
    """Log-likelihood of region means, ybar_i ~ N(x_i' beta, sigma2 / n_i)."""
    A = dm.X[:, _columns(tuple(range(dm.p)) if included is None else included)]
    r = dm.ybar - A @ np.asarray(beta, dtype=float)
    return (
        -0.5 * dm.k * math.log(2.0 * math.pi * sigma2)
        + 0.5 * float(np.sum(np.log(dm.counts)))
        - float(np.sum(dm.counts * r * r)) / (2.0 * sigma2)
    )


def loglik_gap(dm: DesignMatrices, betas, sigma2: float, included=None) -> list[float]:
    """Individual minus aggregated log-likelihood for each coefficient vector.

    The gap depends on sigma2 only, so all returned values coincide.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    return [
        loglik_individual(dm, b, sigma2, included) - loglik_aggregated(dm, b, sigma2, included)
        for b in betas
    ]


def loglik_gap_closed_form(dm: DesignMatrices, sigma2: float) -> float:
    """-(n-k)/2 log(2 pi sigma2) - 1/2 sum log n_i - within-region SS / (2 sigma2)."""
    offsets = np.concatenate([[0], np.cumsum(dm.counts)])
    within = sum(
        float(np.sum((dm.y[a:b] - m) ** 2)) for a, b, m in zip(offsets[:-1], offsets[1:], dm.ybar)
    )
    return (
        -0.5 * (dm.n - dm.k) * math.log(2.0 * math.pi * sigma2)
        - 0.5 * float(np.sum(np.log(dm.counts)))
        - within / (2.0 * sigma2)
    )


@dataclass
class _Step:
    included: tuple[int, ...]
    fit: RegressionFit
    trace: list = field(default_factory=list)


def backward_aic(dm: DesignMatrices, aic: str | float = "unit") -> RegressionFit:
    """Backward elimination by AIC = -2 loglik + penalty * dim.

    ``aic="unit"`` uses penalty 1 per parameter, ``"standard"`` uses 2. Each
    round fits every drop-one submodel and moves to the one with the smallest
    AIC if it is strictly below the current model's; ties go to dropping the
    lowest-index covariate. The result carries the elimination trace and the
    covariate correlation matrix.
    """
    current = fit_individual(dm, aic=aic)
    trace = [{"dropped": None, "aic": current.aic}]
    while current.included:
        best = None
        for pos, var in enumerate(current.included):
            sub = current.included[:pos] + current.included[pos + 1 :]
            cand = fit_individual(dm, sub, aic=aic)
            if best is None or cand.aic < best[1].aic:
                best = (var, cand)
        var, cand = best
        if not cand.aic < current.aic:
            break
        current = cand
        trace.append({"dropped": dm.names[var], "aic": cand.aic})
    corr = covariate_correlation(dm)
    return RegressionFit(
        **{
            **current.__dict__,
            "trace": tuple(trace),
            "corr": corr,
            "corr_names": dm.names,
        }
    )
