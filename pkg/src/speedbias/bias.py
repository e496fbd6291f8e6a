"""Regional sampling-bias detection and correction.

The re-weighted and re-sampled CDF estimators assume every populated region
has been sampled and that measurements are independent within and across
regions. Correlated failures (an outage hitting several regions at once)
violate the second assumption and are not modelled.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import stats
from .data import DEMOGRAPHIC_NAMES, Dataset, SampleBlock

log = logging.getLogger(__name__)

#: Recorded in outputs so re-sampling runs can be reproduced.
RNG_ALGORITHM = "numpy.random.PCG64"

DEFAULT_GRID_POINTS = 512
DEFAULT_GRID_QUANTILES = (0.001, 0.999)


class UncoveredRegionsError(ValueError):
    """A populated region has no samples, so the re-weighted CDF is undefined."""

    def __init__(self, region_ids):
        self.region_ids = list(region_ids)
        super().__init__(
            "regions with population but no samples: "
            + ", ".join(self.region_ids)
            + " (pass renormalize=True to drop them)"
        )


@dataclass(frozen=True)
class CdfEstimate:
    kind: str  # biased_empirical | reweighted | resampled
    grid: np.ndarray
    estimate: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    partial: bool = False

    def rows(self):
        for x, f, lo, hi in zip(self.grid, self.estimate, self.ci_low, self.ci_high):
            yield float(x), float(f), float(lo), float(hi), self.kind


@dataclass(frozen=True)
class ResamplePlan:
    targets: dict[str, int]
    total: int
    seed: int


@dataclass(frozen=True)
class Partition:
    over: tuple[str, ...]
    under: tuple[str, ...]
    exact: tuple[str, ...]


@dataclass(frozen=True)
class GroupComparison:
    variable: str
    over_mean: float
    under_mean: float
    pooled_s2: float
    test: stats.TestResult | None
    significance: str  # ***, **, *, ns, or n/a

    def as_row(self):
        t = self.test
        return (
            self.variable,
            self.over_mean,
            self.under_mean,
            t.statistic if t else math.nan,
            t.df if t else math.nan,
            t.p_value if t else math.nan,
            self.significance,
        )


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return "ns"


# ---------------------------------------------------------------------------
# detection


def chi_square_homogeneity(d: Dataset) -> stats.TestResult:
    """Pearson chi-squared test of sample counts against population shares."""
    if d.k < 2:
        raise ValueError("chi-squared homogeneity test needs at least 2 regions")
    counts = d.counts().astype(float)
    pops = d.populations().astype(float)
    n = counts.sum()
    if n == 0:
        raise ValueError("dataset has no measurements")
    expected = n * pops / pops.sum()
    w = float(np.sum((counts - expected) ** 2 / expected))
    df = d.k - 1
    return stats.TestResult(w, float(df), stats.clamp_p(stats.chi_square_sf(w, df)), "chi_square")


# ---------------------------------------------------------------------------
# CDF estimators


def default_grid(d: Dataset, points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """Values at evenly spaced probability levels between the 0.1% and 99.9% quantiles."""
    values = d.all_values()
    if values.size == 0:
        raise ValueError("cannot build a grid from an empty dataset")
    probs = np.linspace(*DEFAULT_GRID_QUANTILES, points)
    return np.unique(np.quantile(values, probs))


def regional_cdfs(d: Dataset, grid) -> np.ndarray:
    """(k, len(grid)) matrix of per-region empirical CDFs; rows of empty regions are NaN."""
    grid = np.asarray(grid, dtype=float)
    out = np.full((d.k, grid.size), np.nan)
    for i, rid in enumerate(d.regions):
        values = np.sort(d.samples[rid].value)
        if values.size:
            out[i] = np.searchsorted(values, grid, side="right") / values.size
    return out


def _band(kind, grid, est, half, partial=False) -> CdfEstimate:
    est = np.clip(est, 0.0, 1.0)
    # keep numerically monotone despite summation order
    est = np.maximum.accumulate(est)
    return CdfEstimate(
        kind,
        grid,
        est,
        np.clip(est - half, 0.0, 1.0),
        np.clip(est + half, 0.0, 1.0),
        partial,
    )


def _sample_weighted(d: Dataset, grid, kind: str) -> CdfEstimate:
    grid = np.asarray(grid, dtype=float)
    counts = d.counts().astype(float)
    n = counts.sum()
    if n == 0:
        raise ValueError("dataset has no measurements")
    fi = np.nan_to_num(regional_cdfs(d, grid))
    est = counts @ fi / n
    var = counts @ (fi * (1.0 - fi))
    half = stats.Z975 * np.sqrt(var) / n
    return _band(kind, grid, est, half, partial=bool(d.notes))


def empirical_cdf_biased(d: Dataset, grid) -> CdfEstimate:
    """Pooled empirical CDF of all measurements (weights n_i / n)."""
    return _sample_weighted(d, grid, "biased_empirical")


def empirical_cdf_reweighted(d: Dataset, grid, renormalize: bool = False) -> CdfEstimate:
    """Population-weighted mixture of regional empirical CDFs (weights N_i / N).

    A populated region without samples raises :class:`UncoveredRegionsError`
    unless ``renormalize`` is set, in which case such regions are dropped,
    the weights are renormalised over the covered regions and the estimate
    is marked partial.
    """
    grid = np.asarray(grid, dtype=float)
    counts = d.counts().astype(float)
    pops = d.populations().astype(float)
    covered = counts > 0
    if not covered.all():
        if not renormalize:
            raise UncoveredRegionsError(np.array(d.region_ids)[~covered])
        if not covered.any():
            raise ValueError("dataset has no measurements")
    fi = regional_cdfs(d, grid)[covered]
    n_c, N_c = counts[covered], pops[covered]
    N = N_c.sum()
    est = (N_c / N) @ fi
    var = (N_c**2 / n_c) @ (fi * (1.0 - fi))
    half = stats.Z975 * np.sqrt(var) / N
    return _band("reweighted", grid, est, half, partial=not covered.all())


def empirical_cdf_resampled(resampled: Dataset, grid) -> CdfEstimate:
    """Empirical CDF of a re-sampled dataset (weights n_i* / n*)."""
    return _sample_weighted(resampled, grid, "resampled")


# ---------------------------------------------------------------------------
# re-sampling


def round_half_away(numerator: int, denominator: int) -> int:
    """Nearest integer to numerator/denominator (both >= 0), ties away from zero."""
    return (2 * numerator + denominator) // (2 * denominator)


def build_resample_plan(d: Dataset, seed: int = 0) -> ResamplePlan:
    """Population-proportional target counts n_i* = [n N_i / N].

    Computed in exact integer arithmetic; ties round away from zero.
    """
    n, N = d.n, d.N
    if n == 0:
        raise ValueError("dataset has no measurements")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    targets = {
        rid: round_half_away(n * region.population, N) for rid, region in d.regions.items()
    }
    return ResamplePlan(targets, sum(targets.values()), int(seed))


def resample(d: Dataset, plan: ResamplePlan) -> Dataset:
    """Draw n_i* records with replacement within each region.

    Records keep their timestamps and device tags. Regions that need samples
    but have none are skipped with a warning and listed in ``notes``.
    """
    rng = np.random.Generator(np.random.PCG64(plan.seed))
    samples: dict[str, SampleBlock] = {}
    skipped = []
    for rid in d.regions:
        block = d.samples[rid]
        want = plan.targets.get(rid, 0)
        if want > 0 and len(block) == 0:
            skipped.append(rid)
            samples[rid] = SampleBlock.empty()
            continue
        idx = rng.integers(0, len(block), size=want) if want else np.empty(0, dtype=np.int64)
        samples[rid] = block.take(idx)
    notes = d.notes
    if skipped:
        msg = "re-sampling skipped unsampled regions: " + ", ".join(skipped)
        log.warning(msg)
        notes = notes + (msg,)
    return Dataset(d.regions, samples, d.epoch, source="resampled", notes=notes)


# ---------------------------------------------------------------------------
# demographic characterisation


def classify_regions(d: Dataset, plan: ResamplePlan) -> Partition:
    over, under, exact = [], [], []
    for rid, n_i in zip(d.regions, d.counts()):
        target = plan.targets[rid]
        if n_i > target:
            over.append(rid)
        elif n_i < target:
            under.append(rid)
        else:
            exact.append(rid)
    return Partition(tuple(over), tuple(under), tuple(exact))


def pooled_t_test(a, b) -> tuple[float, float, float, stats.TestResult | None]:
    """Pooled-variance two-sample t-test; returns (mean_a, mean_b, s2, result).

    Returns ``None`` for the result when either group is empty or there are
    fewer than 3 values in total.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ma = float(a.mean()) if a.size else math.nan
    mb = float(b.mean()) if b.size else math.nan
    df = a.size + b.size - 2
    if a.size == 0 or b.size == 0 or df < 1:
        return ma, mb, math.nan, None
    s2 = float((np.sum((a - ma) ** 2) + np.sum((b - mb) ** 2)) / df)
    diff = ma - mb
    if diff == 0:
        t = 0.0
    elif s2 == 0:
        t = math.copysign(math.inf, diff)
    else:
        t = diff / math.sqrt(s2 * (1.0 / a.size + 1.0 / b.size))
    p = stats.clamp_p(min(1.0, 2.0 * stats.student_t_sf(abs(t), df)))
    return ma, mb, s2, stats.TestResult(t, float(df), p, "two_sample_t")


def demographic_t_tests(d: Dataset, partition: Partition) -> list[GroupComparison]:
    """Compare each demographic between over- and under-sampled regions.

    Regions in ``partition.exact`` are left out, so the degrees of freedom
    are k_o + k_u - 2. Missing demographic values are dropped per variable.
    """
    index = {rid: i for i, rid in enumerate(d.regions)}
    demo = d.demographics()
    over = demo[[index[r] for r in partition.over]] if partition.over else np.empty((0, 9))
    under = demo[[index[r] for r in partition.under]] if partition.under else np.empty((0, 9))
    results = []
    for h, name in enumerate(DEMOGRAPHIC_NAMES):
        a = over[:, h][~np.isnan(over[:, h])]
        b = under[:, h][~np.isnan(under[:, h])]
        ma, mb, s2, test = pooled_t_test(a, b)
        stars = significance_stars(test.p_value) if test else "n/a"
        results.append(GroupComparison(name, ma, mb, s2, test, stars))
    return results
