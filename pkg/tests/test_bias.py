import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from speedbias import bias, stats, synth

from conftest import make_dataset


def brute_cdf(values, x):
    return sum(v <= x for v in values) / len(values)


# --- chi-squared ---------------------------------------------------------


def test_chi_square_hand_example():
    d = make_dataset({"a": [1.0] * 30, "b": [1.0] * 10}, {"a": 100, "b": 100})
    res = bias.chi_square_homogeneity(d)
    assert res.statistic == pytest.approx(10.0)
    assert res.df == 1
    assert res.p_value == pytest.approx(0.001565402, abs=1e-9)
    assert res.kind == "chi_square"


def test_chi_square_proportional_is_zero():
    d = make_dataset({"a": [1.0] * 10, "b": [1.0] * 30}, {"a": 50, "b": 150})
    res = bias.chi_square_homogeneity(d)
    assert res.statistic == 0 and res.p_value == 1.0


def test_chi_square_matches_scipy(rng):
    pops = rng.integers(1, 500, 12)
    counts = rng.integers(0, 40, 12)
    d = make_dataset({f"r{i}": [1.0] * c for i, c in enumerate(counts)}, {f"r{i}": p for i, p in enumerate(pops)})
    exp = counts.sum() * pops / pops.sum()
    ref = sps.chisquare(counts, exp)
    res = bias.chi_square_homogeneity(d)
    assert res.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert res.p_value == pytest.approx(ref.pvalue, abs=1e-12)


def test_chi_square_errors():
    with pytest.raises(ValueError):
        bias.chi_square_homogeneity(make_dataset({"a": [1.0]}, {"a": 1}))
    with pytest.raises(ValueError):
        bias.chi_square_homogeneity(make_dataset({"a": [], "b": []}, {"a": 1, "b": 1}))


# --- CDF estimators ------------------------------------------------------


def small():
    return make_dataset({"r1": [1.0, 3.0], "r2": [2.0]}, {"r1": 100, "r2": 300})


def test_biased_and_reweighted_hand_values():
    d = small()
    assert bias.empirical_cdf_biased(d, [2.0]).estimate[0] == pytest.approx(2 / 3)
    assert bias.empirical_cdf_reweighted(d, [2.0]).estimate[0] == pytest.approx(0.875)


def test_estimators_against_brute_force(rng):
    vals = {f"r{i}": rng.normal(i, 1, rng.integers(1, 30)) for i in range(6)}
    pops = {f"r{i}": int(rng.integers(1, 1000)) for i in range(6)}
    d = make_dataset(vals, pops)
    grid = np.linspace(-2, 8, 37)
    N = sum(pops.values())
    n = d.n
    everything = np.concatenate(list(vals.values()))
    b = bias.empirical_cdf_biased(d, grid)
    u = bias.empirical_cdf_reweighted(d, grid)
    for j, x in enumerate(grid):
        assert b.estimate[j] == pytest.approx(brute_cdf(everything, x), abs=1e-12)
        fi = {r: brute_cdf(v, x) for r, v in vals.items()}
        assert u.estimate[j] == pytest.approx(sum(pops[r] / N * fi[r] for r in vals), abs=1e-12)
        half_b = 1.96 * math.sqrt(sum(len(vals[r]) * fi[r] * (1 - fi[r]) for r in vals)) / n
        half_u = 1.96 * math.sqrt(sum(pops[r] ** 2 / len(vals[r]) * fi[r] * (1 - fi[r]) for r in vals)) / N
        assert b.ci_high[j] - b.ci_low[j] <= 2 * half_b * 1.0001 + 1e-15
        if 0 < b.estimate[j] - half_b and b.estimate[j] + half_b < 1:
            assert b.ci_high[j] - b.estimate[j] == pytest.approx(half_b, rel=1e-4)
        if 0 < u.estimate[j] - half_u and u.estimate[j] + half_u < 1:
            assert u.ci_high[j] - u.estimate[j] == pytest.approx(half_u, rel=1e-4)
    for est in (b, u):
        assert np.all(np.diff(est.estimate) >= 0)
        assert np.all((est.ci_low <= est.estimate) & (est.estimate <= est.ci_high))
        assert est.ci_low.min() >= 0 and est.ci_high.max() <= 1


def test_single_region_and_proportional_identities(rng):
    d = make_dataset({"a": rng.normal(size=20)}, {"a": 5})
    grid = np.linspace(-3, 3, 11)
    np.testing.assert_allclose(bias.empirical_cdf_biased(d, grid).estimate, bias.empirical_cdf_reweighted(d, grid).estimate)
    d2 = make_dataset({"a": rng.normal(size=10), "b": rng.normal(1, 1, 30)}, {"a": 20, "b": 60})
    np.testing.assert_allclose(
        bias.empirical_cdf_biased(d2, grid).estimate, bias.empirical_cdf_reweighted(d2, grid).estimate, atol=1e-15
    )


def test_saturation():
    d = small()
    assert np.all(bias.empirical_cdf_biased(d, [5.0, 9.0]).estimate == 1.0)


def test_uncovered_region_fails_closed():
    d = make_dataset({"a": [1.0], "b": []}, {"a": 10, "b": 10})
    with pytest.raises(bias.UncoveredRegionsError, match="b"):
        bias.empirical_cdf_reweighted(d, [1.0])
    est = bias.empirical_cdf_reweighted(d, [1.0], renormalize=True)
    assert est.partial and est.estimate[0] == 1.0


def test_default_grid(rng):
    d = make_dataset({"a": rng.normal(size=5000)}, {"a": 5})
    g = bias.default_grid(d)
    assert g.size == 512 and np.all(np.diff(g) > 0)
    assert g[0] == pytest.approx(np.quantile(d.all_values(), 0.001))


# --- re-sampling ---------------------------------------------------------


def test_rounding_rules():
    assert bias.round_half_away(100 * 337, 1000) == 34
    assert bias.round_half_away(10 * 1, 4) == 3
    assert bias.round_half_away(7, 2) == 4
    assert bias.round_half_away(5, 4) == 1


def test_plan_examples():
    d = make_dataset({"a": [1.0] * 3, "b": [1.0] * 7}, {"a": 1, "b": 3})
    plan = bias.build_resample_plan(d)
    assert plan.targets == {"a": 3, "b": 8}  # 2.5 -> 3, 7.5 -> 8
    prop = make_dataset({"a": [1.0] * 10, "b": [1.0] * 30}, {"a": 50, "b": 150})
    assert bias.build_resample_plan(prop).targets == {"a": 10, "b": 30}
    part = bias.classify_regions(prop, bias.build_resample_plan(prop))
    assert part.exact == ("a", "b") and not part.over and not part.under


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.integers(1, 10_000)), min_size=1, max_size=40))
def test_plan_total_bound(rows):
    if sum(c for c, _ in rows) == 0:
        return
    d = make_dataset({f"r{i}": [1.0] * c for i, (c, _) in enumerate(rows)}, {f"r{i}": p for i, (_, p) in enumerate(rows)})
    plan = bias.build_resample_plan(d)
    assert abs(plan.total - d.n) <= d.k / 2


def test_resample_semantics():
    d = make_dataset({"a": [4.0], "b": [1.0, 2.0, 3.0]}, {"a": 30, "b": 10},
                     times={"a": [5.0], "b": [1.0, 2.0, 3.0]}, devices={"a": ["x"], "b": ["p", "q", "r"]})
    plan = bias.build_resample_plan(d, seed=9)
    rs = bias.resample(d, plan)
    assert list(rs.counts()) == [3, 1]
    assert np.all(rs.samples["a"].value == 4.0) and np.all(rs.samples["a"].t == 5.0)
    b = rs.samples["b"]
    for t, v, dev in zip(b.t, b.value, b.device):
        assert (t, dev) == {1.0: (1.0, "p"), 2.0: (2.0, "q"), 3.0: (3.0, "r")}[v]
    again = bias.resample(d, plan)
    assert np.array_equal(again.samples["b"].value, b.value)
    assert rs.source == "resampled"


def test_resample_skips_empty_region(caplog):
    d = make_dataset({"a": [1.0, 2.0], "b": []}, {"a": 1, "b": 1})
    rs = bias.resample(d, bias.build_resample_plan(d))
    assert rs.counts()[1] == 0 and "b" in rs.notes[0]
    assert "b" in caplog.text


def test_resampled_mean_tracks_reweighted(rng):
    d = make_dataset({"a": rng.normal(0, 1, 40), "b": rng.normal(2, 1, 10)}, {"a": 100, "b": 400})
    grid = np.array([0.0, 1.0, 2.0])
    target = bias.empirical_cdf_reweighted(d, grid).estimate
    draws = np.array([
        bias.empirical_cdf_resampled(bias.resample(d, bias.build_resample_plan(d, seed=s)), grid).estimate
        for s in range(2000)
    ])
    se = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
    # n_i*/n* equals N_i/N here, so the conditional mean is exactly F_u
    assert np.all(np.abs(draws.mean(axis=0) - target) <= 3 * se + 1e-12)


def test_resampled_converges(rng):
    gaps = []
    for n in (1000, 10_000, 100_000):
        spec = synth.SynthSpec(k=10, n_total=n, bias=1.0, true_beta={"income": 10}, seed=4)
        d, _ = synth.generate(spec)
        grid = bias.default_grid(d, 200)
        u = bias.empirical_cdf_reweighted(d, grid).estimate
        r = bias.empirical_cdf_resampled(bias.resample(d, bias.build_resample_plan(d, 1)), grid).estimate
        gaps.append(np.abs(u - r).max())
    assert gaps[0] > gaps[1] > gaps[2]


def test_point_mass_resampled():
    d = make_dataset({"a": [5.0] * 4}, {"a": 1})
    est = bias.empirical_cdf_resampled(bias.resample(d, bias.build_resample_plan(d)), [4.9, 5.0, 5.1])
    assert list(est.estimate) == [0.0, 1.0, 1.0]


# --- demographics --------------------------------------------------------


def test_significance_thresholds():
    assert [bias.significance_stars(p) for p in (0.0005, 0.001, 0.005, 0.01, 0.03, 0.05, 0.2)] == [
        "***", "**", "**", "*", "*", "ns", "ns"
    ]


def test_pooled_t_hand_example():
    ma, mb, s2, res = bias.pooled_t_test([2.0, 4.0], [1.0, 3.0])
    assert (ma, mb, s2) == (3.0, 2.0, 2.0)
    assert res.statistic == pytest.approx(1 / math.sqrt(2))
    assert res.df == 2
    assert res.p_value == pytest.approx(0.553, abs=5e-4)


def test_pooled_t_matches_scipy(rng):
    a, b = rng.normal(0, 1, 13), rng.normal(0.7, 1, 21)
    _, _, _, res = bias.pooled_t_test(a, b)
    ref = sps.ttest_ind(a, b, equal_var=True)
    assert res.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert res.p_value == pytest.approx(ref.pvalue, abs=1e-12)


def test_identical_groups():
    _, _, _, res = bias.pooled_t_test([1.0, 1.0], [1.0, 1.0, 1.0])
    assert res.statistic == 0 and res.p_value == 1.0


def test_demographic_tests_na_when_group_empty():
    d = make_dataset({"a": [1.0] * 10, "b": [1.0] * 30}, {"a": 50, "b": 150})
    part = bias.classify_regions(d, bias.build_resample_plan(d))
    rows = bias.demographic_t_tests(d, part)
    assert len(rows) == 9 and all(r.significance == "n/a" for r in rows)


def test_planted_income_bias_detected():
    spec = synth.SynthSpec(k=80, n_total=20000, bias=1.5, bias_on=("income",), seed=5)
    d, _ = synth.generate(spec)
    plan = bias.build_resample_plan(d)
    rows = {r.variable: r for r in bias.demographic_t_tests(d, bias.classify_regions(d, plan))}
    assert rows["income"].over_mean > rows["income"].under_mean
    assert rows["income"].test.p_value < 0.001 and rows["income"].significance == "***"
    assert bias.chi_square_homogeneity(d).p_value < 1e-3


def test_mixture_by_enumeration():
    # finite populations with known members: the population CDF equals sum N_i/N F_i
    pops = {"a": [1.0, 2.0, 2.0], "b": [0.5, 3.0], "c": [2.5]}
    allv = [v for vs in pops.values() for v in vs]
    N = len(allv)
    for x in np.linspace(0, 3.5, 15):
        mix = sum(len(v) / N * brute_cdf(v, x) for v in pops.values())
        assert abs(mix - brute_cdf(allv, x)) <= 1e-12


def test_normal_factor_is_exact_quantile():
    assert stats.Z975 == pytest.approx(stats.normal_quantile(0.975))
