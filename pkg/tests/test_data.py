import math
from datetime import datetime

import numpy as np
import pytest

from speedbias import synth
from speedbias.data import (
    DataValidationError,
    Region,
    load_dataset,
    parse_timestamp,
    summarize,
    write_dataset,
)

from conftest import make_dataset

REGIONS = """region_id,population,income,age,pct_male,pct_bachelor,pct_internet,pct_white,pct_black,pct_asian,pct_hispanic
A,100,50000,35,49,30,80,60,20,10,10
B,300,70000,40,51,40,90,70,10,10,10
"""
MEAS = """region_id,timestamp,speed_mbps,device
A,2021-03-01T00:00:00,10.5,ios
A,2021-03-02T12:00:00,20.0,android
B,2021-03-03,30.0,iOS
"""


def write(tmp_path, regions=REGIONS, meas=MEAS):
    r = tmp_path / "regions.csv"
    m = tmp_path / "meas.csv"
    r.write_text(regions)
    m.write_text(meas)
    return m, r


def test_load_small(tmp_path):
    d = load_dataset(*write(tmp_path))
    assert (d.k, d.n, d.N) == (2, 3, 400)
    assert d.epoch == datetime(2021, 3, 1)
    np.testing.assert_allclose(d.samples["A"].t, [0.0, 1.5])
    assert d.samples["B"].t[0] == 2.0


def test_unknown_region_listed(tmp_path):
    m, r = write(tmp_path, meas=MEAS + "Z,2021-03-01,1.0,ios\nY,2021-03-01,1.0,ios\n")
    with pytest.raises(DataValidationError, match="Y, Z"):
        load_dataset(m, r)


def test_device_filter(tmp_path):
    d = load_dataset(*write(tmp_path), device_filter="ios")
    assert d.n == 2
    assert list(d.counts()) == [1, 1]
    # epoch still from whole file
    assert d.epoch == datetime(2021, 3, 1)


def test_bad_rows_are_numbered(tmp_path):
    m, r = write(tmp_path, meas=MEAS + "A,not-a-date,1,ios\nA,2021-03-01,fast,ios\nA,2021-03-01,-2,ios\n")
    with pytest.raises(DataValidationError) as exc:
        load_dataset(m, r)
    lines = exc.value.problems
    assert [p.split(":")[0] for p in lines] == ["line 5", "line 6", "line 7"]


def test_region_validation(tmp_path):
    bad = REGIONS + "C,0,50000,35,49,30,80,60,20,10,10\nD,10,50000,35,149,30,80,60,20,10,10\nA,5,1,1,1,1,1,1,1,1,1\n"
    m, r = write(tmp_path, regions=bad)
    with pytest.raises(DataValidationError) as exc:
        load_dataset(m, r)
    text = str(exc.value)
    assert "population" in text and "pct_male" in text and "duplicate" in text


def test_header_and_missing_file(tmp_path):
    m, r = write(tmp_path, meas="a,b,c,d\n")
    with pytest.raises(DataValidationError, match="header"):
        load_dataset(m, r)
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        load_dataset(tmp_path / "nope.csv", r)


def test_timezone_normalised():
    assert parse_timestamp("2021-01-01T05:00:00+05:00") == datetime(2021, 1, 1)
    assert parse_timestamp("2021-01-01T00:00:00Z") == datetime(2021, 1, 1)


def test_region_invariants():
    with pytest.raises(DataValidationError):
        Region("x", 0, (1.0,) * 9)
    with pytest.raises(DataValidationError):
        Region("x", 1, (-5.0,) + (1.0,) * 8)
    Region("x", 1, (math.nan,) * 9)  # missing values are tolerated at load


def test_zero_sample_region_kept(tmp_path):
    m, r = write(tmp_path, meas="region_id,timestamp,speed_mbps,device\nA,2021-03-01,1,ios\n")
    d = load_dataset(m, r)
    assert d.k == 2 and list(d.counts()) == [1, 0]


def test_summarize_examples():
    d = make_dataset({"a": [1.0] * 30, "b": [1.0] * 10}, {"a": 100, "b": 100})
    s = summarize(d)
    shares = {row.region_id: (row.sample_share, row.population_share) for row in s.rows}
    assert shares == {"a": (0.75, 0.5), "b": (0.25, 0.5)}
    single = summarize(make_dataset({"a": [2.0]}, {"a": 7}))
    assert (single.rows[0].sample_share, single.rows[0].population_share) == (1.0, 1.0)
    empty = summarize(make_dataset({"a": []}, {"a": 7}))
    assert empty.n == 0 and empty.empty and math.isnan(empty.rows[0].sample_share)


def test_summary_ordering_and_sums(rng):
    d, _ = synth.generate(synth.SynthSpec(k=30, n_total=500, seed=3))
    s = summarize(d)
    pops = [row.N_i for row in s.rows]
    assert pops == sorted(pops, reverse=True)
    assert abs(sum(r.sample_share for r in s.rows) - 1) <= 1e-12
    assert abs(sum(r.population_share for r in s.rows) - 1) <= 1e-12


def _same(a, b):
    assert a.epoch == b.epoch
    assert a.regions == b.regions
    for rid in a.regions:
        x, y = a.samples[rid], b.samples[rid]
        assert np.array_equal(x.t, y.t) and np.array_equal(x.value, y.value) and x.device == y.device


def test_round_trip(tmp_path):
    d, _ = synth.generate(synth.SynthSpec(k=12, n_total=2000, slope=0.05, seed=11))
    write_dataset(d, tmp_path / "m.csv", tmp_path / "r.csv")
    back = load_dataset(tmp_path / "m.csv", tmp_path / "r.csv")
    _same(d, back)
    write_dataset(back, tmp_path / "m2.csv", tmp_path / "r2.csv")
    assert (tmp_path / "m.csv").read_bytes() == (tmp_path / "m2.csv").read_bytes()
