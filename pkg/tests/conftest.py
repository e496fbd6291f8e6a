import numpy as np
import pytest

from speedbias.data import DEMOGRAPHIC_NAMES, Dataset, Region, SampleBlock
from datetime import datetime


def make_dataset(values_by_region, populations, demographics=None, times=None, devices=None):
    """Small hand-built dataset; demographics default to a valid constant-ish vector."""
    regions, samples = {}, {}
    for i, (rid, vals) in enumerate(values_by_region.items()):
        demo = demographics[rid] if demographics else (50000.0 + i, 40.0, 50.0, 30.0, 80.0, 60.0, 20.0, 10.0, 10.0)
        regions[rid] = Region(rid, int(populations[rid]), tuple(float(v) for v in demo))
        v = np.asarray(vals, dtype=float)
        t = np.asarray(times[rid], dtype=float) if times else np.zeros(v.size)
        dev = tuple(devices[rid]) if devices else ("ios",) * v.size
        samples[rid] = SampleBlock(t, v, dev)
    return Dataset(regions, samples, datetime(2021, 1, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def emit(number: int, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
