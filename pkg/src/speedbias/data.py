"""Domain types and CSV ingestion for speed measurements and region tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

DEMOGRAPHIC_NAMES = (
    "income",
    "age",
    "pct_male",
    "pct_bachelor",
    "pct_internet",
    "pct_white",
    "pct_black",
    "pct_asian",
    "pct_hispanic",
)
PERCENT_NAMES = frozenset(name for name in DEMOGRAPHIC_NAMES if name.startswith("pct_"))

MEASUREMENT_HEADER = ("region_id", "timestamp", "speed_mbps", "device")
REGION_HEADER = ("region_id", "population") + DEMOGRAPHIC_NAMES

_DAY = timedelta(days=1)


class DataValidationError(ValueError):
    """Raised when input files or records violate the data contract.

    ``problems`` holds one human-readable diagnostic per offending row/field.
    """

    def __init__(self, message: str, problems: list[str] | None = None):
        self.problems = list(problems or [])
        if self.problems:
            shown = "\n  ".join(self.problems[:50])
            more = len(self.problems) - 50
            if more > 0:
                shown += f"\n  ... and {more} more"
            message = f"{message}\n  {shown}"
        super().__init__(message)


@dataclass(frozen=True)
class Measurement:
    region_id: str
    t: float
    value: float
    device: str


@dataclass(frozen=True)
class Region:
    region_id: str
    population: int
    demographics: tuple[float, ...]

    def __post_init__(self):
        problems = _region_problems(self.population, self.demographics)
        if problems:
            raise DataValidationError(f"invalid region {self.region_id!r}", problems)


@dataclass(frozen=True)
class SampleBlock:
    """Columnar measurements for a single region."""

    t: np.ndarray
    value: np.ndarray
    device: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.value)

    @classmethod
    def empty(cls) -> SampleBlock:
        return cls(np.empty(0), np.empty(0), ())

    def take(self, idx: np.ndarray) -> SampleBlock:
        return SampleBlock(self.t[idx], self.value[idx], tuple(self.device[i] for i in idx))


@dataclass(frozen=True)
class Dataset:
    """Regions plus their measurements, keyed by region id.

    Every region of ``regions`` has an entry in ``samples`` (possibly empty).
    ``notes`` records non-fatal conditions raised while deriving the dataset,
    e.g. regions skipped during re-sampling.
    """

    regions: Mapping[str, Region]
    samples: Mapping[str, SampleBlock]
    epoch: datetime
    source: str = "original"
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        unknown = sorted(set(self.samples) - set(self.regions))
        if unknown:
            raise DataValidationError(
                "measurements reference unknown regions: " + ", ".join(unknown)
            )
        missing = [rid for rid in self.regions if rid not in self.samples]
        if missing:
            samples = dict(self.samples)
            for rid in missing:
                samples[rid] = SampleBlock.empty()
            object.__setattr__(self, "samples", samples)

    @property
    def region_ids(self) -> list[str]:
        return list(self.regions)

    @property
    def k(self) -> int:
        return len(self.regions)

    def counts(self) -> np.ndarray:
        return np.array([len(self.samples[rid]) for rid in self.regions], dtype=np.int64)

    def populations(self) -> np.ndarray:
        return np.array([self.regions[rid].population for rid in self.regions], dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.counts().sum())

    @property
    def N(self) -> int:
        return int(self.populations().sum())

    def demographics(self) -> np.ndarray:
        """(k, 9) matrix of region demographics in region order."""
        return np.array([self.regions[rid].demographics for rid in self.regions], dtype=float)

    def all_values(self) -> np.ndarray:
        parts = [self.samples[rid].value for rid in self.regions]
        return np.concatenate(parts) if parts else np.empty(0)

    def all_times(self) -> np.ndarray:
        parts = [self.samples[rid].t for rid in self.regions]
        return np.concatenate(parts) if parts else np.empty(0)

    def measurements(self) -> Iterator[Measurement]:
        for rid in self.regions:
            block = self.samples[rid]
            for t, v, dev in zip(block.t, block.value, block.device):
                yield Measurement(rid, float(t), float(v), dev)


# ---------------------------------------------------------------------------
# validation helpers


def _region_problems(population, demographics) -> list[str]:
    problems = []
    if population < 1:
        problems.append(f"population must be >= 1, got {population}")
    if len(demographics) != len(DEMOGRAPHIC_NAMES):
        problems.append(f"expected {len(DEMOGRAPHIC_NAMES)} demographics, got {len(demographics)}")
        return problems
    for name, value in zip(DEMOGRAPHIC_NAMES, demographics):
        if math.isnan(value):
            continue  # missing values are allowed at load time
        if math.isinf(value):
            problems.append(f"{name} is not finite")
        elif name in PERCENT_NAMES and not 0.0 <= value <= 100.0:
            problems.append(f"{name}={value} outside [0, 100]")
        elif name not in PERCENT_NAMES and value <= 0:
            problems.append(f"{name}={value} must be positive")
    return problems


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 date or date-time; aware values are converted to naive UTC."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def _check_file(path: Path) -> None:
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")


def _check_header(path: Path, header: list[str] | None, expected: tuple[str, ...]) -> None:
    got = tuple(h.strip() for h in header) if header else ()
    if got != expected:
        raise DataValidationError(
            f"{path}: malformed header {','.join(got)!r}; expected {','.join(expected)!r}"
        )


def read_regions(path: str | Path) -> dict[str, Region]:
    path = Path(path)
    _check_file(path)
    regions: dict[str, Region] = {}
    problems: list[str] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), REGION_HEADER)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(REGION_HEADER):
                problems.append(f"line {lineno}: expected {len(REGION_HEADER)} fields, got {len(row)}")
                continue
            rid = row[0].strip()
            row_problems = []
            try:
                population = int(row[1])
            except ValueError:
                row_problems.append(f"population {row[1]!r} is not an integer")
                population = 1
            values = []
            for name, cell in zip(DEMOGRAPHIC_NAMES, row[2:]):
                cell = cell.strip()
                if not cell:
                    values.append(math.nan)
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    row_problems.append(f"{name} {cell!r} is not numeric")
                    values.append(math.nan)
            if not rid:
                row_problems.append("empty region_id")
            elif rid in regions:
                row_problems.append(f"duplicate region_id {rid!r}")
            row_problems += _region_problems(population, values)
            if row_problems:
                problems += [f"line {lineno}: {p}" for p in row_problems]
                continue
            regions[rid] = Region(rid, population, tuple(values))
    if problems:
        raise DataValidationError(f"{path}: invalid rows", problems)
    return regions


def load_dataset(
    measurements_path: str | Path,
    regions_path: str | Path,
    device_filter: str | None = None,
) -> Dataset:
    """Read and validate a measurements CSV against its regions CSV.

    Timestamps become fractional days since the earliest timestamp in the
    file, which is stored as the dataset epoch. When ``device_filter`` is set
    only rows whose device tag matches it (case-insensitively) are kept; the
    epoch is still taken over the whole file so time axes stay comparable
    across device subsets.
    """
    measurements_path = Path(measurements_path)
    regions = read_regions(regions_path)
    _check_file(measurements_path)
    wanted = device_filter.strip().lower() if device_filter else None

    rows: list[tuple[str, datetime, float, str]] = []
    problems: list[str] = []
    unknown: set[str] = set()
    epoch: datetime | None = None
    with measurements_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(measurements_path, next(reader, None), MEASUREMENT_HEADER)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(MEASUREMENT_HEADER):
                problems.append(f"line {lineno}: expected 4 fields, got {len(row)}")
                continue
            rid, ts_text, speed_text, device = (cell.strip() for cell in row)
            try:
                ts = parse_timestamp(ts_text)
            except ValueError:
                problems.append(f"line {lineno}: bad timestamp {ts_text!r}")
                continue
            try:
                speed = float(speed_text)
            except ValueError:
                problems.append(f"line {lineno}: speed_mbps {speed_text!r} is not numeric")
                continue
            if not math.isfinite(speed) or speed < 0:
                problems.append(f"line {lineno}: speed_mbps must be finite and >= 0, got {speed}")
                continue
            if epoch is None or ts < epoch:
                epoch = ts
            if wanted is not None and device.lower() != wanted:
                continue
            if rid not in regions:
                unknown.add(rid)
                continue
            rows.append((rid, ts, speed, device))
    if problems:
        raise DataValidationError(f"{measurements_path}: invalid rows", problems)
    if unknown:
        raise DataValidationError(
            f"{measurements_path}: measurements reference unknown regions: "
            + ", ".join(sorted(unknown))
        )

    if epoch is None:
        epoch = datetime(1970, 1, 1)
    grouped: dict[str, list[tuple[float, float, str]]] = {rid: [] for rid in regions}
    for rid, ts, speed, device in rows:
        grouped[rid].append(((ts - epoch) / _DAY, speed, device))
    samples = {
        rid: SampleBlock(
            np.array([r[0] for r in recs], dtype=float),
            np.array([r[1] for r in recs], dtype=float),
            tuple(r[2] for r in recs),
        )
        for rid, recs in grouped.items()
    }
    return Dataset(regions, samples, epoch)


def format_timestamp(epoch: datetime, t: float) -> str:
    return (epoch + timedelta(days=float(t))).isoformat()


def write_dataset(d: Dataset, measurements_path: str | Path, regions_path: str | Path) -> None:
    """Write ``d`` back out in the two CSV schemas ``load_dataset`` reads."""
    with Path(regions_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGION_HEADER)
        for rid, region in d.regions.items():
            demo = ["" if math.isnan(v) else repr(float(v)) for v in region.demographics]
            w.writerow([rid, region.population, *demo])
    with Path(measurements_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEASUREMENT_HEADER)
        for rid in d.regions:
            block = d.samples[rid]
            for t, v, dev in zip(block.t, block.value, block.device):
                w.writerow([rid, format_timestamp(d.epoch, t), repr(float(v)), dev])


# ---------------------------------------------------------------------------
# summary


@dataclass(frozen=True)
class RegionShare:
    region_id: str
    n_i: int
    N_i: int
    sample_share: float
    population_share: float


@dataclass(frozen=True)
class Summary:
    k: int
    n: int
    N: int
    rows: tuple[RegionShare, ...]
    empty: bool


def summarize(d: Dataset) -> Summary:
    """Counts plus sample and population shares, largest population first.

    With no measurements the sample shares are NaN and ``empty`` is set.
    """
    counts = d.counts()
    pops = d.populations()
    n, N = int(counts.sum()), int(pops.sum())
    ids = d.region_ids
    order = sorted(range(len(ids)), key=lambda i: (-pops[i], ids[i]))
    rows = tuple(
        RegionShare(
            ids[i],
            int(counts[i]),
            int(pops[i]),
            counts[i] / n if n else math.nan,
            pops[i] / N if N else math.nan,
        )
        for i in order
    )
    return Summary(len(ids), n, N, rows, n == 0)
