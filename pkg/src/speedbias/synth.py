"""Synthetic regions and measurements with known ground truth.

Speeds follow value = intercept + z_i' beta + trend(t) + noise, where z_i are
region demographics standardised over all generated regions, ``t`` is uniform
over the observation window and the noise is Gaussian. Values are clipped
at zero to satisfy the measurement schema. Sample counts are multinomial
with probabilities proportional to N_i exp(bias * s_i), where s_i sums the
standardised demographics named in ``bias_on``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
from scipy import linalg, special

from . import ssm
from .data import DEMOGRAPHIC_NAMES, Dataset, Region, SampleBlock
from .temporal import MaternHyper, _corr

SECONDS_PER_DAY = 86400
DEFAULT_EPOCH = datetime(2020, 1, 1)
DENSE_PATH_MAX = 5000

# clipped-Gaussian (mean, sd) for percentage covariates
DEFAULT_PERCENT_RANGES = {
    "pct_male": (49.0, 3.0),
    "pct_bachelor": (35.0, 15.0),
    "pct_internet": (85.0, 8.0),
    "pct_white": (60.0, 20.0),
    "pct_black": (15.0, 12.0),
    "pct_asian": (10.0, 8.0),
    "pct_hispanic": (15.0, 12.0),
}


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    k: int = 50
    population_range: tuple[float, float] = (500.0, 5000.0)  # log-uniform
    n_total: int = 20000
    bias: float = 0.0
    bias_on: tuple[str, ...] = ("income", "pct_bachelor")
    intercept: float = 100.0
    true_beta: dict = field(default_factory=dict)  # name -> effect per sd
    noise_sd: float = 20.0
    slope: float = 0.0  # per day
    gp: dict | None = None  # {"sigma2": ..., "gamma": ...}
    span_days: float = 580.0
    income_range: tuple[float, float] = (30000.0, 150000.0)  # log-uniform
    age_range: tuple[float, float] = (25.0, 55.0)
    percent_ranges: dict = field(default_factory=lambda: dict(DEFAULT_PERCENT_RANGES))
    devices: tuple[str, ...] = ("iOS", "Android")
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.k < 1:
            problems.append("k must be >= 1")
        lo, hi = self.population_range
        if not 1 <= lo <= hi:
            problems.append("population_range must satisfy 1 <= low <= high")
        if self.n_total < 1:
            problems.append("n_total must be >= 1")
        if not self.noise_sd >= 0:
            problems.append("noise_sd must be >= 0")
        if not self.span_days > 0:
            problems.append("span_days must be positive")
        unknown = sorted((set(self.true_beta) | set(self.bias_on)) - set(DEMOGRAPHIC_NAMES))
        if unknown:
            problems.append("unknown covariates: " + ", ".join(unknown))
        if self.gp is not None and not {"sigma2", "gamma"} <= set(self.gp):
            problems.append("gp needs sigma2 and gamma")
        if not self.devices:
            problems.append("devices must be non-empty")
        if self.seed < 0:
            problems.append("seed must be non-negative")
        if problems:
            raise SpecError("invalid synthetic spec: " + "; ".join(problems))

    @classmethod
    def from_dict(cls, raw: dict) -> SynthSpec:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise SpecError("unknown spec keys: " + ", ".join(unknown))
        conv = dict(raw)
        for key in ("population_range", "income_range", "age_range", "bias_on", "devices"):
            if key in conv:
                conv[key] = tuple(conv[key])
        if "percent_ranges" in conv:
            conv["percent_ranges"] = {
                **DEFAULT_PERCENT_RANGES,
                **{k: tuple(v) for k, v in conv["percent_ranges"].items()},
            }
        try:
            return cls(**conv)
        except TypeError as exc:
            raise SpecError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> SynthSpec:
        path = Path(path)
        if not path.exists():
            raise SpecError(f"no such spec file: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise SpecError(f"{path}: top level must be an object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


def example_spec_path() -> Path:
    return Path(__file__).with_name("example_spec.json")


@dataclass(frozen=True)
class GroundTruth:
    """Everything needed to evaluate the true per-region speed distribution.

    Region i's speed is max(0, mean_i + trend(T) + eps) with T uniform on
    [0, span], eps ~ N(0, noise_sd^2). For a GP trend the realised path is
    stored on ``path_t`` and the time average uses the trapezoid rule.
    """

    region_ids: tuple[str, ...]
    populations: np.ndarray
    region_means: np.ndarray
    noise_sd: float
    slope: float = 0.0
    span: float = 1.0
    intercept: float = 0.0
    beta: dict = field(default_factory=dict)  # standardised scale
    raw_beta: dict = field(default_factory=dict)
    raw_intercept: float = 0.0
    sampling_probs: np.ndarray | None = None
    path_t: np.ndarray | None = None
    path_f: np.ndarray | None = None
    gp: dict | None = None
    seed: int = 0

    @property
    def weights(self) -> np.ndarray:
        pops = np.asarray(self.populations, dtype=float)
        return pops / pops.sum()

    def region_cdf(self, x) -> np.ndarray:
        """(k, len(x)) matrix of F_i(x)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        m = np.asarray(self.region_means, dtype=float)[:, None]
        if self.path_t is not None:
            # average over the stored path
            z = x[None, None, :] - m[:, :, None] - self.path_f[None, :, None]
            vals = _normal_cdf(z, self.noise_sd)
            out = np.trapezoid(vals, self.path_t, axis=1) / (self.path_t[-1] - self.path_t[0])
        else:
            out = _uniform_shift_cdf(x[None, :] - m, self.slope * self.span, self.noise_sd)
        return np.where(x[None, :] < 0, 0.0, np.clip(out, 0.0, 1.0))

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "region_ids": list(self.region_ids),
            "populations": arr(self.populations),
            "region_means": arr(self.region_means),
            "noise_sd": self.noise_sd,
            "slope": self.slope,
            "span": self.span,
            "intercept": self.intercept,
            "beta": self.beta,
            "raw_beta": self.raw_beta,
            "raw_intercept": self.raw_intercept,
            "sampling_probs": arr(self.sampling_probs),
            "path_t": arr(self.path_t),
            "path_f": arr(self.path_f),
            "gp": self.gp,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> GroundTruth:
        raw = dict(raw)
        raw["region_ids"] = tuple(raw["region_ids"])
        for key in ("populations", "region_means", "sampling_probs", "path_t", "path_f"):
            if raw.get(key) is not None:
                raw[key] = np.asarray(raw[key], dtype=float)
        return cls(**raw)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> GroundTruth:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _normal_cdf(z, sd):
    if sd == 0:
        return (z >= 0).astype(float)
    return special.ndtr(z / sd)


def _uniform_shift_cdf(z, width, sd):
    """P(U + eps <= z) for U uniform on [0, width] (or [width, 0]) and eps ~ N(0, sd^2)."""
    if width == 0:
        return _normal_cdf(z, sd)
    if width < 0:
        # U on [width, 0]: shift so the support starts at 0
        return _uniform_shift_cdf(z - width, -width, sd)
    if sd == 0:
        return np.clip(z / width, 0.0, 1.0)
    # integral of Phi((z - u)/sd) du / width, antiderivative of Phi is a Phi(a) + phi(a)
    a1, a0 = z / sd, (z - width) / sd

    def G(a):
        return a * special.ndtr(a) + np.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)

    return sd * (G(a1) - G(a0)) / width


def true_population_cdf(truth: GroundTruth, x):
    """Population mixture sum_i (N_i / N) F_i(x); scalar in, scalar out."""
    vals = truth.weights @ truth.region_cdf(x)
    return float(vals[0]) if np.ndim(x) == 0 else vals


def simulate_gp_path(hyper: MaternHyper, times, seed=None, method: str = "auto") -> np.ndarray:
    """One draw from N(0, sigma2 (R + eta I)) at ``times``.

    Repeated times share the latent value; the nugget is added per entry.
    ``method="dense"`` factorises the correlation matrix of the distinct
    times, ``"ssm"`` runs the state-space recursion; ``"auto"`` picks dense
    up to 5000 distinct times.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.PCG64(seed))
    times = np.asarray(times, dtype=float)
    uniq, inverse = np.unique(times, return_inverse=True)
    if method == "auto":
        method = "dense" if uniq.size <= DENSE_PATH_MAX else "ssm"
    if method == "dense":
        R = _corr(uniq, uniq, hyper.gamma)
        w, U = linalg.eigh(R)
        if w[0] < -1e-8 * max(1.0, w[-1]):
            raise linalg.LinAlgError(f"correlation matrix not PSD (eigenvalue {w[0]:.3e})")
        f = U @ (np.sqrt(np.clip(w, 0.0, None)) * rng.standard_normal(uniq.size))
    elif method == "ssm":
        f = ssm.simulate(uniq, hyper.lam, rng.standard_normal((uniq.size, 3)))
    else:
        raise ValueError(f"unknown method {method!r}")
    out = f[inverse]
    if hyper.eta > 0:
        out = out + math.sqrt(hyper.eta) * rng.standard_normal(times.size)
    return math.sqrt(hyper.sigma2) * out


def _demographics(spec: SynthSpec, rng) -> np.ndarray:
    k = spec.k
    cols = []
    for name in DEMOGRAPHIC_NAMES:
        if name == "income":
            lo, hi = spec.income_range
            cols.append(np.exp(rng.uniform(math.log(lo), math.log(hi), k)))
        elif name == "age":
            cols.append(rng.uniform(*spec.age_range, k))
        else:
            mu, sd = spec.percent_ranges[name]
            cols.append(np.clip(rng.normal(mu, sd, k), 0.0, 100.0))
    return np.column_stack(cols)


def _standardize(demo):
    center = demo.mean(axis=0)
    scale = demo.std(axis=0, ddof=1) if demo.shape[0] > 1 else np.ones(demo.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    return (demo - center) / scale, center, scale


def generate(spec: SynthSpec) -> tuple[Dataset, GroundTruth]:
    """Draw regions, sample counts and measurements from ``spec``."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    k = spec.k
    width = len(str(k - 1))
    ids = tuple(f"R{i:0{width}d}" for i in range(k))

    lo, hi = spec.population_range
    pops = np.rint(np.exp(rng.uniform(math.log(lo), math.log(hi), k))).astype(np.int64)
    pops = np.maximum(pops, 1)
    demo = _demographics(spec, rng)
    z, center, scale = _standardize(demo)
    col = {name: j for j, name in enumerate(DEMOGRAPHIC_NAMES)}

    beta = np.zeros(len(DEMOGRAPHIC_NAMES))
    for name, b in spec.true_beta.items():
        beta[col[name]] = float(b)
    means = spec.intercept + z @ beta

    score = z[:, [col[name] for name in spec.bias_on]].sum(axis=1) if spec.bias_on else np.zeros(k)
    logits = np.log(pops.astype(float)) + spec.bias * score
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    counts = rng.multinomial(spec.n_total, probs)

    n = int(counts.sum())
    seconds = rng.integers(0, int(round(spec.span_days * SECONDS_PER_DAY)) + 1, size=n)
    seconds -= seconds.min()  # earliest record sits at the epoch
    t = seconds / SECONDS_PER_DAY
    region_of = np.repeat(np.arange(k), counts)

    path_t = path_f = None
    if spec.gp is not None:
        hyper = MaternHyper(float(spec.gp["sigma2"]), float(spec.gp["gamma"]), 0.0)
        grid = np.linspace(0.0, spec.span_days, int(math.ceil(spec.span_days)) * 4 + 1)
        both = np.concatenate([t, grid])
        path = simulate_gp_path(hyper, both, rng, method="ssm")
        trend = path[:n] + spec.slope * t
        path_t, path_f = grid, path[n:] + spec.slope * grid
    else:
        trend = spec.slope * t

    noise = spec.noise_sd * rng.standard_normal(n)
    values = np.maximum(means[region_of] + trend + noise, 0.0)
    dev_idx = rng.integers(0, len(spec.devices), size=n)

    regions = {rid: Region(rid, int(pops[i]), tuple(float(v) for v in demo[i])) for i, rid in enumerate(ids)}
    samples = {}
    offsets = np.concatenate([[0], np.cumsum(counts)])
    for i, rid in enumerate(ids):
        sl = slice(offsets[i], offsets[i + 1])
        order = np.argsort(t[sl], kind="stable")
        samples[rid] = SampleBlock(
            t[sl][order], values[sl][order], tuple(spec.devices[j] for j in dev_idx[sl][order])
        )
    dataset = Dataset(regions, samples, DEFAULT_EPOCH)

    raw_beta = {name: float(beta[col[name]] / scale[col[name]]) for name in spec.true_beta}
    raw_intercept = float(spec.intercept - np.sum(beta * center / scale))
    truth = GroundTruth(
        region_ids=ids,
        populations=pops.astype(float),
        region_means=means,
        noise_sd=float(spec.noise_sd),
        slope=float(spec.slope),
        span=float(t.max()) if n else float(spec.span_days),
        intercept=float(spec.intercept),
        beta={name: float(b) for name, b in spec.true_beta.items()},
        raw_beta=raw_beta,
        raw_intercept=raw_intercept,
        sampling_probs=probs,
        path_t=path_t,
        path_f=path_f,
        gp=spec.gp,
        seed=spec.seed,
    )
    return dataset, truth


def sample_region_values(truth: GroundTruth, counts, rng) -> list[np.ndarray]:
    """Fresh speeds for each region of ``truth`` with the given counts.

    Keeps the regions fixed so Monte Carlo replicates share one estimand.
    Only linear trends are supported.
    """
    if truth.path_t is not None:
        raise ValueError("redrawing is only supported for linear trends")
    out = []
    for mean, c in zip(truth.region_means, counts):
        u = rng.uniform(0.0, truth.span, int(c))
        v = mean + truth.slope * u + truth.noise_sd * rng.standard_normal(int(c))
        out.append(np.maximum(v, 0.0))
    return out
