"""Seeded simulation designs: Gaussian covariates, six error laws, outliers.

Every batch draws from its own Philox (counter-based) generator keyed by
(seed, replication, batch index), so any batch can be regenerated on its own
and parallel generation matches serial generation bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import InvalidInputError
from .streaming import BatchData

DEFAULT_THETA = (1.0, -1.0, 2.0, -2.0)
OUTLIER_FRACTION = 0.15
OUTLIER_SHIFT = 20.0
MIX_WEIGHT = 0.15
MIX_VAR = 8.0  # "N(0,8)" read as variance 8


class ErrorCase(IntEnum):
    NORMAL = 1
    T3 = 2
    T3_OUTLIERS = 3
    NORMAL_MIX = 4
    SHIFTED_MIX = 5
    CAUCHY = 6

    @property
    def description(self) -> str:
        return _DESCRIPTIONS[self]


_DESCRIPTIONS = {
    ErrorCase.NORMAL: "N(0,1)",
    ErrorCase.T3: "t(3)",
    ErrorCase.T3_OUTLIERS: "t(3), 15% of responses shifted by +20",
    ErrorCase.NORMAL_MIX: "0.85 N(0,1) + 0.15 N(0,8)",
    ErrorCase.SHIFTED_MIX: "0.85 N(0,1) + 0.15 N(4,8)",
    ErrorCase.CAUCHY: "Cauchy(0,1)",
}


@dataclass(frozen=True)
class SimSpec:
    theta0: tuple[float, ...] = DEFAULT_THETA
    n_t: int = 100
    b: int = 100
    error_case: ErrorCase = ErrorCase.NORMAL
    heteroscedastic: bool = False
    seed: int = 0
    replication: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta0", tuple(float(v) for v in self.theta0))
        object.__setattr__(self, "error_case", ErrorCase(self.error_case))
        if self.n_t < 1 or self.b < 1:
            raise InvalidInputError("n_t and b must be >= 1")
        if not self.theta0:
            raise InvalidInputError("theta0 must be non-empty")

    @property
    def p(self) -> int:
        return len(self.theta0)

    @property
    def N(self) -> int:
        return self.n_t * self.b

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta0"] = list(self.theta0)
        d["error_case"] = int(self.error_case)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown SimSpec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SimSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def batch_rng(seed: int, replication: int, t: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replication, t])))


def gen_covariates(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1 or p < 1:
        raise InvalidInputError("n and p must be >= 1")
    return rng.standard_normal((n, p))


def gen_error(case: ErrorCase | int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n errors from the given case (case 3 draws t(3); outliers come later)."""
    case = ErrorCase(case)
    if case is ErrorCase.NORMAL:
        return rng.standard_normal(n)
    if case in (ErrorCase.T3, ErrorCase.T3_OUTLIERS):
        return rng.standard_t(3, n)
    if case in (ErrorCase.NORMAL_MIX, ErrorCase.SHIFTED_MIX):
        heavy = rng.random(n) < MIX_WEIGHT
        z = rng.standard_normal(n)
        loc = 4.0 if case is ErrorCase.SHIFTED_MIX else 0.0
        return np.where(heavy, loc + math.sqrt(MIX_VAR) * z, z)
    return rng.standard_cauchy(n)


def heteroscedastic_factor(X: np.ndarray) -> np.ndarray:
    """Row sums of the covariates, used as a signed noise multiplier."""
    return X.sum(axis=1)


def gen_batch(spec: SimSpec, t: int, rng: np.random.Generator | None = None,
              contaminate: bool = True) -> BatchData:
    """Batch t (1-based) of the stream described by ``spec``.

    ``contaminate=False`` skips only the final outlier step of case 3, so the
    result is the same draw without the +20 shifts.
    """
    if not 1 <= t <= spec.b:
        raise InvalidInputError(f"batch index {t} outside 1..{spec.b}")
    rng = rng if rng is not None else batch_rng(spec.seed, spec.replication, t)
    X = gen_covariates(spec.n_t, spec.p, rng)
    eps = gen_error(spec.error_case, spec.n_t, rng)
    h = heteroscedastic_factor(X) if spec.heteroscedastic else 1.0
    y = X @ np.asarray(spec.theta0) + h * eps
    if spec.error_case is ErrorCase.T3_OUTLIERS:
        idx = rng.choice(spec.n_t, size=int(math.floor(OUTLIER_FRACTION * spec.n_t)), replace=False)
        if contaminate:
            y[idx] += OUTLIER_SHIFT
    return BatchData(X, y, t)


def gen_stream(spec: SimSpec) -> Iterator[BatchData]:
    for t in range(1, spec.b + 1):
        yield gen_batch(spec, t)


def write_stream_csv(spec: SimSpec, path) -> int:
    """Materialize a stream as CSV with columns x1..xp, y, batch. Returns rows written."""
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(spec.p)] + ["y", "batch"])
        for d in gen_stream(spec):
            for xi, yi in zip(d.X, d.y):
                w.writerow([repr(float(v)) for v in xi] + [repr(float(yi)), d.batch_index])
                rows += 1
    return rows


# --- airline-shaped synthetic data -----------------------------------------

AIRLINE_COLUMNS = ("DepTime", "Distance", "DayOfWeek", "Cancelled", "ArrDelay")


@dataclass(frozen=True)
class AirlineSim:
    """Synthetic flights whose log-shifted delay is linear in the model features.

    Features are (1, hour, distance/1000, night flag, weekend flag) and
    log(ArrDelay - min_shift + 1) = features . gamma + noise_sd * N(0,1).
    """

    gamma: tuple[float, ...] = (2.5, 0.03, 0.1, -0.2, 0.15)
    noise_sd: float = 0.5
    min_shift: float = -60.0
    cancel_rate: float = 0.0
    seed: int = 0


def gen_airline_records(sim: AirlineSim, n: int, rng: np.random.Generator | None = None) -> dict:
    rng = rng if rng is not None else batch_rng(sim.seed, 0, 1)
    hour = rng.integers(1, 25, n)
    minute = rng.integers(0, 60, n)
    dep = np.where(hour == 24, 2400, hour * 100 + minute)
    dist = rng.uniform(100, 3000, n).round()
    dow = rng.integers(1, 8, n)
    night = ((hour >= 20) | (hour <= 4)).astype(float)
    weekend = (dow >= 6).astype(float)
    F = np.column_stack([np.ones(n), hour, dist / 1000.0, night, weekend])
    logy = F @ np.asarray(sim.gamma) + sim.noise_sd * rng.standard_normal(n)
    delay = np.expm1(logy) + sim.min_shift
    cancelled = (rng.random(n) < sim.cancel_rate).astype(int)
    return {"DepTime": dep, "Distance": dist, "DayOfWeek": dow,
            "Cancelled": cancelled, "ArrDelay": delay, "_features": F, "_y": logy}


def write_airline_csv(sim: AirlineSim, n: int, path) -> dict:
    """Write an airline-schema CSV; returns the generated columns (with true features)."""
    rec = gen_airline_records(sim, n)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(AIRLINE_COLUMNS)
        for i in range(n):
            cancelled = rec["Cancelled"][i]
            w.writerow([int(rec["DepTime"][i]), repr(float(rec["Distance"][i])),
                        int(rec["DayOfWeek"][i]), int(cancelled),
                        "" if cancelled else repr(float(rec["ArrDelay"][i]))])
    return rec
