"""CSV streaming, feature schemas, and the file-based fit workflow."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import InvalidInputError, SchemaError
from .huber import HuberConfig, fit_huber, ols
from .inference import (bootstrap_se, huber_covariance, ols_covariance, residual_moments,
                        uhr_covariance)
from .linalg import gram
from .streaming import (BatchData, UpdatingState, dc_aggregate, finalize, ingest_batch,
                        new_state, rls_finalize, rls_ingest, rls_new)

log = logging.getLogger(__name__)

ESTIMATORS = ("uhr", "rls", "ols", "ohr", "dchr")


class RowRejected(ValueError):
    """A record that parsed but cannot be mapped to features."""


def hour_of(hhmm: float) -> int:
    """Hour 1..24 of an hhmm clock value; midnight (0 or 2400) is 24."""
    h = int(hhmm) // 100
    if not 0 <= h <= 24:
        raise RowRejected(f"time {hhmm!r} is not hhmm")
    return 24 if h == 0 else h


_PRED_OPS = ("in", "between", "hour_in", "hour_between")


def _eval_predicate(pred: Mapping, raw: float) -> bool:
    op = pred["op"]
    v = hour_of(raw) if op.startswith("hour_") else raw
    if op in ("in", "hour_in"):
        return any(v == float(x) for x in pred["values"])
    lo, hi = float(pred["lo"]), float(pred["hi"])
    if lo <= hi:
        return lo <= v <= hi
    return v >= lo or v <= hi  # wraps around, e.g. 20..4 for night hours


@dataclass(frozen=True)
class ColumnSpec:
    kind: str
    column: str
    scale: float = 1.0
    predicate: Mapping | None = None
    name: str | None = None

    def __post_init__(self):
        if self.kind not in ("numeric", "hour_of", "indicator"):
            raise SchemaError(f"unknown predictor kind {self.kind!r}")
        if self.kind == "indicator":
            if not self.predicate or self.predicate.get("op") not in _PRED_OPS:
                raise SchemaError(f"indicator on {self.column!r} needs a predicate op in {_PRED_OPS}")
            op = self.predicate["op"]
            need = ("values",) if op.endswith("in") else ("lo", "hi")
            missing = [k for k in need if k not in self.predicate]
            if missing:
                raise SchemaError(f"predicate {op!r} on {self.column!r} is missing {missing}")

    @property
    def label(self) -> str:
        return self.name or f"{self.kind}({self.column})"

    def value(self, raw: float) -> float:
        if self.kind == "numeric":
            return raw * self.scale
        if self.kind == "hour_of":
            return float(hour_of(raw))
        return 1.0 if _eval_predicate(self.predicate, raw) else 0.0

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "column": self.column}
        if self.kind == "numeric":
            d["scale"] = self.scale
        if self.kind == "indicator":
            d["predicate"] = dict(self.predicate)
        if self.name:
            d["name"] = self.name
        return d


@dataclass(frozen=True)
class ResponseSpec:
    column: str
    transform: str = "identity"
    min_value: float | None = None

    def __post_init__(self):
        if self.transform not in ("identity", "log_shift"):
            raise SchemaError(f"unknown response transform {self.transform!r}")
        if self.transform == "log_shift" and self.min_value is None:
            raise SchemaError("log_shift needs min_value (use column_min for a two-pass file)")

    def value(self, raw: float) -> float:
        if self.transform == "identity":
            return raw
        arg = raw - self.min_value + 1.0
        if not arg > 0:
            raise RowRejected(f"log_shift argument {arg!r} is not positive")
        return math.log(arg)

    def to_dict(self) -> dict:
        d = {"column": self.column, "transform": self.transform}
        if self.transform == "log_shift":
            d["min_value"] = self.min_value
        return d


@dataclass(frozen=True)
class RowFilter:
    """Drop rows with empty ``require`` fields or matching ``exclude`` values."""

    require: tuple[str, ...] = ()
    exclude: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def keep(self, record: Mapping[str, str]) -> bool:
        for col in self.require:
            v = record.get(col)
            if v is None or v.strip() in ("", "NA", "NaN"):
                return False
        for col, bad in self.exclude.items():
            if record.get(col, "").strip() in bad:
                return False
        return True

    def to_dict(self) -> dict:
        return {"require": list(self.require),
                "exclude": {k: list(v) for k, v in self.exclude.items()}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "RowFilter":
        return cls(require=tuple(d.get("require", ())),
                   exclude={k: tuple(str(x) for x in v) for k, v in d.get("exclude", {}).items()})


@dataclass(frozen=True)
class StreamSchema:
    response: ResponseSpec
    predictors: tuple[ColumnSpec, ...]
    intercept: bool = True
    row_filter: RowFilter = field(default_factory=RowFilter)

    def __post_init__(self):
        if not self.predictors:
            raise SchemaError("schema needs at least one predictor")

    @property
    def p(self) -> int:
        return len(self.predictors) + int(self.intercept)

    @property
    def names(self) -> list[str]:
        return (["intercept"] if self.intercept else []) + [c.label for c in self.predictors]

    @property
    def columns(self) -> set[str]:
        cols = {self.response.column} | {c.column for c in self.predictors}
        return cols | set(self.row_filter.require) | set(self.row_filter.exclude)

    def features(self, record: Mapping[str, str]) -> tuple[float, np.ndarray]:
        """(y, x) for one record. ValueError on unparseable fields, RowRejected on domain errors."""
        y = self.response.value(float(record[self.response.column]))
        x = [c.value(float(record[c.column])) for c in self.predictors]
        if self.intercept:
            x.insert(0, 1.0)
        return y, np.array(x)

    def to_dict(self) -> dict:
        return {"response": self.response.to_dict(),
                "predictors": [c.to_dict() for c in self.predictors],
                "intercept": self.intercept,
                "row_filter": self.row_filter.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "StreamSchema":
        try:
            preds = []
            for c in d["predictors"]:
                c = dict(c)
                if "predicate" in c:
                    c["predicate"] = dict(c["predicate"])
                preds.append(ColumnSpec(**c))
            return cls(response=ResponseSpec(**d["response"]), predictors=tuple(preds),
                       intercept=bool(d.get("intercept", True)),
                       row_filter=RowFilter.from_dict(d.get("row_filter", {})))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad schema: {exc}") from None

    @classmethod
    def load(cls, path) -> "StreamSchema":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


# --- airline model -----------------------------------------------------------

def airline_schema(min_arr_delay: float) -> StreamSchema:
    """log(ArrDelay - min + 1) on (1, departure hour, distance in 1000 miles,
    night departure 20:00-04:59, weekend)."""
    return StreamSchema(
        response=ResponseSpec("ArrDelay", "log_shift", float(min_arr_delay)),
        predictors=(
            ColumnSpec("hour_of", "DepTime", name="HD"),
            ColumnSpec("numeric", "Distance", scale=0.001, name="DIS"),
            ColumnSpec("indicator", "DepTime", predicate={"op": "hour_between", "lo": 20, "hi": 4},
                       name="NF"),
            ColumnSpec("indicator", "DayOfWeek", predicate={"op": "in", "values": [6, 7]},
                       name="WF"),
        ),
        intercept=True,
        row_filter=RowFilter(require=("ArrDelay", "DepTime", "Distance", "DayOfWeek"),
                             exclude={"Cancelled": ("1",)}),
    )


def airline_features(record: Mapping[str, str], min_shift: float) -> tuple[float, np.ndarray]:
    return airline_schema(min_shift).features({k: str(v) for k, v in record.items()})


def column_min(path, column: str, row_filter: RowFilter | None = None) -> float:
    """First pass over a file: the minimum of a numeric column over kept rows."""
    best = math.inf
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            if row_filter is not None and not row_filter.keep(rec):
                continue
            try:
                best = min(best, float(rec[column]))
            except (TypeError, ValueError):
                continue
    if best == math.inf:
        raise InvalidInputError(f"no numeric values in column {column!r}")
    return best


# --- streaming reader -------------------------------------------------------

class CsvStream:
    """Iterate a CSV file as BatchData of up to ``batch_size`` rows.

    A trailing batch with p rows or fewer is folded into the one before it,
    which needs a lookahead of p + 1 rows past a completed batch. Rows that
    fail the schema's row filter are counted in ``filtered``; unparseable
    rows in ``skipped`` (or raise in strict mode), domain rejections in
    ``rejected``. ``skip_rows``/``max_rows`` select a range of data lines.
    """

    def __init__(self, path, schema: StreamSchema, batch_size: int, *, strict: bool = False,
                 skip_rows: int = 0, max_rows: int | None = None, first_batch_index: int = 1):
        if batch_size <= schema.p:
            raise InvalidInputError(f"batch_size must exceed p={schema.p}, got {batch_size}")
        self.path = Path(path)
        self.schema = schema
        self.batch_size = batch_size
        self.strict = strict
        self.skip_rows = skip_rows
        self.max_rows = max_rows
        self.first_batch_index = first_batch_index
        self.rows_read = self.filtered = self.skipped = self.rejected = 0
        self.max_buffered = 0

    def _records(self) -> Iterator[tuple[int, dict]]:
        with open(self.path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = sorted(self.schema.columns - set(header))
            if missing:
                raise SchemaError(f"{self.path}: missing columns {missing}")
            for i, rec in enumerate(reader):
                if i < self.skip_rows:
                    continue
                if self.max_rows is not None and i >= self.skip_rows + self.max_rows:
                    break
                yield reader.line_num, rec

    def _parsed(self) -> Iterator[tuple[float, np.ndarray]]:
        for line, rec in self._records():
            self.rows_read += 1
            if None in rec or any(v is None for v in rec.values()):
                if self.strict:
                    raise SchemaError(f"{self.path}:{line}: wrong number of fields")
                self.skipped += 1
                continue
            if not self.schema.row_filter.keep(rec):
                self.filtered += 1
                continue
            try:
                yield self.schema.features(rec)
            except RowRejected as exc:
                log.debug("%s:%d rejected: %s", self.path, line, exc)
                self.rejected += 1
            except ValueError as exc:
                if self.strict:
                    raise SchemaError(f"{self.path}:{line}: {exc}") from None
                self.skipped += 1

    def _batch(self, rows, index) -> BatchData:
        return BatchData(np.array([x for _, x in rows]), np.array([y for y, _ in rows]), index)

    def __iter__(self) -> Iterator[BatchData]:
        p = self.schema.p
        index = self.first_batch_index
        held: list | None = None
        cur: list = []
        for row in self._parsed():
            cur.append(row)
            self.max_buffered = max(self.max_buffered, len(cur) + (len(held) if held else 0))
            if held is not None and len(cur) > p:
                yield self._batch(held, index)
                index += 1
                held = None
            if len(cur) == self.batch_size and held is None:
                held, cur = cur, []
        if held is not None:
            if len(cur) > p:
                yield self._batch(held, index)
                yield self._batch(cur, index + 1)
            else:
                yield self._batch(held + cur, index)
        elif cur:
            yield self._batch(cur, index)

    @property
    def stats(self) -> dict:
        return {"rows_read": self.rows_read, "filtered": self.filtered,
                "skipped": self.skipped, "rejected": self.rejected,
                "max_buffered_rows": self.max_buffered}


def count_data_rows(path) -> int:
    with open(path, newline="", encoding="utf-8") as fh:
        return max(sum(1 for _ in csv.reader(fh)) - 1, 0)


# --- prediction -------------------------------------------------------------

def predict(coef, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    coef = np.asarray(coef, dtype=float)
    if X.ndim != 2 or X.shape[1] != coef.shape[0]:
        raise InvalidInputError(f"X has shape {X.shape}, coef has {coef.shape[0]} entries")
    return X @ coef


def oos_metrics(pred, actual) -> tuple[float, float]:
    """Per-observation mean squared and mean absolute prediction error."""
    pred = np.asarray(pred, dtype=float).ravel()
    actual = np.asarray(actual, dtype=float).ravel()
    if pred.shape != actual.shape or pred.size == 0:
        raise InvalidInputError("pred and actual must be non-empty and equally long")
    e = pred - actual
    return float(np.mean(e * e)), float(np.mean(np.abs(e)))


# --- fit workflow -----------------------------------------------------------

@dataclass
class FitReport:
    estimator: str
    names: list[str]
    coef: np.ndarray
    se: np.ndarray | None = None
    t_values: np.ndarray | None = None
    se_method: str | None = None
    oos_mse: float | None = None
    oos_mae: float | None = None
    n_train: int = 0
    n_test: int = 0
    b_used: int = 0
    timing: dict = field(default_factory=dict)
    ingest: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else [float(v) for v in a]
        d = {"estimator": self.estimator, "names": self.names, "coef": arr(self.coef),
             "se": arr(self.se), "t_values": arr(self.t_values), "se_method": self.se_method,
             "n_train": self.n_train, "n_test": self.n_test, "b_used": self.b_used,
             "timing": self.timing, "ingest": self.ingest}
        if self.oos_mse is not None:
            d["oos_mse"] = self.oos_mse
            d["oos_mae"] = self.oos_mae
        return d


def _oos(coef, stream: CsvStream) -> tuple[float, float, int]:
    sq = ab = 0.0
    n = 0
    for d in stream:
        e = predict(coef, d.X) - d.y
        sq += float(e @ e)
        ab += float(np.abs(e).sum())
        n += d.n
    if n == 0:
        raise InvalidInputError("test split has no usable rows")
    return sq / n, ab / n, n


def fit_csv(
    path,
    schema: StreamSchema,
    estimator: str = "uhr",
    batch_size: int = 1000,
    cfg: HuberConfig | None = None,
    *,
    bootstrap: int | None = None,
    seed: int = 0,
    test_split: float | None = None,
    test_file=None,
    skip_rows: int = 0,
    max_rows: int | None = None,
    initial_state: UpdatingState | None = None,
    strict: bool = False,
) -> tuple[FitReport, UpdatingState | None]:
    """Fit ``estimator`` on a CSV file and optionally score a held-out part.

    ``test_split`` holds out the trailing fraction of data lines (the training
    set is the ordered prefix). uhr and rls run in one streaming pass; ols,
    ohr and dchr pool the training batches. Returns the report and, for uhr,
    the final updating state (resumable via ``initial_state``).
    """
    if estimator not in ESTIMATORS:
        raise InvalidInputError(f"unknown estimator {estimator!r}")
    if test_split is not None and test_file is not None:
        raise InvalidInputError("use either test_split or test_file, not both")
    if bootstrap is not None and estimator != "uhr":
        raise InvalidInputError("bootstrap standard errors are only available for uhr")
    if initial_state is not None and (estimator != "uhr" or bootstrap is not None):
        raise InvalidInputError("resuming from a state needs estimator uhr without bootstrap")
    cfg = cfg or HuberConfig()
    t_start = time.perf_counter()

    test_stream = None
    if test_split is not None:
        if not 0 < test_split < 1:
            raise InvalidInputError("test_split must lie in (0, 1)")
        total = count_data_rows(path) - skip_rows
        if max_rows is not None:
            total = min(total, max_rows)
        n_train_rows = int(math.floor((1 - test_split) * total))
        test_stream = CsvStream(path, schema, batch_size, strict=strict,
                                skip_rows=skip_rows + n_train_rows, max_rows=total - n_train_rows)
        max_rows = n_train_rows
    elif test_file is not None:
        test_stream = CsvStream(test_file, schema, batch_size, strict=strict)

    first = 1 if initial_state is None else initial_state.b_seen + len(initial_state.skipped) + 1

    def train_stream():
        return CsvStream(path, schema, batch_size, strict=strict, skip_rows=skip_rows,
                         max_rows=max_rows, first_batch_index=first)

    stream = train_stream()
    report = FitReport(estimator=estimator, names=schema.names, coef=np.zeros(schema.p))
    state = None
    t_fit = time.perf_counter()
    if estimator == "uhr":
        state = initial_state if initial_state is not None else new_state(schema.p)
        last = None
        for d in stream:
            state = ingest_batch(state, d, cfg)
            last = d
        coef = finalize(state)
        report.b_used, report.n_train = state.b_seen, state.n_total
        if last is not None:
            m = residual_moments(last.y - last.X @ coef, cfg)
            cov = uhr_covariance(state, m)
            report.se, report.t_values = cov.se, cov.t_values
            report.se_method = "plug-in (psi moments from last batch)"
    elif estimator == "rls":
        s = rls_new(schema.p)
        yty = 0.0
        for d in stream:
            s = rls_ingest(s, d)
            yty += float(d.y @ d.y)
        coef = rls_finalize(s)
        rss = max(yty - 2 * coef @ s.c + coef @ s.A @ coef, 0.0)
        cov = ols_covariance(s.A, coef, rss, s.n_total)
        report.se, report.t_values, report.se_method = cov.se, cov.t_values, "classical"
        report.b_used, report.n_train = s.b_seen, s.n_total
    else:
        batches = list(stream)
        if not batches:
            raise InvalidInputError("no usable training rows")
        X = np.vstack([d.X for d in batches])
        y = np.concatenate([d.y for d in batches])
        G = gram(X)
        if estimator == "ols":
            coef = ols(X, y)
            r = y - X @ coef
            cov = ols_covariance(G, coef, float(r @ r), len(y))
            report.se_method = "classical"
        elif estimator == "ohr":
            coef = fit_huber(X, y, cfg).coef
            cov = huber_covariance(G, coef, residual_moments(y - X @ coef, cfg))
            report.se_method = "plug-in (pooled psi moments)"
        else:
            coef = dc_aggregate([(fit_huber(d.X, d.y, cfg).coef, d.n) for d in batches])
            cov = huber_covariance(G, coef, residual_moments(y - X @ coef, cfg))
            report.se_method = "plug-in (pooled psi moments)"
        report.se, report.t_values = cov.se, cov.t_values
        report.b_used, report.n_train = len(batches), len(y)
    report.coef = coef
    report.timing["fit_s"] = time.perf_counter() - t_fit
    report.ingest = stream.stats

    if bootstrap is not None:
        t_boot = time.perf_counter()
        se = bootstrap_se(train_stream, cfg, B=bootstrap, seed=seed)
        report.se = se
        with np.errstate(divide="ignore", invalid="ignore"):
            report.t_values = coef / se
        report.se_method = f"bootstrap (B={bootstrap}, rows resampled within batches)"
        report.timing["bootstrap_s"] = time.perf_counter() - t_boot

    if test_stream is not None:
        report.oos_mse, report.oos_mae, report.n_test = _oos(coef, test_stream)
    report.timing["total_s"] = time.perf_counter() - t_start
    return report, state
