"""Monte Carlo comparison of OLS, RLS, OHR, DC-HR and UHR on simulated streams."""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .errors import HuberStreamError, InvalidInputError, NumericalError
from .huber import HuberConfig, fit_huber, ols
from .simgen import DEFAULT_THETA, ErrorCase, SimSpec, gen_stream
from .streaming import (dc_aggregate, finalize, ingest_batch, new_state, rls_finalize,
                        rls_ingest, rls_new)

log = logging.getLogger(__name__)

ESTIMATORS = ("OLS", "RLS", "OHR", "DCHR", "UHR")
FAILURE_ABORT_FRACTION = 0.20


class ExperimentAborted(NumericalError):
    pass


@dataclass(frozen=True)
class GridPoint:
    N: int
    n_t: int
    b: int

    def __post_init__(self):
        if self.N != self.n_t * self.b:
            raise InvalidInputError(f"grid point needs N = n_t * b, got {self.N} != {self.n_t}*{self.b}")

    @classmethod
    def from_nt(cls, n_t: int, b: int) -> "GridPoint":
        return cls(n_t * b, n_t, b)


@dataclass(frozen=True)
class ExperimentSpec:
    grid: tuple[GridPoint, ...]
    cases: tuple[tuple[int, bool], ...] = ((1, False),)
    estimators: tuple[str, ...] = ESTIMATORS
    reps: int = 200
    base_seed: int = 0
    which: str = "custom"
    theta0: tuple[float, ...] = DEFAULT_THETA
    huber: HuberConfig = field(default_factory=HuberConfig)
    timing_repeats: int = 3
    workers: int = 1

    def __post_init__(self):
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise InvalidInputError(f"unknown estimators {sorted(bad)}")
        if self.reps < 1 or self.timing_repeats < 1 or self.workers < 1:
            raise InvalidInputError("reps, timing_repeats and workers must be >= 1")
        if self.which not in ("E1", "E2", "E3", "E4", "custom"):
            raise InvalidInputError(f"unknown experiment {self.which!r}")
        for c, _ in self.cases:
            ErrorCase(c)

    def to_dict(self) -> dict:
        return {
            "which": self.which,
            "grid": [asdict(g) for g in self.grid],
            "cases": [{"case": int(c), "design": "hetero" if h else "homo"} for c, h in self.cases],
            "estimators": list(self.estimators),
            "reps": self.reps,
            "base_seed": self.base_seed,
            "theta0": list(self.theta0),
            "huber": self.huber.to_dict(),
            "timing_repeats": self.timing_repeats,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        if "preset" in d:
            base = preset(d.pop("preset"), d.pop("scale", "desk")).to_dict()
            base.update(d)
            d = base
        try:
            grid = tuple(
                GridPoint(**g) if isinstance(g, dict) else GridPoint(*g) for g in d.pop("grid")
            )
            cases = tuple(
                (int(c["case"]), c.get("design", "homo") == "hetero") if isinstance(c, dict)
                else (int(c[0]), bool(c[1]))
                for c in d.pop("cases", [{"case": 1}])
            )
            if "huber" in d:
                d["huber"] = HuberConfig.from_dict(d["huber"])
            for key in ("estimators", "theta0"):
                if key in d:
                    d[key] = tuple(d[key])
            return cls(grid=grid, cases=cases, **d)
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"bad experiment config: {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


ALL_CASES = tuple((c, h) for h in (False, True) for c in range(1, 7))


def preset(which: str, scale: str = "desk") -> ExperimentSpec:
    """The four simulation experiments, at full scale or a desk-sized version.

    Desk scale caps N at 1e5 and uses 200 replications instead of 500.
    """
    if scale not in ("desk", "full"):
        raise InvalidInputError(f"scale must be 'desk' or 'full', got {scale!r}")
    full = scale == "full"
    if which == "E1":
        N = 1_000_000 if full else 100_000
        grid = [GridPoint(N, N // b, b) for b in (100, 200, 500, 1000)]
    elif which == "E2":
        bs = (10, 100, 1000, 10000) if full else (10, 100, 1000)
        grid = [GridPoint.from_nt(100, b) for b in bs]
    elif which == "E3":
        Ns = (250_000, 500_000, 750_000, 1_000_000) if full else (25_000, 50_000, 75_000, 100_000)
        grid = [GridPoint(N, 5000, N // 5000) for N in Ns]
    elif which == "E4":
        Ns = [k * 100_000 for k in range(1, 9)] if full else [k * 10_000 for k in range(1, 9)]
        grid = [GridPoint(N, 1000, N // 1000) for N in Ns]
    else:
        raise InvalidInputError(f"unknown preset {which!r}")
    return ExperimentSpec(grid=tuple(grid), cases=ALL_CASES, reps=500 if full else 200,
                          which=which)


@dataclass(frozen=True)
class ResultRow:
    which: str
    N: int
    n_t: int
    b: int
    case: int
    heteroscedastic: bool
    estimator: str
    mse: float
    mae: float
    mean_time_s: float
    reps_used: int
    failures: int


def _check_estimates(estimates, theta0) -> tuple[np.ndarray, np.ndarray]:
    if len(estimates) == 0:
        raise InvalidInputError("need at least one estimate")
    est = np.array([np.asarray(e, dtype=float) for e in estimates])
    theta0 = np.asarray(theta0, dtype=float)
    if est.ndim != 2 or est.shape[1] != theta0.shape[0]:
        raise InvalidInputError("estimates and theta0 disagree on p")
    return est, theta0


def mse(estimates, theta0) -> float:
    """Squared error summed over coordinates, averaged over replications."""
    est, theta0 = _check_estimates(estimates, theta0)
    return float(np.mean(np.sum((est - theta0) ** 2, axis=1)))


def mae(estimates, theta0) -> float:
    est, theta0 = _check_estimates(estimates, theta0)
    return float(np.mean(np.sum(np.abs(est - theta0), axis=1)))


# --- estimators on a materialized stream -----------------------------------

def _est_ols(batches, X, y, cfg):
    return ols(X, y)


def _est_rls(batches, X, y, cfg):
    s = rls_new(X.shape[1])
    for d in batches:
        s = rls_ingest(s, d)
    return rls_finalize(s)


def _est_ohr(batches, X, y, cfg):
    return fit_huber(X, y, cfg).coef


def _est_dchr(batches, X, y, cfg):
    return dc_aggregate([(fit_huber(d.X, d.y, cfg).coef, d.n) for d in batches])


def _est_uhr(batches, X, y, cfg):
    s = new_state(X.shape[1])
    for d in batches:
        s = ingest_batch(s, d, cfg)
    return finalize(s)


ESTIMATOR_FUNCS: dict[str, Callable] = {
    "OLS": _est_ols, "RLS": _est_rls, "OHR": _est_ohr, "DCHR": _est_dchr, "UHR": _est_uhr,
}


def point_seed(base_seed: int, g: GridPoint, case: int, hetero: bool) -> int:
    ss = np.random.SeedSequence([base_seed, g.N, g.n_t, case, int(hetero)])
    return int(ss.generate_state(1, np.uint64)[0])


def _run_rep(args):
    sim, estimators, cfg, timing_repeats = args
    batches = list(gen_stream(sim))
    X = np.vstack([d.X for d in batches])
    y = np.concatenate([d.y for d in batches])
    out = {}
    for name in estimators:
        fn = ESTIMATOR_FUNCS[name]
        times = []
        est = None
        try:
            for _ in range(timing_repeats):
                t0 = time.perf_counter()
                est = fn(batches, X, y, cfg)
                times.append(time.perf_counter() - t0)
            out[name] = (est, statistics.median(times))
        except HuberStreamError as exc:
            out[name] = (None, str(exc))
    return out


def run_experiment(spec: ExperimentSpec, progress: Callable[[str], None] | None = None) -> list[ResultRow]:
    """Run every grid point x error case x estimator for ``spec.reps`` replications.

    Replication r of a point always uses the same simulated stream, whatever
    the worker count, and aggregation follows replication order, so MSE and
    MAE are reproducible to the last bit. Only the estimator calls are timed.
    """
    rows: list[ResultRow] = []
    total = failed = 0
    pool = ProcessPoolExecutor(spec.workers) if spec.workers > 1 else None
    try:
        for g in spec.grid:
            for case, hetero in spec.cases:
                seed = point_seed(spec.base_seed, g, case, hetero)
                jobs = [
                    (SimSpec(theta0=spec.theta0, n_t=g.n_t, b=g.b, error_case=case,
                             heteroscedastic=hetero, seed=seed, replication=r),
                     spec.estimators, spec.huber, spec.timing_repeats)
                    for r in range(spec.reps)
                ]
                results = list(pool.map(_run_rep, jobs)) if pool else [_run_rep(j) for j in jobs]
                for name in spec.estimators:
                    ests = [res[name][0] for res in results if res[name][0] is not None]
                    times = [res[name][1] for res in results if res[name][0] is not None]
                    n_fail = spec.reps - len(ests)
                    total += spec.reps
                    failed += n_fail
                    if n_fail:
                        log.warning("%s failed on %d/%d reps at N=%d case=%d", name, n_fail,
                                    spec.reps, g.N, case)
                    rows.append(ResultRow(
                        which=spec.which, N=g.N, n_t=g.n_t, b=g.b, case=case,
                        heteroscedastic=hetero, estimator=name,
                        mse=mse(ests, spec.theta0) if ests else float("nan"),
                        mae=mae(ests, spec.theta0) if ests else float("nan"),
                        mean_time_s=float(np.mean(times)) if times else float("nan"),
                        reps_used=len(ests), failures=n_fail,
                    ))
                if progress:
                    progress(f"N={g.N} n_t={g.n_t} b={g.b} case={case} "
                             f"{'hetero' if hetero else 'homo'} done")
                if failed > FAILURE_ABORT_FRACTION * total:
                    raise ExperimentAborted(f"{failed} of {total} estimator runs failed")
    finally:
        if pool:
            pool.shutdown()
    return rows


# --- output -----------------------------------------------------------------

LONG_COLUMNS = ("N_b", "n_t", "b", "case", "design", "estimator", "mse", "mae",
                "time_s", "reps_used", "failures")
MSE_UNIT, MAE_UNIT = 1e-4, 1e-2


def _fmt(v: float) -> str:
    return "nan" if v != v else f"{v:.5f}"


def _design(h: bool) -> str:
    return "hetero" if h else "homo"


def _row_values(r: ResultRow, report_units: bool) -> list:
    ms = r.mse / MSE_UNIT if report_units else r.mse
    ma = r.mae / MAE_UNIT if report_units else r.mae
    return [r.N, r.n_t, r.b, r.case, _design(r.heteroscedastic), r.estimator,
            _fmt(ms), _fmt(ma), _fmt(r.mean_time_s), r.reps_used, r.failures]


def _provenance(spec: ExperimentSpec | None, report_units: bool) -> dict:
    prov = {"generator": f"onlinehuber {__version__}",
            "units": "mse x1e-4, mae x1e-2, time seconds" if report_units
            else "mse, mae raw, time seconds"}
    if spec is not None:
        prov["spec"] = json.dumps(spec.to_dict(), sort_keys=True)
    return prov


def _x_axis(rows: Sequence[ResultRow]) -> str:
    return "b" if len({r.N for r in rows}) <= 1 else "N_b"


def emit_results(rows: Sequence[ResultRow], fmt: str = "csv", *, layout: str = "long",
                 report_units: bool = True, spec: ExperimentSpec | None = None) -> str:
    """Render rows as csv, json or markdown.

    ``layout="long"`` gives one line per row. ``layout="table"`` (csv) and
    markdown group by error case and design, with a metric x estimator block
    and one column per b (when N is fixed) or per N.
    """
    if fmt not in ("csv", "json", "markdown"):
        raise InvalidInputError(f"unknown format {fmt!r}")
    if layout not in ("long", "table"):
        raise InvalidInputError(f"unknown layout {layout!r}")
    prov = _provenance(spec, report_units)
    if fmt == "json":
        return json.dumps({
            "provenance": prov,
            "columns": list(LONG_COLUMNS),
            "rows": [dict(zip(LONG_COLUMNS, _row_values(r, report_units))) for r in rows],
        }, indent=2)
    buf = io.StringIO()
    if fmt == "csv":
        for k, v in prov.items():
            buf.write(f"# {k}: {v}\n")
        w = csv.writer(buf, lineterminator="\n")
        if layout == "long":
            w.writerow(LONG_COLUMNS)
            for r in rows:
                w.writerow(_row_values(r, report_units))
        else:
            for line in _table_lines(rows, report_units):
                w.writerow(line)
        return buf.getvalue()
    buf.write("<!-- " + "; ".join(f"{k}: {v}" for k, v in prov.items()) + " -->\n")
    groups = _grouped(rows)
    if not groups:
        buf.write("| case | design | metric | estimator |\n|---|---|---|---|\n")
    for (case, hetero), grp in groups.items():
        lines = _table_lines(grp, report_units)
        head = lines[0]
        buf.write(f"\n### case {case}: {ErrorCase(case).description}, {_design(hetero)}\n\n")
        buf.write("| " + " | ".join(head[2:]) + " |\n")
        buf.write("|" + "---|" * (len(head) - 2) + "\n")
        for line in lines[1:]:
            buf.write("| " + " | ".join(str(v) for v in line[2:]) + " |\n")
    return buf.getvalue()


def _grouped(rows):
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.case, r.heteroscedastic), []).append(r)
    return groups


def _table_lines(rows: Sequence[ResultRow], report_units: bool) -> list[list]:
    axis = _x_axis(rows)
    xs = sorted({r.b if axis == "b" else r.N for r in rows})
    head = ["case", "design", "metric", "estimator"] + [f"{axis}={x}" for x in xs]
    lines = [head]
    for (case, hetero), grp in _grouped(rows).items():
        names = [e for e in ESTIMATORS if any(r.estimator == e for r in grp)]
        for metric in ("mse", "mae", "time"):
            for name in names:
                cells = {}
                for r in grp:
                    if r.estimator != name:
                        continue
                    vals = _row_values(r, report_units)
                    cells[r.b if axis == "b" else r.N] = {"mse": vals[6], "mae": vals[7],
                                                          "time": vals[8]}[metric]
                lines.append([case, _design(hetero), metric, name]
                             + [cells.get(x, "") for x in xs])
    return lines


def figure_series(rows: Sequence[ResultRow], x: str = "b", y: str = "mse",
                  report_units: bool = True) -> str:
    """Long-format CSV (case, design, x, y, series) for line plots."""
    if x not in ("b", "N_b") or y not in ("mse", "mae", "time"):
        raise InvalidInputError(f"unsupported series x={x!r} y={y!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case", "design", x, y, "series"])
    for r in rows:
        vals = _row_values(r, report_units)
        w.writerow([r.case, _design(r.heteroscedastic), r.b if x == "b" else r.N,
                    {"mse": vals[6], "mae": vals[7], "time": vals[8]}[y], r.estimator])
    return buf.getvalue()
