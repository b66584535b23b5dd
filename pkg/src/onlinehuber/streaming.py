"""Online-updating Huber regression and its streaming baselines.

Each batch contributes two summaries, X_t^T X_t and X_t^T X_t theta_t, where
theta_t is the Huber fit on that batch alone. The running sums U and V are the
whole stream state; the estimate is U^{-1} V. Raw rows are never kept.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from .errors import HuberStreamError, InvalidInputError, SingularMatrixError
from .huber import HuberConfig, fit_huber
from .linalg import gram, solve_spd

log = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "onlinehuber.updating_state"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class BatchData:
    X: np.ndarray
    y: np.ndarray
    batch_index: int = 1

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] < 1:
            raise InvalidInputError(f"batch X must be a non-empty 2-D array, got {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise InvalidInputError(f"batch has {X.shape[0]} rows of X but {y.shape[0]} responses")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class LocalFit:
    coef: np.ndarray
    n: int


@dataclass(frozen=True)
class UpdatingState:
    U: np.ndarray
    V: np.ndarray
    n_total: int = 0
    b_seen: int = 0
    # None disables retention; a tuple keeps (coef, n_t) per batch
    local_fits: tuple[LocalFit, ...] | None = None
    skipped: tuple[int, ...] = field(default=())

    @property
    def p(self) -> int:
        return self.V.shape[0]


def new_state(p: int, keep_local_fits: bool = False) -> UpdatingState:
    if p < 1:
        raise InvalidInputError(f"p must be >= 1, got {p}")
    return UpdatingState(U=np.zeros((p, p)), V=np.zeros(p),
                         local_fits=() if keep_local_fits else None)


def ingest_batch(
    s: UpdatingState,
    d: BatchData,
    cfg: HuberConfig | None = None,
    on_error: Literal["raise", "skip"] = "raise",
) -> UpdatingState:
    """Fit the local Huber estimator on ``d`` and add its summaries to ``s``.

    With ``on_error="skip"`` a batch whose local fit fails is logged and
    left out; the returned state records its index in ``skipped``.
    """
    if d.p != s.p:
        raise InvalidInputError(f"batch {d.batch_index} has p={d.p}, stream has p={s.p}")
    if d.n <= s.p:
        raise InvalidInputError(
            f"batch {d.batch_index} has {d.n} rows; a local fit needs more than p={s.p}"
        )
    try:
        fit = fit_huber(d.X, d.y, cfg)
    except HuberStreamError as exc:
        if on_error == "skip":
            log.warning("skipping batch %d: %s", d.batch_index, exc)
            return _replace(s, skipped=s.skipped + (d.batch_index,))
        raise exc.at_batch(d.batch_index)
    G = gram(d.X)
    local = None if s.local_fits is None else s.local_fits + (LocalFit(fit.coef, d.n),)
    return UpdatingState(U=s.U + G, V=s.V + G @ fit.coef, n_total=s.n_total + d.n,
                         b_seen=s.b_seen + 1, local_fits=local, skipped=s.skipped)


def _replace(s: UpdatingState, **kw) -> UpdatingState:
    fields = dict(U=s.U, V=s.V, n_total=s.n_total, b_seen=s.b_seen,
                  local_fits=s.local_fits, skipped=s.skipped)
    fields.update(kw)
    return UpdatingState(**fields)


def finalize(s: UpdatingState) -> np.ndarray:
    """Current estimate U^{-1} V. Leaves ``s`` untouched, so it works mid-stream."""
    if s.b_seen < 1:
        raise SingularMatrixError("no batches ingested yet", pivot_index=0)
    return solve_spd(s.U, s.V)


def merge(a: UpdatingState, b: UpdatingState) -> UpdatingState:
    """Combine two independently accumulated states (summaries are additive)."""
    if a.p != b.p:
        raise InvalidInputError(f"cannot merge states with p={a.p} and p={b.p}")
    return UpdatingState(U=a.U + b.U, V=a.V + b.V, n_total=a.n_total + b.n_total,
                         b_seen=a.b_seen + b.b_seen,
                         local_fits=_merge_local(a, b),
                         skipped=a.skipped + b.skipped)


def _merge_local(a: UpdatingState, b: UpdatingState):
    # retention survives a merge only if neither side dropped any fits
    if a.local_fits is not None and b.local_fits is not None:
        return a.local_fits + b.local_fits
    if a.local_fits is None and b.local_fits is None:
        return None
    kept, other = (a, b) if a.local_fits is not None else (b, a)
    return kept.local_fits if other.b_seen == 0 else None


def run_stream(batches: Iterable[BatchData], cfg: HuberConfig | None = None,
               p: int | None = None, **kw) -> UpdatingState:
    """Fold ``ingest_batch`` over an iterable of batches."""
    keep = kw.pop("keep_local_fits", False)
    state = None if p is None else new_state(p, keep)
    for d in batches:
        if state is None:
            state = new_state(d.p, keep)
        state = ingest_batch(state, d, cfg, **kw)
    if state is None:
        raise InvalidInputError("empty stream")
    return state


# --- snapshots -------------------------------------------------------------

def state_to_dict(s: UpdatingState) -> dict:
    d = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "p": s.p,
        "U": [float(v) for v in s.U.ravel(order="C")],
        "V": [float(v) for v in s.V],
        "n_total": s.n_total,
        "b_seen": s.b_seen,
    }
    if s.local_fits is not None:
        d["local_fits"] = [{"coef": [float(v) for v in f.coef], "n": f.n} for f in s.local_fits]
    if s.skipped:
        d["skipped"] = list(s.skipped)
    return d


def state_from_dict(d: dict) -> UpdatingState:
    if d.get("format") != SNAPSHOT_FORMAT:
        raise InvalidInputError(f"not an updating-state snapshot (format={d.get('format')!r})")
    if d.get("version") != SNAPSHOT_VERSION:
        raise InvalidInputError(f"unsupported snapshot version {d.get('version')!r}")
    p = int(d["p"])
    U = np.array(d["U"], dtype=float)
    V = np.array(d["V"], dtype=float)
    if U.size != p * p or V.size != p:
        raise InvalidInputError("snapshot arrays do not match p")
    local = d.get("local_fits")
    if local is not None:
        local = tuple(LocalFit(np.array(f["coef"], dtype=float), int(f["n"])) for f in local)
    return UpdatingState(U=U.reshape(p, p), V=V, n_total=int(d["n_total"]),
                         b_seen=int(d["b_seen"]), local_fits=local,
                         skipped=tuple(d.get("skipped", ())))


def save_state(s: UpdatingState, path) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    Path(path).write_text(json.dumps(state_to_dict(s), indent=1))


def load_state(path) -> UpdatingState:
    return state_from_dict(json.loads(Path(path).read_text()))


# --- baselines --------------------------------------------------------------

@dataclass(frozen=True)
class RlsState:
    """Streaming least squares: running X^T X and X^T y."""

    A: np.ndarray
    c: np.ndarray
    n_total: int = 0
    b_seen: int = 0


def rls_new(p: int) -> RlsState:
    if p < 1:
        raise InvalidInputError(f"p must be >= 1, got {p}")
    return RlsState(A=np.zeros((p, p)), c=np.zeros(p))


def rls_ingest(s: RlsState, d: BatchData) -> RlsState:
    if d.p != s.c.shape[0]:
        raise InvalidInputError(f"batch {d.batch_index} has p={d.p}, stream has p={s.c.shape[0]}")
    return RlsState(A=s.A + gram(d.X), c=s.c + d.X.T @ d.y,
                    n_total=s.n_total + d.n, b_seen=s.b_seen + 1)


def rls_finalize(s: RlsState) -> np.ndarray:
    if s.b_seen < 1:
        raise SingularMatrixError("no batches ingested yet", pivot_index=0)
    return solve_spd(s.A, s.c)


def dc_aggregate(fits) -> np.ndarray:
    """Size-weighted average of local estimates, given (coef, n_t) pairs or LocalFits."""
    pairs = [(f.coef, f.n) if isinstance(f, LocalFit) else f for f in fits]
    if not pairs:
        raise InvalidInputError("dc_aggregate needs at least one local fit")
    coefs = np.array([np.asarray(c, dtype=float) for c, _ in pairs])
    sizes = np.array([n for _, n in pairs], dtype=float)
    if np.any(sizes <= 0):
        raise InvalidInputError("batch sizes must be positive")
    return (sizes / sizes.sum()) @ coefs
