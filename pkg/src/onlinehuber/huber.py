"""Huber loss, its derivative, and an IRLS solver for Huber regression."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .errors import DegenerateScaleError, InvalidInputError
from .linalg import _weighted_normal_equations, gram, solve_spd

MAD_CONSISTENCY = 0.6745

# Residuals this small relative to the response are treated as an exact fit.
EXACT_FIT_RTOL = 1e-10


def rho(u, k: float):
    """Huber loss: u^2/2 inside |u| < k, k|u| - k^2/2 outside."""
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    out = np.where(a < k, 0.5 * u * u, k * a - 0.5 * k * k)
    return out if out.ndim else float(out)


def psi(u, k: float):
    """Derivative of ``rho``: u clipped to [-k, k]."""
    out = np.clip(np.asarray(u, dtype=float), -k, k)
    return out if out.ndim else float(out)


def irls_weight(u, k: float):
    """psi(u)/u, with the removable singularity at 0 filled by 1."""
    a = np.abs(np.asarray(u, dtype=float))
    out = k / np.maximum(a, k)
    return out if out.ndim else float(out)


def _median(a: np.ndarray) -> float:
    n = a.size
    half = n // 2
    if n % 2:
        return float(np.partition(a, half)[half])
    part = np.partition(a, (half - 1, half))
    return 0.5 * (float(part[half - 1]) + float(part[half]))


def mad_scale(residuals) -> float:
    """Normal-consistent median absolute deviation about the median."""
    r = np.asarray(residuals, dtype=float).ravel()
    if r.size < 2:
        raise InvalidInputError("mad_scale needs at least two residuals")
    mad = _median(np.abs(r - _median(r)))
    if not mad > 0:
        raise DegenerateScaleError("median absolute deviation is zero")
    return float(mad / MAD_CONSISTENCY)


@dataclass(frozen=True)
class HuberConfig:
    """Tuning for ``fit_huber``.

    With ``k_mode="scaled"`` the threshold is ``k * scale``; with ``"fixed"`` it
    is ``k`` in residual units. ``scale=None`` re-estimates the scale by MAD
    at every iteration, otherwise the given value is held fixed.
    """

    k: float = 1.345
    k_mode: Literal["scaled", "fixed"] = "scaled"
    scale: float | None = None
    max_iter: int = 1000
    rel_tol: float = 1e-8

    def __post_init__(self):
        if not self.k > 0:
            raise InvalidInputError(f"k must be positive, got {self.k}")
        if self.k_mode not in ("scaled", "fixed"):
            raise InvalidInputError(f"unknown k_mode {self.k_mode!r}")
        if self.scale is not None and not self.scale > 0:
            raise InvalidInputError(f"fixed scale must be positive, got {self.scale}")
        if self.max_iter < 1:
            raise InvalidInputError("max_iter must be >= 1")
        if not 0 < self.rel_tol < 1:
            raise InvalidInputError("rel_tol must lie in (0, 1)")

    def threshold(self, scale: float) -> float:
        return self.k * scale if self.k_mode == "scaled" else self.k

    def resolve(self, residuals) -> tuple[float, float]:
        """Return (scale, k) for the given residuals under this policy."""
        s = self.scale if self.scale is not None else mad_scale(residuals)
        return s, self.threshold(s)

    def to_dict(self) -> dict:
        return {"k": self.k, "k_mode": self.k_mode, "scale": self.scale,
                "max_iter": self.max_iter, "rel_tol": self.rel_tol}

    @classmethod
    def from_dict(cls, d: dict) -> "HuberConfig":
        return cls(**d)


@dataclass(frozen=True)
class HuberFit:
    coef: np.ndarray
    scale: float
    k: float
    iterations: int
    converged: bool
    n_obs: int


def ols(X, y) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    return solve_spd(gram(X), X.T @ y)


def huber_objective(X, y, coef, k: float) -> float:
    """Mean Huber loss of the residuals y - X coef."""
    r = np.asarray(y, dtype=float) - np.asarray(X, dtype=float) @ coef
    return float(np.mean(rho(r, k)))


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.max(np.abs(new - old) / np.maximum(1.0, np.abs(new))))


def fit_huber(
    X,
    y,
    cfg: HuberConfig | None = None,
    init=None,
    callback: Callable[[int, np.ndarray, float, float], None] | None = None,
) -> HuberFit:
    """Huber M-estimate of y ~ X by iteratively reweighted least squares.

    Starts from OLS unless ``init`` is given. Each iteration recomputes the
    scale (under the MAD policy), the threshold, the weights psi(r)/r and
    solves the weighted normal equations. ``callback(it, coef, scale, k)`` is
    called with the coefficients and the scale/threshold used to produce them.

    Hitting ``max_iter`` is not an error: the fit comes back with
    ``converged=False``.
    """
    cfg = cfg or HuberConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise InvalidInputError(f"X must be 2-D, got shape {X.shape}")
    n, p = X.shape
    if y.shape[0] != n:
        raise InvalidInputError(f"X has {n} rows but y has {y.shape[0]}")
    if n <= p:
        raise InvalidInputError(f"need more observations than coefficients (n={n}, p={p})")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidInputError("X and y must be finite")

    coef = ols(X, y) if init is None else np.asarray(init, dtype=float).copy()
    exact_tol = EXACT_FIT_RTOL * max(1.0, float(np.max(np.abs(y))))
    scale = cfg.scale if cfg.scale is not None else float("nan")
    k = cfg.threshold(scale) if cfg.scale is not None else float("nan")
    converged = False
    it = 0
    while it < cfg.max_iter:
        r = y - X @ coef
        if np.max(np.abs(r)) <= exact_tol:
            converged = True
            if cfg.scale is None:
                scale, k = 0.0, cfg.threshold(0.0)
            break
        scale, k = cfg.resolve(r)
        w = irls_weight(r, k)
        A, c = _weighted_normal_equations(X, y, w)
        new = solve_spd(A, c)
        it += 1
        delta = _rel_change(new, coef)
        coef = new
        if callback is not None:
            callback(it, coef, scale, k)
        if delta <= cfg.rel_tol:
            converged = True
            break
    return HuberFit(coef=coef, scale=scale, k=k, iterations=it,
                    converged=converged, n_obs=n)
