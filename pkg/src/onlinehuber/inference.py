"""Plug-in and bootstrap standard errors for Huber-type estimates."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import (BootstrapFailedError, DegenerateMomentsError, HuberStreamError,
                     InvalidInputError, NumericalError)
from .huber import HuberConfig, psi
from .linalg import inv_spd
from .streaming import BatchData, UpdatingState, finalize, ingest_batch, new_state

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PsiMoments:
    e_psi2: float
    e_dpsi: float
    n_used: int

    @property
    def efficiency_factor(self) -> float:
        """E[psi^2] / E[psi']^2."""
        if not self.e_dpsi > 0:
            raise DegenerateMomentsError("every residual is outside the quadratic zone")
        return self.e_psi2 / self.e_dpsi ** 2


@dataclass(frozen=True)
class CovReport:
    coef: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    t_values: np.ndarray

    def ci(self, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        from scipy.stats import norm

        z = norm.ppf(0.5 + level / 2)
        return self.coef - z * self.se, self.coef + z * self.se

    def to_dict(self) -> dict:
        return {"coef": self.coef.tolist(), "se": self.se.tolist(),
                "t_values": self.t_values.tolist(), "cov": self.cov.tolist()}


def psi_moments(residuals, k: float) -> PsiMoments:
    """Empirical E[psi(r)^2] and E[psi'(r)]; the kink |r| = k counts as outside."""
    r = np.asarray(residuals, dtype=float).ravel()
    if r.size < 2:
        raise InvalidInputError("psi_moments needs at least two residuals")
    if not k > 0:
        raise InvalidInputError(f"k must be positive, got {k}")
    return PsiMoments(e_psi2=float(np.mean(psi(r, k) ** 2)),
                      e_dpsi=float(np.mean(np.abs(r) < k)), n_used=int(r.size))


def residual_moments(residuals, cfg: HuberConfig | None = None) -> PsiMoments:
    """psi moments with the threshold resolved from ``cfg`` on these residuals."""
    cfg = cfg or HuberConfig()
    _, k = cfg.resolve(residuals)
    return psi_moments(residuals, k)


def _report(coef: np.ndarray, cov: np.ndarray) -> CovReport:
    if np.min(np.linalg.eigvalsh(cov)) < -1e-12 * abs(np.trace(cov)):
        raise NumericalError("estimated covariance is not positive semidefinite")
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = coef / se
    return CovReport(coef=coef, cov=cov, se=se, t_values=t)


def huber_covariance(gram_total, coef, m: PsiMoments) -> CovReport:
    """(E[psi^2]/E[psi']^2) * (X^T X)^{-1} for a Huber-type estimate."""
    return _report(np.asarray(coef, dtype=float), m.efficiency_factor * inv_spd(gram_total))


def uhr_covariance(state: UpdatingState, m: PsiMoments) -> CovReport:
    """Covariance of the online-updating estimate.

    The weighted average of per-batch design moments sum (n_t/N)(X_t^T X_t/n_t)
    equals U/N, so the covariance reduces to the efficiency factor times U^{-1}.
    """
    return huber_covariance(state.U, finalize(state), m)


def ols_covariance(gram_total, coef, rss: float, n: int) -> CovReport:
    p = len(coef)
    if n <= p:
        raise InvalidInputError("need n > p for a residual variance")
    sigma2 = rss / (n - p)
    return _report(np.asarray(coef, dtype=float), sigma2 * inv_spd(gram_total))


def bootstrap_se(
    data_source: Iterable[BatchData] | Callable[[], Iterable[BatchData]],
    cfg: HuberConfig | None = None,
    B: int = 200,
    seed: int = 0,
) -> np.ndarray:
    """Nonparametric bootstrap standard errors of the online-updating estimate.

    Rows are resampled with replacement inside each batch, so every replicate
    sees the same batch sizes. All B replicate states advance together in a
    single pass over the stream. The generator for replicate r on batch t is
    keyed by (seed, r, t), so results do not depend on evaluation order.
    Failed replicates are dropped with a warning; more than half failing
    raises BootstrapFailedError.
    """
    if B < 1:
        raise InvalidInputError("B must be >= 1")
    batches = data_source() if callable(data_source) else data_source
    states: list[UpdatingState | None] = [None] * B
    failed = [False] * B
    seen_any = False
    for d in batches:
        seen_any = True
        for r in range(B):
            if failed[r]:
                continue
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, r, d.batch_index])))
            idx = rng.integers(0, d.n, size=d.n)
            rep = BatchData(d.X[idx], d.y[idx], d.batch_index)
            try:
                st = states[r] if states[r] is not None else new_state(d.p)
                states[r] = ingest_batch(st, rep, cfg)
            except HuberStreamError as exc:
                log.warning("bootstrap replicate %d failed: %s", r, exc)
                failed[r] = True
    if not seen_any:
        raise InvalidInputError("empty stream")
    estimates = []
    for r in range(B):
        if failed[r]:
            continue
        try:
            estimates.append(finalize(states[r]))
        except NumericalError as exc:
            log.warning("bootstrap replicate %d failed: %s", r, exc)
            failed[r] = True
    n_failed = sum(failed)
    if n_failed * 2 > B:
        raise BootstrapFailedError(f"{n_failed} of {B} bootstrap replicates failed")
    est = np.array(estimates)
    if len(est) < 2:
        return np.zeros(est.shape[1])
    return est.std(axis=0, ddof=1)
