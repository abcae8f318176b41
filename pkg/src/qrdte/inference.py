"""Empirical bootstrap with pointwise and sup-t uniform bands.

Every replicate draws from its own counter-based stream
``SeedSequence(seed, spawn_key=(b,))``, so results do not depend on the
order or the process in which replicates are evaluated.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .counterfactual import Panel
from .exceptions import QrdteError, ReplicateFailure, ZeroVariancePoint

logger = logging.getLogger(__name__)

MAX_FAILURE_SHARE = 0.10


@dataclass(frozen=True)
class BootstrapEnvelope:
    """Point estimate, bootstrap draws and bands.

    ``pointwise_band`` is the percentile interval, widened where needed to
    contain the point estimate; ``uniform_band`` is the sup-t band widened
    where needed to contain ``pointwise_band``.  ``critical_value`` is the
    sup-t critical value before widening.
    """

    point_estimate: np.ndarray
    replicates: np.ndarray
    pointwise_band: tuple
    uniform_band: tuple
    level: float
    seed: Optional[int] = None
    critical_value: float = np.nan
    n_failed: int = 0

    @property
    def B(self) -> int:
        return self.replicates.shape[0]

    def __getitem__(self, sl) -> "BootstrapEnvelope":
        """Restrict to a block of evaluation points (bands are recomputed)."""
        est = self.point_estimate[sl]
        reps = self.replicates[:, sl]
        return envelope(est, reps, self.level, self.seed, self.n_failed)


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))


def resample_indices(panel: Panel, rng: np.random.Generator, stratify: bool = False) -> np.ndarray:
    """Unit-level draw with replacement; optionally within treatment groups."""
    if not stratify:
        return rng.integers(0, panel.n, panel.n)
    parts = []
    for group in (np.flatnonzero(panel.treated), np.flatnonzero(~panel.treated)):
        parts.append(group[rng.integers(0, group.size, group.size)])
    return np.concatenate(parts)


def pointwise_band(replicates, level: float = 0.95):
    """Percentile interval per evaluation point."""
    reps = np.asarray(replicates, dtype=float)
    if reps.ndim == 1:
        reps = reps[:, None]
    if reps.shape[0] == 0:
        raise ValueError("no replicates")
    alpha = 1.0 - level
    lo, hi = np.quantile(reps, [alpha / 2, 1 - alpha / 2], axis=0)
    return lo, hi


def uniform_band(replicates, estimate, level: float = 0.95):
    """Sup-t band: ``estimate +/- c * sd`` with ``c`` the ``level`` quantile
    over replicates of the largest studentized deviation.

    Points with zero bootstrap spread are left out of the maximum (with a
    :class:`ZeroVariancePoint` warning) and get zero width.
    Returns ``(lo, hi, critical_value)``.
    """
    reps = np.asarray(replicates, dtype=float)
    if reps.ndim == 1:
        reps = reps[:, None]
    est = np.broadcast_to(np.asarray(estimate, dtype=float), reps.shape[1:])
    sd = reps.std(axis=0, ddof=1) if reps.shape[0] > 1 else np.zeros(reps.shape[1])
    scale = np.maximum(np.abs(reps).max(axis=0), np.abs(est))
    live = sd > 1e-12 * np.maximum(scale, 1e-300)
    if not np.all(live):
        warnings.warn(f"{int((~live).sum())} point(s) with zero bootstrap variance "
                      "left out of the sup-t maximum", ZeroVariancePoint, stacklevel=2)
        sd = np.where(live, sd, 0.0)
    if np.any(live):
        t = np.max(np.abs(reps[:, live] - est[live]) / sd[live], axis=1)
        crit = float(np.quantile(t, level))
    else:
        crit = 0.0
    return est - crit * sd, est + crit * sd, crit


def envelope(estimate, replicates, level: float = 0.95, seed=None, n_failed: int = 0) -> BootstrapEnvelope:
    est = np.atleast_1d(np.asarray(estimate, dtype=float))
    reps = np.asarray(replicates, dtype=float)
    if reps.ndim != 2:
        reps = reps.reshape(-1, est.size)
    pw_lo, pw_hi = pointwise_band(reps, level)
    pw_lo, pw_hi = np.minimum(pw_lo, est), np.maximum(pw_hi, est)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroVariancePoint)
        u_lo, u_hi, crit = uniform_band(reps, est, level)
    u_lo, u_hi = np.minimum(u_lo, pw_lo), np.maximum(u_hi, pw_hi)
    return BootstrapEnvelope(est, reps, (pw_lo, pw_hi), (u_lo, u_hi), level, seed, crit, n_failed)


def _run_replicate(estimator, panel, seed, b, stratify):
    rng = replicate_rng(seed, b)
    sample = panel.take(resample_indices(panel, rng, stratify))
    try:
        return np.atleast_1d(np.asarray(estimator(sample), dtype=float))
    except (QrdteError, np.linalg.LinAlgError, ValueError) as exc:
        return exc


def bootstrap(estimator: Callable[[Panel], object], panel: Panel, B: int = 1000, seed: int = 0,
              level: float = 0.95, stratify: bool = False, n_jobs: int = 1) -> BootstrapEnvelope:
    """Re-run ``estimator`` on ``B`` unit-level resamples of ``panel``.

    ``estimator`` must run the whole pipeline (first and second step) and
    return a scalar or a 1-d array of fixed length.  Replicates that raise a
    package error are logged and skipped; more than 10% failures raises
    :class:`ReplicateFailure`.
    """
    if B < 2:
        raise ValueError("need B >= 2")
    estimate = np.atleast_1d(np.asarray(estimator(panel), dtype=float))
    if n_jobs == 1:
        results = [_run_replicate(estimator, panel, seed, b, stratify) for b in range(B)]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(
            delayed(_run_replicate)(estimator, panel, seed, b, stratify) for b in range(B)
        )
    draws, failed = [], 0
    for b, res in enumerate(results):
        if isinstance(res, Exception):
            failed += 1
            logger.warning("bootstrap replicate %d failed: %s", b, res)
        else:
            draws.append(res)
    if failed > MAX_FAILURE_SHARE * B:
        raise ReplicateFailure(f"{failed} of {B} bootstrap replicates failed")
    return envelope(estimate, np.vstack(draws), level, seed, failed)
