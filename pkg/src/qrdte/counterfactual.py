"""Counterfactual untreated outcomes for treated units.

The main entry point is :func:`algorithm1`, which chains four quantile
regression processes to map each treated unit's period ``t-1`` conditional
rank into the counterfactual period ``t`` untreated distribution.  The
Change-in-Changes and lagged-outcome imputations are provided as drop-in
alternatives with the same output type.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import qr
from .exceptions import QrdteError, StepError


@dataclass(frozen=True)
class Panel:
    """Two-period panel, one row per unit."""

    unit_id: np.ndarray
    treated: np.ndarray
    y_t: np.ndarray
    y_tm1: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple = ()
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        treated = np.asarray(self.treated).astype(bool)
        y_t = np.asarray(self.y_t, dtype=float)
        y_tm1 = np.asarray(self.y_tm1, dtype=float)
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        n = treated.size
        if not (y_t.size == y_tm1.size == cov.shape[0] == np.asarray(self.unit_id).size == n):
            raise ValueError("panel columns have different lengths")
        if not (np.all(np.isfinite(y_t)) and np.all(np.isfinite(y_tm1))):
            raise ValueError("outcomes must be present and finite for every unit")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise ValueError("covariate_names length does not match covariates")
        object.__setattr__(self, "unit_id", np.asarray(self.unit_id))
        object.__setattr__(self, "treated", treated)
        object.__setattr__(self, "y_t", y_t)
        object.__setattr__(self, "y_tm1", y_tm1)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.treated.size

    @property
    def n_treated(self) -> int:
        return int(self.treated.sum())

    @property
    def n_untreated(self) -> int:
        return self.n - self.n_treated

    @property
    def delta_y(self) -> np.ndarray:
        return self.y_t - self.y_tm1

    def design(self, mask=None) -> qr.DesignMatrix:
        cov = self.covariates if mask is None else self.covariates[mask]
        return qr.DesignMatrix.from_covariates(cov, self.covariate_names)

    def take(self, idx) -> "Panel":
        """Rows ``idx`` (may repeat, as in a bootstrap draw)."""
        idx = np.asarray(idx)
        return Panel(self.unit_id[idx], self.treated[idx], self.y_t[idx], self.y_tm1[idx],
                     self.covariates[idx], self.covariate_names, dict(self.meta))

    def with_treatment(self, treated) -> "Panel":
        return Panel(self.unit_id, treated, self.y_t, self.y_tm1, self.covariates,
                     self.covariate_names, dict(self.meta))

    def shift(self, b: float) -> "Panel":
        return Panel(self.unit_id, self.treated, self.y_t + b, self.y_tm1 + b,
                     self.covariates, self.covariate_names, dict(self.meta))

    def check_groups(self) -> None:
        p = self.covariates.shape[1] + 1
        for label, count in (("treated", self.n_treated), ("untreated", self.n_untreated)):
            if count < p + 1:
                raise ValueError(f"{label} group has {count} units, need at least {p + 1}")


@dataclass(frozen=True)
class ImputedPairs:
    """Per treated unit: observed outcome and imputed untreated outcome."""

    unit_id: np.ndarray
    y1: np.ndarray
    y0_hat: np.ndarray
    rank_tm1: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple = ()

    @property
    def deltas(self) -> np.ndarray:
        return self.y1 - self.y0_hat

    def __len__(self):
        return self.y1.size


@dataclass(frozen=True)
class FirstStepProcesses:
    """Rearranged processes from the four regressions of :func:`algorithm1`."""

    tm1_treated: qr.QuantileProcess
    tm1_untreated: qr.QuantileProcess
    t0_treated: qr.QuantileProcess

    def as_dict(self) -> Dict[str, qr.QuantileProcess]:
        return {"step1": self.tm1_treated, "step2": self.tm1_untreated, "step4": self.t0_treated}


@dataclass(frozen=True)
class DistributionCurve:
    """A CDF tabulated on an increasing support grid."""

    support: np.ndarray
    cdf: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        F = np.asarray(self.cdf, dtype=float)
        if s.shape != F.shape or s.ndim != 1:
            raise ValueError("support and cdf must be aligned 1-d arrays")
        if np.any(np.diff(s) <= 0):
            raise ValueError("support must be strictly increasing")
        if np.any(np.diff(F) < -1e-12) or (F.size and (F[0] < 0 or F[-1] > 1 + 1e-12)):
            raise ValueError("cdf must be nondecreasing within [0, 1]")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "cdf", F)

    def quantile(self, tau) -> np.ndarray:
        """Generalized inverse ``min{s : F(s) >= tau}`` (last point if none)."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        k = np.searchsorted(self.cdf, tau - 1e-12, side="left")
        return self.support[np.minimum(k, self.support.size - 1)]

    def __call__(self, y) -> np.ndarray:
        """Step evaluation at arbitrary points (right-continuous)."""
        k = np.searchsorted(self.support, np.asarray(y, dtype=float), side="right") - 1
        return np.where(k < 0, 0.0, self.cdf[np.maximum(k, 0)])


# ---------------------------------------------------------------------------
# distribution helpers


def support_grid(*samples, n_points: int = 400, include_zero: bool = True) -> np.ndarray:
    """Equally spaced grid over the pooled range, plus an exact point at 0."""
    pooled = np.concatenate([np.ravel(s) for s in samples])
    lo, hi = float(pooled.min()), float(pooled.max())
    grid = np.linspace(lo, hi, n_points) if hi > lo else np.array([lo])
    if include_zero:
        grid = np.union1d(grid, [0.0])
    return grid


def empirical_cdf(values, support) -> DistributionCurve:
    v = np.sort(np.asarray(values, dtype=float))
    support = np.asarray(support, dtype=float)
    return DistributionCurve(support, np.searchsorted(v, support, side="right") / v.size)


def observed_distribution(panel: Panel, support) -> DistributionCurve:
    """Empirical CDF of treated outcomes in period t (never smoothed)."""
    return empirical_cdf(panel.y_t[panel.treated], support)


# ---------------------------------------------------------------------------
# imputation


def _fit(X, y, grid, step):
    try:
        return qr.rearrange(qr.fit_process(X, y, grid))
    except QrdteError as exc:
        raise StepError(step, exc) from exc


def rank_map(rank_process: qr.QuantileProcess, outcome_process: qr.QuantileProcess, X, y):
    """``Q_outcome(F_rank(y | x) | x)`` per row, plus the clamped ranks."""
    ranks = qr.conditional_cdf(rank_process, X, y)
    return qr.predict_quantile(outcome_process, X, ranks), ranks


def fit_first_step(panel: Panel, tau_grid=None) -> FirstStepProcesses:
    """Steps 1 to 4: the three processes needed to impute treated units."""
    grid = qr.DEFAULT_TAU_GRID if tau_grid is None else np.asarray(tau_grid, dtype=float)
    d1, d0 = panel.treated, ~panel.treated
    X1, X0 = panel.design(d1), panel.design(d0)
    q_tm1_1 = _fit(X1, panel.y_tm1[d1], grid, 1)
    q_tm1_0 = _fit(X0, panel.y_tm1[d0], grid, 2)
    # step 3: untreated period t-1 outcomes mapped into the treated t-1 law
    y_tilde, _ = rank_map(q_tm1_0, q_tm1_1, X0, panel.y_tm1[d0])
    q_t0_1 = _fit(X0, panel.delta_y[d0] + y_tilde, grid, 4)
    return FirstStepProcesses(q_tm1_1, q_tm1_0, q_t0_1)


def impute_treated(panel: Panel, rank_process: qr.QuantileProcess,
                   outcome_process: qr.QuantileProcess) -> ImputedPairs:
    """Step 5: evaluate ``outcome_process`` at each treated unit's t-1 rank."""
    d1 = panel.treated
    X1 = panel.design(d1)
    y0_hat, ranks = rank_map(rank_process, outcome_process, X1, panel.y_tm1[d1])
    return ImputedPairs(panel.unit_id[d1], panel.y_t[d1], y0_hat, ranks,
                        panel.covariates[d1], panel.covariate_names)


def algorithm1(panel: Panel, tau_grid=None):
    """Impute ``Y_t(0)`` for every treated unit under rank invariance.

    Returns ``(pairs, processes)``.  Errors from any regression are re-raised
    as :class:`StepError` carrying the step number.
    """
    panel.check_groups()
    procs = fit_first_step(panel, tau_grid)
    try:
        pairs = impute_treated(panel, procs.tm1_treated, procs.t0_treated)
    except QrdteError as exc:
        raise StepError(5, exc) from exc
    return pairs, procs


def cic_impute(panel: Panel, tau_grid=None, conditional: bool = True) -> ImputedPairs:
    """Change-in-Changes imputation fit on the untreated group.

    Each treated unit's period ``t-1`` outcome is ranked in the untreated
    ``t-1`` law and mapped through the untreated period ``t`` quantile
    function.  With ``conditional=False`` both laws are unconditional
    (intercept-only regressions, i.e. sample quantiles).
    """
    panel.check_groups()
    grid = qr.DEFAULT_TAU_GRID if tau_grid is None else np.asarray(tau_grid, dtype=float)
    d1, d0 = panel.treated, ~panel.treated
    if conditional:
        X0, X1 = panel.design(d0), panel.design(d1)
    else:
        X0, X1 = np.ones((int(d0.sum()), 1)), np.ones((int(d1.sum()), 1))
    q_tm1_0 = _fit(X0, panel.y_tm1[d0], grid, 1)
    q_t_0 = _fit(X0, panel.y_t[d0], grid, 2)
    y0_hat, ranks = rank_map(q_tm1_0, q_t_0, X1, panel.y_tm1[d1])
    return ImputedPairs(panel.unit_id[d1], panel.y_t[d1], y0_hat, ranks,
                        panel.covariates[d1], panel.covariate_names)


def lagged_impute(panel: Panel) -> ImputedPairs:
    """Use the unit's own period ``t-1`` outcome as its untreated outcome.

    ``rank_tm1`` is the unit's mid-rank within the treated group, scaled by
    ``n + 1`` and clamped to the default grid range.
    """
    d1 = panel.treated
    y_tm1 = panel.y_tm1[d1]
    grid = qr.DEFAULT_TAU_GRID
    ranks = np.clip(rankdata(y_tm1) / (y_tm1.size + 1), grid[0], grid[-1])
    return ImputedPairs(panel.unit_id[d1], panel.y_t[d1], y_tm1.copy(), ranks,
                        panel.covariates[d1], panel.covariate_names)


FIRST_STEPS = ("algorithm1", "cic", "lagged")


def first_step(panel: Panel, method: str = "algorithm1", tau_grid=None):
    """Dispatch to one of the imputation methods; returns ``(pairs, processes)``."""
    if method == "algorithm1":
        return algorithm1(panel, tau_grid)
    if method == "cic":
        return cic_impute(panel, tau_grid), None
    if method == "lagged":
        return lagged_impute(panel), None
    raise ValueError(f"first step must be one of {FIRST_STEPS}, got {method!r}")


# ---------------------------------------------------------------------------
# distributional summaries


def counterfactual_distribution(pairs: ImputedPairs, support,
                                process: Optional[qr.QuantileProcess] = None) -> DistributionCurve:
    """Counterfactual CDF of ``Y_t(0)`` for the treated.

    With ``process`` (the step-4 process from :func:`algorithm1`) the
    conditional CDFs are averaged over treated units' covariates.  Without
    it, the empirical CDF of the imputed values is returned.  The two agree
    up to grid resolution.
    """
    support = np.asarray(support, dtype=float)
    if process is None:
        return empirical_cdf(pairs.y0_hat, support)
    X = qr.DesignMatrix.from_covariates(pairs.covariates)
    F = qr.conditional_distribution(process, X, support).mean(axis=0)
    return DistributionCurve(support, np.maximum.accumulate(F))


def att(pairs: ImputedPairs) -> float:
    if len(pairs) == 0:
        raise ValueError("no treated units")
    return float(np.mean(pairs.deltas))


def qtt(observed: DistributionCurve, counterfactual: DistributionCurve,
        tau_grid: Sequence[float]) -> np.ndarray:
    """Quantile treatment effects on the treated, one per level."""
    return observed.quantile(tau_grid) - counterfactual.quantile(tau_grid)
