"""Robustness and placebo checks for the rank-invariance imputation."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from . import qr
from .counterfactual import (DistributionCurve, Panel, algorithm1, empirical_cdf, rank_map,
                             support_grid)
from .effects import REPORT_TAUS, EffectSample, qr_effects_on_y0
from .exceptions import (DegenerateVector, InsufficientBootstrap, QrdteError, ReplicateFailure,
                         StepError)
from .inference import MAX_FAILURE_SHARE, replicate_rng

logger = logging.getLogger(__name__)


def spearman_rho(a, b) -> float:
    """Pearson correlation of mid-ranks."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two vectors of equal length >= 2")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateVector("constant input has no rank correlation")
    ra, rb = rankdata(a), rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    return float(np.clip(ra @ rb / np.sqrt((ra @ ra) * (rb @ rb)), -1.0, 1.0))


# ---------------------------------------------------------------------------
# placebo heterogeneity


@dataclass(frozen=True)
class HeterogeneityPlacebo:
    sd_effect_treated: float
    sd_effect_untreated: float
    effects_treated: np.ndarray
    effects_untreated: np.ndarray
    curve_treated: DistributionCurve
    curve_untreated: DistributionCurve


def untreated_rank_imputation(panel: Panel, tau_grid=None) -> np.ndarray:
    """Untreated ``Y_t`` imputed from the unit's own ``t-1`` conditional rank."""
    grid = qr.DEFAULT_TAU_GRID if tau_grid is None else np.asarray(tau_grid, dtype=float)
    d0 = ~panel.treated
    X0 = panel.design(d0)
    q_tm1 = qr.rearrange(qr.fit_process(X0, panel.y_tm1[d0], grid))
    q_t = qr.rearrange(qr.fit_process(X0, panel.y_t[d0], grid))
    y_imp, _ = rank_map(q_tm1, q_t, X0, panel.y_tm1[d0])
    return y_imp


def placebo_heterogeneity(panel: Panel, tau_grid=None, pairs=None,
                          n_support: int = 400) -> HeterogeneityPlacebo:
    """Compare effect dispersion of the treated with a placebo for the untreated.

    For untreated units the placebo effect is the observed ``Y_t`` minus its
    rank-preserving imputation, which is zero when ranks are stable.  The
    curves are CDFs of ``|effect - group mean|``.
    """
    if pairs is None:
        pairs, _ = algorithm1(panel, tau_grid)
    d0 = ~panel.treated
    eff0 = panel.y_t[d0] - untreated_rank_imputation(panel, tau_grid)
    eff1 = pairs.deltas
    dev1, dev0 = np.abs(eff1 - eff1.mean()), np.abs(eff0 - eff0.mean())
    support = support_grid(dev1, dev0, n_points=n_support, include_zero=True)
    return HeterogeneityPlacebo(float(np.std(eff1, ddof=1)), float(np.std(eff0, ddof=1)),
                                eff1, eff0, empirical_cdf(dev1, support), empirical_cdf(dev0, support))


# ---------------------------------------------------------------------------
# regression to the mean


@dataclass(frozen=True)
class RtmPlacebo:
    """Second-stage coefficients on imputed ``Y_t(0)`` over placebo draws."""

    tau_grid: np.ndarray
    qr_slopes: np.ndarray
    ols_slopes: np.ndarray
    seed: int
    n_failed: int = 0

    def summary(self):
        """Mean and 5th/95th percentiles for the QR slopes and the OLS slope."""
        q = np.percentile(self.qr_slopes, [5, 95], axis=0)
        o = np.percentile(self.ols_slopes, [5, 95])
        return {
            "qr_mean": self.qr_slopes.mean(axis=0), "qr_p05": q[0], "qr_p95": q[1],
            "ols_mean": float(self.ols_slopes.mean()), "ols_p05": float(o[0]), "ols_p95": float(o[1]),
        }


def rtm_placebo(panel: Panel, n_pseudo_treated: int, R: int = 1000, seed: int = 0,
                tau_grid=None, report_taus=REPORT_TAUS) -> RtmPlacebo:
    """Placebo for regression to the mean among untreated units.

    Each replicate keeps only untreated units, labels ``n_pseudo_treated`` of
    them as treated at random, runs :func:`algorithm1` and regresses the
    placebo effects on imputed ``Y_t(0)`` (QR at ``report_taus`` and OLS).
    """
    pool = panel.take(np.flatnonzero(~panel.treated))
    p = pool.covariates.shape[1] + 1
    if pool.n < n_pseudo_treated + p + 1:
        raise ValueError("untreated pool too small for the requested placebo size")
    qr_slopes, ols_slopes, failed = [], [], 0
    for r in range(R):
        rng = replicate_rng(seed, r)
        fake = np.zeros(pool.n, dtype=bool)
        fake[rng.choice(pool.n, n_pseudo_treated, replace=False)] = True
        try:
            pairs, _ = algorithm1(pool.with_treatment(fake), tau_grid)
            curves = qr_effects_on_y0(EffectSample.from_pairs(pairs), report_taus)
        except (QrdteError, np.linalg.LinAlgError) as exc:
            failed += 1
            logger.warning("placebo replicate %d failed: %s", r, exc)
            continue
        qr_slopes.append(curves.coefficients[:, 1])
        ols_slopes.append(curves.ols_coefficients[1])
    if failed > MAX_FAILURE_SHARE * R:
        raise ReplicateFailure(f"{failed} of {R} placebo replicates failed")
    return RtmPlacebo(np.asarray(report_taus, dtype=float), np.vstack(qr_slopes),
                      np.asarray(ols_slopes), seed, failed)


# ---------------------------------------------------------------------------
# specification test


@dataclass(frozen=True)
class SpecTestResult:
    statistic: float
    p_value: float
    boot_statistics: np.ndarray = field(repr=False)
    n_eval: tuple = ()


def _componentwise_le(Xs: np.ndarray, Xe: np.ndarray) -> np.ndarray:
    """``W[k, i] = 1{Xs[k] <= Xe[i]}`` in every component."""
    W = np.ones((Xs.shape[0], Xe.shape[0]))
    for j in range(Xs.shape[1]):
        W *= Xs[:, j][:, None] <= Xe[:, j][None, :]
    return W


def _discrepancy(y, Z, proc, y_eval, z_eval, weights=None) -> np.ndarray:
    """``D[j, i] = n^-1 sum_k (1{y_k <= y_j} - F(y_j | x_k)) 1{z_k <= z_i}``.

    ``Z`` holds the covariates without the constant; ``proc`` is evaluated
    on the design ``[1, Z]``.  With ``weights`` each row stands for that
    many copies and ``n`` is their total.
    """
    X = np.column_stack([np.ones(y.size), Z])
    A = (y[:, None] <= y_eval[None, :]).astype(float)
    A -= qr.conditional_distribution(proc, X, y_eval)
    if weights is not None:
        A *= weights[:, None]
        n = weights.sum()
    else:
        n = y.size
    if Z.shape[1] == 1:
        order = np.argsort(Z[:, 0], kind="stable")
        zs = Z[order, 0]
        csum = np.vstack([np.zeros((1, y_eval.size)), np.cumsum(A[order], axis=0)])
        cnt = np.searchsorted(zs, z_eval[:, 0], side="right")
        return csum[cnt].T / n
    if Z.shape[1] == 0:
        return np.repeat(A.sum(axis=0)[:, None], max(z_eval.shape[0], 1), axis=1) / n
    return A.T @ _componentwise_le(Z, z_eval) / n


def rothe_wied_test(X, y, tau_grid=None, B: int = 100, seed: int = 0,
                    max_eval: int = 1500) -> SpecTestResult:
    """Cramer-von Mises test of a linear quantile regression specification.

    Compares the empirical joint distribution of ``(y, x)`` with the one
    implied by the rearranged QR process, summed over evaluation pairs
    ``(y_j, x_i)`` (all sample pairs up to ``max_eval`` points per axis, a
    random subsample otherwise, rescaled to the full sum).  The p-value uses
    ``B`` nonparametric bootstrap draws with re-estimation and re-centering.
    """
    grid = qr.DEFAULT_TAU_GRID if tau_grid is None else np.asarray(tau_grid, dtype=float)
    names = X.column_names if isinstance(X, qr.DesignMatrix) else ()
    X, y = qr._validate(X, y)
    if not np.all(X[:, 0] == 1.0):
        raise ValueError("design must start with a constant column")
    if B < 50:
        warnings.warn(f"B={B} bootstrap draws is small for a p-value", InsufficientBootstrap,
                      stacklevel=2)
    n = y.size
    Z = X[:, 1:]
    rng = replicate_rng(seed, 2 ** 31)
    if n > max_eval:
        jy = np.sort(rng.choice(n, max_eval, replace=False))
        jx = np.sort(rng.choice(n, max_eval, replace=False))
    else:
        jy = jx = np.arange(n)
    # the sum does not depend on the order of the evaluation points and
    # sorted queries make the curve inversion cheaper
    y_eval, z_eval = np.sort(y[jy]), Z[jx]
    weight = (n / jy.size) * (n / jx.size)

    proc = qr.rearrange(qr.fit_process(qr.DesignMatrix(X, names or ()), y, grid))
    D = _discrepancy(y, Z, proc, y_eval, z_eval)
    stat = float(weight * np.sum(D ** 2))
    boot = np.empty(B)
    for b in range(B):
        idx = replicate_rng(seed, b).integers(0, n, n)
        # repeated draws enter once with their multiplicity as weight
        uniq, mult = np.unique(idx, return_counts=True)
        w = mult.astype(float)
        try:
            pb = qr.rearrange(qr.fit_process(X[uniq], y[uniq], grid, weights=w))
        except QrdteError:
            boot[b] = np.nan
            continue
        Db = _discrepancy(y[uniq], Z[uniq], pb, y_eval, z_eval, w)
        boot[b] = weight * np.sum((Db - D) ** 2)
    ok = np.isfinite(boot)
    if ok.sum() < (1 - MAX_FAILURE_SHARE) * B:
        raise ReplicateFailure("too many specification-test bootstrap draws failed")
    p = float(np.mean(boot[ok] >= stat))
    return SpecTestResult(stat, p, boot, (jy.size, jx.size))


# ---------------------------------------------------------------------------
# combined report


@dataclass(frozen=True)
class PlaceboReport:
    spearman_treated: float
    spearman_untreated: float
    sd_effect_treated: float
    sd_effect_untreated: float
    placebo_heterogeneity_curves: tuple
    rtm: Optional[RtmPlacebo]
    seeds: dict


def placebo_report(panel: Panel, tau_grid=None, R: int = 1000, seed: int = 0,
                   n_pseudo_treated: Optional[int] = None) -> PlaceboReport:
    """Spearman by group, heterogeneity placebo and (``R > 0``) the RTM placebo."""
    d1 = panel.treated
    rho1 = spearman_rho(panel.y_tm1[d1], panel.y_t[d1])
    rho0 = spearman_rho(panel.y_tm1[~d1], panel.y_t[~d1])
    het = placebo_heterogeneity(panel, tau_grid)
    rtm = None
    if R > 0:
        m = panel.n_treated if n_pseudo_treated is None else n_pseudo_treated
        m = min(m, panel.n_untreated // 2)
        rtm = rtm_placebo(panel, m, R, seed, tau_grid)
    return PlaceboReport(rho1, rho0, het.sd_effect_treated, het.sd_effect_untreated,
                         (het.curve_treated, het.curve_untreated), rtm, {"rtm": seed})
