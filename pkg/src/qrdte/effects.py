"""Functionals of the imputed joint distribution of treated and untreated outcomes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import qr
from .counterfactual import DistributionCurve, ImputedPairs, empirical_cdf
from .exceptions import DegenerateRegressor

REPORT_TAUS = np.round(np.arange(1, 10) / 10, 10)


@dataclass(frozen=True)
class EffectSample:
    deltas: np.ndarray
    covariates: np.ndarray
    y0_hat: np.ndarray
    covariate_names: tuple = ()

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=float)
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        y0 = np.asarray(self.y0_hat, dtype=float)
        if not (d.size == cov.shape[0] == y0.size):
            raise ValueError("deltas, covariates and y0_hat must be aligned")
        if not np.all(np.isfinite(d)):
            raise ValueError("deltas must be finite")
        object.__setattr__(self, "deltas", d)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "y0_hat", y0)
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(cov.shape[1]))
        object.__setattr__(self, "covariate_names", names)

    @classmethod
    def from_pairs(cls, pairs: ImputedPairs) -> "EffectSample":
        return cls(pairs.deltas, pairs.covariates, pairs.y0_hat, pairs.covariate_names)

    def shift(self, c: float) -> "EffectSample":
        return EffectSample(self.deltas + c, self.covariates, self.y0_hat, self.covariate_names)


@dataclass(frozen=True)
class QrEffectCurves:
    """Second-stage coefficients: one row per level, one column per term."""

    tau_grid: np.ndarray
    coefficients: np.ndarray
    ols_coefficients: np.ndarray
    column_names: tuple

    def curve(self, name: str) -> np.ndarray:
        return self.coefficients[:, self.column_names.index(name)]

    def flat(self) -> np.ndarray:
        """QR coefficients column by column, then OLS; handy for the bootstrap."""
        return np.concatenate([self.coefficients.T.ravel(), self.ols_coefficients])


def dte_distribution(sample: EffectSample, support) -> DistributionCurve:
    if sample.deltas.size == 0:
        raise ValueError("empty effect sample")
    return empirical_cdf(sample.deltas, support)


def fraction_above(sample: EffectSample, threshold: float) -> float:
    """Share of individual effects strictly above ``threshold``."""
    if sample.deltas.size == 0:
        raise ValueError("empty effect sample")
    return float(np.mean(sample.deltas > threshold))


def _second_stage(design: qr.DesignMatrix, y, tau_grid) -> QrEffectCurves:
    grid = np.asarray(tau_grid, dtype=float)
    proc = qr.fit_process(design, y, grid)
    ols = qr.fit_ols(design, y)
    return QrEffectCurves(grid, proc.coefficients, ols, design.column_names)


def qr_effects_on_covariates(sample: EffectSample, tau_grid=REPORT_TAUS,
                             transform: Optional[Callable] = None) -> QrEffectCurves:
    """Quantile and OLS regressions of individual effects on covariates.

    ``transform`` maps the covariate matrix to regressor columns (an
    intercept is always added); by default the covariates enter linearly.
    """
    cov = sample.covariates if transform is None else np.asarray(transform(sample.covariates))
    names = sample.covariate_names if transform is None else ()
    return _second_stage(qr.DesignMatrix.from_covariates(cov, names), sample.deltas, tau_grid)


def qr_effects_on_y0(sample: EffectSample, tau_grid=REPORT_TAUS, degree: int = 1) -> QrEffectCurves:
    """Regress individual effects on a polynomial in imputed ``Y_t(0)``."""
    y0 = sample.y0_hat
    if y0.size < 2 or np.ptp(y0) == 0:
        raise DegenerateRegressor("imputed untreated outcomes are constant")
    cols = np.column_stack([y0 ** k for k in range(1, degree + 1)])
    names = ["y0"] + [f"y0^{k}" for k in range(2, degree + 1)]
    return _second_stage(qr.DesignMatrix.from_covariates(cols, names), sample.deltas, tau_grid)
