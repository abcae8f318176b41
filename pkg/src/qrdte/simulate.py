"""Synthetic two-period panels with known counterfactuals.

Outcomes follow a location-scale linear quantile model in the covariates
``(male, college, age)``::

    Y_{t-1}(0) = x'(loc + gap * D e_0) + x'scale * Z_{t-1}
    Y_t(0)     = x'(loc + gap * D e_0 + trend) + growth * x'scale * Z_t
    Z_t        = kappa * Z_{t-1} + sqrt(1 - kappa^2) * e

with standard normal ``Z_{t-1}`` and ``e``.  Groups differ only through the
covariate distribution and an intercept gap, so the change ``dY(0)`` is
independent of treatment given covariates and its copula with the initial
level is the same in both groups.  ``kappa`` is the Gaussian-copula
correlation of the latent ranks; ``kappa = 1`` gives exact rank invariance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.stats import norm

from .counterfactual import Panel, support_grid

COVARIATE_NAMES = ("male", "college", "age")
EFFECT_RULES = ("constant", "covariate", "y0")


@dataclass(frozen=True)
class DgpConfig:
    n_treated: int = 1633
    n_untreated: int = 3915
    # (treated, untreated)
    p_male: Tuple[float, float] = (0.57, 0.51)
    p_college: Tuple[float, float] = (0.33, 0.40)
    age_mean: Tuple[float, float] = (42.0, 45.0)
    age_sd: float = 10.0
    # coefficients on (const, male, college, age)
    location: Tuple[float, ...] = (400.0, 150.0, 250.0, 5.0)
    scale: Tuple[float, ...] = (150.0, 30.0, 50.0, 0.0)
    trend: Tuple[float, ...] = (40.0, 0.0, 0.0, 0.0)
    scale_growth: float = 1.0
    level_gap: float = -70.0
    kappa: float = 0.8
    effect_rule: str = "constant"
    effect: float = -100.0
    # covariate rule: deltas = x'effect_coef + x'effect_scale * e
    effect_coef: Tuple[float, ...] = (-100.0, -50.0, -80.0, 0.0)
    effect_scale: Tuple[float, ...] = (50.0, 0.0, 0.0, 0.0)
    # y0 rule: deltas = effect + effect_slope * Y_t(0) + effect_noise * e
    effect_slope: float = -0.2
    effect_noise: float = 50.0
    unemployment_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_male", "p_college"):
            if not all(0.0 <= v <= 1.0 for v in getattr(self, name)):
                raise ValueError(f"{name} must be probabilities")
        if not 0.0 <= self.unemployment_prob <= 1.0:
            raise ValueError("unemployment_prob must be in [0, 1]")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must be in [0, 1]")
        p = len(COVARIATE_NAMES) + 1
        if min(self.n_treated, self.n_untreated) <= p:
            raise ValueError(f"group sizes must exceed the number of parameters ({p})")
        for name in ("location", "scale", "trend", "effect_coef", "effect_scale"):
            if len(getattr(self, name)) != p:
                raise ValueError(f"{name} needs {p} coefficients")
        if self.effect_rule not in EFFECT_RULES:
            raise ValueError(f"effect_rule must be one of {EFFECT_RULES}")

    @classmethod
    def exchangeable(cls, **kw) -> "DgpConfig":
        """Both groups share covariate laws and levels."""
        base = dict(p_male=(0.5, 0.5), p_college=(0.4, 0.4), age_mean=(44.0, 44.0), level_gap=0.0)
        base.update(kw)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)


@dataclass
class TruthRecord:
    """Ground truth for a simulated panel (treated units in panel order)."""

    y0_treated: np.ndarray
    effects: np.ndarray
    att: float
    dte_support: np.ndarray
    dte_cdf: np.ndarray
    curve_taus: Optional[np.ndarray] = None
    effect_curves: Optional[np.ndarray] = None
    curve_regressors: Optional[str] = None
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def enc(v):
            return v.tolist() if isinstance(v, np.ndarray) else v

        return json.dumps({k: enc(v) for k, v in asdict(self).items()}, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TruthRecord":
        d = json.loads(text)
        for k in ("y0_treated", "effects", "dte_support", "dte_cdf", "curve_taus", "effect_curves"):
            if d.get(k) is not None:
                d[k] = np.asarray(d[k], dtype=float)
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "TruthRecord":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def spearman_of_persistence(kappa: float) -> float:
    """Rank correlation of a bivariate normal pair with correlation ``kappa``."""
    return 6.0 / np.pi * np.arcsin(kappa / 2.0)


def _covariates(rng, n, cfg: DgpConfig, g: int) -> np.ndarray:
    male = rng.random(n) < cfg.p_male[g]
    college = rng.random(n) < cfg.p_college[g]
    age = np.clip(rng.normal(cfg.age_mean[g], cfg.age_sd, n), 20.0, 64.0)
    return np.column_stack([male, college, np.round(age)]).astype(float)


def simulate_dgp(config: DgpConfig) -> Tuple[Panel, TruthRecord]:
    """Draw a panel (treated units first) and its truth record."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n1, n0 = cfg.n_treated, cfg.n_untreated
    cov = np.vstack([_covariates(rng, n1, cfg, 0), _covariates(rng, n0, cfg, 1)])
    treated = np.r_[np.ones(n1, bool), np.zeros(n0, bool)]
    X = np.column_stack([np.ones(n1 + n0), cov])
    loc = X @ np.asarray(cfg.location) + cfg.level_gap * treated
    scale = X @ np.asarray(cfg.scale)
    if np.any(scale <= 0):
        raise ValueError("scale coefficients give a nonpositive conditional scale")
    z_tm1 = rng.standard_normal(n1 + n0)
    z_t = cfg.kappa * z_tm1 + np.sqrt(max(1.0 - cfg.kappa ** 2, 0.0)) * rng.standard_normal(n1 + n0)
    y_tm1 = loc + scale * z_tm1
    y0_t = loc + X @ np.asarray(cfg.trend) + cfg.scale_growth * scale * z_t

    e = rng.standard_normal(n1)
    X1, y0_1 = X[:n1], y0_t[:n1]
    taus = np.round(np.arange(1, 10) / 10, 10)
    curves, regressors = None, None
    if cfg.effect_rule == "constant":
        effects = np.full(n1, float(cfg.effect))
        curves = np.tile(np.r_[cfg.effect, np.zeros(X.shape[1] - 1)], (taus.size, 1))
        regressors = "covariates"
    elif cfg.effect_rule == "covariate":
        effects = X1 @ np.asarray(cfg.effect_coef) + (X1 @ np.asarray(cfg.effect_scale)) * e
        curves = np.asarray(cfg.effect_coef)[None, :] + norm.ppf(taus)[:, None] * np.asarray(cfg.effect_scale)[None, :]
        regressors = "covariates"
    else:
        effects = cfg.effect + cfg.effect_slope * y0_1 + cfg.effect_noise * e
        curves = np.column_stack([cfg.effect + cfg.effect_noise * norm.ppf(taus),
                                  np.full(taus.size, cfg.effect_slope)])
        regressors = "y0"
    unemployed = rng.random(n1) < cfg.unemployment_prob
    if np.any(unemployed):
        effects = np.where(unemployed, -y0_1, effects)
        curves, regressors = None, None
    y1 = y0_1 + effects
    y1 = np.where(unemployed, 0.0, y1)

    y_t = np.r_[y1, y0_t[n1:]]
    panel = Panel(np.arange(n1 + n0), treated, y_t, y_tm1, cov, COVARIATE_NAMES,
                  {"source": "simulate_dgp", "seed": cfg.seed})
    dsupport = support_grid(effects, include_zero=False)
    truth = TruthRecord(
        y0_treated=y0_1,
        effects=effects,
        att=float(np.mean(effects)),
        dte_support=dsupport,
        dte_cdf=np.searchsorted(np.sort(effects), dsupport, side="right") / n1,
        curve_taus=taus if curves is not None else None,
        effect_curves=curves,
        curve_regressors=regressors,
        config=json.loads(json.dumps(asdict(cfg))),
    )
    return panel, truth


def untreated_potential_tm1_t(config: DgpConfig, n: int, seed: int):
    """Large untreated-only draw of ``(Y_{t-1}, Y_t(0))`` for generator checks."""
    cfg = DgpConfig(**{**asdict(config), "n_treated": 5, "n_untreated": n, "seed": seed})
    panel, _ = simulate_dgp(cfg)
    d0 = ~panel.treated
    return panel.y_tm1[d0], panel.y_t[d0]
