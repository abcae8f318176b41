"""Distributional treatment effects from quantile regression panels.

Individual effects are recovered by imputing each treated unit's untreated
outcome from its own conditional rank in the previous period.
"""

__version__ = "0.1.0"

from .counterfactual import (DistributionCurve, ImputedPairs, Panel, algorithm1, att, cic_impute,
                             counterfactual_distribution, first_step, lagged_impute,
                             observed_distribution, qtt)
from .dataio import CurveResult, PanelSchema, load_panel, write_panel, write_results
from .effects import (EffectSample, dte_distribution, fraction_above, qr_effects_on_covariates,
                      qr_effects_on_y0)
from .inference import BootstrapEnvelope, bootstrap
from .qr import (DesignMatrix, QuantileProcess, conditional_cdf, fit_process, fit_quantile,
                 predict_quantile, rearrange)
from .robustness import (placebo_heterogeneity, placebo_report, rothe_wied_test, rtm_placebo,
                         spearman_rho)
from .simulate import DgpConfig, TruthRecord, simulate_dgp

__all__ = [
    "DesignMatrix", "QuantileProcess", "fit_quantile", "fit_process", "rearrange",
    "predict_quantile", "conditional_cdf",
    "Panel", "ImputedPairs", "DistributionCurve", "algorithm1", "cic_impute", "lagged_impute",
    "first_step", "counterfactual_distribution", "observed_distribution", "att", "qtt",
    "EffectSample", "dte_distribution", "fraction_above", "qr_effects_on_covariates",
    "qr_effects_on_y0",
    "BootstrapEnvelope", "bootstrap",
    "spearman_rho", "placebo_heterogeneity", "rtm_placebo", "rothe_wied_test", "placebo_report",
    "PanelSchema", "load_panel", "write_panel", "write_results", "CurveResult",
    "DgpConfig", "TruthRecord", "simulate_dgp",
]
