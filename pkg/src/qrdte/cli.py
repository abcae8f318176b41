"""Command-line entry point: ``qrdte <subcommand> [options]``.

Every subcommand writes plot-ready CSV files plus ``manifest.json`` into
``--out``.  Settings resolve as command-line flags, then the JSON file given
by ``--config``, then built-in defaults.  Failures print one JSON error
record on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__, qr
from .counterfactual import (FIRST_STEPS, att, counterfactual_distribution, first_step,
                             observed_distribution, qtt, support_grid)
from .dataio import (CurveResult, PanelSchema, load_panel, write_panel, write_results,
                     write_table)
from .effects import (REPORT_TAUS, EffectSample, dte_distribution, fraction_above,
                      qr_effects_on_covariates, qr_effects_on_y0)
from .exceptions import QrdteError
from .inference import bootstrap
from .robustness import placebo_report, rothe_wied_test
from .simulate import DgpConfig, simulate_dgp

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("estimate", "dte", "qr-effects", "robustness", "spec-test", "simulate")

DEFAULTS = {
    "input": None,
    "schema": None,
    "taus": "0.01:0.99:0.01",
    "report_taus": "0.1:0.9:0.1",
    "support": 400,
    "boot": 1000,
    "reps": 1000,
    "seed": 0,
    "level": 0.95,
    "first_step": "algorithm1",
    "out": ".",
    "thresholds": "0,-500,-1000",
    "n_jobs": 1,
    "stratify": False,
    "pseudo_treated": None,
}
# the specification test keeps its own, smaller bootstrap default
SPEC_TEST_BOOT = 100

COMMAND_HELP = {
    "estimate": "observed and counterfactual CDFs, ATT and QTT with bands",
    "dte": "distribution of individual effects and threshold shares",
    "qr-effects": "quantile regressions of effects on covariates and on Y(0)",
    "robustness": "rank correlations, placebo heterogeneity, regression to the mean",
    "spec-test": "Cramer-von Mises test of the linear quantile model, per group",
    "simulate": "synthetic panel with a truth sidecar",
}

DGP_FLAGS = ("n_treated", "n_untreated", "kappa", "effect_rule", "effect", "unemployment_prob")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # route argparse failures through the JSON error record
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# argument handling


def parse_grid(text) -> np.ndarray:
    """``"lo:hi:step"`` or a comma separated list of levels."""
    if isinstance(text, (list, tuple)):
        vals = np.asarray(text, dtype=float)
    elif ":" in str(text):
        lo, hi, step = (float(v) for v in str(text).split(":"))
        if step <= 0 or hi < lo:
            raise UsageError(f"bad grid {text!r}")
        vals = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
    else:
        vals = np.asarray([float(v) for v in str(text).split(",") if v.strip()])
    vals = np.round(vals, 10)
    if vals.size == 0 or np.any(vals <= 0) or np.any(vals >= 1) or np.any(np.diff(vals) <= 0):
        raise UsageError(f"quantile levels must be increasing inside (0, 1): {text!r}")
    return vals


def parse_numbers(text) -> np.ndarray:
    if isinstance(text, (list, tuple)):
        return np.asarray(text, dtype=float)
    return np.asarray([float(v) for v in str(text).split(",") if v.strip()])


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="qrdte", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=COMMAND_HELP[name])
        # defaults are None so that config-file values can fill the gaps
        p.add_argument("--config", help="JSON file with option values")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        if name == "simulate":
            p.add_argument("--n-treated", dest="n_treated", type=int)
            p.add_argument("--n-untreated", dest="n_untreated", type=int)
            p.add_argument("--kappa", type=float)
            p.add_argument("--effect-rule", dest="effect_rule", choices=("constant", "covariate", "y0"))
            p.add_argument("--effect", type=float)
            p.add_argument("--unemployment-prob", dest="unemployment_prob", type=float)
            continue
        p.add_argument("--input", help="panel CSV")
        p.add_argument("--schema", help="JSON column mapping")
        p.add_argument("--taus", help="first-step grid, lo:hi:step or comma list")
        p.add_argument("--level", type=float, help="band coverage")
        # shared flags are accepted everywhere and ignored where unused
        p.add_argument("--first-step", dest="first_step", choices=FIRST_STEPS)
        p.add_argument("--boot", type=int, help="bootstrap replicates")
        p.add_argument("--reps", type=int, help="placebo replicates")
        p.add_argument("--support", help="number of support points or lo:hi:n")
        p.add_argument("--report-taus", dest="report_taus", help="reporting levels")
        if name in ("estimate", "dte", "qr-effects"):
            p.add_argument("--n-jobs", dest="n_jobs", type=int)
            p.add_argument("--stratify", action="store_const", const=True,
                           help="resample within treatment groups")
        if name == "dte":
            p.add_argument("--thresholds", help="comma separated effect thresholds")
        if name == "robustness":
            p.add_argument("--pseudo-treated", dest="pseudo_treated", type=int)
    return ap


def resolve(ns: argparse.Namespace) -> dict:
    """Merge flags over the config file over defaults."""
    cfg = dict(DEFAULTS)
    if ns.subcommand == "spec-test":
        cfg["boot"] = SPEC_TEST_BOOT
    file_cfg = {}
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
    file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
    cfg.update({k: v for k, v in file_cfg.items() if k != "dgp"})
    cfg["dgp"] = dict(file_cfg.get("dgp", {}))
    for k, v in vars(ns).items():
        if k in ("config", "subcommand") or v is None:
            continue
        if k in DGP_FLAGS:
            cfg["dgp"][k] = v
        else:
            cfg[k] = v
    cfg["subcommand"] = ns.subcommand
    for key in ("boot", "reps"):
        if int(cfg[key]) < 1:
            raise UsageError(f"{key} must be >= 1")
    if not 0.0 < float(cfg["level"]) < 1.0:
        raise UsageError("level must lie in (0, 1)")
    if cfg["first_step"] not in FIRST_STEPS:
        raise UsageError(f"first_step must be one of {FIRST_STEPS}")
    return cfg


def _support(spec, *samples) -> np.ndarray:
    if isinstance(spec, str) and ":" in spec:
        lo, hi, n = spec.split(":")
        return np.union1d(np.linspace(float(lo), float(hi), int(n)), [0.0])
    return support_grid(*samples, n_points=int(spec))


def _load(cfg):
    if not cfg.get("input"):
        raise UsageError("--input is required")
    if cfg.get("schema"):
        schema = PanelSchema.from_json(cfg["schema"])
    else:
        schema = _default_schema(cfg["input"])
    return load_panel(cfg["input"], schema)


def _default_schema(path) -> PanelSchema:
    """Standard column names; every other column is a numeric covariate."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), [])
    except OSError as exc:
        from .exceptions import IoFailure

        raise IoFailure(f"cannot read {path}: {exc}") from exc
    base = PanelSchema()
    roles = {base.id, base.treated, base.y_t, base.y_tm1}
    return PanelSchema(covariates=tuple(c for c in header if c not in roles))


# ---------------------------------------------------------------------------
# subcommands


def _counterfactual(pairs, procs, support):
    proc = procs.t0_treated if procs is not None else None
    return counterfactual_distribution(pairs, support, proc)


def cmd_estimate(cfg, out: Path) -> dict:
    panel = _load(cfg)
    grid, rtaus = parse_grid(cfg["taus"]), parse_grid(cfg["report_taus"])
    method = cfg["first_step"]
    pairs, procs = first_step(panel, method, grid)
    support = _support(cfg["support"], panel.y_t[panel.treated], pairs.y0_hat)
    L = support.size

    def estimator(p):
        pr, pc = first_step(p, method, grid)
        obs = observed_distribution(p, support)
        cf = _counterfactual(pr, pc, support)
        return np.concatenate([obs.cdf, cf.cdf, [att(pr)], qtt(obs, cf, rtaus)])

    env = bootstrap(estimator, panel, int(cfg["boot"]), int(cfg["seed"]), float(cfg["level"]),
                    bool(cfg["stratify"]), int(cfg["n_jobs"]))
    blocks = {"observed_cdf": slice(0, L), "counterfactual_cdf": slice(L, 2 * L),
              "att": slice(2 * L, 2 * L + 1), "qtt": slice(2 * L + 1, None)}
    write_results(CurveResult.from_envelope(support, env[blocks["observed_cdf"]]),
                  out / "observed_cdf.csv")
    write_results(CurveResult.from_envelope(support, env[blocks["counterfactual_cdf"]]),
                  out / "counterfactual_cdf.csv")
    write_results(CurveResult.from_envelope(rtaus, env[blocks["qtt"]]), out / "qtt.csv")
    e_att = env[blocks["att"]]
    summary = {
        "att": float(e_att.point_estimate[0]),
        "att_interval": [float(e_att.pointwise_band[0][0]), float(e_att.pointwise_band[1][0])],
        "n_treated": panel.n_treated, "n_untreated": panel.n_untreated,
        "first_step": method, "boot_failed": env.n_failed, "level": env.level,
        "dropped": panel.meta.get("dropped", {}),
    }
    write_results(summary, out / "summary.json", format="json")
    return summary


def cmd_dte(cfg, out: Path) -> dict:
    panel = _load(cfg)
    grid = parse_grid(cfg["taus"])
    method = cfg["first_step"]
    thresholds = parse_numbers(cfg["thresholds"])
    pairs, _ = first_step(panel, method, grid)
    support = _support(cfg["support"], pairs.deltas)
    L = support.size

    def estimator(p):
        sample = EffectSample.from_pairs(first_step(p, method, grid)[0])
        shares = [fraction_above(sample, c) for c in thresholds]
        return np.concatenate([dte_distribution(sample, support).cdf, shares])

    env = bootstrap(estimator, panel, int(cfg["boot"]), int(cfg["seed"]), float(cfg["level"]),
                    bool(cfg["stratify"]), int(cfg["n_jobs"]))
    write_results(CurveResult.from_envelope(support, env[:L]), out / "dte_cdf.csv")
    sh = env[L:]
    write_table(zip(thresholds, sh.point_estimate, *sh.pointwise_band),
                ("threshold", "share_above", "lo_pw", "hi_pw"), out / "shares.csv")
    summary = {"median_effect": float(np.median(pairs.deltas)), "first_step": method,
               "boot_failed": env.n_failed, "level": env.level,
               "shares_above": dict(zip((f"{c:g}" for c in thresholds),
                                        map(float, sh.point_estimate)))}
    write_results(summary, out / "summary.json", format="json")
    return summary


def cmd_qr_effects(cfg, out: Path) -> dict:
    panel = _load(cfg)
    grid, rtaus = parse_grid(cfg["taus"]), parse_grid(cfg["report_taus"])
    method = cfg["first_step"]
    pairs, _ = first_step(panel, method, grid)
    sample = EffectSample.from_pairs(pairs)
    on_x = qr_effects_on_covariates(sample, rtaus)
    on_y0 = qr_effects_on_y0(sample, rtaus)

    def estimator(p):
        s = EffectSample.from_pairs(first_step(p, method, grid)[0])
        return np.concatenate([qr_effects_on_covariates(s, rtaus).flat(),
                               qr_effects_on_y0(s, rtaus).flat()])

    env = bootstrap(estimator, panel, int(cfg["boot"]), int(cfg["seed"]), float(cfg["level"]),
                    bool(cfg["stratify"]), int(cfg["n_jobs"]))
    K = rtaus.size
    offset = 0
    for tag, curves in (("covariates", on_x), ("y0", on_y0)):
        names = curves.column_names
        for j, name in enumerate(names):
            block = env[offset + j * K: offset + (j + 1) * K]
            write_results(CurveResult.from_envelope(rtaus, block), out / f"qr_{tag}_{_slug(name)}.csv")
        offset += len(names) * K
        ols = env[offset: offset + len(names)]
        write_table(zip(names, ols.point_estimate, *ols.pointwise_band),
                    ("term", "estimate", "lo_pw", "hi_pw"), out / f"ols_{tag}.csv")
        offset += len(names)
    summary = {"first_step": method, "report_taus": rtaus, "boot_failed": env.n_failed,
               "level": env.level, "terms_covariates": on_x.column_names,
               "terms_y0": on_y0.column_names}
    write_results(summary, out / "summary.json", format="json")
    return summary


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


def cmd_robustness(cfg, out: Path) -> dict:
    panel = _load(cfg)
    grid, rtaus = parse_grid(cfg["taus"]), parse_grid(cfg["report_taus"])
    rep = placebo_report(panel, grid, int(cfg["reps"]), int(cfg["seed"]), cfg["pseudo_treated"])
    c1, c0 = rep.placebo_heterogeneity_curves
    write_table(zip(c1.support, c1.cdf, c0(c1.support)),
                ("point", "treated", "untreated"), out / "placebo_heterogeneity.csv")
    rtm = rep.rtm
    if rtm is not None:
        cols = ("replicate", *(f"qr_{t:g}" for t in rtm.tau_grid), "ols")
        write_table(((r, *rtm.qr_slopes[r], rtm.ols_slopes[r]) for r in range(rtm.ols_slopes.size)),
                    cols, out / "rtm_replicates.csv")
    summary = {
        "spearman_treated": rep.spearman_treated, "spearman_untreated": rep.spearman_untreated,
        "sd_effect_treated": rep.sd_effect_treated, "sd_effect_untreated": rep.sd_effect_untreated,
        "rtm": rtm.summary() if rtm is not None else None, "rtm_failed": rtm.n_failed if rtm else 0,
        "seeds": rep.seeds,
    }
    write_results(summary, out / "summary.json", format="json")
    return summary


def cmd_spec_test(cfg, out: Path) -> dict:
    panel = _load(cfg)
    grid = parse_grid(cfg["taus"])
    rows = []
    for label, mask in (("treated", panel.treated), ("untreated", ~panel.treated)):
        res = rothe_wied_test(panel.design(mask), panel.y_tm1[mask], grid, int(cfg["boot"]),
                              int(cfg["seed"]))
        rows.append((label, int(mask.sum()), res.statistic, res.p_value, int(cfg["boot"])))
    write_table(rows, ("group", "n", "statistic", "p_value", "boot"), out / "spec_test.csv")
    return {"p_values": {r[0]: r[3] for r in rows}}


def cmd_simulate(cfg, out: Path) -> dict:
    dgp = dict(cfg["dgp"])
    dgp.setdefault("seed", int(cfg["seed"]))
    known = {f.name for f in fields(DgpConfig)}
    unknown = sorted(set(dgp) - known)
    if unknown:
        raise UsageError(f"unknown simulation settings: {unknown}")
    config = DgpConfig.from_dict(dgp)
    panel, truth = simulate_dgp(config)
    schema = write_panel(panel, out / "panel.csv")
    truth.save(out / "truth.json")
    write_results(asdict(schema), out / "schema.json", format="json")
    return {"n_treated": panel.n_treated, "n_untreated": panel.n_untreated, "att": truth.att}


COMMANDS = {
    "estimate": cmd_estimate, "dte": cmd_dte, "qr-effects": cmd_qr_effects,
    "robustness": cmd_robustness, "spec-test": cmd_spec_test, "simulate": cmd_simulate,
}


# ---------------------------------------------------------------------------
# driver


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(cfg: dict) -> dict:
    """Execute a resolved configuration and write the manifest."""
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        summary = COMMANDS[cfg["subcommand"]](cfg, out)
    msgs = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
    files = {p.name: _digest(p) for p in sorted(out.iterdir())
             if p.is_file() and p.name != "manifest.json"}
    manifest = {
        "subcommand": cfg["subcommand"],
        "config": {k: v for k, v in sorted(cfg.items()) if k != "out"},
        "versions": {"qrdte": __version__, "numpy": np.__version__},
        "warnings": msgs,
        "outputs": files,
        "summary": summary,
    }
    write_results(manifest, out / "manifest.json", format="json")
    return manifest


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ns = None
    try:
        ns = build_parser().parse_args(argv)
        cfg = resolve(ns)
        run(cfg)
    except (QrdteError, ValueError, OSError, KeyError, TypeError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "subcommand": getattr(ns, "subcommand", None)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
