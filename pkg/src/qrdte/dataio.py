"""Panel CSV ingestion and result writers.

Input CSVs are comma separated with a header row, UTF-8, ``.`` decimals and
empty fields for missing values.  A :class:`PanelSchema` maps file columns
to panel roles; categorical covariates are expanded into indicator columns
named ``column=level`` with one recorded reference level.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from .counterfactual import Panel
from .exceptions import EmptyGroup, IoFailure, SchemaMismatch

CURVE_COLUMNS = ("point", "estimate", "lo_pw", "hi_pw", "lo_unif", "hi_unif")


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping for :func:`load_panel`.

    ``categorical`` maps a column to its reference level (``None`` picks
    the first level in sorted order).  ``in_labor_force`` and ``employed``
    are optional 0/1 columns used only for treated rows.
    """

    id: str = "id"
    treated: str = "treated"
    y_t: str = "y_t"
    y_tm1: str = "y_tm1"
    covariates: Sequence[str] = ()
    categorical: Dict[str, Optional[str]] = field(default_factory=dict)
    in_labor_force: Optional[str] = None
    employed: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "PanelSchema":
        d = dict(d)
        d["covariates"] = tuple(d.get("covariates", ()))
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "PanelSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def required(self):
        cols = [self.id, self.treated, self.y_t, self.y_tm1, *self.covariates, *self.categorical]
        cols += [c for c in (self.in_labor_force, self.employed) if c]
        return cols


def _as_bool(col: pd.Series, name: str) -> pd.Series:
    vals = pd.to_numeric(col, errors="coerce")
    bad = vals.notna() & ~vals.isin([0, 1])
    if bad.any():
        raise SchemaMismatch(f"column {name!r} must be 0/1")
    return vals


def _numeric(col: pd.Series, name: str) -> np.ndarray:
    """Exact decimal parse (Python ``float``); empty cells become NaN."""
    try:
        return col.astype(float).to_numpy()
    except ValueError:
        raise SchemaMismatch(f"column {name!r} has non-numeric entries") from None


def load_panel(path, schema: Optional[PanelSchema] = None) -> Panel:
    """Read a panel, applying the filtering and coding rules.

    * untreated rows missing either outcome are dropped;
    * treated rows flagged out of the labor force are dropped;
    * treated rows in the labor force but not employed get ``y_t = 0``;
    * any other row missing an outcome or a covariate is dropped.

    Counts per rule and the covariate encoding are stored in ``panel.meta``.
    """
    schema = schema or PanelSchema()
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    missing = [c for c in schema.required() if c not in df.columns]
    if missing:
        raise SchemaMismatch(f"missing columns: {missing}")
    df = df.replace("", np.nan)

    treated = _as_bool(df[schema.treated], schema.treated)
    if treated.isna().any():
        raise SchemaMismatch("treatment indicator has missing values")
    treated = treated.astype(bool).to_numpy()
    y_t = _numeric(df[schema.y_t], schema.y_t)
    y_tm1 = _numeric(df[schema.y_tm1], schema.y_tm1)
    keep = np.ones(len(df), dtype=bool)
    counts = {}

    miss0 = ~treated & (np.isnan(y_t) | np.isnan(y_tm1))
    counts["untreated_missing_earnings"] = int(miss0.sum())
    keep &= ~miss0

    if schema.in_labor_force:
        lf = _as_bool(df[schema.in_labor_force], schema.in_labor_force).to_numpy()
        out_lf = treated & (lf == 0)
        counts["treated_not_in_labor_force"] = int(out_lf.sum())
        keep &= ~out_lf
    else:
        lf = np.ones(len(df))
    if schema.employed:
        emp = _as_bool(df[schema.employed], schema.employed).to_numpy()
        zero = treated & keep & (lf == 1) & (emp == 0)
        counts["treated_unemployed_coded_zero"] = int(zero.sum())
        y_t = np.where(zero, 0.0, y_t)

    miss1 = keep & treated & (np.isnan(y_t) | np.isnan(y_tm1))
    counts["treated_missing_earnings"] = int(miss1.sum())
    keep &= ~miss1

    cov_cols, names, encoding = [], [], {}
    for c in schema.covariates:
        try:
            v = df[c].astype(float).to_numpy()
        except ValueError:
            raise SchemaMismatch(f"covariate {c!r} is not numeric; declare it categorical") from None
        cov_cols.append(v)
        names.append(c)
    for c, ref in schema.categorical.items():
        col = df[c]
        levels = sorted(col.dropna().unique())
        ref = levels[0] if ref is None else str(ref)
        if ref not in levels:
            raise SchemaMismatch(f"reference level {ref!r} not found in {c!r}")
        others = [lv for lv in levels if lv != ref]
        encoding[c] = {"reference": ref, "levels": others}
        for lv in others:
            ind = (col == lv).astype(float).to_numpy()
            ind[col.isna().to_numpy()] = np.nan
            cov_cols.append(ind)
            names.append(f"{c}={lv}")
    cov = np.column_stack(cov_cols) if cov_cols else np.zeros((len(df), 0))
    miss_cov = keep & np.isnan(cov).any(axis=1)
    counts["missing_covariates"] = int(miss_cov.sum())
    keep &= ~miss_cov

    if not np.any(keep & treated):
        raise EmptyGroup("no treated rows left after filtering")
    if not np.any(keep & ~treated):
        raise EmptyGroup("no untreated rows left after filtering")
    meta = {"source": str(path), "dropped": counts, "n_rows_read": int(len(df)),
            "categorical_encoding": encoding}
    return Panel(_ids(df[schema.id])[keep], treated[keep], y_t[keep], y_tm1[keep],
                 cov[keep], tuple(names), meta)


def _ids(col: pd.Series) -> np.ndarray:
    """Integer ids when every id is an integer literal, strings otherwise."""
    if col.isna().any():
        raise SchemaMismatch("unit ids must not be missing")
    if col.str.fullmatch(r"-?\d+").all():
        return col.astype(np.int64).to_numpy()
    return col.to_numpy(dtype=str)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def write_panel(panel: Panel, path) -> PanelSchema:
    """Write ``panel`` as CSV; returns the schema that reads it back."""
    cols = ["id", "treated", "y_t", "y_tm1", *panel.covariate_names]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for i in range(panel.n):
                w.writerow([_fmt(panel.unit_id[i]), _fmt(panel.treated[i]), _fmt(panel.y_t[i]),
                            _fmt(panel.y_tm1[i]), *(_fmt(v) for v in panel.covariates[i])])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return PanelSchema(covariates=tuple(panel.covariate_names))


@dataclass
class CurveResult:
    """A curve with optional bands, in the plot-ready column layout."""

    point: np.ndarray
    estimate: np.ndarray
    lo_pw: Optional[np.ndarray] = None
    hi_pw: Optional[np.ndarray] = None
    lo_unif: Optional[np.ndarray] = None
    hi_unif: Optional[np.ndarray] = None

    @classmethod
    def from_envelope(cls, point, env) -> "CurveResult":
        return cls(np.asarray(point), env.point_estimate, env.pointwise_band[0],
                   env.pointwise_band[1], env.uniform_band[0], env.uniform_band[1])

    @property
    def has_bands(self) -> bool:
        return self.lo_pw is not None

    def columns(self):
        return CURVE_COLUMNS if self.has_bands else CURVE_COLUMNS[:2]

    def rows(self):
        arrays = [np.asarray(getattr(self, c)) for c in self.columns()]
        return zip(*arrays)


def write_results(results, path, format: str = "csv") -> None:
    """Write a :class:`CurveResult` as CSV or a mapping as a JSON document.

    JSON output uses sorted keys and no timestamps so identical inputs give
    identical bytes.
    """
    path = Path(path)
    try:
        if format == "csv":
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(results.columns())
                for row in results.rows():
                    w.writerow([_fmt(v) for v in row])
        elif format == "json":
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(_jsonable(results), fh, sort_keys=True, indent=2)
                fh.write("\n")
        else:
            raise ValueError(f"unknown format {format!r}")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_table(rows, columns, path) -> None:
    """Plain CSV table with a fixed column order."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_curve(path) -> CurveResult:
    df = pd.read_csv(path, float_precision="round_trip")
    if len(df.columns) == 0 or df.columns[0] != "point":
        raise SchemaMismatch(f"{path} is not a curve file")
    kw = {c: df[c].to_numpy(dtype=float) for c in df.columns if c in CURVE_COLUMNS}
    return CurveResult(**kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return obj
