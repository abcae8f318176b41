import json

import numpy as np
import pytest

from qrdte.counterfactual import Panel
from qrdte.dataio import (CURVE_COLUMNS, CurveResult, PanelSchema, load_panel, read_curve,
                          write_panel, write_results, write_table)
from qrdte.exceptions import EmptyGroup, IoFailure, SchemaMismatch
from qrdte.inference import envelope
from qrdte.simulate import DgpConfig, simulate_dgp


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


BASIC = """id,treated,y_t,y_tm1,age
1,1,500,600,40
2,1,300,450,33
3,0,700,650,51
4,0,,640,29
5,0,820,800,45
"""


def test_missing_untreated_outcome_dropped(tmp_path):
    p = load_panel(write_csv(tmp_path / "a.csv", BASIC), PanelSchema(covariates=("age",)))
    assert p.n == 4 and 4 not in p.unit_id
    assert p.meta["dropped"]["untreated_missing_earnings"] == 1
    assert p.meta["n_rows_read"] == 5


def test_labor_force_rules(tmp_path):
    text = """id,treated,y_t,y_tm1,lf,emp
1,1,,600,1,0
2,1,,450,0,0
3,1,380,500,1,1
4,0,700,650,1,1
5,0,820,800,0,0
"""
    schema = PanelSchema(in_labor_force="lf", employed="emp")
    p = load_panel(write_csv(tmp_path / "b.csv", text), schema)
    np.testing.assert_array_equal(p.unit_id, [1, 3, 4, 5])
    assert p.y_t[0] == 0.0
    assert p.meta["dropped"]["treated_unemployed_coded_zero"] == 1
    assert p.meta["dropped"]["treated_not_in_labor_force"] == 1
    # labor-force columns only apply to treated rows
    assert 5 in p.unit_id


def test_emitted_cells_come_from_input(tmp_path):
    text = """id,treated,y_t,y_tm1,x,lf,emp
1,1,512.5,600,1.5,1,0
2,1,300,450,,1,1
3,1,410,420,2,1,1
4,0,700,650,3,1,1
5,0,820,,4,1,1
6,0,90,95,5,1,1
"""
    p = load_panel(write_csv(tmp_path / "c.csv", text),
                   PanelSchema(covariates=("x",), in_labor_force="lf", employed="emp"))
    raw = {1: (512.5, 600, 1.5), 3: (410, 420, 2), 4: (700, 650, 3), 6: (90, 95, 5)}
    assert sorted(p.unit_id.tolist()) == sorted(raw)
    for i, uid in enumerate(p.unit_id):
        yt, ytm1, x = raw[int(uid)]
        assert p.y_t[i] == (0.0 if uid == 1 else yt)
        assert p.y_tm1[i] == ytm1 and p.covariates[i, 0] == x
    assert p.meta["dropped"]["missing_covariates"] == 1


def test_categorical_expansion(tmp_path):
    text = """id,treated,y_t,y_tm1,race
a,1,1,2,white
b,1,1,2,black
c,0,1,2,other
d,0,1,2,white
"""
    p = load_panel(write_csv(tmp_path / "d.csv", text), PanelSchema(categorical={"race": "white"}))
    assert p.covariate_names == ("race=black", "race=other")
    np.testing.assert_array_equal(p.covariates, [[0, 0], [1, 0], [0, 1], [0, 0]])
    assert p.meta["categorical_encoding"] == {"race": {"reference": "white", "levels": ["black", "other"]}}
    assert p.unit_id.dtype.kind == "U"
    q = load_panel(tmp_path / "d.csv", PanelSchema(categorical={"race": None}))
    assert q.meta["categorical_encoding"]["race"]["reference"] == "black"


def test_round_trip(tmp_path):
    panel, _ = simulate_dgp(DgpConfig(n_treated=40, n_untreated=60, seed=3))
    schema = write_panel(panel, tmp_path / "p.csv")
    back = load_panel(tmp_path / "p.csv", schema)
    for a in ("y_t", "y_tm1", "covariates", "unit_id", "treated"):
        np.testing.assert_array_equal(getattr(back, a), getattr(panel, a))
    assert back.covariate_names == panel.covariate_names


def test_schema_errors(tmp_path):
    path = write_csv(tmp_path / "e.csv", BASIC)
    with pytest.raises(SchemaMismatch):
        load_panel(path, PanelSchema(covariates=("education",)))
    bad = write_csv(tmp_path / "f.csv", "id,treated,y_t,y_tm1\n1,2,3,4\n2,0,3,4\n")
    with pytest.raises(SchemaMismatch):
        load_panel(bad)
    with pytest.raises(SchemaMismatch):
        load_panel(write_csv(tmp_path / "j.csv", "id,treated,y_t,y_tm1\n1,1,n/a,4\n2,0,3,4\n"))
    txt = write_csv(tmp_path / "g.csv", "id,treated,y_t,y_tm1,x\n1,1,3,4,high\n2,0,3,4,low\n")
    with pytest.raises(SchemaMismatch):
        load_panel(txt, PanelSchema(covariates=("x",)))
    with pytest.raises(SchemaMismatch):
        load_panel(txt, PanelSchema(categorical={"x": "medium"}))


def test_empty_group(tmp_path):
    text = "id,treated,y_t,y_tm1\n1,1,,5\n2,0,3,4\n3,0,3,4\n"
    with pytest.raises(EmptyGroup):
        load_panel(write_csv(tmp_path / "h.csv", text))
    with pytest.raises(EmptyGroup):
        load_panel(write_csv(tmp_path / "i.csv", "id,treated,y_t,y_tm1\n1,1,2,5\n"))


def test_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        load_panel(tmp_path / "nope.csv")
    with pytest.raises(IoFailure):
        write_results(CurveResult(np.zeros(0), np.zeros(0)), tmp_path / "missing" / "x.csv")


def test_schema_json(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"covariates": ["age"], "y_t": "earn"}))
    s = PanelSchema.from_json(tmp_path / "s.json")
    assert s.covariates == ("age",) and s.y_t == "earn"


# ---------------------------------------------------------------------------
# result writers


def test_empty_curve_is_header_only(tmp_path):
    write_results(CurveResult(np.zeros(0), np.zeros(0)), tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text() == "point,estimate\n"
    env = envelope(np.zeros(0), np.zeros((5, 0)))
    write_results(CurveResult.from_envelope(np.zeros(0), env), tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text() == ",".join(CURVE_COLUMNS) + "\n"


def test_curve_round_trip_and_band_order(tmp_path):
    rng = np.random.default_rng(0)
    reps = rng.gamma(2.0, size=(200, 15)).cumsum(axis=1)
    est = reps.mean(axis=0)
    res = CurveResult.from_envelope(np.linspace(0, 1, 15), envelope(est, reps))
    write_results(res, tmp_path / "c.csv")
    back = read_curve(tmp_path / "c.csv")
    for c in CURVE_COLUMNS:
        np.testing.assert_array_equal(getattr(back, c), getattr(res, c))
    assert np.all(back.lo_unif <= back.lo_pw) and np.all(back.lo_pw <= back.estimate)
    assert np.all(back.estimate <= back.hi_pw) and np.all(back.hi_pw <= back.hi_unif)


def test_json_is_deterministic(tmp_path):
    doc = {"b": np.float64(1.5), "a": [np.int64(2), np.nan], "c": {"z": np.arange(3), "y": True}}
    write_results(doc, tmp_path / "1.json", format="json")
    write_results(dict(reversed(list(doc.items()))), tmp_path / "2.json", format="json")
    assert (tmp_path / "1.json").read_bytes() == (tmp_path / "2.json").read_bytes()
    assert json.loads((tmp_path / "1.json").read_text()) == {
        "a": [2, None], "b": 1.5, "c": {"y": True, "z": [0, 1, 2]}}
    with pytest.raises(ValueError):
        write_results(doc, tmp_path / "3.x", format="xml")


def test_write_table(tmp_path):
    write_table([("treated", 0.25), ("untreated", 1.0)], ("group", "p_value"), tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text() == "group,p_value\ntreated,0.25\nuntreated,1.0\n"
