import json
import os
import pathlib

import numpy as np
import pytest
import scipy.linalg as sl

import daedse

ROOT = pathlib.Path(__file__).resolve().parents[2]
DATA = pathlib.Path(os.environ.get("DAEDSE_DATA", ROOT / "data"))
SCENARIOS = pathlib.Path(os.environ.get("DAEDSE_SCENARIOS", ROOT / "scenarios"))
CASE9 = str(DATA / "case9.m")


def test_model_dimensions():
    m = daedse.load_model(CASE9, [4, 6])
    assert m["A"].shape == (30, 30)
    assert m["C"].shape == (16, 30)
    assert m["B_u"].shape == (30, 6)
    assert m["states"][:2] == ["delta_g1", "omega_g1"]
    assert np.linalg.matrix_rank(m["E"]) == 12


def test_structure_flags():
    r = daedse.check(CASE9, [4, 6])
    assert r["regular"] and r["impulse_free"] and r["index_one"]
    assert r["detectable"] and r["i_observable"]
    assert r["degree"] == r["rank_E"] == 12


def test_rmse_by_hand():
    assert daedse.rmse(np.zeros((3, 5))) == 0.0
    assert daedse.rmse(np.ones((1, 2))) == pytest.approx(np.sqrt(2.0), rel=1e-15)
    with pytest.raises(daedse.ConfigError):
        daedse.rmse(np.ones((2, 1)))


def test_lav_fits_noiseless_data():
    rng = np.random.default_rng(3)
    C = rng.standard_normal((12, 4))
    v = rng.standard_normal(4)
    out = daedse.solve_lav(C, C @ v)
    assert out["optimal"]
    np.testing.assert_allclose(out["v"], v, atol=1e-10)


def test_errors_map_to_exception_classes():
    with pytest.raises(daedse.ConfigError):
        daedse.load_model(str(DATA / "missing.m"), [4])
    assert issubclass(daedse.StructuralError, daedse.DaedseError)


def test_plant_only_scenario(tmp_path):
    sc = json.loads((SCENARIOS / "case9_gaussian.json").read_text())
    sc["observers"] = []
    sc["t_end"] = 3.0
    sc["fault"]["t_fault"] = 1.0
    sc["case"] = CASE9
    path = tmp_path / "s.json"
    path.write_text(json.dumps(sc))
    rep = daedse.run_scenario(str(path), out_dir=str(tmp_path / "out"), seeds=[1])
    assert rep["samples"] == 61
    assert rep["plant_max_residual"] <= 1e-8
    assert (tmp_path / "out" / "manifest.json").exists()


def test_p2_level_matches_independent_sdp():
    cp = pytest.importorskip("cvxpy")
    m = daedse.load_model(CASE9, [4, 6])
    E, A, C, Bw, Dw = m["E"], m["A"], m["C"], m["B_w"], m["D_w"]
    n, p, q = A.shape[0], C.shape[0], Bw.shape[1]
    r = np.linalg.matrix_rank(E)
    Ep = sl.null_space(E.T).T
    eps = 1e-6 * np.linalg.norm(A, 2)
    G = 0.5 * np.eye(n)
    X = cp.Variable((n, n), symmetric=True)
    Y = cp.Variable((n - r, n))
    W = cp.Variable((p, n))
    g = cp.Variable()
    P = X @ E + Ep.T @ Y
    M11 = A.T @ P + P.T @ A - C.T @ W - W.T @ C + G.T @ G
    M21 = Bw.T @ P - Dw.T @ W
    L = cp.bmat([[M11, M21.T], [M21, -g * np.eye(q)]])
    prob = cp.Problem(cp.Minimize(g), [(L + L.T) / 2 << -eps * np.eye(n + q), X >> eps * np.eye(n)])
    prob.solve(solver="CLARABEL")
    assert prob.status == "optimal"

    ours = daedse.synthesize(CASE9, [4, 6], kind="p2", gamma_scale=0.5,
                             cache_dir=os.environ.get("DAEDSE_CACHE", ""))
    assert ours["certified"]
    assert ours["max_real"] < -1e-6
    assert ours["gamma"] == pytest.approx(g.value, rel=2e-2)


def test_shipped_scenarios_match_schema():
    jsonschema = pytest.importorskip("jsonschema")
    scenario = json.loads((SCENARIOS / "schema.json").read_text())
    sweep = json.loads((SCENARIOS / "sweep_schema.json").read_text())
    for f in sorted(SCENARIOS.glob("*.json")):
        if "schema" in f.name:
            continue
        d = json.loads(f.read_text())
        jsonschema.validate(d, sweep if "variants" in d else scenario)


def test_shipped_plot_states_exist():
    for f in sorted(SCENARIOS.glob("case*.json")):
        d = json.loads(f.read_text())
        if "plot_states" not in d:
            continue
        case = str((f.parent / d["case"]).resolve())
        states = set(daedse.load_model(case, d["pmus"])["states"])
        assert set(d["plot_states"]) <= states, f.name
