from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bee_ident import inverse as I
from bee_ident import presets
from bee_ident.errors import ConfigError, ObjectiveError, SolverError
from bee_ident.inverse import (IdentificationProblem, ReferenceCurve, add_noise, grid_scan,
                               identify, relative_error, residual_j, synthetic_reference)
from bee_ident.mbc import MbcConfig
from bee_ident.transport import BreakthroughCurve

# a coarse Henry setup keeps each direct solve around a few milliseconds
COARSE = presets.HENRY_TRUTH.with_(nx=44, ny=8, dt=0.4)
SINGLE = presets.get("henry-single").mbc


@pytest.fixture(scope="module")
def coarse_ref():
    return synthetic_reference(COARSE)


@pytest.fixture(scope="module")
def coarse_problem(coarse_ref):
    return IdentificationProblem(coarse_ref, "henry", presets.HENRY_BOUNDS, 10.0, COARSE, SINGLE)


# -- reference curves -----------------------------------------------------------------


def test_reference_validation():
    with pytest.raises(ConfigError):
        ReferenceCurve([0.1, 0.1], [0.0, 0.0])
    with pytest.raises(ConfigError):
        ReferenceCurve([0.1, 0.2], [0.0])
    with pytest.raises(ConfigError):
        ReferenceCurve([0.1, 0.2], [0.0, np.nan])
    with pytest.raises(ConfigError):
        ReferenceCurve([], [])


def test_reference_is_read_only(coarse_ref):
    with pytest.raises(ValueError):
        coarse_ref.values[0] = 1.0
    assert coarse_ref.provenance["kind"] == "synthetic"
    assert coarse_ref.provenance["params"]["da_a"] == 0.005


def test_cadence_mismatch_is_refused(coarse_ref):
    with pytest.raises(ConfigError, match="resampling is refused"):
        coarse_ref.check_cadence(COARSE.with_(dt=0.2))
    shifted = ReferenceCurve(coarse_ref.times + 0.1, coarse_ref.values)
    with pytest.raises(ConfigError):
        IdentificationProblem(shifted, "henry", presets.HENRY_BOUNDS, 10.0, COARSE, SINGLE)


def test_reference_csv_round_trip(coarse_ref, tmp_path):
    path = tmp_path / "ref.csv"
    coarse_ref.to_csv(path)
    back = ReferenceCurve.from_csv(path)
    np.testing.assert_array_equal(back.values, coarse_ref.values)
    assert back.provenance == {"kind": "external", "path": str(path)}


def test_problem_validation(coarse_ref):
    with pytest.raises(ConfigError):
        IdentificationProblem(coarse_ref, "langmuir", presets.HENRY_BOUNDS, 10.0, COARSE)
    with pytest.raises(ConfigError):
        IdentificationProblem(coarse_ref, "freundlich", presets.HENRY_BOUNDS, 10.0, COARSE)
    with pytest.raises(ConfigError):
        IdentificationProblem(coarse_ref, "henry", presets.HENRY_BOUNDS, 0.0, COARSE)


def test_problem_fixes_pe_and_isotherm(coarse_ref):
    prob = IdentificationProblem(coarse_ref, "henry", presets.HENRY_BOUNDS, 10.0,
                                 COARSE.with_(pe=3.0))
    assert prob.sim.pe == 10.0
    p = prob.params_for((0.001, 0.02))
    assert (p.da_a, p.da_d, p.nx) == (0.001, 0.02, 44)
    with pytest.raises(ConfigError):
        prob.params_for((0.001,))


# -- residual ---------------------------------------------------------------------------


def test_j_vanishes_at_truth(coarse_problem):
    assert residual_j((0.005, 0.05), coarse_problem) <= 1e-12


def test_j_grows_away_from_truth(coarse_problem):
    j_far = residual_j((0.0095, 0.05), coarse_problem)
    j_near = residual_j((0.0050001, 0.049995), coarse_problem)
    assert j_far > 1e3 * j_near
    assert j_near < 1e-8


def test_j_matches_hand_quadrature(coarse_problem, coarse_ref):
    cand = I.simulate_point((0.004, 0.06), coarse_problem)
    expected = sum((a - b) ** 2 * COARSE.dt for a, b in zip(cand.values, coarse_ref.values))
    assert residual_j((0.004, 0.06), coarse_problem) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 0.01), st.floats(0, 0.1))
def test_j_is_non_negative(coarse_problem, a, b):
    assert residual_j((a, b), coarse_problem) >= 0.0


def test_solver_failure_becomes_objective_error(coarse_problem, monkeypatch):
    def boom(params, history=None, use_numba=None):
        raise SolverError("non-finite field at step 3", step=3)

    monkeypatch.setattr(I, "simulate", boom)
    with pytest.raises(ObjectiveError) as info:
        residual_j((0.001, 0.002), coarse_problem)
    assert info.value.point == (0.001, 0.002)
    assert "0.001" in str(info.value)


# -- relative error and noise --------------------------------------------------------


def test_relative_error_examples():
    ref = np.linspace(0.1, 1.0, 50)
    assert relative_error(ref, ref) == 0.0
    assert relative_error(1.01 * ref, ref) == pytest.approx(0.01, abs=1e-12)
    with pytest.raises(ConfigError):
        relative_error(ref[:-1], ref)
    with pytest.raises(ConfigError):
        relative_error(ref, np.zeros(50))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=40), st.floats(-0.5, 0.5))
def test_relative_error_scaling(vals, k):
    ref = np.array(vals)
    assert relative_error((1 + k) * ref, ref) == pytest.approx(abs(k), abs=1e-12)


def test_noise_zero_is_identity(coarse_ref):
    out = add_noise(coarse_ref, 0.0, 5)
    np.testing.assert_array_equal(out.values, coarse_ref.values)


def test_noise_statistics():
    clean = ReferenceCurve(np.arange(1, 4001) * 0.1, np.full(4000, 0.5))
    noisy = add_noise(clean, 0.01, 11)
    sd = np.std(noisy.values - clean.values)
    assert abs(sd - 0.01) <= 0.001
    assert abs(np.mean(noisy.values - clean.values)) < 0.001
    np.testing.assert_array_equal(add_noise(clean, 0.01, 11).values, noisy.values)
    assert not np.array_equal(add_noise(clean, 0.01, 12).values, noisy.values)
    assert noisy.provenance["sigma"] == 0.01 and noisy.provenance["seed"] == 11


def test_noise_is_clamped():
    clean = BreakthroughCurve(np.arange(1, 501) * 1.0, np.zeros(500))
    noisy = add_noise(clean, 0.1, 0)
    assert noisy.values.min() >= 0.0 and noisy.values.max() > 0.0
    with pytest.raises(ConfigError):
        add_noise(clean, -0.1, 0)


# -- grid scan ------------------------------------------------------------------------


def test_two_by_two_scan(coarse_problem, monkeypatch, tmp_path):
    calls = []
    real = I.simulate

    def counting(params, history=None, use_numba=None):
        calls.append((params.da_a, params.da_d))
        return real(params, history, use_numba)

    monkeypatch.setattr(I, "simulate", counting)
    res = grid_scan(coarse_problem, (2, 2))
    assert res.j.shape == (2, 2) and len(calls) == 4
    assert sorted(calls) == [(0.0, 0.0), (0.0, 0.1), (0.01, 0.0), (0.01, 0.1)]
    res.write(tmp_path / "scan.csv", tmp_path / "scan.json")
    rows = (tmp_path / "scan.csv").read_text().splitlines()
    assert rows[0] == "p1,p2,J" and len(rows) == 5


def test_scan_argmin_is_consistent(coarse_problem, tmp_path):
    res = grid_scan(coarse_problem, (5, 6))
    assert np.nanmin(res.j) >= 0
    i, k = res.argmin
    assert res.j[i, k] == np.nanmin(res.j)
    assert res.j[i, k] == residual_j(res.argmin_point, coarse_problem)
    # truth (0.005, 0.05) is the middle node of both axes only on odd grids
    res = grid_scan(coarse_problem, (5, 5))
    assert res.argmin_point == pytest.approx((0.005, 0.05))
    res.write(tmp_path / "s.csv", tmp_path / "s.json")
    side = json.loads((tmp_path / "s.json").read_text())
    assert side["p1"] == "da_a" and side["grid"] == [5, 5]
    assert side["argmin"]["cell"] == [2, 2] and side["failed_cells"] == []


def test_scan_records_failed_cells(coarse_problem, monkeypatch, tmp_path):
    real = I.simulate

    def flaky(params, history=None, use_numba=None):
        if params.da_a > 0.007 and params.da_d < 0.03:
            raise SolverError("Newton iteration did not converge", step=1, residual=1.0)
        return real(params, history, use_numba)

    monkeypatch.setattr(I, "simulate", flaky)
    res = grid_scan(coarse_problem, (3, 3))
    assert res.failed and [(i, k) for i, k, _ in res.failed] == [(2, 0)]
    assert np.isnan(res.j[2, 0]) and np.isfinite(np.delete(res.j.ravel(), 6)).all()
    assert res.argmin == (1, 1)
    res.write(tmp_path / "s.csv", tmp_path / "s.json")
    assert "nan" in (tmp_path / "s.csv").read_text()
    assert json.loads((tmp_path / "s.json").read_text())["failed_cells"] == [[2, 0]]
    # an executor merges by index and gives the same matrix
    with ThreadPoolExecutor(2) as ex:
        par = grid_scan(coarse_problem, (3, 3), executor=ex)
    np.testing.assert_array_equal(np.nan_to_num(par.j, nan=-1), np.nan_to_num(res.j, nan=-1))


def test_scan_fixed_parameter_rules(coarse_problem):
    with pytest.raises(ConfigError):
        grid_scan(coarse_problem, (2, 2), fixed=("da_a", 0.005))
    with pytest.raises(ConfigError):
        grid_scan(coarse_problem, (1, 2))
    lang = presets.LANGMUIR_TRUTH.with_(nx=22, ny=4, t_end=300.0)
    prob = IdentificationProblem(synthetic_reference(lang), "langmuir", presets.LANGMUIR_BOUNDS,
                                 10.0, lang)
    with pytest.raises(ConfigError):
        grid_scan(prob, (2, 2))
    with pytest.raises(ConfigError):
        grid_scan(prob, (2, 2), fixed=("pe", 10.0))
    res = grid_scan(prob, (2, 3), fixed=("da_a", 100.0))
    assert res.names == ("da_d", "m_cap") and res.fixed == {"da_a": 100.0}
    np.testing.assert_array_equal(res.axis2, [800.0, 1000.0, 1200.0])


# -- identification -------------------------------------------------------------------


def test_identify_recovers_coarse_henry(coarse_problem):
    res = identify(coarse_problem)
    (a, b), j = res.best
    assert abs(a - 0.005) <= 0.01 * 0.005 and abs(b - 0.05) <= 0.01 * 0.05
    assert j <= 1e-8 and res.e_rel[0] <= 1e-4
    assert len(res.e_rel) == len(res.mbc_result.extrema)


def test_nfe_counts_direct_simulations(coarse_problem, monkeypatch):
    calls = [0]
    real = I.simulate

    def counting(params, history=None, use_numba=None):
        calls[0] += 1
        return real(params, history, use_numba)

    monkeypatch.setattr(I, "simulate", counting)
    prob = coarse_problem.with_(mbc=replace(SINGLE, max_iter=7))
    res = identify(prob)
    # one extra solve per reported extremum for E_rel
    assert res.mbc_result.nfe == calls[0] - len(res.mbc_result.extrema)
    assert res.mbc_result.nfe == SINGLE.sb + 7 * SINGLE.abb


def test_identify_report_is_deterministic(coarse_problem, tmp_path):
    prob = coarse_problem.with_(mbc=replace(SINGLE, max_iter=5))
    identify(prob).write_report(tmp_path / "a.json")
    with ThreadPoolExecutor(3) as ex:
        identify(prob, executor=ex).write_report(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    rep = json.loads((tmp_path / "a.json").read_text())
    assert rep["mbc"] == prob.mbc.to_dict() and rep["nfe"] == SINGLE.sb + 5 * SINGLE.abb
    assert set(rep["extrema"][0]) == {"point", "J", "e_rel"}
    assert MbcConfig.from_dict(rep["mbc"]) == prob.mbc


def test_corner_truth_stays_in_bounds():
    truth = COARSE.with_(da_a=0.01, da_d=0.1)
    ref = synthetic_reference(truth)
    cfg = replace(SINGLE, max_iter=40)
    prob = IdentificationProblem(ref, "henry", presets.HENRY_BOUNDS, 10.0, truth, cfg)
    res = identify(prob)
    for p, _ in res.mbc_result.extrema:
        assert presets.HENRY_BOUNDS.contains(p)
    (a, b), _ = res.best
    assert a > 0.009 and b > 0.09


def test_objective_error_aborts_identification(coarse_problem, monkeypatch):
    def boom(params, history=None, use_numba=None):
        raise SolverError("non-finite field", step=0)

    monkeypatch.setattr(I, "simulate", boom)
    with pytest.raises(ObjectiveError):
        identify(coarse_problem)


@pytest.mark.slow
def test_noise_degrades_identification_monotonically(coarse_problem, coarse_ref):
    means = []
    for sigma in (0.0, 0.005, 0.01):
        errs = []
        for seed in range(5):
            noisy = synthetic_reference(COARSE, sigma, seed)
            best, _ = identify(coarse_problem.with_(reference=noisy)).best
            errs.append(relative_error(I.simulate_point(best, coarse_problem), coarse_ref))
        means.append(np.mean(errs))
    assert means[0] <= means[1] <= means[2]


@pytest.mark.slow
def test_langmuir_valley():
    truth = presets.LANGMUIR_TRUTH
    prob = IdentificationProblem(synthetic_reference(truth), "langmuir", presets.LANGMUIR_BOUNDS,
                                 10.0, truth)
    valley = [residual_j(p, prob) for p in [(92.79, 0.9277, 997.6), (101.65, 1.0166, 1000.05),
                                            (125.8, 1.2586, 1002.2)]]
    off = [residual_j(p, prob) for p in [(100.0, 1.2, 1000.0), (80.0, 1.0, 1000.0)]]
    assert max(valley) < 1e-4
    assert min(off) > 1e4 * max(valley)
