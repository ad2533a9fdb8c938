import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from bee_ident import benchmarks as B


def test_registry_contents():
    names = [s.name for s in B.registry()]
    assert names == ["shekel", "rosenbrock", "himmelblau", "rastrigin"]
    assert B.get("shekel").domain.lo == (0.0, 0.0)
    assert B.get("shekel").domain.hi == (20.0, 20.0)
    assert ((0.0, 0.0), 0.0) in B.get("rastrigin").known_minima
    assert all(s.dims == 2 for s in B.registry())


def test_unknown_benchmark():
    with pytest.raises(KeyError):
        B.get("ackley")


@pytest.mark.parametrize("point, value, tol", [
    ((2.0, 10.0), -1.01439037, 1e-7),
    ((10.0, 15.0), -0.5165, 5e-4),
    ((18.0, 4.0), -0.5088, 5e-4),
])
def test_shekel_values(point, value, tol):
    assert abs(B.shekel2(point) - value) <= tol


def test_simple_substitutions():
    assert B.rosenbrock2((1.0, 1.0)) == 0.0
    assert B.rosenbrock2((0.0, 0.0)) == 1.0
    assert B.rosenbrock2((-1.0, 1.0)) == 4.0
    assert B.himmelblau((3.0, 2.0)) == 0.0
    assert B.himmelblau((0.0, 0.0)) == 170.0
    assert B.rastrigin2((0.0, 0.0)) == 0.0
    assert abs(B.rastrigin2((1.0, 1.0)) - 2.0) <= 1e-9
    assert abs(B.rastrigin2((0.5, 0.0)) - 20.25) <= 1e-9


def test_tabulated_minima_reproduce():
    for spec in B.registry():
        for point, value in spec.known_minima:
            tol = 1e-4 if spec.name == "shekel" and value > -1 else 1e-6
            assert abs(spec(point) - value) <= tol, (spec.name, point)


def test_himmelblau_roots_are_true_local_minima():
    # polish each tabulated root with an independent local solver
    for point, _ in B.get("himmelblau").known_minima:
        res = minimize(B.himmelblau, point, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14})
        assert np.linalg.norm(res.x - point) < 1e-5
        assert res.fun < 1e-10


def test_shekel_secondary_minima_are_near_table_points():
    for point, value in B.get("shekel").known_minima:
        res = minimize(B.shekel2, point, method="Nelder-Mead", options={"xatol": 1e-10})
        assert np.linalg.norm(res.x - point) < 0.05
        assert abs(res.fun - value) < 1e-3


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 40), st.floats(-20, 40))
def test_sign_properties(x, y):
    p = (x, y)
    assert B.shekel2(p) < 0
    assert B.rosenbrock2(p) >= 0
    assert B.himmelblau(p) >= 0


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_rastrigin_non_negative_on_domain(x, y):
    assert B.rastrigin2((x, y)) >= 0


def test_vectorised_evaluation_matches_scalar():
    pts = np.random.default_rng(0).uniform(-5, 5, size=(50, 2))
    for fn in (B.shekel2, B.rosenbrock2, B.himmelblau, B.rastrigin2):
        vec = fn(pts.T)
        np.testing.assert_allclose(vec, [fn(p) for p in pts], rtol=0, atol=0)


def test_match_minima_tolerances():
    spec = B.get("rosenbrock")
    assert B.match_minima(spec, [((1.01, 1.01), 5e-4)]) == [True]
    assert B.match_minima(spec, [((1.1, 1.2), 5e-4)]) == [False]
    assert B.match_minima(spec, [((1.0, 1.0), 0.02)]) == [False]
