import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qubitpmp import nelder_mead


def test_rosenbrock():
    f = lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
    res = nelder_mead.minimize(f, [-1.2, 1.0], step=0.5, xtol=1e-10, ftol=1e-16, max_evals=5000)
    assert res.converged
    assert np.allclose(res.x, [1, 1], atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4), st.integers(0, 1000))
def test_convex_quadratic_minimum(center, seed):
    c = np.array(center)
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(c.size, c.size))
    H = M @ M.T + np.eye(c.size)
    f = lambda x: float((x - c) @ H @ (x - c))
    res = nelder_mead.minimize(f, np.zeros(c.size), step=1.0, xtol=1e-9, ftol=1e-18,
                               max_evals=20000)
    assert np.allclose(res.x, c, atol=1e-6)


def test_budget_and_counts():
    calls = []

    def f(x):
        calls.append(1)
        return float(np.sum(x**2))

    res = nelder_mead.minimize(f, [3.0, 2.0], max_evals=30)
    assert not res.converged
    assert res.evaluations == len(calls)
    assert res.evaluations <= 32


def test_zero_dimensional():
    res = nelder_mead.minimize(lambda x: 4.0, [])
    assert res.fun == 4.0 and res.converged


def test_initial_simplex_shape():
    s = nelder_mead.initial_simplex([1.0, 2.0, 3.0], 0.1)
    assert s.shape == (4, 3)
    assert np.allclose(s[1:] - s[0], 0.1 * np.eye(3))


def test_custom_simplex_is_used():
    f = lambda x: float((x[0] - 2) ** 2)
    res = nelder_mead.minimize(f, [0.0], simplex=[[1.5], [2.5]], xtol=1e-10, ftol=1e-20)
    assert res.x[0] == pytest.approx(2.0, abs=1e-8)
