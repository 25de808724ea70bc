import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from dispcq.cq import (
    CQGrid,
    apply_symbol,
    cq_weights,
    default_rho,
    delta_symbol,
    discrete_convolution,
    march_convolution_equation,
    point_values,
    radau_tableau,
    sample_stages,
    solve_convolution_equation,
)
from dispcq.errors import DomainError


def test_tableaux():
    t1 = radau_tableau(1)
    assert t1.A.tolist() == [[1.0]] and t1.b.tolist() == [1.0] and t1.c.tolist() == [1.0]
    t2 = radau_tableau(2)
    np.testing.assert_allclose(t2.A, [[5 / 12, -1 / 12], [3 / 4, 1 / 4]], atol=1e-16)
    np.testing.assert_allclose(t2.b, [3 / 4, 1 / 4])
    np.testing.assert_allclose(t2.c, [1 / 3, 1])
    assert t2.b @ t2.c == pytest.approx(0.5)
    assert t2.b @ t2.A @ t2.c == pytest.approx(1 / 6)
    for m in (1, 2, 3):
        t = radau_tableau(m)
        assert t.stiffly_accurate
        assert abs(t.r_infinity) <= 1 + 1e-12
        assert t.b.sum() == pytest.approx(1.0)
    assert radau_tableau(2).r_infinity == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        radau_tableau(4)


def test_delta_symbol():
    t2 = radau_tableau(2)
    np.testing.assert_allclose(delta_symbol(t2, 0.0), np.linalg.inv(t2.A), atol=1e-13)
    np.testing.assert_allclose(delta_symbol(t2, 0.0), [[1.5, 0.5], [-4.5, 2.5]], atol=1e-13)
    assert delta_symbol(radau_tableau(1), 0.5)[0, 0] == pytest.approx(0.5)
    with pytest.raises(DomainError):
        delta_symbol(t2, 1.0)
    for z in 0.9 * np.exp(2j * np.pi * np.arange(7) / 7):
        assert np.all(np.linalg.eigvals(delta_symbol(t2, z)).real > 0)


def test_grid_validation():
    with pytest.raises(DomainError):
        CQGrid(1.0, 0)
    with pytest.raises(DomainError):
        CQGrid(1.0, 4, rho=1.5)
    g = CQGrid(2.0, 8)
    assert g.tau == 0.25 and g.L == 9 and g.rho == pytest.approx(default_rho(9))


def test_weights_closed_forms():
    g = CQGrid(1.0, 10)
    W = cq_weights(lambda s: 1.0, radau_tableau(2), g)
    np.testing.assert_allclose(W[0], np.eye(2), atol=1e-12)
    assert np.abs(W[1:]).max() < 1e-12
    W = cq_weights(lambda s: s, radau_tableau(1), CQGrid(1.0, 10))
    assert W[0, 0, 0] == pytest.approx(10.0, abs=1e-9)
    assert W[1, 0, 0] == pytest.approx(-10.0, abs=1e-9)
    assert np.abs(W[2:]).max() < 1e-9
    W = cq_weights(lambda s: 1 / s, radau_tableau(1), CQGrid(4.0, 8))
    np.testing.assert_allclose(W[:, 0, 0].real, 0.5, atol=1e-12)


def test_identity_and_composition_to_identity():
    tab, grid = radau_tableau(2), CQGrid(2.0, 32)
    g = sample_stages(lambda t: t**3 * np.exp(-t), tab, grid)
    np.testing.assert_allclose(discrete_convolution(lambda s: 1.0, g, tab, grid).real, g, atol=1e-12)
    y = apply_symbol(lambda s: 1 / s, apply_symbol(lambda s: s, g, tab, grid), tab, grid)
    assert np.abs(y - g).max() <= 1e-10 * np.abs(g).max()


def test_integral_of_constant():
    tab, grid = radau_tableau(2), CQGrid(1.0, 16)
    g = np.ones((17, 2))
    y = point_values(discrete_convolution(lambda s: 1 / s, g, tab, grid).real)
    np.testing.assert_allclose(y, grid.times, atol=1e-10)


def test_frequency_and_weight_routes_agree(rng):
    tab, grid = radau_tableau(2), CQGrid(1.0, 20)
    g = rng.standard_normal((21, 2))
    K = lambda s: 1 / np.sqrt(s)
    a = apply_symbol(K, g, tab, grid)
    b = discrete_convolution(K, g, tab, grid).real
    assert np.abs(a - b).max() < 1e-7 * np.abs(b).max()


def test_solve_scalar_cases():
    tab, grid = radau_tableau(2), CQGrid(1.0, 32)
    g = sample_stages(lambda t: t**2, tab, grid)
    np.testing.assert_allclose(solve_convolution_equation(lambda s: 1.0, g, tab, grid), g, atol=1e-12)
    y = point_values(solve_convolution_equation(lambda s: s, g, tab, grid))
    assert np.abs(y - grid.times**3 / 3).max() < 1e-6


def test_solve_matches_runge_kutta_ode():
    """A(s) = 1 + s: y + y' = g, integrated independently."""
    tab, grid = radau_tableau(2), CQGrid(2.0, 64)
    g = lambda t: t**4 * np.exp(-t)
    y = point_values(solve_convolution_equation(lambda s: 1 + s, sample_stages(g, tab, grid), tab, grid))
    ref = solve_ivp(lambda t, u: g(t) - u, (0, 2.0), [0.0], t_eval=grid.times, rtol=1e-12, atol=1e-14).y[0]
    assert np.abs(y - ref).max() < 1e-5


def test_march_agrees_with_frequency_solver(rng):
    tab, grid = radau_tableau(2), CQGrid(1.0, 16)
    g = rng.standard_normal((17, 2))
    K = lambda s: 1 + np.sqrt(s)
    W = cq_weights(K, tab, grid)
    a = march_convolution_equation(W, g).real
    b = solve_convolution_equation(K, g, tab, grid)
    assert np.abs(a - b).max() < 1e-6 * np.abs(a).max()


def test_solver_roundtrip_matrix(rng):
    tab, grid = radau_tableau(2), CQGrid(1.0, 16)
    M = rng.standard_normal((3, 3))
    A = lambda s: s * np.eye(3) + M @ M.T
    g = rng.standard_normal((17, 2, 3))
    x = solve_convolution_equation(A, g, tab, grid)
    back = apply_symbol(A, x, tab, grid)
    assert np.abs(back - g).max() < 1e-6 * np.abs(g).max()


def test_causality(rng):
    tab, grid = radau_tableau(2), CQGrid(1.0, 24)
    g = rng.standard_normal((25, 2))
    K = lambda s: np.exp(-0.1 * s) / s
    W = cq_weights(K, tab, grid)
    g2 = g.copy()
    g2[10:] = 0
    a = discrete_convolution(W, g)
    b = discrete_convolution(W, g2)
    assert np.array_equal(a[:10], b[:10])


def test_compatibility_warning():
    tab, grid = radau_tableau(1), CQGrid(1.0, 4)
    with pytest.warns(UserWarning, match="vanish"):
        apply_symbol(lambda s: 1 / s, np.ones((5, 1)), tab, grid)


def test_conjugate_halving_matches_full_sweep(rng):
    tab, grid = radau_tableau(2), CQGrid(1.0, 15)
    g = rng.standard_normal((16, 2))
    K = lambda s: s ** 0.3
    a = apply_symbol(K, g, tab, grid, conjugate_symmetric=True)
    b = apply_symbol(K, g, tab, grid, conjugate_symmetric=False).real
    assert np.abs(a - b).max() < 1e-9 * np.abs(b).max()


@settings(max_examples=10, deadline=None)
@given(st.integers(8, 96))
def test_half_derivative_composition(N):
    tab, grid = radau_tableau(2), CQGrid(1.0, N)
    g = sample_stages(lambda t: np.sin(3 * t) * t**3, tab, grid)
    half = lambda s: np.sqrt(s)
    y = apply_symbol(half, apply_symbol(half, g, tab, grid), tab, grid)
    z = apply_symbol(lambda s: s, g, tab, grid)
    assert np.abs(y - z).max() <= 1e-10 * np.abs(g).max()
