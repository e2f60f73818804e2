from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from landau_lab.radial import (AxialDensity, ProfileTable, assemble_tensor, composite_gl_nodes,
                               derivative_plan, grouped_symbols, legendre_monomial, plan_orders,
                               radial_kernel_matrix, radial_profile_quad, sph_ratio)


@pytest.mark.parametrize("n", [0, 1, 2, 3, 4])
def test_sph_ratio_limit_and_values(n):
    z = np.array([0.0, 1e-8, 0.3, 2.0, 17.0])
    out = sph_ratio(n, z)
    lim = 1.0 / special.factorial2(2 * n + 1)
    assert out[0] == pytest.approx(lim, rel=1e-15)
    assert out[1] == pytest.approx(lim, rel=1e-12)
    assert np.allclose(out[2:], special.spherical_jn(n, z[2:]) / z[2:] ** n, rtol=1e-13)


@pytest.mark.parametrize("ell", range(6))
def test_legendre_monomials(ell):
    c = np.linspace(-1, 1, 7)
    coeffs = legendre_monomial(ell)
    val = sum(cj * c ** (ell - 2 * j) for j, cj in enumerate(coeffs))
    assert np.allclose(val, special.eval_legendre(ell, c))


def test_composite_nodes_integrate_polynomials():
    k, w = composite_gl_nodes(1e-3, 0.125, 10.0, 8)
    assert np.all(np.diff(k) > 0)
    assert k[0] > 0 and k[-1] < 10.0
    assert np.sum(w * k ** 3) == pytest.approx(10.0 ** 4 / 4, rel=1e-13)


def gaussian_profiles(r, n):
    # F = exp(-r^2): ((1/r) d/dr)^n F = (-2)^n exp(-r^2)
    return (-2.0) ** n * np.exp(-r * r)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_assemble_tensor_against_finite_differences(m, rng):
    x = rng.normal(size=(5, 3))
    r = np.linalg.norm(x, axis=1)
    tens = assemble_tensor(m, 0, x, {n: gaussian_profiles(r, n) for n in plan_orders(m)})
    h = 1e-5
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        if m == 1:
            fd = (np.exp(-np.sum((x + e) ** 2, 1)) - np.exp(-np.sum((x - e) ** 2, 1))) / (2 * h)
            assert np.allclose(tens[:, a], fd, atol=1e-8)
        else:
            up = assemble_tensor(m - 1, 0, x + e, {n: gaussian_profiles(np.linalg.norm(x + e, axis=1), n)
                                                   for n in plan_orders(m - 1)})
            dn = assemble_tensor(m - 1, 0, x - e, {n: gaussian_profiles(np.linalg.norm(x - e, axis=1), n)
                                                   for n in plan_orders(m - 1)})
            assert np.allclose(tens[(Ellipsis, a)], (up - dn) / (2 * h), atol=1e-7)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=3), st.integers(min_value=0, max_value=3))
def test_derivative_plan_is_symmetric(m, p):
    plan = derivative_plan(m, p)
    for multi, terms in plan.items():
        assert plan[tuple(sorted(multi))] == terms
        for n, pw, c in terms:
            assert c > 0
            assert sum(pw) == 2 * n - (m + p)


def test_radial_matrix_reproduces_gaussian():
    # symbol of exp(-r^2) is pi^{3/2} exp(-k^2/4)
    k, w = composite_gl_nodes(1e-3, 0.125, 12.0, 8)
    r = np.array([0.0, 0.5, 1.3, 2.5])
    h = np.pi ** 1.5 * np.exp(-k * k / 4)
    for n in range(3):
        assert np.allclose(h @ radial_kernel_matrix(k, w, r, n).T, gaussian_profiles(r, n), atol=1e-12)


def test_adaptive_profile_quadrature():
    h = lambda k: np.pi ** 1.5 * np.exp(-k * k / 4)
    for n in range(3):
        val = radial_profile_quad(h, 0.8, n, 0.0, 14.0)
        assert val == pytest.approx(gaussian_profiles(0.8, n), rel=1e-9)


def newton_dipole(x):
    """``Delta^{-1}`` of ``x_1 exp(-|x|^2)`` in closed form."""
    r = np.linalg.norm(x, axis=1)
    inner = np.sqrt(np.pi) / 4 * special.erf(r) - r / 2 * np.exp(-r * r)
    return -0.5 * x[:, 0] / r * inner / r ** 2


@pytest.fixture(scope="module")
def dipole():
    # x_1 exp(-|x|^2) has transform -i xi_1 (pi^{3/2}/2) exp(-k^2/4), i.e. a_1 = k (pi^{3/2}/2) exp(-k^2/4)
    k, w = composite_gl_nodes(1e-3, 0.125, 12.0, 8)
    a1 = k * np.pi ** 1.5 / 2 * np.exp(-k * k / 4)
    return AxialDensity([0.0], k, w, {1: a1[None, :]})


def test_axial_density_rho_and_potential(dipole, rng):
    x = rng.normal(size=(20, 3))
    rho = dipole.evaluate(x, "rho")[0]
    assert np.allclose(rho, x[:, 0] * np.exp(-np.sum(x * x, 1)), atol=1e-12)
    pot = dipole.evaluate(x, 0)[0]
    assert np.allclose(pot, newton_dipole(x), atol=1e-7)


def test_axial_density_field_is_gradient(dipole, rng):
    x = rng.normal(size=(6, 3)) * 2
    E = dipole.evaluate(x, 1)[0]
    h = 1e-5
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        fd = (newton_dipole(x + e) - newton_dipole(x - e)) / (2 * h)
        assert np.allclose(E[:, a], fd, atol=1e-7)


def test_axial_symbol_interpolates(dipole):
    xi = np.array([[0.5, 0.0, 0.0], [0.0, 0.3, 0.4]])
    sym = dipole.symbol(xi)[0]
    exact = -1j * xi[:, 0] * np.pi ** 1.5 / 2 * np.exp(-np.sum(xi * xi, 1) / 4)
    assert np.allclose(sym, exact, atol=1e-5)


def test_grouped_symbols_levels():
    k = np.array([1.0, 2.0])
    a = np.array([[1.0, 1.0]])
    rho = grouped_symbols({1: a}, k, "rho")
    pot = grouped_symbols({1: a}, k, "potential")
    assert set(rho) == {1}
    assert np.allclose(pot[1], -rho[1] / k ** 2)
    with pytest.raises(ValueError):
        grouped_symbols({1: a}, k, "other")


def test_profile_table_matches_direct_evaluation(dipole, rng):
    tab = ProfileTable(dipole, 1, r_max=10.0, dr=0.02)
    x = rng.normal(size=(30, 3)) * 2
    assert np.allclose(tab(0, x), dipole.evaluate(x, 1)[0], atol=1e-7)
    rtab = ProfileTable(dipole, "rho", r_max=10.0, dr=0.02)
    assert np.allclose(rtab(0, x), dipole.evaluate(x, "rho")[0], atol=1e-6)


def test_profile_table_far_field_decays_as_dipole(dipole):
    tab = ProfileTable(dipole, 1, r_max=10.0, dr=0.02)
    x = np.array([[0.0, 20.0, 0.0], [0.0, 40.0, 0.0]])
    E = tab(0, x)
    # the dipole field decays as r^-3
    assert np.linalg.norm(E[0]) / np.linalg.norm(E[1]) == pytest.approx(8.0, rel=1e-6)
    exact = np.array([(newton_dipole(np.array([[h, 20.0, 0.0]])) - newton_dipole(np.array([[-h, 20.0, 0.0]])))[0] / (2 * h)
                      for h in [1e-4]])
    assert E[0, 0] == pytest.approx(exact[0], rel=1e-3)
