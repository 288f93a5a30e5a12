import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import tp
from magtorus.averaging import (GridTooCoarse, QuadratureGrid, gauge_invariance_check, level_parametrize,
                                odd_integrand_check, sigma_closed_form, sigma_direct, sigma_half_gradient_form,
                                sigma_report, sphere_rule, sphere_volume, total_mass, total_mass_fourier)
from magtorus.model import MagneticModel, hamiltonian
from magtorus.modelio import model_hash


@pytest.mark.parametrize("n,size", [(2, 16), (3, 12), (4, 6)])
def test_sphere_rule_moments(n, size):
    nodes, w = sphere_rule(n, size)
    vol = sphere_volume(n)
    assert np.allclose(np.linalg.norm(nodes, axis=1), 1)
    assert np.isclose(w.sum(), vol)
    assert np.allclose(np.einsum("m,mi,mj->ij", w, nodes, nodes), vol / n * np.eye(n))
    # antipodal symmetry makes every odd moment vanish
    assert np.allclose(np.einsum("m,mi,mj,mk->ijk", w, nodes, nodes, nodes), 0, atol=1e-14)


def test_sphere_volumes():
    assert np.isclose(sphere_volume(2), 2 * np.pi)
    assert np.isclose(sphere_volume(3), 4 * np.pi)
    assert np.isclose(sphere_volume(4), 2 * np.pi ** 2)


def test_level_parametrize_lands_on_level(bundled, rng):
    m = bundled["conformal_n3"]
    q = rng.uniform(0, 6, (5, 3))
    om = rng.normal(size=(5, 3))
    om /= np.linalg.norm(om, axis=1, keepdims=True)
    p, w = level_parametrize(m, q, om, "H~")
    assert np.allclose(hamiltonian(m, q, p, "H~"), 0.5)
    assert np.allclose(w, m.lam.lam(q) ** -1.5)
    p, _ = level_parametrize(m, q, om, "H")
    assert np.allclose(hamiltonian(m, q, p, "H"), 0.5)


def test_total_mass_two_ways(bundled):
    m = bundled["cos_family_eps03"]
    grid = QuadratureGrid.build(3, 16, 6)
    exact = 4 * np.pi * (2 * np.pi) ** 2 * quad(lambda x: (1 + 0.3 * np.cos(x)) ** -1.5, 0, 2 * np.pi)[0]
    assert np.isclose(total_mass(m, grid), exact, rtol=1e-10)
    assert np.isclose(total_mass_fourier(m, 32), exact, rtol=1e-10)


def _closed_form_oracle(eps):
    inner = quad(lambda x: (1 + eps * np.cos(x)) ** -3.5 * (eps * np.sin(x)) ** 2, 0, 2 * np.pi,
                 epsabs=1e-14, epsrel=1e-13)[0]
    return 4 * np.pi * 0.25 * (2 * np.pi) ** 2 * inner


@pytest.mark.parametrize("eps", [0.1, 0.3])
def test_sigma_closed_form_against_quad(eps):
    m = MagneticModel.build(tp(3, ((0, 0, 0), 1.0, 0.0), ((1, 0, 0), eps, 0.0)))
    oracle = _closed_form_oracle(eps)
    assert abs(sigma_closed_form(m, 32) - oracle) / oracle < 1e-10
    direct = sigma_direct(m, "H", QuadratureGrid.build(3, 24, 8), check=False).value
    assert abs(direct - oracle) / oracle < 1e-6 and direct > 0


def test_half_gradient_form_differs():
    m = MagneticModel.build(tp(3, ((0, 0, 0), 1.0, 0.0), ((1, 0, 0), 0.3, 0.0)))
    assert not np.isclose(sigma_half_gradient_form(m, 24), sigma_closed_form(m, 24))


def test_two_dimensional_sigma_vanishes(coupled_n2):
    grid = QuadratureGrid.build(2, 48, 24)
    assert abs(sigma_direct(coupled_n2, "H", grid, check=False).value) < 1e-10
    assert sigma_closed_form(coupled_n2) == 0.0


def test_constant_lambda_gives_zero(bundled):
    assert abs(sigma_direct(bundled["flat_exact_beta"], "H~", QuadratureGrid.build(2, 8, 8)).value) < 1e-12


def test_gauge_invariance_and_odd_integrand(bundled, coupled_n2):
    for m in (coupled_n2, bundled["conformal_n3"]):
        grid = QuadratureGrid.build(m.dim, 12, 8 if m.dim == 3 else 24)
        assert gauge_invariance_check(m, grid) < 1e-8
        assert abs(odd_integrand_check(m, grid)) < 1e-12
        # the control is not trivially zero
        assert abs(odd_integrand_check(m, grid, absolute=True)) > 1.0


def test_coarse_grid_warns(bundled):
    m = bundled["cos_family_eps03"]
    with pytest.warns(GridTooCoarse):
        sigma_direct(m, "H", QuadratureGrid.build(3, 4, 6))
    with warnings.catch_warnings():
        warnings.simplefilter("error", GridTooCoarse)
        sigma_direct(m, "H", QuadratureGrid.build(3, 24, 6))


def test_grid_limits():
    with pytest.raises(ValueError):
        QuadratureGrid.build(5, 8)


def test_report_fields(bundled):
    m = bundled["cos_family_eps01"]
    rep = sigma_report(m, QuadratureGrid.build(3, 12, 6), model_hash(m), refinements=1)
    for key in ("sigma_H", "sigma_H_tilde", "closed_form", "half_gradient_form", "discrepancy_gauge",
                "discrepancy_closed_form", "convergence", "grid", "model_hash"):
        assert key in rep
    assert [row["N"] for row in rep["convergence"]] == [12, 24]
