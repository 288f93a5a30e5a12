import numpy as np
import pytest

from conftest import tp
from magtorus.errors import ModelError, NotClosed
from magtorus.lab.validate import fd_block_error
from magtorus.model import (ConformalFactor, GaugeData, MagneticModel, TwoForm, check_closed, constant_field_model,
                            decompose, exterior_derivative, gauge_residual, hamiltonian, hamiltonian_blocks)
from magtorus.trigpoly import TrigPoly


def test_certified_lower_bound_is_below_minimum():
    lam = tp(2, ((0, 0), 1.0, 0.0), ((1, 0), 0.6, 0.0), ((0, 1), 0.0, 0.3))
    cf = ConformalFactor.certify(lam)
    grid = np.stack(np.meshgrid(*[np.linspace(0, 2 * np.pi, 301)] * 2), -1).reshape(-1, 2)
    assert 0 < cf.lower_bound <= lam(grid).min()


@pytest.mark.parametrize("modes", [
    [((0, 0), -1.0, 0.0)],
    [((0, 0), 1.0, 0.0), ((1, 0), 1.2, 0.0)],
    [((0, 0), 0.0, 0.0)],
])
def test_nonpositive_factor_rejected(modes):
    with pytest.raises(ModelError):
        MagneticModel.build(tp(2, *modes))


def test_exact_form_example():
    # alpha = sin q1 dq2 has d alpha = cos q1 dq1 ^ dq2
    alpha = [TrigPoly.zero(2), tp(2, ((1, 0), 0.0, 1.0))]
    beta = exterior_derivative(alpha)
    assert beta[(0, 1)] == tp(2, ((1, 0), 1.0, 0.0))
    g = decompose(beta)
    assert np.allclose(g.Gamma, 0)
    assert g.alpha[1] == alpha[1] and g.alpha[0].is_zero
    assert gauge_residual(beta, g) < 1e-14


def test_harmonic_part_is_mean():
    beta = TwoForm(2, {(0, 1): tp(2, ((0, 0), 0.8, 0.0), ((2, 1), 0.3, -0.4))})
    g = decompose(beta)
    assert np.allclose(g.Gamma, [[0, 0.8], [-0.8, 0]])
    assert gauge_residual(beta, g) < 1e-12


def test_decompose_n3_random_exact_form(rng):
    alpha = [tp(3, *[(tuple(rng.integers(-2, 3, 3)), *rng.normal(size=2)) for _ in range(3)]) for _ in range(3)]
    gamma = np.zeros((3, 3))
    gamma[0, 2], gamma[1, 2] = 0.4, -1.1
    beta = exterior_derivative(alpha) + TwoForm.constant(gamma - gamma.T)
    assert check_closed(beta) < 1e-12
    g = decompose(beta)
    assert np.allclose(g.Gamma, gamma - gamma.T)
    assert gauge_residual(beta, g) < 1e-10


def test_not_closed_raises_with_residual():
    beta = TwoForm(3, {(0, 1): tp(3, ((0, 0, 1), 1.0, 0.0))})
    with pytest.raises(NotClosed) as info:
        decompose(beta)
    assert info.value.residual > 0.1


def test_explicit_alpha_checked():
    lam = TrigPoly.constant(2, 1.0)
    beta = TwoForm(2, {(0, 1): tp(2, ((1, 0), 1.0, 0.0))})
    MagneticModel.build(lam, beta, alpha=[TrigPoly.zero(2), tp(2, ((1, 0), 0.0, 1.0))])
    with pytest.raises(ModelError):
        MagneticModel.build(lam, beta, alpha=[TrigPoly.zero(2), tp(2, ((1, 0), 0.0, 2.0))])


def test_gauge_data_must_be_skew():
    with pytest.raises(ModelError):
        GaugeData((TrigPoly.zero(2), TrigPoly.zero(2)), np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_beta_matrix_skew_and_values(coupled_n2, rng):
    q = rng.uniform(0, 6, size=(7, 2))
    M = coupled_n2.beta_matrix(q)
    assert np.allclose(M, -np.swapaxes(M, -1, -2))
    assert np.allclose(M[:, 0, 1], coupled_n2.beta[(0, 1)](q))


def test_hamiltonian_values(coupled_n2, rng):
    q, p = rng.uniform(0, 6, 2), rng.normal(size=2)
    lam = coupled_n2.lam.lam(q)
    assert np.isclose(hamiltonian(coupled_n2, q, p, "H"), 0.5 * lam * p @ p)
    v = p - coupled_n2.alpha(q)
    assert np.isclose(hamiltonian(coupled_n2, q, p, "H~"), 0.5 * lam * v @ v)


@pytest.mark.parametrize("which", ["H", "H~"])
def test_blocks_match_finite_differences(bundled, coupled_n2, rng, which):
    for m in [coupled_n2, *bundled.values()]:
        for _ in range(4):
            q = rng.uniform(0, 2 * np.pi, m.dim)
            p = rng.normal(size=m.dim)
            assert fd_block_error(m, q, p, which) < 1e-6


def test_blocks_broadcast(coupled_n2, rng):
    q = rng.uniform(0, 6, size=(3, 4, 2))
    p = rng.normal(size=(3, 4, 2))
    b = hamiltonian_blocks(coupled_n2, q, p, "H~")
    assert b.Hqq.shape == (3, 4, 2, 2)
    single = hamiltonian_blocks(coupled_n2, q[1, 2], p[1, 2], "H~")
    assert np.allclose(b.Hqq[1, 2], single.Hqq) and np.allclose(b.Hpq[1, 2], single.Hpq)
    assert np.allclose(b.Hqp, np.swapaxes(b.Hpq, -1, -2))


def test_constant_field_model():
    m = constant_field_model(3, 2.0)
    assert m.Gamma[0, 1] == 2.0 and m.Gamma[1, 0] == -2.0
    assert m.gauge.alpha_is_zero
