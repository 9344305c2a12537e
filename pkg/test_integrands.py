import numpy as np
import pytest
from pydantic import ValidationError

from errors import InputError
from integrands import (ElasticLaw, GaugeTable, eval_j, eval_j_bar, eval_j_bar_star, eval_j_k, eval_j_k_star,
                        eval_j_star, grad_j_bar, grad_j_k, integrand_row, j_k_batch, j_k_star_batch, j_k_stress,
                        law_from_gamma, numeric_conjugate, project_level_set, prox_rho0, rank_k_frame_sup,
                        rank_one_sup, rho, rho0, strain_from_stress, stress_from_strain)
from tensor_core import SymTensor, frob_inner, outer, sym_part


def _sym(rng, count, n):
    return sym_part(rng.standard_normal((count, n, n)))


def _rank_limited(rng, count, n, k):
    q, _ = np.linalg.qr(rng.standard_normal((count, n, n)))
    vals = rng.standard_normal((count, n))
    vals[:, k:] = 0.0
    return np.einsum('aik,ak,ajk->aij', q, vals, q)


# --- law ---


def test_gamma_derived_from_coefficients():
    law = ElasticLaw(dim=2, alpha=0.0, beta=0.5)
    assert law.gamma == pytest.approx(1.0)
    assert law.rank_one_coef == pytest.approx(0.5)
    assert law_from_gamma(2, 2.0).beta == pytest.approx(0.25)


def test_law_validation():
    with pytest.raises(ValidationError):
        ElasticLaw(dim=2, alpha=0.0, beta=-1.0)
    with pytest.raises(ValidationError):
        ElasticLaw(dim=2, alpha=-2.0, beta=0.5)
    with pytest.raises(ValidationError):
        ElasticLaw(dim=2, alpha=0.0, beta=0.5, gamma=3.0)
    with pytest.raises(InputError):
        ElasticLaw(dim=2, alpha=0.0, beta=0.5).check_k(3)
    with pytest.raises(InputError):
        law_from_gamma(2, 0.0)


# --- values ---


def test_integrand_row_example(shear_law):
    row = integrand_row(shear_law, [2.0, 1.0])
    assert row["j_bar"] == pytest.approx(2.0)
    assert row["j"] == pytest.approx(2.5)
    assert row["rho"] == pytest.approx(2.0)
    with pytest.raises(InputError):
        integrand_row(shear_law, [1.0, 2.0, 3.0])


def test_zero_tensor(law3):
    zero = SymTensor.zero(3)
    for k in range(4):
        assert eval_j_k(law3, k, zero) == 0.0
        assert eval_j_k_star(law3, k, zero) == 0.0


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_relaxed_law_matches_rank_one_sup(rng, gamma):
    law = law_from_gamma(2, gamma)
    for z in _sym(rng, 500, 2):
        ref = rank_one_sup(law, z, directions=4096)
        assert eval_j_bar(law, z) == pytest.approx(ref, rel=1e-4, abs=1e-12)


def test_relaxed_law_matches_rank_one_sup_with_lame(rng, lame_law):
    for z in _sym(rng, 100, 2):
        assert eval_j_bar(lame_law, z) == pytest.approx(rank_one_sup(lame_law, z), rel=1e-4, abs=1e-12)


@pytest.mark.parametrize("fixture", ["lame_law", "law3", "law3_shear"])
def test_rank_chain(rng, request, fixture):
    law = request.getfixturevalue(fixture)
    z = _sym(rng, 500, law.dim)
    values = np.stack([j_k_batch(law, k, z, with_grad=False)[0] for k in range(law.dim + 1)])
    assert np.all(np.diff(values, axis=0) >= -1e-9)
    j_direct = np.array([eval_j(law, zz) for zz in z[:20]])
    np.testing.assert_allclose(values[-1][:20], j_direct, rtol=1e-12)


def test_rank_k_law_against_frame_sampling(rng, law3):
    for z in _sym(rng, 5, 3):
        sampled = rank_k_frame_sup(law3, 2, z, samples=4000, seed=1)
        assert eval_j_k(law3, 2, z) >= sampled - 1e-9
        assert eval_j_k(law3, 2, z) == pytest.approx(sampled, rel=1e-9)


@pytest.mark.parametrize("fixture,k", [("lame_law", 1), ("law3", 1), ("law3", 2), ("law3_shear", 2)])
def test_conjugates_agree_on_low_rank(rng, request, fixture, k):
    law = request.getfixturevalue(fixture)
    xi = _rank_limited(rng, 200, law.dim, k)
    np.testing.assert_allclose(j_k_star_batch(law, k, xi), j_k_star_batch(law, law.dim, xi), rtol=1e-8, atol=1e-12)


def test_j_zero_conjugate_is_indicator(law3):
    assert eval_j_k_star(law3, 0, SymTensor.zero(3)) == 0.0
    assert eval_j_k_star(law3, 0, SymTensor.identity(3)) == np.inf


def test_conjugate_of_j_matches_numeric(lame_law):
    xi = SymTensor.from_matrix([[1.0, 0.3], [0.3, -0.5]])
    assert eval_j_star(lame_law, xi) == pytest.approx(numeric_conjugate(lame_law, xi), rel=1e-6)


def test_relaxed_conjugate_identity_2d(shear_law):
    assert eval_j_bar_star(shear_law, np.eye(2)) == pytest.approx(2.0)
    assert eval_j_star(shear_law, np.eye(2)) == pytest.approx(1.0)


@pytest.mark.parametrize("fixture", ["shear_law", "lame_law", "law3_shear", "law3"])
def test_fenchel_young_equality_at_gradient(rng, request, fixture):
    law = request.getfixturevalue(fixture)
    count = 10 if fixture == "law3" else 100
    for z in _sym(rng, count, law.dim):
        xi = grad_j_bar(law, z)
        pairing = float(frob_inner(z, xi.matrix))
        assert eval_j_bar(law, z) + eval_j_bar_star(law, xi) == pytest.approx(pairing, rel=1e-6, abs=1e-10)


@pytest.mark.parametrize("fixture", ["shear_law", "law3_shear"])
def test_fenchel_young_inequality(rng, request, fixture):
    law = request.getfixturevalue(fixture)
    n = law.dim
    z, xi = _sym(rng, 200, n), _sym(rng, 200, n)
    lhs = j_k_batch(law, n - 1, z, with_grad=False)[0] + j_k_star_batch(law, n - 1, xi)
    assert np.all(lhs >= frob_inner(z, xi) - 1e-10)


def test_gradient_matches_finite_differences(rng, law3):
    z = _sym(rng, 1, 3)[0]
    g = grad_j_k(law3, 2, z).matrix
    d = sym_part(rng.standard_normal((3, 3)))
    h = 1e-6
    fd = (eval_j_k(law3, 2, z + h * d) - eval_j_k(law3, 2, z - h * d)) / (2 * h)
    assert float(frob_inner(g, d)) == pytest.approx(fd, rel=1e-5)


def test_tie_uses_averaged_selection(shear_law):
    _, grad = j_k_stress(shear_law, 1, np.array([1.0, -1.0]))
    np.testing.assert_allclose(grad, [0.5, -0.5])


def test_smoothing_brackets_exact_value(rng, law3):
    lam = rng.standard_normal((50, 3))
    exact, _ = j_k_stress(law3, 2, lam)
    smooth, _ = j_k_stress(law3, 2, lam, temperature=1e-2)
    assert np.all(smooth >= exact - 1e-14)
    assert np.all(smooth <= exact + 1e-2 * np.log(3) + 1e-14)


def test_stress_strain_inverse(rng, lame_law):
    e = _sym(rng, 20, 2)
    np.testing.assert_allclose(strain_from_stress(lame_law, stress_from_strain(lame_law, e)), e, atol=1e-12)


# --- gauges ---


@pytest.mark.parametrize("fixture", ["shear_law", "lame_law", "law3_shear"])
def test_gauges_are_polar(rng, request, fixture):
    law = request.getfixturevalue(fixture)
    table = GaugeTable(law)
    z, xi = _sym(rng, 300, law.dim), _sym(rng, 300, law.dim)
    assert np.all(frob_inner(z, xi) <= table.rho(z) * table.rho0(xi) + 1e-10)


def test_rank_one_polar_gauge(shear_law):
    # ρ⁰(τ e⊗e) = √γ |τ|
    assert rho0(shear_law, outer([0.6, 0.8], -3.0)) == pytest.approx(3.0)
    assert rho0(shear_law, outer([1.0, 0.0], 2.0), gauge="original") == pytest.approx(2.0)


def test_gauges_are_one_homogeneous(shear_law):
    z = SymTensor.from_matrix([[1.0, 0.4], [0.4, -2.0]])
    assert rho(shear_law, z * 3.0) == pytest.approx(3.0 * rho(shear_law, z))
    assert rho0(shear_law, z * 3.0) == pytest.approx(3.0 * rho0(shear_law, z))


def test_projection_lands_on_level_set(rng, law3):
    lam = 3.0 * rng.standard_normal((20, 3))
    for k in (1, 2, 3):
        p = project_level_set(law3, k, lam)
        assert np.all(j_k_batch(law3, k, np.einsum('ai,ij->aij', p, np.eye(3)), with_grad=False)[0]
                      <= 0.5 * (1 + 1e-3))


@pytest.mark.parametrize("fixture,gauge", [("shear_law", "relaxed"), ("lame_law", "original"),
                                           ("law3_shear", "relaxed")])
def test_prox_minimizes_objective(rng, request, fixture, gauge):
    law = request.getfixturevalue(fixture)
    table = GaugeTable(law, gauge)
    step = 0.7
    xi = 2.0 * _sym(rng, 10, law.dim)
    p = table.prox_rho0(xi, step)

    def objective(x):
        return step * table.rho0(x) + 0.5 * np.sum((x - xi) ** 2, axis=(-1, -2))

    base = objective(p)
    for _ in range(20):
        trial = p + 1e-3 * _sym(rng, 10, law.dim)
        assert np.all(base <= objective(trial) + 1e-12)


def test_prox_of_small_tensor_is_zero(shear_law):
    p = prox_rho0(shear_law, SymTensor.from_matrix([[0.1, 0.0], [0.0, 0.05]]), 1.0)
    assert p.norm == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(InputError):
        prox_rho0(shear_law, SymTensor.identity(2), 0.0)


def test_numeric_table_tracks_exact_gauge(rng, law3):
    table = GaugeTable(law3, resolution_deg=2.0)
    assert table.mode == "numeric"
    tau = rng.standard_normal((4, 3))
    np.testing.assert_allclose(table.rho0_eig(tau), table.rho0_exact_eig(tau), rtol=2e-2)
    assert len(table.samples) > 0


def test_gauge_table_modes(shear_law, law3, law3_shear):
    assert GaugeTable(shear_law).mode == "closed-form-2D"
    assert GaugeTable(law3_shear).mode == "closed-form-3D-shear"
    assert GaugeTable(law3).mode == "numeric"
    assert GaugeTable(law3, "original").mode == "quadratic"
    with pytest.raises(InputError):
        GaugeTable(law3, resolution_deg=0.0)
