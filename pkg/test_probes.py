import numpy as np
import pytest

from conftest import bar_domain
from domain_grid import DensityMeasure, DiscreteDomain
from errors import InconsistencyError, InputError, UnresolvedMicrostructureError
from integrands import law_from_gamma
from mk_solver import MKOptions
from probes import (DiscreteYoungMeasure, FieldSnapshot, conj2_check, conj3_verify, gamma_upper_sweep, gap_probe,
                    ordered_map, random_conj3_instance, seppecher_field, weight_near, young_extract)


def _single_bar(dom):
    i, j = dom.node_index((0.0, 0.5)), dom.node_index((1.0, 0.5))
    return DensityMeasure(np.zeros(dom.n_cells), bars=[[i, j]], bar_density=[1.0],
                          cell_volume=dom.cell_volume, bar_lengths=[1.0])


def test_ordered_map_keeps_order():
    assert ordered_map(lambda x: x * x, [3, 1, 2], workers=2) == [9, 1, 4]
    assert ordered_map(lambda x: -x, [5], workers=4) == [-5]


# --- Young measures ---


def test_young_measure_normalizes_and_keeps_barycenter():
    nu = DiscreteYoungMeasure.from_atoms([(1.0, np.eye(2)), (3.0, np.diag([1.0, -1.0]))])
    np.testing.assert_allclose(nu.weights, [0.25, 0.75])
    np.testing.assert_allclose(nu.barycenter, np.diag([1.0, -0.5]), atol=1e-14)
    assert nu.mean().trace == pytest.approx(0.5)
    again = DiscreteYoungMeasure.from_dict(nu.to_dict())
    np.testing.assert_allclose(again.barycenter, nu.barycenter, atol=1e-14)


def test_young_measure_rejects_bad_atoms():
    with pytest.raises(InputError):
        DiscreteYoungMeasure(np.array([1.0, -1.0]), np.stack([np.eye(2), np.eye(2)]))
    with pytest.raises(InputError):
        DiscreteYoungMeasure(np.ones(1), np.array([[[0.0, 1.0], [0.0, 0.0]]]))
    with pytest.raises(InputError):
        DiscreteYoungMeasure.from_atoms([])
    with pytest.raises(InputError):
        DiscreteYoungMeasure.from_dict({"atoms": [{"tensor": [[1.0, 0.0], [0.0, 1.0]]}]})


# --- conj2 / conj3 ---


def test_conj2_on_identity_is_violated(shear_law):
    res = conj2_check(DiscreteYoungMeasure.dirac(np.eye(2)), shear_law)
    assert res.lhs == pytest.approx(1.0)
    assert res.rhs == pytest.approx(2.0)
    assert not res.satisfied


def test_conj2_equality_on_degenerate_dirac(shear_law, lame_law):
    for law in (shear_law, lame_law):
        res = conj2_check(DiscreteYoungMeasure.dirac(np.diag([1.0, 0.0])), law)
        assert res.lhs == pytest.approx(res.rhs, rel=1e-12)
        assert res.satisfied


def test_conj2_on_rank_one_pair(shear_law):
    e1, e2 = np.array([1.0, 0.0]), np.array([0.6, 0.8])
    nu = DiscreteYoungMeasure.from_atoms([(0.5, 2.0 * np.outer(e1, e1)), (0.5, -np.outer(e2, e2))])
    res = conj2_check(nu, shear_law)
    assert res.satisfied
    with pytest.raises(InputError):
        conj2_check(DiscreteYoungMeasure.dirac(np.eye(3)), shear_law)


@pytest.mark.parametrize("fixture,count", [("shear_law", 1000), ("lame_law", 300), ("law3_shear", 200)])
def test_conj3_chain_on_random_instances(request, fixture, count):
    law = request.getfixturevalue(fixture)
    rng = np.random.default_rng(2024)
    for _ in range(count):
        nu0, kernels = random_conj3_instance(law, rng)
        report = conj3_verify(nu0, kernels, law)
        q1, q2, q3, q4 = report.chain
        assert q1 >= q2 - 1e-9 and q2 >= q3 - 1e-9 and q3 >= q4 - 1e-9
        assert report.conj2.satisfied


def test_conj3_dirac_kernels_collapse(shear_law, rng):
    nu0, _ = random_conj3_instance(shear_law, rng)
    report = conj3_verify(nu0, [DiscreteYoungMeasure.dirac(xi) for xi in nu0.tensors], shear_law)
    assert report.int_j_star_nu == pytest.approx(report.int_j_star_nu0, rel=1e-12)
    assert report.int_j_star_nu0 == pytest.approx(report.int_j_bar_star_nu0, rel=1e-9)


def test_conj3_first_link_slack_is_kernel_jensen_gap(shear_law):
    xi = np.diag([1.0, 0.0])
    eta = np.array([[0.0, 0.3], [0.3, 0.2]])
    nu0 = DiscreteYoungMeasure.dirac(xi)
    kernel = DiscreteYoungMeasure.from_atoms([(0.5, xi + eta), (0.5, xi - eta)])
    report = conj3_verify(nu0, [kernel], shear_law)
    # j* is quadratic: the Jensen gap of a symmetric pair is j*(η) = |η|²/2 for α = 0, β = ½
    assert report.int_j_star_nu - report.int_j_star_nu0 == pytest.approx(0.5 * float(np.sum(eta * eta)), rel=1e-12)


def test_conj3_preconditions(shear_law):
    with pytest.raises(InputError, match="atom 0"):
        conj3_verify(DiscreteYoungMeasure.dirac(np.eye(2)), [DiscreteYoungMeasure.dirac(np.eye(2))], shear_law)
    xi = np.diag([1.0, 0.0])
    shifted = DiscreteYoungMeasure.dirac(xi + 1e-3 * np.eye(2))
    with pytest.raises(InputError, match="barycenter"):
        conj3_verify(DiscreteYoungMeasure.dirac(xi), [shifted], shear_law)
    with pytest.raises(InputError):
        conj3_verify(DiscreteYoungMeasure.dirac(xi), [], shear_law)


def test_conj3_flags_broken_chain_when_determinant_check_is_relaxed(shear_law):
    identity = DiscreteYoungMeasure.dirac(np.eye(2))
    with pytest.raises(InconsistencyError, match="degenerate equality"):
        conj3_verify(identity, [identity], shear_law, det_tol=10.0)


# --- Seppecher example ---


def test_seppecher_inner_cells_carry_identity():
    field = seppecher_field(1.0 / 8.0, 48)
    inner = field.inner_cells()
    assert np.any(inner)
    np.testing.assert_array_equal(field.stress.cells[inner], np.broadcast_to(np.eye(2), (inner.sum(), 2, 2)))
    np.testing.assert_allclose(field.measure.cell_weights[inner], 8.0)
    assert np.all(field.measure.cell_weights[~inner] == 0.0)


def test_seppecher_divergence_residuals():
    field = seppecher_field(1.0 / 8.0, 48)
    res = field.divergence_residuals()
    assert res["constant_regions"] <= res["bound"]
    # smooth annulus part: second-order rasterization error only
    assert res["annulus"] <= 0.25 / field.radius
    assert res["interfaces"] > res["bound"]


def test_seppecher_averages():
    field = seppecher_field(1.0 / 8.0, 96)
    np.testing.assert_allclose(field.measure_average(), np.eye(2), atol=0.1)
    assert np.max(np.abs(field.lebesgue_average())) < 0.02
    summary = field.summary()
    assert summary["cells_per_period"] == 96


def test_seppecher_energy_stays_bounded():
    energies = [seppecher_field(eps, 96).weighted_energy() for eps in (1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0)]
    assert all(1.0 < e < 3.0 for e in energies)


def test_seppecher_resolution_guard():
    with pytest.raises(UnresolvedMicrostructureError) as info:
        seppecher_field(1.0 / 32.0, 20)
    assert info.value.details["min_resolution"] > 20
    with pytest.raises(InputError):
        seppecher_field(0.25, 96)


def test_young_extract_on_seppecher_ladder():
    ladder = [seppecher_field(eps, 64).snapshot() for eps in (1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0)]
    fits = young_extract(ladder)
    assert len(fits) == 3
    finest = fits[-1]
    assert finest.measure is not None
    assert weight_near(finest.measure, np.eye(2), radius=1e-6) >= 0.95


def _snapshots(stress_for):
    dom = bar_domain(8)
    leb = DensityMeasure.lebesgue(dom)
    return [FieldSnapshot(eps, dom, leb, stress_for(dom)) for eps in (0.5, 0.25, 0.125)]


def test_young_extract_constant_field():
    s = np.array([[1.0, 0.5], [0.5, -2.0]])
    fits = young_extract(_snapshots(lambda dom: np.broadcast_to(s, (dom.n_cells, 2, 2)).copy()))
    for fit in fits:
        assert fit.measure.size == 1
        np.testing.assert_allclose(fit.measure.tensors[0], s, atol=1e-12)
        assert fit.residual < 1e-10


def test_young_extract_laminate():
    s1, s2 = np.eye(2), np.diag([-1.0, 2.0])

    def laminate(dom):
        stripes = (np.floor(dom.cell_centers[:, 0] / dom.h).astype(int) % 2) == 0
        return np.where(stripes[:, None, None], s1, s2)

    fits = young_extract(_snapshots(laminate))
    for fit in fits:
        assert fit.measure.size == 2
        assert weight_near(fit.measure, s1) == pytest.approx(0.5, abs=1e-6)
        assert weight_near(fit.measure, s2) == pytest.approx(0.5, abs=1e-6)


def test_young_extract_probe_without_mass():
    dom = bar_domain(8)
    weights = (dom.cell_centers[:, 0] < 0.5).astype(float)
    snaps = [FieldSnapshot(e, dom, DensityMeasure.on(dom, weights), np.zeros((64, 2, 2))) for e in (0.3, 0.2, 0.1)]
    fits = young_extract(snaps, probes=[((0.6, 0.0), (1.0, 1.0))])
    assert all(f.measure is None and f.note == "no mass in probe" for f in fits)
    with pytest.raises(InputError):
        young_extract(snaps[:2])


# --- Γ-limsup sweep ---


def test_sweep_ladder_validation(shear_law):
    dom = bar_domain(32)
    bar = _single_bar(dom)
    for ladder in ([], [0.1, 0.2], [0.1, -0.05]):
        with pytest.raises(InputError):
            gamma_upper_sweep(dom, bar, ladder, shear_law)
    with pytest.raises(InputError):
        gamma_upper_sweep(dom, DensityMeasure.lebesgue(dom), [0.1], shear_law)


def test_sweep_single_step(shear_law):
    dom = bar_domain(32)
    report = gamma_upper_sweep(dom, _single_bar(dom), [0.125], shear_law)
    assert report.c_target == pytest.approx(0.5)
    assert report.E_target == pytest.approx(0.5)
    assert len(report.rows()) == 1
    assert report.flags == [""]
    assert report.c_eps[0] >= report.c_target * (1.0 - 1e-6)


@pytest.mark.slow
def test_sweep_approaches_bar_compliance(shear_law):
    dom = bar_domain(128)
    report = gamma_upper_sweep(dom, _single_bar(dom), [0.1, 0.05, 0.02, 0.01], shear_law, workers=2)
    assert report.within_band(0.1)
    assert report.limsup_estimate == report.c_eps[-1]


# --- gap probe ---


@pytest.mark.slow
def test_gap_probe_scalar_beckmann_gap_shrinks():
    dom = DiscreteDomain.box(2, (16, 16), scalar=True,
                             point_loads=[((0.25, 0.5), (1.0,)), ((0.75, 0.5), (-1.0,))])
    report = gap_probe(dom, [0.25, 0.125, 0.0625], law_from_gamma(2, 1.0), MKOptions(tol=1e-3))
    assert report.c_inf == pytest.approx(0.5 * report.I_value ** 2)
    assert report.I_value == pytest.approx(0.5, rel=0.1)
    assert "heuristic upper bound" in report.label
    np.testing.assert_allclose(report.eps_effective, [0.25, 0.125, 0.0625])
    assert all(g >= -5e-3 * report.c_inf for g in report.gaps)
    assert [r["eps"] for r in report.rows()] == [0.25, 0.125, 0.0625]
    gaps = report.gaps
    assert all(b <= a + 5e-3 * report.c_inf for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < gaps[0]


@pytest.mark.slow
def test_gap_probe_transverse_elastic_is_recorded(shear_law):
    report = gap_probe(bar_domain(16, force=(0.0, -1.0)), [0.5, 0.25], shear_law, MKOptions(tol=1e-3),
                       exchange_rounds=1)
    assert "unrelaxed gauge" in report.label
    # u = (0, −2x)/√2 is admissible for ρ = |e|
    assert report.I_value >= np.sqrt(2.0) * (1.0 - 1e-2)
    assert report.c_inf == pytest.approx(0.5 * report.I_value ** 2)
    assert all(np.isfinite(report.c_eps_upper))
    assert all(g >= -5e-3 * report.c_inf for g in report.gaps)
    rows = report.rows()
    assert len(rows) == 2
    assert [r["exchanges"] for r in rows] == report.exchanges
