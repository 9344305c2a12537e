import numpy as np
import pytest

from compliance import compliance_c, compliance_c_eps, compliance_E, compliance_of_set
from conftest import bar_domain
from domain_grid import DensityMeasure, DiscreteDomain, ground_structure
from errors import InputError
from integrands import law_from_gamma


def _strip(dom, half_width=0.125):
    return np.abs(dom.cell_centers[:, 1] - 0.5) < half_width


def _single_bar(dom, density=1.0):
    i, j = dom.node_index((0.0, 0.5)), dom.node_index((1.0, 0.5))
    return DensityMeasure(np.zeros(dom.n_cells), bars=[[i, j]], bar_density=[density],
                          cell_volume=dom.cell_volume, bar_lengths=[1.0])


def test_zero_load_has_zero_compliance(shear_law):
    dom = bar_domain(4, force=(0.0, 0.0))
    rep = compliance_c(dom, DensityMeasure.lebesgue(dom), shear_law)
    assert rep.value == 0.0
    assert compliance_E(dom, DensityMeasure.lebesgue(dom), shear_law).value == 0.0


def test_quadratic_compliance_is_certified(bar8, shear_law):
    rep = compliance_c(bar8, DensityMeasure.lebesgue(bar8), shear_law)
    assert rep.finite and rep.value > 0
    assert rep.delta is None
    assert rep.primal == pytest.approx(rep.value, rel=1e-9)
    assert rep.gap < 1e-8
    assert rep.stress.cells.shape == (64, 2, 2)


def test_compliance_scales_inversely_with_mass(bar8, lame_law):
    leb = DensityMeasure.lebesgue(bar8)
    base = compliance_c(bar8, leb, lame_law).value
    assert compliance_c(bar8, leb.scaled(2.0), lame_law).value == pytest.approx(base / 2.0, rel=1e-10)


def test_relaxed_compliance_dominates_quadratic(bar8, shear_law):
    leb = DensityMeasure.lebesgue(bar8)
    c = compliance_c(bar8, leb, shear_law)
    e = compliance_E(bar8, leb, shear_law, tol=1e-4)
    assert e.law_kind == "j_bar"
    assert e.gap <= 1e-4
    assert e.value >= c.value * (1.0 - 1e-6)
    full = compliance_E(bar8, leb, shear_law, k=2)
    assert full.value == pytest.approx(c.value)
    assert full.law_kind == "j"


def test_rank_zero_law_is_infinite(bar8, shear_law):
    rep = compliance_E(bar8, DensityMeasure.lebesgue(bar8), shear_law, k=0)
    assert not rep.finite
    assert "E_0" in rep.diagnosis


def test_single_bar_truss(bar8, shear_law):
    # a₁ L F² / θ with a₁ = ½
    assert compliance_c(bar8, _single_bar(bar8), shear_law).value == pytest.approx(0.5, rel=1e-9)
    assert compliance_c(bar8, _single_bar(bar8, 2.0), shear_law).value == pytest.approx(0.25, rel=1e-9)
    rep = compliance_E(bar8, _single_bar(bar8), shear_law)
    assert rep.value == pytest.approx(0.5, rel=1e-9)
    assert rep.stress.bars == pytest.approx([-1.0])


def test_truss_from_ground_structure(bar8, shear_law):
    graph = ground_structure(bar8, bar8.h)
    on_axis = np.isclose(bar8.node_coords[graph.bars, 1], 0.5).all(axis=1)
    measure = DensityMeasure.truss(bar8, graph, on_axis.astype(float))
    assert measure.total_mass == pytest.approx(1.0)
    assert compliance_c(bar8, measure, shear_law).value == pytest.approx(0.5, rel=1e-8)


def test_partial_support_without_floor(bar8, shear_law):
    strip = DensityMeasure.on(bar8, _strip(bar8).astype(float))
    rep = compliance_c(bar8, strip, shear_law)
    assert rep.finite
    assert rep.delta is None


def test_unsupported_load_is_infinite(bar8, shear_law):
    left = DensityMeasure.on(bar8, (bar8.cell_centers[:, 0] < 0.5).astype(float))
    rep = compliance_c(bar8, left, shear_law)
    assert not rep.finite
    assert "not supported" in rep.diagnosis
    assert len(rep.floor_values) == 3
    empty = compliance_c(bar8, DensityMeasure.on(bar8, np.zeros(64)), shear_law)
    assert not empty.finite
    assert empty.diagnosis == "measure has zero mass"


def test_scalar_mode_uses_dirichlet_energy():
    dom = DiscreteDomain.box(2, (8, 8), scalar=True, clamp=[((0.0, 0.0), (0.0, 1.0))],
                             point_loads=[((1.0, 0.5), (1.0,))])
    law = law_from_gamma(2, 1.0)
    leb = DensityMeasure.lebesgue(dom)
    c = compliance_c(dom, leb, law)
    e = compliance_E(dom, leb, law)
    assert c.value == pytest.approx(e.value)
    assert c.stress.cells.shape == (64, 2)


def test_indicator_compliance(bar8, shear_law):
    everything = bar8.active_cells.copy()
    assert compliance_c_eps(bar8, everything, 1.0, shear_law) == pytest.approx(
        compliance_of_set(bar8, everything, shear_law))
    strip = _strip(bar8)
    eps = bar8.cell_volume * np.count_nonzero(strip)
    assert compliance_c_eps(bar8, strip, eps, shear_law) == pytest.approx(
        eps * compliance_of_set(bar8, strip, shear_law))
    with pytest.raises(InputError):
        compliance_c_eps(bar8, strip, 0.5, shear_law)


def test_three_dimensional_box(law3):
    dom = DiscreteDomain.box(3, (3, 3, 3), clamp=[((0.0, 0.0, 0.0), (0.0, 1.0, 1.0))],
                             point_loads=[((1.0, 1.0 / 3.0, 1.0 / 3.0), (0.0, 0.0, -1.0))])
    rep = compliance_c(dom, DensityMeasure.lebesgue(dom), law3)
    assert rep.finite
    assert rep.gap < 1e-8


@pytest.mark.slow
def test_relaxation_ordering_on_random_measures(rng, shear_law):
    dom = bar_domain(6)
    for _ in range(50):
        measure = DensityMeasure.on(dom, rng.uniform(0.1, 2.0, dom.n_cells)).normalize()
        c = compliance_c(dom, measure, shear_law).value
        e = compliance_E(dom, measure, shear_law, tol=1e-5).value
        assert c <= e * (1.0 + 1e-5) + 1e-8


def _edge_traction(cells):
    """Unit square clamped on x = 0 and pulled by a uniform unit traction on x = 1"""
    h = 1.0 / cells
    loads = [((1.0, j * h), ((0.5 if j in (0, cells) else 1.0) * h, 0.0)) for j in range(cells + 1)]
    return DiscreteDomain.box(2, (cells, cells), clamp=[((0.0, 0.0), (0.0, 1.0))], point_loads=loads)


def test_relaxed_compliance_of_uniaxial_tension(shear_law):
    # the optimal stress e₁⊗e₁ is rank one, so E = c = a₁ = ½
    dom = _edge_traction(8)
    leb = DensityMeasure.lebesgue(dom)
    assert compliance_c(dom, leb, shear_law).value == pytest.approx(0.5, rel=1e-9)
    rep = compliance_E(dom, leb, shear_law, tol=1e-5)
    assert rep.law_kind == "j_bar"
    assert rep.iterations > 0
    assert rep.gap <= 1e-5
    assert rep.value == pytest.approx(0.5, rel=1e-4)


@pytest.mark.parametrize("law", ["law3_shear", pytest.param("law3", marks=pytest.mark.slow)])
def test_three_dimensional_rank_ladder(request, law):
    law = request.getfixturevalue(law)
    tol = 1e-3
    dom = DiscreteDomain.box(3, (3, 3, 3), clamp=[((0.0, 0.0, 0.0), (0.0, 1.0, 1.0))],
                             point_loads=[((1.0, 1.0 / 3.0, 1.0 / 3.0), (0.0, 0.0, -1.0))])
    leb = DensityMeasure.lebesgue(dom)
    c = compliance_c(dom, leb, law).value
    assert not compliance_E(dom, leb, law, k=0).finite
    e1 = compliance_E(dom, leb, law, k=1, tol=tol)
    e2 = compliance_E(dom, leb, law, k=2, tol=tol)
    assert e1.gap <= tol and e2.gap <= tol
    assert e1.value >= e2.value * (1.0 - tol)
    assert e2.value >= c * (1.0 - tol)
    assert compliance_E(dom, leb, law, k=3).value == pytest.approx(c)


@pytest.mark.parametrize("eps", [0.1, 0.01])
@pytest.mark.parametrize("seed", range(20))
def test_indicator_compliance_is_eps_times_set_compliance(shear_law, seed, eps):
    dom = DiscreteDomain.box(2, (40, 40), clamp=[((0.0, 0.0), (0.0, 1.0))],
                             point_loads=[((0.1, 0.5), (0.0, -1.0))])
    x, y = dom.cell_centers[:, 0], dom.cell_centers[:, 1]
    mask = (x < 0.1) & (np.abs(y - 0.5) < 0.025)
    extra = int(round(eps / dom.cell_volume)) - np.count_nonzero(mask)
    rng = np.random.default_rng(seed)
    mask[rng.choice(np.flatnonzero(~mask), size=extra, replace=False)] = True
    value = compliance_c_eps(dom, mask, eps, shear_law)
    assert np.isfinite(value)
    assert value == pytest.approx(eps * compliance_of_set(dom, mask, shear_law), rel=1e-10)
