import numpy as np
import pytest

from domain_grid import DiscreteDomain
from integrands import ElasticLaw, law_from_gamma


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def shear_law():
    """α = 0, β = ½: γ = 1 in 2D"""
    return ElasticLaw(dim=2, alpha=0.0, beta=0.5)


@pytest.fixture
def lame_law():
    return ElasticLaw(dim=2, alpha=1.0, beta=0.5)


@pytest.fixture
def law3():
    return ElasticLaw(dim=3, alpha=0.7, beta=0.4)


@pytest.fixture
def law3_shear():
    return law_from_gamma(3, 1.0)


def bar_domain(cells: int, force=(-1.0, 0.0), **kwargs) -> DiscreteDomain:
    """Unit square clamped on x = 0 with a unit point load at (1, 0.5)"""
    return DiscreteDomain.box(2, (cells, cells), clamp=[((0.0, 0.0), (0.0, 1.0))],
                              point_loads=[((1.0, 0.5), force)], **kwargs)


@pytest.fixture
def bar8():
    return bar_domain(8)


@pytest.fixture
def bar16():
    return bar_domain(16)
