import numpy as np
import pytest

from nabla_calc.errors import ResolutionError, ShapeMismatch, SupportViolation
from nabla_calc.grid import ChartGrid


def test_basic_layout():
    g = ChartGrid([(-1, 1), (0, 2)], (33, 17), fd_order=4)
    assert g.dim == 2
    assert g.h == (2 / 32, 2 / 16)
    assert g.stencil_radius == 2
    assert g.support_margin == 6
    assert g.coords[0].shape == (33, 17)
    assert g.coords[1][0, -1] == pytest.approx(2.0)


def test_margin_below_radius_rejected():
    with pytest.raises(ValueError):
        ChartGrid([(-1, 1)], (33,), fd_order=4, support_margin=1)


def test_too_few_points_rejected():
    with pytest.raises(ResolutionError):
        ChartGrid([(-1, 1)], (9,), fd_order=4, support_margin=4)


def test_band_mask_counts():
    g = ChartGrid([(-1, 1), (-1, 1)], (17, 17), fd_order=2, support_margin=2)
    band = g.band_mask(2)
    assert band.sum() == 17 * 17 - 13 * 13
    assert not g.interior_mask(2)[0, 5]


def test_check_support_passes_and_raises():
    g = ChartGrid([(-1, 1)], (33,), fd_order=4)
    u = np.zeros((33, 2), dtype=complex)
    u[10, 0] = 1.0
    g.check_support(u, 4)
    u[2, 1] = 1e-9
    with pytest.raises(SupportViolation):
        g.check_support(u, 4)
    with pytest.raises(SupportViolation):
        g.check_support(np.zeros((33, 2)), 10)


def test_quadrature_normalizes():
    g = ChartGrid([(0, 1), (0, 2)], (21, 21))
    total = g.integrate(np.ones(g.shape))
    assert total == pytest.approx(2.0)


def test_diff_shape_guard():
    g = ChartGrid([(-1, 1)], (33,))
    with pytest.raises(ShapeMismatch):
        g.diff(np.zeros((5, 3)), 0)


def test_grid_equality_and_hash():
    a = ChartGrid([(-1, 1)], (33,))
    b = ChartGrid([(-1, 1)], (33,))
    c = ChartGrid([(-1, 1)], (65,))
    assert a == b and hash(a) == hash(b)
    assert a != c
