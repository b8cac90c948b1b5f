import numpy as np
import pytest

from nabla_calc.errors import NonpositiveWeight, ShapeMismatch, SingularMetric
from nabla_calc.geometry import (
    MetricField,
    WeightPair,
    christoffel,
    conformal_rescale,
    levi_civita_difference,
    volume_density,
)
from nabla_calc.grid import ChartGrid
from nabla_calc.sections import random_vector_field, seeded_rng


def _conformal_setup(npts=129):
    grid = ChartGrid([(-1, 1), (-1, 1)], (npts, npts))
    x, y = grid.coords
    phi = 0.2 * x * y + 0.1 * x - 0.05 * y**2
    metric = MetricField.conformal(grid, phi)
    # analytic phi gradient for the closed-form Christoffel oracle
    dphi = np.stack([0.2 * y + 0.1, 0.2 * x - 0.1 * y], axis=-1)
    return grid, phi, metric, dphi


def test_flat_metric_has_zero_christoffel():
    grid = ChartGrid([(-1, 1), (-1, 1)], (33, 33))
    metric = MetricField.flat(grid)
    assert metric.is_constant
    assert np.all(christoffel(metric) == 0)
    assert np.all(volume_density(metric) == 1.0)


def test_christoffel_matches_conformal_closed_form():
    grid, phi, metric, dphi = _conformal_setup()
    n = grid.dim
    gamma = christoffel(metric)
    eye = np.eye(n)
    expected = (
        np.einsum("mk,...l->...mkl", eye, dphi)
        + np.einsum("ml,...k->...mkl", eye, dphi)
        - np.einsum("kl,...m->...mkl", eye, dphi)
    )
    mask = grid.interior_mask(grid.stencil_radius)
    err = np.max(np.abs(gamma - expected)[mask])
    assert err < 1e-6


def test_christoffel_point_access():
    grid, phi, metric, dphi = _conformal_setup(33)
    full = christoffel(metric)
    pt = (16, 10)
    assert np.array_equal(christoffel(metric, pt), full[pt])
    assert volume_density(metric, pt) == pytest.approx(np.exp(2 * 2 * phi[pt]) ** 0.5)


def test_volume_density_conformal():
    grid, phi, metric, _ = _conformal_setup(33)
    # det(e^{2 phi} I) = e^{4 phi} in 2d
    assert np.allclose(volume_density(metric), np.exp(2 * phi))


def test_metric_validation():
    grid = ChartGrid([(-1, 1)], (33,))
    with pytest.raises(ShapeMismatch):
        MetricField(grid, np.zeros((33, 2, 2)))
    bad = np.zeros((33, 1, 1))
    with pytest.raises(SingularMetric):
        MetricField(grid, bad)


def test_non_symmetric_rejected():
    grid = ChartGrid([(-1, 1), (-1, 1)], (17, 17), support_margin=2)
    vals = np.broadcast_to(np.array([[1.0, 0.3], [0.1, 1.0]]), (17, 17, 2, 2))
    with pytest.raises(ShapeMismatch):
        MetricField(grid, vals)


def test_conformal_rescale_constant_factor():
    grid = ChartGrid([(-1, 1)], (33,))
    metric = MetricField.flat(grid)
    scaled = conformal_rescale(metric, np.full(grid.shape, 2.0))
    assert np.allclose(scaled.values, 0.25 * metric.values)
    with pytest.raises(NonpositiveWeight):
        conformal_rescale(metric, np.zeros(grid.shape))


def test_levi_civita_difference_matches_christoffel_difference():
    grid, phi, metric, _ = _conformal_setup()
    metric0 = MetricField.flat(grid)
    rng = seeded_rng(4, "lcdiff")
    X = random_vector_field(grid, rng)
    Y = random_vector_field(grid, rng)
    got = levi_civita_difference(X, Y, phi, metric0)
    dgamma = christoffel(metric) - christoffel(metric0)
    expected = np.einsum("...mkl,...k,...l->...m", dgamma, X, Y)
    mask = grid.interior_mask(grid.stencil_radius)
    scale = np.max(np.abs(expected))
    assert np.max(np.abs(got - expected)[mask]) < 1e-5 * scale


def test_weight_pair_halfline_admissibility():
    grid = ChartGrid([(1.0, 3.0)], (129,))
    r = grid.coords[0]
    w = WeightPair(grid, r, admissible=True)
    metric = MetricField.flat(grid)
    # |dr/r| in the metric r^{-2} dr^2 is exactly 1
    assert w.admissibility_bound(metric) == pytest.approx(1.0, rel=1e-10)
    assert np.allclose(w.phi, np.log(r))


def test_weight_pair_validation():
    grid = ChartGrid([(0.0, 1.0)], (33,))
    with pytest.raises(NonpositiveWeight):
        WeightPair(grid, grid.coords[0])  # hits zero at the left edge
    with pytest.raises(ShapeMismatch):
        WeightPair(grid, np.ones(5))
