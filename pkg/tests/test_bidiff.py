import numpy as np
import pytest

from nabla_calc.bidiff import (
    BidiffSpec,
    assemble_divergence_form,
    bidiff_from_ops,
    dirichlet_form,
    eval_bidiff,
    l2_pairing,
    weighted_duality_check,
)
from nabla_calc.bundles import BundleSpec, TensorSection, magnetic_example_bundle
from nabla_calc.calculus import covariant_derivative
from nabla_calc.errors import NonadmissibleWeight, ShapeMismatch, SupportViolation
from nabla_calc.generators import build_generators, identity_embedding
from nabla_calc.geometry import MetricField, WeightPair
from nabla_calc.grid import ChartGrid
from nabla_calc.norms import lp_norm
from nabla_calc.operators import compose, gradient_op, identity_op
from nabla_calc.sections import (
    random_bump_section,
    random_scalar_bump,
    random_section,
    seeded_rng,
)

GRID = ChartGrid([(-1, 1), (-1, 1)], (97, 97))
FLAT = MetricField.flat(GRID)
SCALAR = BundleSpec(GRID, 1)
MAGNET = magnetic_example_bundle(GRID)


def _eye_coefficient(dim):
    return np.broadcast_to(np.eye(dim, dtype=complex), GRID.shape + (dim, dim))


def _dirichlet_spec(bundle, metric, grid=None):
    g = bundle.grid if grid is None else grid
    n = g.dim
    d = bundle.fiber_dim
    a11 = np.broadcast_to(np.eye(n * d, dtype=complex), g.shape + (n * d, n * d))
    return BidiffSpec(bundle, bundle, metric, 1, {(1, 1): a11})


def test_eval_order_zero_is_plain_pairing():
    rng = seeded_rng(11, "bd-plain")
    u = random_section(GRID, 0, 2, rng)
    w = random_section(GRID, 0, 2, rng)
    spec = BidiffSpec(MAGNET, MAGNET, FLAT, 0, {(0, 0): _eye_coefficient(2)})
    got = eval_bidiff(spec, u, w)
    want = np.einsum("...a,...a->...", u.values, np.conj(w.values))
    assert np.allclose(got, want, atol=1e-14)


def test_eval_flat_dirichlet_integrand():
    rng = seeded_rng(11, "bd-grad")
    u = random_section(GRID, 0, 1, rng)
    w = random_section(GRID, 0, 1, rng)
    spec = _dirichlet_spec(SCALAR, FLAT)
    got = eval_bidiff(spec, u, w)
    want = np.zeros(GRID.shape, dtype=complex)
    for k in range(2):
        want += GRID.diff(u.values[..., 0], axis=k) * np.conj(
            GRID.diff(w.values[..., 0], axis=k)
        )
    assert np.allclose(got, want, atol=1e-13)


def test_eval_checks_support():
    ones = TensorSection(GRID, 0, np.ones(GRID.shape + (1,), dtype=complex), 1)
    spec = _dirichlet_spec(SCALAR, FLAT)
    with pytest.raises(SupportViolation):
        eval_bidiff(spec, ones, ones)


def test_dirichlet_form_is_sesquilinear():
    rng = seeded_rng(11, "bd-sesq")
    u = random_section(GRID, 0, 2, rng)
    w = random_section(GRID, 0, 2, rng)
    spec = BidiffSpec(MAGNET, MAGNET, FLAT, 0, {(0, 0): _eye_coefficient(2)})
    base = dirichlet_form(spec, u, w)
    lam = 0.7 - 1.3j
    assert dirichlet_form(spec, u * lam, w) == pytest.approx(lam * base, rel=1e-12)
    assert dirichlet_form(spec, u, w * lam) == pytest.approx(
        np.conj(lam) * base, rel=1e-12
    )


def test_from_ops_identity_gives_fiber_metric():
    h = np.array([[2.0, 0.3], [0.3, 1.0]])
    bundle = BundleSpec(GRID, 2, fiber_metric=h)
    spec = bidiff_from_ops(identity_op(bundle, FLAT), identity_op(bundle, FLAT))
    assert set(spec.coefficients) == {(0, 0)}
    assert np.allclose(spec.coefficients[(0, 0)], h.T, atol=1e-14)


def test_from_ops_gradients_give_inverse_metric():
    x, y = GRID.coords
    metric = MetricField.conformal(GRID, 0.1 * x - 0.07 * y)
    bundle = BundleSpec(GRID, 1)
    spec = bidiff_from_ops(gradient_op(bundle, metric), gradient_op(bundle, metric))
    assert set(spec.coefficients) == {(1, 1)}
    assert np.allclose(spec.coefficients[(1, 1)], metric.inv, atol=1e-12)


def test_from_ops_two_route_evaluation():
    first = gradient_op(MAGNET, FLAT)
    second = compose(gradient_op(first.target, FLAT), first)
    partner = gradient_op(first.target, FLAT)
    spec = bidiff_from_ops(second, partner)
    assert set(spec.coefficients) == {(2, 1)}
    rng = seeded_rng(11, "bd-two")
    u = random_section(GRID, 0, 2, rng)
    w = random_section(GRID, 0, 4, rng)
    got = eval_bidiff(spec, u, w)
    pu = covariant_derivative(covariant_derivative(u, MAGNET, FLAT), MAGNET, FLAT)
    qw = covariant_derivative(w, partner.source, FLAT)
    h2 = second.target.fiber_metric
    want = np.einsum(
        "...ab,...a,...b->...",
        h2,
        pu.values.reshape(GRID.shape + (-1,)),
        np.conj(qw.values.reshape(GRID.shape + (-1,))),
    )
    assert np.max(np.abs(got - want)) <= 1e-12 * np.max(np.abs(want))


def test_from_ops_tag_is_minimum():
    from nabla_calc.operators import multiplication_op

    ident = identity_op(MAGNET, FLAT)
    assert bidiff_from_ops(ident, ident).coefficient_class == "totally-bounded"
    soft = multiplication_op(_eye_coefficient(2), MAGNET, MAGNET, FLAT, "smooth")
    assert bidiff_from_ops(ident, soft).coefficient_class == "smooth"
    assert bidiff_from_ops(soft, ident).coefficient_class == "smooth"


def test_dirichlet_disjoint_supports_vanishes():
    rng = seeded_rng(11, "bd-disjoint")
    left = random_scalar_bump(GRID.box, rng, margin_width=0.08)
    right = random_scalar_bump(GRID.box, rng, margin_width=0.08)
    x = GRID.coords[0]
    u_vals = np.where(x < -0.05, left.sample(GRID), 0.0)
    w_vals = np.where(x > 0.05, right.sample(GRID), 0.0)
    u = TensorSection(GRID, 0, u_vals[..., None], 1)
    w = TensorSection(GRID, 0, w_vals[..., None], 1)
    spec = BidiffSpec(SCALAR, SCALAR, FLAT, 0, {(0, 0): _eye_coefficient(1)})
    assert dirichlet_form(spec, u, w) == 0.0


def test_dirichlet_gaussian_mass():
    x, y = GRID.coords
    sigma = 0.35
    values = np.exp(-(x**2 + y**2) / sigma**2)[..., None].astype(complex)
    u = TensorSection(GRID, 0, values, 1)
    spec = BidiffSpec(SCALAR, SCALAR, FLAT, 0, {(0, 0): _eye_coefficient(1)})
    got = dirichlet_form(spec, u, u)
    want = np.pi * sigma**2 / 2.0
    assert got.real == pytest.approx(want, rel=1e-6)
    assert abs(got.imag) <= 1e-12 * want


def test_dirichlet_gradient_square_against_analytic_partials():
    rng = seeded_rng(11, "bd-gradsq")
    bump = random_bump_section(GRID, 0, 1, rng)
    u = bump.section(GRID)
    spec = _dirichlet_spec(SCALAR, FLAT)
    got = dirichlet_form(spec, u, u)
    density = np.zeros(GRID.shape)
    for orders in ((1, 0), (0, 1)):
        dk = bump.partial(GRID, orders)[..., 0]
        density += np.abs(dk) ** 2
    want = GRID.integrate(density)
    # the form differentiates with the grid stencil, so the analytic value
    # is matched to the truncation error of the bump's fifth derivatives
    assert got.real == pytest.approx(want, rel=1e-3)
    du = covariant_derivative(u, SCALAR, FLAT)
    same_quadrature = lp_norm(du, 2.0, FLAT, SCALAR) ** 2
    assert got.real == pytest.approx(same_quadrature, rel=1e-12)


def test_hermitian_symmetry_for_adjoint_shaped_coefficients():
    rng = seeded_rng(11, "bd-herm")
    raw = (
        rng.standard_normal(GRID.shape + (2, 2))
        + 1j * rng.standard_normal(GRID.shape + (2, 2))
    )
    a00 = raw + np.conj(np.swapaxes(raw, -1, -2))
    a11 = np.broadcast_to(np.eye(4, dtype=complex), GRID.shape + (4, 4))
    spec = BidiffSpec(MAGNET, MAGNET, FLAT, 1, {(0, 0): a00, (1, 1): a11})
    u = random_section(GRID, 0, 2, rng)
    w = random_section(GRID, 0, 2, rng)
    one = dirichlet_form(spec, u, w)
    two = np.conj(dirichlet_form(spec, w, u))
    assert abs(one - two) <= 1e-12 * abs(one)


def test_coercivity_witness():
    rng = seeded_rng(11, "bd-coercive")
    u = random_section(GRID, 0, 1, rng)
    a11 = np.broadcast_to(np.eye(2, dtype=complex), GRID.shape + (2, 2))
    spec = BidiffSpec(
        SCALAR, SCALAR, FLAT, 1, {(0, 0): _eye_coefficient(1), (1, 1): a11}
    )
    mass = lp_norm(u, 2.0, FLAT, SCALAR) ** 2
    assert dirichlet_form(spec, u, u).real >= mass * (1.0 - 1e-12)


def test_spec_validation():
    with pytest.raises(ShapeMismatch):
        BidiffSpec(SCALAR, SCALAR, FLAT, 0, {(1, 0): np.zeros(GRID.shape + (1, 2))})
    with pytest.raises(ShapeMismatch):
        BidiffSpec(SCALAR, SCALAR, FLAT, 1, {(1, 1): np.zeros(GRID.shape + (1, 1))})
    with pytest.raises(ValueError):
        BidiffSpec(SCALAR, SCALAR, FLAT, 0, {}, coefficient_class="rough")


def test_assemble_identity_form():
    from nabla_calc.operators import apply_nabla_op

    gens = build_generators(identity_embedding(GRID), FLAT, frechet=True)
    spec = BidiffSpec(SCALAR, SCALAR, FLAT, 0, {(0, 0): _eye_coefficient(1)})
    op = assemble_divergence_form(spec, gens, SCALAR, FLAT)
    assert op.order == 0
    rng = seeded_rng(11, "bd-asm0")
    u = random_section(GRID, 0, 1, rng)
    w = random_section(GRID, 0, 1, rng)
    assert np.allclose(apply_nabla_op(op, u).values, u.values, atol=1e-14)
    pair = l2_pairing(u, w, SCALAR, FLAT)
    form = dirichlet_form(spec, u, w)
    assert pair == pytest.approx(form, rel=1e-12)


def test_assemble_flat_laplacian_is_exact():
    from nabla_calc.operators import apply_nabla_op

    gens = build_generators(identity_embedding(GRID), FLAT, frechet=True)
    spec = _dirichlet_spec(SCALAR, FLAT)
    op = assemble_divergence_form(spec, gens, SCALAR, FLAT)
    assert op.order == 2
    rng = seeded_rng(11, "bd-lap")
    u = random_section(GRID, 0, 1, rng)
    got = apply_nabla_op(op, u)
    want = np.zeros_like(u.values)
    for k in range(2):
        want -= GRID.diff(GRID.diff(u.values, axis=k), axis=k)
    scale = np.max(np.abs(want))
    assert np.max(np.abs(got.values - want)) <= 1e-12 * scale
    w = random_section(GRID, 0, 1, rng)
    weak = l2_pairing(got, w, SCALAR, FLAT)
    form = dirichlet_form(spec, u, w)
    assert weak == pytest.approx(form, rel=1e-11)


def test_assemble_magnetic_weak_duality():
    from nabla_calc.operators import apply_nabla_op

    gens = build_generators(identity_embedding(GRID), FLAT, frechet=True)
    spec = _dirichlet_spec(MAGNET, FLAT)
    op = assemble_divergence_form(spec, gens, MAGNET, FLAT)
    rng = seeded_rng(11, "bd-weak")
    for trial in range(5):
        u = random_section(GRID, 0, 2, seeded_rng(11, "bd-weak-u", trial))
        w = random_section(GRID, 0, 2, seeded_rng(11, "bd-weak-w", trial))
        weak = l2_pairing(apply_nabla_op(op, u), w, MAGNET, FLAT)
        form = dirichlet_form(spec, u, w)
        assert abs(weak - form) <= 1e-11 * abs(form)


def test_assemble_transpose_probe_oracle():
    from nabla_calc.operators import apply_nabla_op

    grid = ChartGrid([(-1, 1), (-1, 1)], (49, 49))
    flat = MetricField.flat(grid)
    scalar = BundleSpec(grid, 1)
    gens = build_generators(identity_embedding(grid), flat, frechet=True)
    spec = _dirichlet_spec(scalar, flat, grid=grid)
    op = assemble_divergence_form(spec, gens, scalar, flat)
    rng = seeded_rng(11, "bd-probe")
    u = random_section(grid, 0, 1, rng)
    pu = apply_nabla_op(op, u)
    weights = grid.quad_weights()
    scale = np.max(np.abs(pu.values))
    for _ in range(10):
        ix = int(rng.integers(8, grid.shape[0] - 8))
        iy = int(rng.integers(8, grid.shape[1] - 8))
        delta = np.zeros(grid.shape + (1,), dtype=complex)
        delta[ix, iy, 0] = 1.0
        probe = dirichlet_form(spec, u, TensorSection(grid, 0, delta, 1))
        assert abs(probe / weights[ix, iy] - pu.values[ix, iy, 0]) <= 1e-10 * scale


def test_weighted_duality_trivial_weight():
    gens = build_generators(identity_embedding(GRID), FLAT, frechet=True)
    ones = np.ones(GRID.shape)
    weight = WeightPair(GRID, ones, ones, admissible=True)
    spec = _dirichlet_spec(SCALAR, FLAT)
    rng = seeded_rng(11, "bd-wtriv")
    u = random_section(GRID, 0, 1, rng)
    w = random_section(GRID, 0, 1, rng)
    report = weighted_duality_check(spec, weight, u, w, gens=gens)
    assert report["residual"] <= 1e-12
    assert report["weak_residual"] <= 1e-11


def test_weighted_duality_order_zero_is_change_of_measure():
    x1, x2 = GRID.coords
    weight = WeightPair(GRID, 1.0 / (2.0 + x1), np.exp(0.3 * x2), admissible=True)
    spec = BidiffSpec(SCALAR, SCALAR, FLAT, 0, {(0, 0): _eye_coefficient(1)})
    rng = seeded_rng(11, "bd-w0")
    u = random_section(GRID, 0, 1, rng)
    w = random_section(GRID, 0, 1, rng)
    report = weighted_duality_check(spec, weight, u, w)
    assert report["residual"] <= 1e-12
    assert report["ratio"] == pytest.approx(1.0, abs=1e-12)


def test_weighted_duality_first_order_two_route():
    x1, x2 = GRID.coords
    weight = WeightPair(GRID, 1.0 / (2.0 + x1), np.exp(0.3 * x2), admissible=True)
    spec = _dirichlet_spec(SCALAR, FLAT)
    rng = seeded_rng(11, "bd-w1")
    u = random_section(GRID, 0, 1, rng)
    w = random_section(GRID, 0, 1, rng)
    report = weighted_duality_check(spec, weight, u, w)
    assert report["ratio"] == pytest.approx(1.0, abs=1e-4)


def test_weighted_duality_rejects_undeclared_weight():
    x1, _ = GRID.coords
    weight = WeightPair(GRID, 1.0 / (2.0 + x1), np.ones(GRID.shape))
    spec = _dirichlet_spec(SCALAR, FLAT)
    rng = seeded_rng(11, "bd-wbad")
    u = random_section(GRID, 0, 1, rng)
    with pytest.raises(NonadmissibleWeight):
        weighted_duality_check(spec, weight, u, u)
