"""Named verification checks runnable from scenario configs.

Each check measures one identity or bound on the objects a scenario built
(grid, metric, bundle, weight, generator frame, operators, forms) and
reports the worst case as a single number judged against a tolerance.
Random data comes from the counter-based generator keyed by the scenario
seed and the check name, so repeated runs see identical draws and checks
can execute concurrently without sharing state.
"""

import math

import numpy as np

from .bidiff import (
    BidiffSpec,
    assemble_divergence_form,
    dirichlet_form,
    l2_pairing,
    weighted_duality_check,
)
from .bundles import BundleSpec, TensorSection, magnetic_example_bundle
from .calculus import (
    covariant_derivative,
    curvature,
    directional_derivative,
    divergence,
    formal_adjoint_directional,
    multiindex_derivative,
)
from .errors import ConfigError, ResolutionError
from .generators import (
    divergence_via_generators,
    nabla_via_generators,
    reconstruction_defect,
)
from .norms import (
    conformal_weighted_check,
    covering_multiplicity,
    covering_norm,
    lp_norm,
    multiplication_constant,
    perturbed_norm_check,
    sobolev_norm,
)
from .operators import (
    MixedOpSpec,
    MixedTerm,
    apply_mixed_op,
    apply_nabla_op,
    mapping_bound_check,
    mixed_to_nabla,
    nabla_to_mixed,
    reorder_generators,
)
from .reports import NormRow
from .sections import (
    random_bump_section,
    random_section,
    random_skew_potentials,
    random_trig_field,
    random_vector_field,
    seeded_rng,
)

CHECKS = {}

_TINY = 1e-300


def register(name, params=()):
    """Add a check function to the registry under its config name."""

    def wrap(fn):
        CHECKS[name] = (fn, frozenset(params) | {"check", "tolerance"})
        return fn

    return wrap


def allowed_params(name):
    if name not in CHECKS:
        raise ResolutionError(f"unknown check {name!r}")
    return CHECKS[name][1]


def _result(measured, bound, passed, norms=()):
    return {
        "measured": float(measured),
        "bound": None if bound is None else float(bound),
        "passed": bool(passed),
        "norms": list(norms),
    }


def _rng(ctx, label, trial=0):
    return seeded_rng(ctx.seed, f"{ctx.name}:{label}", trial)


def _exponent(value):
    """Config exponents: numbers, or the string "inf"."""
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError(f"exponent {value!r} is not a number or 'inf'")
    return float(value)


def _norm_row(ctx, s, p, value, bound, passed):
    return NormRow(
        scenario=ctx.name,
        s=int(s),
        p=float(p),
        value=float(value),
        bound=None if bound is None else float(bound),
        passed=bool(passed),
        h=float(max(ctx.grid.h)),
        fd_order=int(ctx.grid.fd_order),
    )


def _require_flat(ctx, what):
    eye = np.eye(ctx.grid.dim)
    if not np.allclose(ctx.metric.values, eye):
        raise ConfigError(f"{what} needs the flat metric")


def _require_oscillating_bundle(ctx, what):
    model = magnetic_example_bundle(ctx.grid)
    if ctx.bundle.fiber_dim != 2 or not np.allclose(
        ctx.bundle.potentials, model.potentials
    ):
        raise ConfigError(f"{what} needs the built-in oscillating-potential bundle")


def _require_gens(ctx, what):
    if ctx.gens is None:
        raise ConfigError(f"{what} needs an embedding in the scenario")
    return ctx.gens


def _require_weight(ctx, what):
    if ctx.weight is None:
        raise ConfigError(f"{what} needs a weight in the scenario")
    return ctx.weight


def _closed_form_second_derivatives(grid, xi, idx):
    """Displayed forms of the mixed second derivatives for the oscillating
    potential A_2 = [[0, e^{i x1^3}], [-e^{-i x1^3}, 0]] on a flat chart.

    The section's own derivatives are rendered with the grid stencils; only
    the potential's derivative uses its analytic form.
    """
    x1 = grid.coords[0]
    phase = np.exp(1j * x1**3)
    d1 = grid.diff(xi, 0)
    d2 = grid.diff(xi, 1)

    def a2(v):
        return np.stack([phase * v[..., 1], -np.conj(phase) * v[..., 0]], axis=-1)

    def da2(v):
        w = np.stack([phase * v[..., 1], np.conj(phase) * v[..., 0]], axis=-1)
        return 3j * x1[..., None] ** 2 * w

    if idx == (1, 2):
        return grid.diff(d2, 0) + da2(xi) + a2(d1)
    if idx == (2, 1):
        return grid.diff(d1, 1) + a2(d1)
    if idx == (2, 2):
        return grid.diff(d2, 1) + 2 * a2(d2) - xi
    raise ValueError(f"no closed form for multiindex {idx}")


@register("multiindex-formulas", params=("trials",))
def check_multiindex_formulas(ctx, params):
    """Mixed second derivatives against their displayed closed forms."""
    _require_flat(ctx, "the closed-form check")
    _require_oscillating_bundle(ctx, "the closed-form check")
    trials = int(params.get("trials", 20))
    tol = params["tolerance"]
    worst = 0.0
    for trial in range(trials):
        bumps = random_bump_section(
            ctx.grid, 0, 2, _rng(ctx, "multiindex-formulas", trial), kappa_max=1.5
        )
        sec = bumps.section(ctx.grid)
        for idx in ((1, 2), (2, 1), (2, 2)):
            got = multiindex_derivative(sec, idx, ctx.bundle, ctx.metric)
            want = _closed_form_second_derivatives(ctx.grid, sec.values, idx)
            scale = max(float(np.max(np.abs(want))), _TINY)
            worst = max(worst, float(np.max(np.abs(got.values - want))) / scale)
    return _result(worst, None, worst <= tol)


@register("leibniz-rule", params=("trials",))
def check_leibniz_rule(ctx, params):
    """nabla(a u) = (nabla a) u + (1 (x) a) nabla u for Hom coefficients."""
    grid = ctx.grid
    d = ctx.bundle.fiber_dim
    n = grid.dim
    pots = ctx.bundle.potentials
    trials = int(params.get("trials", 5))
    tol = params["tolerance"]
    worst = 0.0
    for trial in range(trials):
        rng = _rng(ctx, "leibniz-rule", trial)
        a_field = random_trig_field(n, (d, d), rng)
        a = a_field.sample(grid)
        da = np.stack([a_field.sample(grid, (k,)) for k in range(n)], axis=-3)
        u = random_section(grid, 0, d, _rng(ctx, "leibniz-section", trial))
        au = TensorSection(
            grid, 0, np.einsum("...ab,...b->...a", a, u.values), d
        )
        lhs = covariant_derivative(au, ctx.bundle, ctx.metric).values
        nabla_a = (
            da
            + np.einsum("...kab,...bc->...kac", pots, a)
            - np.einsum("...ab,...kbc->...kac", a, pots)
        )
        grad_u = covariant_derivative(u, ctx.bundle, ctx.metric).values
        rhs = np.einsum("...kab,...b->...ka", nabla_a, u.values) + np.einsum(
            "...ab,...kb->...ka", a, grad_u
        )
        scale = max(float(np.max(np.abs(lhs))), _TINY)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))) / scale)
    return _result(worst, None, worst <= tol)


@register("curvature-commutator", params=("trials",))
def check_curvature_commutator(ctx, params):
    """(nabla_kl - nabla_lk) u = R_kl u on every direction pair."""
    grid = ctx.grid
    d = ctx.bundle.fiber_dim
    r = curvature(ctx.bundle)
    trials = int(params.get("trials", 5))
    tol = params["tolerance"]
    worst = 0.0
    for trial in range(trials):
        u = random_section(grid, 0, d, _rng(ctx, "curvature-commutator", trial))
        for k in range(1, grid.dim + 1):
            for l in range(k + 1, grid.dim + 1):
                lhs = (
                    multiindex_derivative(u, (k, l), ctx.bundle, ctx.metric).values
                    - multiindex_derivative(u, (l, k), ctx.bundle, ctx.metric).values
                )
                rhs = r.apply(k, l, u).values
                scale = max(
                    float(np.max(np.abs(rhs))), float(np.max(np.abs(u.values))), _TINY
                )
                worst = max(worst, float(np.max(np.abs(lhs - rhs))) / scale)
    return _result(worst, None, worst <= tol)


@register("adjoint-pairing", params=("pairs",))
def check_adjoint_pairing(ctx, params):
    """integral (nabla_X xi, eta) + (xi, (nabla_X + div X) eta) = 0."""
    grid = ctx.grid
    d = ctx.bundle.fiber_dim
    pairs = int(params.get("pairs", 20))
    tol = params["tolerance"]
    worst = 0.0
    for trial in range(pairs):
        xi = random_section(grid, 0, d, _rng(ctx, "adjoint-xi", trial))
        eta = random_section(grid, 0, d, _rng(ctx, "adjoint-eta", trial))
        x_field = random_vector_field(grid, _rng(ctx, "adjoint-field", trial))
        adj = formal_adjoint_directional(x_field, ctx.bundle, ctx.metric)
        dxi = directional_derivative(xi, x_field, ctx.bundle, ctx.metric)
        lhs = l2_pairing(dxi, eta, ctx.bundle, ctx.metric)
        rhs = l2_pairing(xi, adj(eta), ctx.bundle, ctx.metric)
        scale = max(
            lp_norm(xi, 2, ctx.metric, ctx.bundle)
            * lp_norm(eta, 2, ctx.metric, ctx.bundle),
            _TINY,
        )
        worst = max(worst, abs(lhs - rhs) / scale)
    return _result(worst, None, worst <= tol)


def _covering_with_multiplicity(grid, k, rng):
    """k closed boxes covering the chart whose common core has k layers.

    The first two boxes split axis one with an overlap window; the rest nest
    inside that window, so the multiplicity is exactly k and the union is
    the whole box.
    """
    lo, hi = grid.box[0]
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    rest = tuple(grid.box[1:])

    def strip(a, b):
        return ((float(a), float(b)),) + rest

    if k == 1:
        return [tuple(grid.box)]
    q = mid + float(rng.uniform(-0.25, 0.25)) * half
    w = (0.2 + float(rng.uniform(0.0, 0.1))) * half
    boxes = [strip(lo, q + w), strip(q - w, hi)]
    for j in range(k - 2):
        f = 1.0 - 0.2 * (j + 1)
        boxes.append(strip(q - w * f, q + w * f))
    return boxes


@register("covering-bounds", params=("coverings", "s", "exponents"))
def check_covering_bounds(ctx, params):
    """norm <= covering norm <= N^{1/p} norm, equality at p = inf."""
    grid = ctx.grid
    d = ctx.bundle.fiber_dim
    count = int(params.get("coverings", 10))
    s = int(params.get("s", 1))
    exponents = [_exponent(p) for p in params.get("exponents", [1, 2, "inf"])]
    tol = params["tolerance"]
    u = random_section(grid, 0, d, _rng(ctx, "covering-section"))
    worst = 0.0
    rows = []
    for trial in range(count):
        k = 1 + trial % 4
        boxes = _covering_with_multiplicity(
            grid, k, _rng(ctx, "covering-boxes", trial)
        )
        if covering_multiplicity(boxes) != k:
            return _result(math.inf, None, False)
        for p in exponents:
            value, mult = covering_norm(u, boxes, s, p, ctx.bundle, ctx.metric)
            base = sobolev_norm(u, s, p, ctx.bundle, ctx.metric)
            factor = 1.0 if math.isinf(p) else mult ** (1.0 / p)
            upper = factor * base
            if math.isinf(p):
                violation = abs(value - base) / max(base, _TINY)
            else:
                violation = max(base - value, value - upper) / max(base, _TINY)
            worst = max(worst, violation)
            rows.append(_norm_row(ctx, s, p, value, upper, violation <= tol))
    return _result(worst, None, worst <= tol, rows)


@register("generator-identities", params=("trials",))
def check_generator_identities(ctx, params):
    """Frame duality, reconstruction, and the two-route derivative laws."""
    gens = _require_gens(ctx, "the generator check")
    grid = ctx.grid
    d = ctx.bundle.fiber_dim
    trials = int(params.get("trials", 5))
    tol = params["tolerance"]
    worst = reconstruction_defect(gens)
    for trial in range(trials):
        x = random_vector_field(grid, _rng(ctx, "gen-vector", trial))
        back = np.einsum("...jm,...ji,...i->...m", gens.z, gens.xi, x)
        worst = max(
            worst,
            float(np.max(np.abs(back - x))) / max(1.0, float(np.max(np.abs(x)))),
        )
        omega = random_vector_field(grid, _rng(ctx, "gen-covector", trial))
        back = np.einsum("...jm,...ji,...i->...m", gens.xi, gens.z, omega)
        worst = max(
            worst,
            float(np.max(np.abs(back - omega)))
            / max(1.0, float(np.max(np.abs(omega)))),
        )
        u = random_section(grid, 0, d, _rng(ctx, "gen-section", trial))
        direct = covariant_derivative(u, ctx.bundle, ctx.metric)
        framed = nabla_via_generators(u, gens, ctx.bundle, ctx.metric)
        scale = max(float(np.max(np.abs(direct.values))), _TINY)
        worst = max(
            worst, float(np.max(np.abs(framed.values - direct.values))) / scale
        )
        field = random_vector_field(grid, _rng(ctx, "gen-div", trial))
        via = divergence_via_generators(field, gens, ctx.metric)
        straight = divergence(field, ctx.metric)
        scale = max(1.0, float(np.max(np.abs(straight))))
        worst = max(worst, float(np.max(np.abs(via - straight))) / scale)
    return _result(worst, None, worst <= tol)


@register("norm-equivalence", params=("trials", "s", "p"))
def check_norm_equivalence(ctx, params):
    """Perturbed-connection norms stay within the recursion constant."""
    grid = ctx.grid
    d = ctx.bundle.fiber_dim
    trials = int(params.get("trials", 25))
    s = int(params.get("s", 2))
    p = _exponent(params.get("p", 2))
    tol = params["tolerance"]
    worst = 0.0
    all_passed = True
    for trial in range(trials):
        u = random_section(grid, 0, d, _rng(ctx, "equivalence-section", trial))
        scale = 0.5 + 1.5 * float(_rng(ctx, "equivalence-scale", trial).random())
        pert = random_skew_potentials(
            grid, d, _rng(ctx, "equivalence-potential", trial), scale=scale
        )
        report = perturbed_norm_check(u, pert, s, p, ctx.bundle, ctx.metric)
        base = max(report["norm_base"], _TINY)
        other = max(report["norm_perturbed"], _TINY)
        c = report["constant"]
        worst = max(worst, other / (c * base), base / (c * other))
        all_passed = all_passed and report["passed"]
    return _result(worst, 1.0, all_passed and worst <= 1.0 + tol)


@register("multiplication-property", params=("trials", "s", "p", "q", "r"))
def check_multiplication_property(ctx, params):
    """||a u|| <= C ||a|| ||u|| with the recursion constant C."""
    grid = ctx.grid
    d = ctx.bundle.fiber_dim
    trials = int(params.get("trials", 25))
    s = int(params.get("s", 2))
    p = _exponent(params.get("p", "inf"))
    q = _exponent(params.get("q", 2))
    r = _exponent(params.get("r", 2))
    tol = params["tolerance"]
    constant = multiplication_constant(s, p, q, r)
    scalar = BundleSpec(grid, 1)
    worst = 0.0
    for trial in range(trials):
        a = random_section(grid, 0, 1, _rng(ctx, "product-factor", trial))
        u = random_section(grid, 0, d, _rng(ctx, "product-section", trial))
        au = TensorSection(grid, 0, a.values * u.values, d)
        na = sobolev_norm(a, s, p, scalar, ctx.metric)
        nu = sobolev_norm(u, s, q, ctx.bundle, ctx.metric)
        nau = sobolev_norm(au, s, r, ctx.bundle, ctx.metric)
        worst = max(worst, nau / max(constant * na * nu, _TINY))
    return _result(worst, 1.0, worst <= 1.0 + tol)


@register("weighted-ratio", params=("orders", "p"))
def check_weighted_ratio(ctx, params):
    """Weighted norm against the classical norm of the twisted section."""
    weight = _require_weight(ctx, "the weighted-ratio check")
    grid = ctx.grid
    d = ctx.bundle.fiber_dim
    orders = [int(s) for s in params.get("orders", [0, 1])]
    p = _exponent(params.get("p", 2))
    tol = params["tolerance"]
    worst = 0.0
    rows = []
    for s in orders:
        bumps = random_bump_section(
            grid, 0, d, _rng(ctx, "weighted-ratio", s), sigma_range=(0.1, 0.12)
        )
        u = bumps.section(grid)
        report = conformal_weighted_check(
            u, weight, s, p, ctx.bundle, ctx.metric, bound=1.0 + tol
        )
        deviation = abs(report["ratio"] - 1.0)
        worst = max(worst, deviation)
        rows.append(
            _norm_row(
                ctx,
                s,
                p,
                report["weighted_norm"],
                report["conformal_norm"],
                deviation <= tol,
            )
        )
    return _result(worst, None, worst <= tol, rows)


def _random_mixed_spec(ctx, gens, trial, max_order):
    grid = ctx.grid
    d = ctx.bundle.fiber_dim
    n_gen = gens.z.shape[-2]
    rng = _rng(ctx, "rewrite-spec", trial)
    terms = []
    for _ in range(1 + trial % 2):
        length = int(rng.integers(1, max_order + 1))
        labels = tuple(int(l) for l in rng.integers(1, n_gen + 1, size=length))
        coeff = random_trig_field(grid.dim, (d, d), rng).sample(grid)
        terms.append(MixedTerm(coeff, labels=labels))
    return MixedOpSpec(ctx.bundle, ctx.bundle, ctx.metric, terms)


@register("operator-rewrite", params=("specs", "max_order"))
def check_operator_rewrite(ctx, params):
    """Mixed -> ladder -> mixed -> sorted preserves the induced map."""
    gens = _require_gens(ctx, "the rewrite check")
    grid = ctx.grid
    d = ctx.bundle.fiber_dim
    specs = int(params.get("specs", 10))
    max_order = int(params.get("max_order", 2))
    tol = params["tolerance"]
    needed = (max_order + 1) * grid.stencil_radius
    if grid.support_margin < needed:
        raise ConfigError(
            f"rewrite at order {max_order} needs a chart margin of {needed} "
            f"layers, the grid has {grid.support_margin}"
        )
    worst = 0.0
    sorted_ok = True
    for trial in range(specs):
        spec = _random_mixed_spec(ctx, gens, trial, max_order)
        u = random_bump_section(
            grid, 0, d, _rng(ctx, "rewrite-section", trial)
        ).section(grid)
        one = apply_mixed_op(spec, u, gens)
        ladder = mixed_to_nabla(spec, gens)
        back = nabla_to_mixed(ladder, gens)
        ordered = reorder_generators(back, gens, ctx.bundle)
        two = apply_mixed_op(ordered, u, gens)
        sorted_ok = sorted_ok and all(
            term.labels == tuple(sorted(term.labels)) for term in ordered.terms
        )
        scale = max(float(np.max(np.abs(one.values))), _TINY)
        worst = max(worst, float(np.max(np.abs(one.values - two.values))) / scale)
    return _result(worst, None, sorted_ok and worst <= tol)


@register("mapping-bound", params=("operator", "s", "p", "trials"))
def check_mapping_bound(ctx, params):
    """Observed operator norms against the certified coefficient bound."""
    name = params.get("operator")
    if name not in ctx.nabla_ops:
        raise ResolutionError(f"scenario defines no operator named {name!r}")
    spec = ctx.nabla_ops[name]
    s = int(params.get("s", 1))
    p = _exponent(params.get("p", 2))
    trials = int(params.get("trials", 10))
    tol = params["tolerance"]
    report = mapping_bound_check(spec, s, p, trials, seed=ctx.seed)
    measured = report["max_ratio"] / max(report["bound"], _TINY)
    return _result(measured, 1.0, report["passed"] and measured <= tol)


def _ladder_form(ctx, half_order):
    grid = ctx.grid
    n = grid.dim
    d = ctx.bundle.fiber_dim
    table = {}
    for i in range(half_order + 1):
        dim = n**i * d
        table[(i, i)] = np.broadcast_to(
            np.eye(dim, dtype=complex), grid.shape + (dim, dim)
        )
    return BidiffSpec(ctx.bundle, ctx.bundle, ctx.metric, half_order, table)


@register("divergence-duality", params=("pairs", "half_orders", "form"))
def check_divergence_duality(ctx, params):
    """<P u, w> = B(u, w) for the weakly assembled operator."""
    gens = _require_gens(ctx, "the duality check")
    grid = ctx.grid
    d = ctx.bundle.fiber_dim
    pairs = int(params.get("pairs", 10))
    tol = params["tolerance"]
    if "form" in params:
        name = params["form"]
        if name not in ctx.bidiff_forms:
            raise ResolutionError(f"scenario defines no form named {name!r}")
        specs = [ctx.bidiff_forms[name]]
    else:
        orders = [int(m) for m in params.get("half_orders", [1])]
        specs = [_ladder_form(ctx, m) for m in orders]
    worst = 0.0
    for spec in specs:
        m = spec.half_order
        op = assemble_divergence_form(spec, gens, spec.cosource, ctx.metric)
        for trial in range(pairs):
            u = random_section(grid, 0, d, _rng(ctx, f"duality-u-{m}", trial))
            w = random_section(grid, 0, d, _rng(ctx, f"duality-w-{m}", trial))
            strong = dirichlet_form(spec, u, w)
            weak = l2_pairing(
                apply_nabla_op(op, u), w, spec.cosource, ctx.metric
            )
            denom = max(
                sobolev_norm(u, m, 2, ctx.bundle, ctx.metric)
                * sobolev_norm(w, m, 2, ctx.bundle, ctx.metric),
                _TINY,
            )
            worst = max(worst, abs(weak - strong) / denom)
    return _result(worst, None, worst <= tol)


@register("weighted-duality", params=("pairs", "form", "p"))
def check_weighted_duality(ctx, params):
    """Two-picture Dirichlet pairing under an admissible weight."""
    weight = _require_weight(ctx, "the weighted-duality check")
    grid = ctx.grid
    d = ctx.bundle.fiber_dim
    pairs = int(params.get("pairs", 5))
    p = _exponent(params.get("p", 2))
    tol = params["tolerance"]
    if "form" in params:
        name = params["form"]
        if name not in ctx.bidiff_forms:
            raise ResolutionError(f"scenario defines no form named {name!r}")
        spec = ctx.bidiff_forms[name]
    else:
        spec = _ladder_form(ctx, 1)
    worst = 0.0
    for trial in range(pairs):
        u = random_section(grid, 0, d, _rng(ctx, "weighted-u", trial))
        w = random_section(grid, 0, d, _rng(ctx, "weighted-w", trial))
        report = weighted_duality_check(spec, weight, u, w, p=p, gens=ctx.gens)
        worst = max(worst, report["residual"])
        if "weak_residual" in report:
            worst = max(worst, report["weak_residual"])
    return _result(worst, None, worst <= tol)


@register("norm-table", params=("orders", "exponents"))
def check_norm_table(ctx, params):
    """Emit a table of Sobolev norms of one reproducible random section."""
    grid = ctx.grid
    d = ctx.bundle.fiber_dim
    orders = [int(s) for s in params.get("orders", [0, 1, 2])]
    exponents = [_exponent(p) for p in params.get("exponents", [2])]
    u = random_section(grid, 0, d, _rng(ctx, "norm-table"))
    rows = []
    for s in orders:
        for p in exponents:
            value = sobolev_norm(u, s, p, ctx.bundle, ctx.metric)
            rows.append(_norm_row(ctx, s, p, value, None, True))
    return _result(0.0, None, True, rows)
