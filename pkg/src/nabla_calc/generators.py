"""Generator frames for the covariant calculus, built from embeddings.

An embedding realizes the tangent bundle inside a trivial R^N bundle as a
pointwise injective matrix Phi.  Its pseudoinverse Psi yields spanning
vector fields Z_j = Psi(e_j) together with dual covector fields xi_j (the
rows of Phi).  The pair reconstructs arbitrary tensors, reassembles the
covariant derivative from directional pieces, and carries the structure
functions used to reorder iterated directional derivatives.
"""

import itertools

import numpy as np

from .bundles import TensorSection
from .calculus import _SLOTS, contract_with_vector, covariant_derivative
from .errors import ChartMismatch, DegenerateEmbedding, ShapeMismatch
from .geometry import MetricField
from .grid import ChartGrid
from .norms import _lp_combine, lp_norm

SIGMA_FLOOR = 1e-12


class EmbeddingSpec:
    """Pointwise injective linear map of the tangent spaces into R^N.

    phi has shape grid + (N, n); the isometric flag asserts phi^T phi = g
    for the metric the embedding will be paired with.
    """

    def __init__(self, grid, phi, isometric=False):
        phi = np.asarray(phi, dtype=float)
        n = grid.dim
        if phi.ndim != grid.dim + 2 or phi.shape[: grid.dim] != grid.shape:
            raise ShapeMismatch(
                f"embedding values {phi.shape} do not sit over grid {grid.shape}"
            )
        if phi.shape[-1] != n:
            raise ShapeMismatch(
                f"embedding matrices are {phi.shape[-2]}x{phi.shape[-1]}, "
                f"expected column count {n}"
            )
        if phi.shape[-2] < n:
            raise ShapeMismatch(
                f"ambient dimension {phi.shape[-2]} is below the chart dimension {n}"
            )
        self.grid = grid
        self.phi = phi
        self.n_ambient = phi.shape[-2]
        self.isometric = bool(isometric)

    def gram(self):
        """phi^T phi as a pointwise n x n field."""
        return np.einsum("...ji,...jk->...ik", self.phi, self.phi)


class GeneratorSystem:
    """Spanning frame Z_j with dual coframe xi_j over a chart.

    z[idx, j, i] holds the components Z_j^i and xi[idx, j, i] the covector
    components (xi_j)_i; g_structure and l_structure hold the expansion
    coefficients of nabla_{Z_i} Z_j and [Z_i, Z_j] in the frame.
    """

    def __init__(self, grid, z, xi, frechet=False):
        n = grid.dim
        z = np.asarray(z, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if z.shape != xi.shape or z.shape[: grid.dim] != grid.shape or z.shape[-1] != n:
            raise ShapeMismatch(
                f"frame arrays {z.shape} / {xi.shape} do not match grid "
                f"{grid.shape} with {n} components"
            )
        self.grid = grid
        self.z = z
        self.xi = xi
        self.n_gens = z.shape[-2]
        self.g_structure = None
        self.l_structure = None
        # boundedness of the frame and all its derivatives is a property of
        # the chart family, not something a single grid can certify, so it
        # is declared rather than measured
        self.frechet = bool(frechet)

    def vector(self, j):
        """Components of Z_j (1-based label)."""
        return self.z[..., j - 1, :]

    def covector(self, j):
        """Components of xi_j (1-based label)."""
        return self.xi[..., j - 1, :]


def reconstruction_defect(gens):
    """Largest entry of sum_j Z_j (x) xi_j minus the identity, over the grid."""
    prod = np.einsum("...ji,...jr->...ir", gens.z, gens.xi)
    return float(np.max(np.abs(prod - np.eye(gens.grid.dim))))


def build_generators(embedding, metric, frechet=False):
    """Frame and coframe from an embedding: Z_j = Psi(e_j), xi_j = row j of Phi.

    Psi is the pointwise pseudoinverse (Phi^T Phi)^{-1} Phi^T; for an
    isometric embedding the Gram factor is the metric itself and g^{-1}
    Phi^T is used directly.  Set frechet when the frame is known to stay
    bounded with all derivatives; this tags rewrites, it changes no values.
    """
    grid = embedding.grid
    if metric.grid != grid:
        raise ChartMismatch("embedding and metric live on different grids")
    phi = embedding.phi
    gram = embedding.gram()
    lam = np.linalg.eigvalsh(gram)
    smin = float(np.sqrt(max(float(np.min(lam)), 0.0)))
    smax = float(np.sqrt(float(np.max(lam))))
    if smin <= SIGMA_FLOOR * max(1.0, smax):
        raise DegenerateEmbedding(
            f"embedding singular value {smin:.3e} is at or below the floor "
            f"{SIGMA_FLOOR * max(1.0, smax):.3e}"
        )
    if embedding.isometric:
        defect = float(np.max(np.abs(gram - metric.values)))
        scale = max(1.0, float(np.max(np.abs(metric.values))))
        if defect > 1e-8 * scale:
            raise ValueError(
                f"isometric flag is set but phi^T phi differs from the metric "
                f"by {defect:.3e}"
            )
        psi = np.einsum("...ik,...jk->...ij", metric.inv, phi)
    else:
        psi = np.linalg.solve(gram, np.swapaxes(phi, -1, -2))
    gens = GeneratorSystem(grid, np.swapaxes(psi, -1, -2), phi, frechet=frechet)
    gens.g_structure, gens.l_structure = structure_functions(gens, metric)
    return gens


def _spd_power(mats, power, what):
    """Eigendecomposition power of a field of symmetric matrices."""
    lam, vecs = np.linalg.eigh(mats)
    floor = SIGMA_FLOOR * max(1.0, float(np.max(lam)))
    if float(np.min(lam)) <= floor:
        raise DegenerateEmbedding(
            f"{what} eigenvalue {float(np.min(lam)):.3e} is at or below the "
            f"floor {floor:.3e}"
        )
    return np.einsum("...ik,...k,...jk->...ij", vecs, lam**power, vecs)


def polar_isometrize(embedding, metric):
    """Replace an embedding by its metric-adjusted polar part.

    The result Phi' = Phi (Phi^T Phi)^{-1/2} g^{1/2} satisfies
    Phi'^T Phi' = g pointwise, so the returned spec carries the isometric
    flag.  An already isometric embedding comes back unchanged.
    """
    grid = embedding.grid
    if metric.grid != grid:
        raise ChartMismatch("embedding and metric live on different grids")
    inv_root = _spd_power(embedding.gram(), -0.5, "embedding Gram")
    g_root = _spd_power(metric.values, 0.5, "metric")
    phi = np.einsum("...ai,...ij,...jk->...ak", embedding.phi, inv_root, g_root)
    return EmbeddingSpec(grid, phi, isometric=True)


def structure_functions(gens, metric):
    """Expansion coefficients G_ij^k of nabla_{Z_i} Z_j and L_ij^k of [Z_i, Z_j].

    Both come from applying the coframe to the derivative fields; the outer
    stencil band is zeroed like every other differentiated quantity.
    """
    grid = gens.grid
    n = grid.dim
    z = gens.z
    dz = np.stack([grid.diff(z, axis=l) for l in range(n)], axis=-3)
    grid.zero_band(dz, grid.stencil_radius)
    flow = np.einsum("...il,...ljm->...ijm", z, dz)
    cov = flow
    if not metric.is_constant:
        gamma = metric.christoffel_field()
        cov = cov + np.einsum("...mlr,...il,...jr->...ijm", gamma, z, z)
    bracket = flow - np.swapaxes(flow, -3, -2)
    g_structure = np.einsum("...km,...ijm->...ijk", gens.xi, cov)
    l_structure = np.einsum("...km,...ijm->...ijk", gens.xi, bracket)
    return g_structure, l_structure


def nabla_via_generators(u, gens, bundle, metric):
    """Covariant derivative assembled as sum_j xi_j tensor nabla_{Z_j} u."""
    if gens.grid != u.grid:
        raise ChartMismatch("generator system and section live on different grids")
    full = covariant_derivative(u, bundle, metric)
    letters = _SLOTS[: u.rank]
    out = np.zeros(full.values.shape, dtype=complex)
    for j in range(gens.n_gens):
        der = contract_with_vector(full, gens.z[..., j, :])
        out += np.einsum(
            f"...y,...{letters}a->...y{letters}a", gens.xi[..., j, :], der.values
        )
    return TensorSection(u.grid, u.rank + 1, out, u.fiber_dim)


def divergence_via_generators(X, gens, metric):
    """Divergence through the frame: sum_kl (xi_k, xi_l) g(nabla_{Z_k} X, Z_l)."""
    grid = gens.grid
    n = grid.dim
    if X.shape != grid.shape + (n,):
        raise ShapeMismatch(f"vector field shape {X.shape} does not match the grid")
    dx = np.stack([grid.diff(X, axis=l) for l in range(n)], axis=-2)
    cov = np.einsum("...kl,...lm->...km", gens.z, dx)
    if not metric.is_constant:
        gamma = metric.christoffel_field()
        cov = cov + np.einsum("...mlr,...kl,...r->...km", gamma, gens.z, X)
    pair = np.einsum("...im,...ki,...lm->...kl", metric.inv, gens.xi, gens.xi)
    inner = np.einsum("...im,...ki,...lm->...kl", metric.values, cov, gens.z)
    out = np.einsum("...kl,...kl->...", pair, inner)
    if np.iscomplexobj(out):
        out = out.astype(complex)
    grid.zero_band(out, grid.stencil_radius)
    return out


def decompose_tensor(w, gens):
    """Contract every slot of w with frame fields, one component per tuple.

    Returns a list of (labels, section) pairs where labels is the 1-based
    generator tuple (k_1, ..., k_mu) and the section is w with slot s
    contracted against Z_{k_s}; reassemble_tensor inverts this.
    """
    if gens.grid != w.grid:
        raise ChartMismatch("generator system and section live on different grids")
    components = []
    for combo in itertools.product(range(gens.n_gens), repeat=w.rank):
        sec = w
        for k in combo:
            sec = contract_with_vector(sec, gens.z[..., k, :])
        components.append((tuple(k + 1 for k in combo), sec))
    return components


def reassemble_tensor(components, gens):
    """Sum of xi_{k_1} tensor ... tensor xi_{k_mu} tensor component."""
    if not components:
        raise ShapeMismatch("cannot reassemble an empty component list")
    grid = gens.grid
    n = grid.dim
    rank = len(components[0][0])
    fiber_dim = components[0][1].fiber_dim
    vals = np.zeros(grid.shape + (n,) * rank + (fiber_dim,), dtype=complex)
    for labels, sec in components:
        if len(labels) != rank or sec.fiber_dim != fiber_dim:
            raise ShapeMismatch("components disagree on rank or fiber dimension")
        factor = np.ones(grid.shape)
        for s, k in enumerate(labels):
            xi_k = gens.xi[..., k - 1, :]
            factor = factor[..., None] * xi_k.reshape(
                grid.shape + (1,) * s + (n,)
            )
        vals += factor.reshape(factor.shape + (1,)) * sec.values.reshape(
            grid.shape + (1,) * rank + (fiber_dim,)
        )
    return TensorSection(grid, rank, vals, fiber_dim)


def generator_sobolev_norm(u, s, p, gens, bundle, metric, all_tuples=False):
    """l^p combination of nabla_{Z_{k_1}} ... nabla_{Z_{k_j}} u over tuples.

    Tuples are non-decreasing by default, which is enough to control the
    norm; all_tuples switches to the full product set for cross-checks.
    The rightmost label acts first, matching multi-index conventions.
    """
    grid = u.grid
    if gens.grid != grid:
        raise ChartMismatch("generator system and section live on different grids")
    s = int(s)
    if s < 0:
        raise ValueError(f"derivative depth must be >= 0, got {s}")
    grid.check_support(u.values, s * grid.stencil_radius)
    terms = [lp_norm(u, p, metric, bundle)]
    for j in range(1, s + 1):
        combos = (
            itertools.product(range(gens.n_gens), repeat=j)
            if all_tuples
            else itertools.combinations_with_replacement(range(gens.n_gens), j)
        )
        for combo in combos:
            v = u
            for k in reversed(combo):
                full = covariant_derivative(v, bundle, metric, check_support=False)
                v = contract_with_vector(full, gens.z[..., k, :])
            terms.append(lp_norm(v, p, metric, bundle))
    return _lp_combine(terms, p)


def identity_embedding(grid, isometric=True):
    """Phi = identity with N = n; isometric exactly for the flat metric."""
    n = grid.dim
    phi = np.broadcast_to(np.eye(n), grid.shape + (n, n)).copy()
    return EmbeddingSpec(grid, phi, isometric=isometric)


def stereographic_points(grid):
    """Ambient unit-sphere positions of a 2d stereographic chart."""
    if grid.dim != 2:
        raise ShapeMismatch(f"stereographic chart must be 2d, got {grid.dim}d")
    x1, x2 = grid.coords
    s = 1.0 + x1**2 + x2**2
    return np.stack(
        [2.0 * x1 / s, 2.0 * x2 / s, (x1**2 + x2**2 - 1.0) / s], axis=-1
    )


def sphere_ambient_embedding(grid):
    """Unit-sphere inclusion over a stereographic chart, with its round metric.

    Phi is the chart differential into R^3 and the induced metric is
    4 (1 + |x|^2)^{-2} times the identity; the pair is isometric by
    construction.  Returns (embedding, metric).
    """
    if grid.dim != 2:
        raise ShapeMismatch(f"sphere chart must be 2d, got {grid.dim}d")
    x1, x2 = grid.coords
    s = 1.0 + x1**2 + x2**2
    phi = np.empty(grid.shape + (3, 2))
    phi[..., 0, 0] = (2.0 * s - 4.0 * x1**2) / s**2
    phi[..., 0, 1] = -4.0 * x1 * x2 / s**2
    phi[..., 1, 0] = -4.0 * x1 * x2 / s**2
    phi[..., 1, 1] = (2.0 * s - 4.0 * x2**2) / s**2
    phi[..., 2, 0] = 4.0 * x1 / s**2
    phi[..., 2, 1] = 4.0 * x2 / s**2
    metric = MetricField(grid, (4.0 / s**2)[..., None, None] * np.eye(2))
    return EmbeddingSpec(grid, phi, isometric=True), metric


def graph_embedding(grid, heights, gradients=None):
    """Graph-of-f chart: Phi stacks the identity over the height gradients.

    heights is a grid array (one ambient height) or grid + (m,) for m of
    them; gradients holds the grid + (m, n) partials and is
    central-differenced from the heights when not supplied.  Returns
    (embedding, metric) with the induced graph metric 1 + Df^T Df.
    """
    heights = np.asarray(heights, dtype=float)
    if heights.shape == grid.shape:
        heights = heights[..., None]
    m = heights.shape[-1]
    if heights.shape != grid.shape + (m,):
        raise ShapeMismatch(
            f"height field shape {heights.shape} does not sit over grid {grid.shape}"
        )
    n = grid.dim
    if gradients is None:
        gradients = np.stack(
            [grid.diff(heights, axis=k) for k in range(n)], axis=-1
        )
    gradients = np.asarray(gradients, dtype=float)
    if gradients.shape != grid.shape + (m, n):
        raise ShapeMismatch(
            f"gradient field shape {gradients.shape} does not match "
            f"{m} heights over a {n}d chart"
        )
    eye = np.broadcast_to(np.eye(n), grid.shape + (n, n))
    phi = np.concatenate([eye, gradients], axis=-2)
    gram = np.eye(n) + np.einsum("...mi,...mj->...ij", gradients, gradients)
    return EmbeddingSpec(grid, phi, isometric=True), MetricField(grid, gram)


def random_embedding(grid, n_ambient, rng, n_waves=2, amplitude=0.25):
    """Smooth random full-rank embedding: orthonormal base plus gentle sway.

    The base columns are orthonormal and every sinusoidal perturbation is
    scaled so the total spectral deviation stays below the amplitude, which
    keeps the smallest singular value at least 1 - amplitude everywhere.
    """
    n = grid.dim
    if n_ambient < n:
        raise ShapeMismatch(
            f"ambient dimension {n_ambient} is below the chart dimension {n}"
        )
    base = np.linalg.qr(rng.standard_normal((n_ambient, n_ambient)))[0][:, :n]
    phi = np.broadcast_to(base, grid.shape + (n_ambient, n)).copy()
    x = np.stack(grid.coords, axis=-1)
    for _ in range(n_waves):
        w = rng.uniform(-1.0, 1.0, size=n)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        c = rng.standard_normal((n_ambient, n))
        c *= amplitude / (n_waves * np.linalg.norm(c, 2))
        wave = np.sin(x @ w + phase)
        phi = phi + wave[..., None, None] * c
    return EmbeddingSpec(grid, phi, isometric=False)


def restrict_embedding(embedding, lo, hi):
    """Restriction to the inclusive index subbox [lo_k, hi_k] per axis.

    The subgrid keeps the parent spacing, finite-difference order, and
    support margin, so frame values at shared nodes are unchanged.
    """
    grid = embedding.grid
    lo = tuple(int(a) for a in lo)
    hi = tuple(int(b) for b in hi)
    if len(lo) != grid.dim or len(hi) != grid.dim:
        raise ShapeMismatch(
            f"index bounds need {grid.dim} entries, got {len(lo)} and {len(hi)}"
        )
    for a, b, m in zip(lo, hi, grid.shape):
        if not 0 <= a < b < m:
            raise ShapeMismatch(
                f"index range [{a}, {b}] does not fit an axis with {m} points"
            )
    sub_box = tuple(
        (float(grid.axes[k][a]), float(grid.axes[k][b]))
        for k, (a, b) in enumerate(zip(lo, hi))
    )
    sub_shape = tuple(b - a + 1 for a, b in zip(lo, hi))
    sub = ChartGrid(sub_box, sub_shape, grid.fd_order, grid.support_margin)
    slices = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
    return EmbeddingSpec(sub, embedding.phi[slices], embedding.isometric)
