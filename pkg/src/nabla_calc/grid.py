"""Chart grids: rectangular boxes with uniform per-axis sampling.

A ChartGrid fixes the discretization everything else lives on: box bounds,
point counts, finite-difference order, and the width of the margin band on
which sections are required to vanish (in grid layers).
"""

import numpy as np

from ._kernels import STENCIL_RADIUS, diff_axis
from .errors import ResolutionError, ShapeMismatch, SupportViolation


class ChartGrid:
    """Uniform tensor-product grid over a box in R^n."""

    def __init__(self, box, shape, fd_order=4, support_margin=None):
        box = tuple((float(lo), float(hi)) for lo, hi in box)
        shape = tuple(int(m) for m in shape)
        if len(box) != len(shape):
            raise ShapeMismatch(
                f"box has {len(box)} axes but shape has {len(shape)} entries"
            )
        if fd_order not in STENCIL_RADIUS:
            raise ValueError(f"fd order must be 2 or 4, got {fd_order}")
        for lo, hi in box:
            if not lo < hi:
                raise ValueError(f"box interval ({lo}, {hi}) is empty")
        radius = STENCIL_RADIUS[fd_order]
        if support_margin is None:
            support_margin = 3 * radius
        support_margin = int(support_margin)
        if support_margin < radius:
            raise ValueError(
                f"support margin {support_margin} is below the stencil radius {radius}"
            )
        for m in shape:
            if m <= 2 * support_margin + 1:
                raise ResolutionError(
                    f"axis with {m} points cannot hold two margin bands of "
                    f"{support_margin} layers plus an interior"
                )
        self.box = box
        self.shape = shape
        self.fd_order = fd_order
        self.support_margin = support_margin
        self.h = tuple((hi - lo) / (m - 1) for (lo, hi), m in zip(box, shape))
        self.axes = [
            np.linspace(lo, hi, m) for (lo, hi), m in zip(box, shape)
        ]
        # full-shape coordinate arrays, x[k][idx] = k-th coordinate at idx
        self.coords = list(np.meshgrid(*self.axes, indexing="ij"))

    @property
    def dim(self):
        return len(self.shape)

    @property
    def stencil_radius(self):
        return STENCIL_RADIUS[self.fd_order]

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def __eq__(self, other):
        return (
            isinstance(other, ChartGrid)
            and self.box == other.box
            and self.shape == other.shape
            and self.fd_order == other.fd_order
            and self.support_margin == other.support_margin
        )

    def __hash__(self):
        return hash((self.box, self.shape, self.fd_order, self.support_margin))

    def __repr__(self):
        return (
            f"ChartGrid(box={self.box}, shape={self.shape}, "
            f"fd_order={self.fd_order}, support_margin={self.support_margin})"
        )

    def diff(self, values, axis):
        """Central difference of a grid array along one grid axis."""
        if values.shape[: self.dim] != self.shape:
            raise ShapeMismatch(
                f"array shape {values.shape} does not start with grid shape {self.shape}"
            )
        return diff_axis(values, axis, self.h[axis], self.fd_order)

    def band_mask(self, layers):
        """Boolean mask, True on the outermost `layers` grid layers."""
        mask = np.zeros(self.shape, dtype=bool)
        if layers <= 0:
            return mask
        for k in range(self.dim):
            idx_lo = tuple(
                slice(0, layers) if a == k else slice(None) for a in range(self.dim)
            )
            idx_hi = tuple(
                slice(-layers, None) if a == k else slice(None) for a in range(self.dim)
            )
            mask[idx_lo] = True
            mask[idx_hi] = True
        return mask

    def interior_mask(self, layers=None):
        """Complement of band_mask; defaults to the declared support margin."""
        if layers is None:
            layers = self.support_margin
        return ~self.band_mask(layers)

    def zero_band(self, values, layers):
        """Zero an array in place on the outermost `layers` grid layers."""
        if layers <= 0:
            return values
        values[self.band_mask(layers)] = 0
        return values

    def check_support(self, values, layers, what="section"):
        """Raise SupportViolation unless values vanish on the band."""
        if layers > self.support_margin:
            raise SupportViolation(
                f"{what} needs {layers} margin layers but the grid declares "
                f"{self.support_margin}"
            )
        band = self.band_mask(layers)
        flat = values.reshape(self.shape + (-1,))
        if np.any(flat[band] != 0):
            worst = float(np.max(np.abs(flat[band])))
            raise SupportViolation(
                f"{what} must vanish on the outer {layers} grid layers; "
                f"max magnitude there is {worst:.3e}"
            )

    def quad_weights(self):
        """Trapezoid weights as a full-shape array (product of 1D rules)."""
        w = np.ones(self.shape, dtype=float)
        for k in range(self.dim):
            w1 = np.ones(self.shape[k])
            w1[0] = w1[-1] = 0.5
            shape1 = tuple(
                self.shape[k] if a == k else 1 for a in range(self.dim)
            )
            w = w * w1.reshape(shape1)
        return w * self.cell_volume

    def integrate(self, values):
        """Trapezoid quadrature of a scalar grid array (flat measure)."""
        if values.shape != self.shape:
            raise ShapeMismatch(
                f"integrand shape {values.shape} does not match grid {self.shape}"
            )
        return complex(np.sum(values * self.quad_weights())) if np.iscomplexobj(
            values
        ) else float(np.sum(values * self.quad_weights()))
