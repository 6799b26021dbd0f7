"""Contact kernels: how much a force-of-infection source at y is felt at x.

A kernel is a bounded nonnegative measure beta(x, dy) on the torus with
total mass at most ``bound``; an optional deterministic modulation m(t)
in [0, 1] scales it over time.  The built-in families are translation
invariant: a point mass at x (purely local contact), a wrapped Gaussian,
and a per-axis top hat.  On a grid the kernel becomes the matrix
beta[x, y] = beta(x, V(y)) of cell masses; on the continuum it acts by
convolution, for which each family has exact Fourier multipliers.  An
explicit matrix kernel is also supported for grid-level experiments; it
has no continuum counterpart.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ValidationError
from .grid import TorusGrid


@dataclass(frozen=True)
class CosineModulation:
    """m(t) = base + amplitude * cos(2 pi t / period), kept inside [0, 1]."""

    base: float
    amplitude: float
    period: float

    def __post_init__(self):
        if self.period <= 0:
            raise ValidationError("modulation period must be > 0")
        if self.base - abs(self.amplitude) < 0 or self.base + abs(self.amplitude) > 1:
            raise ValidationError("modulation must stay within [0, 1]")

    def value(self, t):
        return self.base + self.amplitude * np.cos(2 * np.pi * np.asarray(t) / self.period)

    @property
    def max_value(self):
        return self.base + abs(self.amplitude)

    def engine_code(self):
        return 1, np.array([self.base, self.amplitude, self.period])


class ContactKernel:
    """Base class for contact kernels."""

    modulation = None

    @property
    def bound(self) -> float:
        """Upper bound on beta_t(x, torus) over times and positions."""
        raise NotImplementedError

    def rows(self, grid: TorusGrid) -> np.ndarray:
        """Cell-mass matrix beta[x, y] on the given grid (time factor off)."""
        raise NotImplementedError

    def spectral_multipliers(self, dim: int, n_modes: int) -> np.ndarray:
        """fftn-layout multipliers of the continuum convolution."""
        raise ValidationError(
            f"{type(self).__name__} has no continuum representation")

    def mod_value(self, t):
        return np.ones_like(np.asarray(t, dtype=float)) if self.modulation is None \
            else self.modulation.value(t)

    def mod_max(self) -> float:
        return 1.0 if self.modulation is None else self.modulation.max_value

    def mod_engine_code(self):
        if self.modulation is None:
            return 0, np.zeros(3)
        return self.modulation.engine_code()

    def _axis_profile(self, grid: TorusGrid) -> np.ndarray:
        raise NotImplementedError

    def _circulant_rows(self, grid: TorusGrid, axis_profile: np.ndarray,
                        scale: float) -> np.ndarray:
        """Assemble beta[x, y] = scale * prod_i profile[(y_i - x_i) mod n]."""
        n, d = grid.inv_mesh, grid.dim
        diff = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
        axis_mat = axis_profile[diff]                    # (n, n) per axis
        out = np.ones((1, 1))
        for _ in range(d):
            out = np.einsum("xy,ab->xayb", out, axis_mat).reshape(
                out.shape[0] * n, out.shape[1] * n)
        return scale * out


@dataclass(frozen=True)
class LocalContact(ContactKernel):
    """Point-mass kernel: all contact happens within the node's own cell."""

    scale: float
    modulation: CosineModulation | None = None

    def __post_init__(self):
        if self.scale < 0:
            raise ValidationError("scale must be >= 0")

    @property
    def bound(self):
        return self.scale

    def rows(self, grid):
        return self.scale * np.eye(grid.n_nodes)

    def spectral_multipliers(self, dim, n_modes):
        return self.scale * np.ones((n_modes,) * dim)


@dataclass(frozen=True)
class GaussianContact(ContactKernel):
    """Wrapped-normal kernel with per-axis standard deviation ``width``."""

    scale: float
    width: float
    modulation: CosineModulation | None = None

    def __post_init__(self):
        if self.scale < 0:
            raise ValidationError("scale must be >= 0")
        if self.width <= 0:
            raise ValidationError("width must be > 0")

    @property
    def bound(self):
        return self.scale

    def _axis_profile(self, grid):
        # mass of the wrapped normal in each cell, via erf over enough images
        n, eps, sig = grid.inv_mesh, grid.mesh, self.width
        centers = np.arange(n) * eps
        lo = centers - eps / 2
        hi = centers + eps / 2
        n_img = int(math.ceil(6 * sig)) + 2
        total = np.zeros(n)
        for m in range(-n_img, n_img + 1):
            total += 0.5 * (erf((hi + m) / (sig * math.sqrt(2)))
                            - erf((lo + m) / (sig * math.sqrt(2))))
        return total

    def rows(self, grid):
        return self._circulant_rows(grid, self._axis_profile(grid), self.scale)

    def spectral_multipliers(self, dim, n_modes):
        k = np.rint(np.fft.fftfreq(n_modes) * n_modes)
        axis = np.exp(-2 * np.pi ** 2 * self.width ** 2 * k ** 2)
        out = np.ones((n_modes,) * dim)
        for ax in range(dim):
            shape = [1] * dim
            shape[ax] = n_modes
            out = out * axis.reshape(shape)
        return self.scale * out


@dataclass(frozen=True)
class TopHatContact(ContactKernel):
    """Uniform contact within wrapped distance ``radius`` per axis."""

    scale: float
    radius: float
    modulation: CosineModulation | None = None

    def __post_init__(self):
        if self.scale < 0:
            raise ValidationError("scale must be >= 0")
        if not 0 < self.radius <= 0.5:
            raise ValidationError("radius must be in (0, 1/2]")

    @property
    def bound(self):
        return self.scale

    def _axis_profile(self, grid):
        n, eps, r = grid.inv_mesh, grid.mesh, self.radius
        centers = np.arange(n) * eps
        lo = centers - eps / 2
        hi = centers + eps / 2
        total = np.zeros(n)
        for m in (-1, 0, 1):
            total += np.clip(np.minimum(hi + m, r) - np.maximum(lo + m, -r), 0.0, None)
        return total / (2 * r)

    def rows(self, grid):
        return self._circulant_rows(grid, self._axis_profile(grid), self.scale)

    def spectral_multipliers(self, dim, n_modes):
        k = np.rint(np.fft.fftfreq(n_modes) * n_modes)
        axis = np.sinc(2 * k * self.radius)
        out = np.ones((n_modes,) * dim)
        for ax in range(dim):
            shape = [1] * dim
            shape[ax] = n_modes
            out = out * axis.reshape(shape)
        return self.scale * out


class MatrixContact(ContactKernel):
    """Explicit nonnegative contact matrix tied to one grid size."""

    def __init__(self, matrix, modulation: CosineModulation | None = None):
        mat = np.asarray(matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValidationError("contact matrix must be square")
        if not np.all(np.isfinite(mat)) or np.any(mat < 0):
            raise ValidationError("contact matrix must be finite and nonnegative")
        self.matrix = mat
        self.modulation = modulation

    @property
    def bound(self):
        return float(self.matrix.sum(axis=1).max(initial=0.0))

    def rows(self, grid):
        if self.matrix.shape[0] != grid.n_nodes:
            raise ValidationError(
                f"contact matrix is {self.matrix.shape[0]}x{self.matrix.shape[0]} "
                f"but the grid has {grid.n_nodes} nodes")
        return self.matrix.copy()


def validate_rows(kernel: ContactKernel, grid: TorusGrid) -> np.ndarray:
    """Kernel rows with the mass bound checked; raises on violation."""
    rows = kernel.rows(grid)
    sums = rows.sum(axis=1)
    if np.any(rows < -1e-15):
        raise ValidationError("kernel rows must be nonnegative")
    if np.any(sums > kernel.bound * (1 + 1e-12) + 1e-15):
        raise ValidationError("kernel row mass exceeds its declared bound")
    return rows
