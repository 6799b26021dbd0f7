"""Periodic grid geometry and the migration-walk calculus.

The spatial domain is the unit torus [0, 1)^d discretized by a regular
grid of n^d nodes with mesh eps = 1/n.  Each node x carries the cell
V(x) = x + [-eps/2, eps/2)^d, so cells tile the torus and have volume
eps^d.  Individuals migrate between nearest-neighbor nodes at rate
nu / eps^2 per directed edge, which makes the generator of a single walk

    (L f)(x) = (nu / eps^2) * sum_{|y-x| = eps} (f(y) - f(x)),

i.e. nu times the discrete Laplacian with the 1/eps^2 prefactor.  Because
the stencil is symmetric the transition matrices exp(t L) are doubly
stochastic and the uniform law is invariant.  Everything here is circulant,
so semigroups are applied by FFT; a dense matrix path exists for small
grids and for cross-checks.

Fields are stored as shaped arrays of shape (n,) * d in C order; the flat
index of a node is the usual row-major ravel of its integer coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class TorusGrid:
    """Regular grid on the unit torus.

    Parameters
    ----------
    dim : spatial dimension d >= 1 (1 or 2 in practice).
    inv_mesh : number of nodes per axis, n = 1/eps.  The single-node case
        n = 1 is allowed as a degenerate well-mixed configuration: every
        neighbor entry points back to the node and migration is a no-op.
    """

    dim: int
    inv_mesh: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError(f"dim must be >= 1, got {self.dim}")
        if self.inv_mesh < 1:
            raise ValidationError(f"inv_mesh must be >= 1, got {self.inv_mesh}")

    @property
    def mesh(self) -> float:
        return 1.0 / self.inv_mesh

    @property
    def shape(self) -> tuple:
        return (self.inv_mesh,) * self.dim

    @property
    def n_nodes(self) -> int:
        return self.inv_mesh ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.mesh ** self.dim

    def node_coords(self) -> np.ndarray:
        """Cell centers as an (n_nodes, dim) array, row-major node order."""
        axes = [np.arange(self.inv_mesh) * self.mesh] * self.dim
        mesh_pts = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh_pts], axis=-1)

    def node_index(self, coords) -> np.ndarray:
        """Flat node indices for integer coordinate tuples."""
        return np.ravel_multi_index(np.asarray(coords).T % self.inv_mesh, self.shape)

    def neighbor_table(self) -> np.ndarray:
        """Flat indices of the 2*dim nearest neighbors of every node.

        Column order is (axis0-, axis0+, axis1-, axis1+, ...).  For
        inv_mesh == 1 every column is the node itself.
        """
        n = self.inv_mesh
        idx = np.arange(self.n_nodes).reshape(self.shape)
        cols = []
        for ax in range(self.dim):
            cols.append(np.roll(idx, 1, axis=ax).ravel())
            cols.append(np.roll(idx, -1, axis=ax).ravel())
        return np.stack(cols, axis=-1).astype(np.int32)

    def frequencies(self) -> list:
        """Integer Fourier frequencies along each axis (fftfreq order)."""
        n = self.inv_mesh
        return [np.rint(np.fft.fftfreq(n) * n).astype(int) for _ in range(self.dim)]


@dataclass(frozen=True)
class Laplacian:
    """Migration generator nu * Delta on a :class:`TorusGrid`.

    Delta uses the 1/eps^2 prefactor, so this object is exactly the
    generator of the nearest-neighbor walk with per-edge rate nu/eps^2.
    """

    grid: TorusGrid
    diffusivity: float

    def __post_init__(self):
        if self.diffusivity < 0:
            raise ValidationError(f"diffusivity must be >= 0, got {self.diffusivity}")

    def apply(self, field_arr: np.ndarray) -> np.ndarray:
        """Apply the generator to a shaped field."""
        f = np.asarray(field_arr, dtype=float).reshape(self.grid.shape)
        acc = -2.0 * self.grid.dim * f
        for ax in range(self.grid.dim):
            acc = acc + np.roll(f, 1, axis=ax) + np.roll(f, -1, axis=ax)
        return self.diffusivity * self.grid.inv_mesh ** 2 * acc

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues on Fourier modes, shaped like the grid.

        Mode k has eigenvalue -(4 nu / eps^2) * sum_i sin^2(pi k_i eps);
        all of them are <= 0 and the constant mode sits at 0.
        """
        n = self.grid.inv_mesh
        per_axis = -4.0 * self.diffusivity * n * n * np.sin(
            np.pi * np.fft.fftfreq(n)) ** 2
        out = np.zeros(self.grid.shape)
        for ax in range(self.grid.dim):
            shape = [1] * self.grid.dim
            shape[ax] = n
            out = out + per_axis.reshape(shape)
        return out

    def dense_matrix(self) -> np.ndarray:
        """Generator as an (n_nodes, n_nodes) matrix (small grids only)."""
        m = self.grid.n_nodes
        rate = self.diffusivity * self.grid.inv_mesh ** 2
        mat = np.zeros((m, m))
        nbr = self.grid.neighbor_table()
        for x in range(m):
            for y in nbr[x]:
                mat[x, y] += rate
            mat[x, x] -= 2 * self.grid.dim * rate
        return mat


class TransitionKernel:
    """Transition probabilities exp(t L) of a migration walk.

    ``apply`` pushes a field through the semigroup by FFT; ``row`` gives
    the distribution at time t of a walk started at one node.  The matrix
    is symmetric and doubly stochastic.
    """

    def __init__(self, laplacian: Laplacian, elapsed: float):
        if elapsed < 0:
            raise ValidationError(f"elapsed time must be >= 0, got {elapsed}")
        self.laplacian = laplacian
        self.elapsed = elapsed
        self.grid = laplacian.grid
        self._mult = np.exp(elapsed * laplacian.eigenvalues())

    def apply(self, field_arr: np.ndarray) -> np.ndarray:
        f = np.asarray(field_arr, dtype=float).reshape(self.grid.shape)
        return np.real(np.fft.ifftn(np.fft.fftn(f) * self._mult))

    def row(self, node: int) -> np.ndarray:
        """Distribution of the walk at the elapsed time, started from node."""
        delta = np.zeros(self.grid.shape)
        delta[np.unravel_index(node, self.grid.shape)] = 1.0
        return self.apply(delta)

    def matrix(self) -> np.ndarray:
        """Full (n_nodes, n_nodes) transition matrix."""
        return np.stack([self.row(x).ravel() for x in range(self.grid.n_nodes)])


def transition_kernels(grid: TorusGrid, nu_s: float, nu_i: float,
                       elapsed: float) -> tuple:
    """Susceptible-walk and infected-walk kernels for one elapsed time."""
    return (TransitionKernel(Laplacian(grid, nu_s), elapsed),
            TransitionKernel(Laplacian(grid, nu_i), elapsed))


class HeatSemigroup:
    """Heat semigroup e^{nu t Delta} on the continuum torus, mode-wise.

    Acts on Fourier coefficients laid out in numpy fftn order; mode k
    is damped by exp(-nu * 4 pi^2 |k|^2 * t).
    """

    def __init__(self, dim: int, diffusivity: float):
        if diffusivity < 0:
            raise ValidationError("diffusivity must be >= 0")
        self.dim = dim
        self.diffusivity = diffusivity

    def mode_decay(self, n_modes: int) -> np.ndarray:
        """|k|^2-based decay rates, shaped (n_modes,)*dim in fftn order."""
        k = np.rint(np.fft.fftfreq(n_modes) * n_modes)
        out = np.zeros((n_modes,) * self.dim)
        for ax in range(self.dim):
            shape = [1] * self.dim
            shape[ax] = n_modes
            out = out + (k ** 2).reshape(shape)
        return 4.0 * np.pi ** 2 * self.diffusivity * out

    def multipliers(self, n_modes: int, t: float) -> np.ndarray:
        return np.exp(-t * self.mode_decay(n_modes))

    def apply_coeffs(self, coeffs: np.ndarray, t: float) -> np.ndarray:
        return coeffs * self.multipliers(coeffs.shape[0], t)


def gauss_legendre_cell(order: int = 5) -> tuple:
    """Gauss-Legendre nodes and weights on [-1/2, 1/2] with weight sum 1."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * x, 0.5 * w


def project_cells(grid: TorusGrid, fn, order: int = 5) -> np.ndarray:
    """Cell averages of a function on the torus, shaped like the grid.

    ``fn`` takes an (..., dim) array of points in [0, 1)^d and returns
    values of shape (...).  Averages use a tensor Gauss-Legendre rule of
    the given order per axis, exact for per-axis polynomials up to degree
    2*order - 1 and accurate to quadrature precision for smooth densities.
    """
    x1, w1 = gauss_legendre_cell(order)
    centers = grid.node_coords()                      # (M, dim)
    offsets = np.stack(np.meshgrid(*([x1] * grid.dim), indexing="ij"),
                       axis=-1).reshape(-1, grid.dim) # (order^d, dim)
    weights = np.stack(np.meshgrid(*([w1] * grid.dim), indexing="ij"),
                       axis=-1).reshape(-1, grid.dim).prod(axis=1)
    pts = (centers[:, None, :] + grid.mesh * offsets[None, :, :]) % 1.0
    vals = np.asarray(fn(pts), dtype=float)
    return (vals @ weights).reshape(grid.shape)


def project_mode_coeffs(grid: TorusGrid, coeffs: np.ndarray) -> np.ndarray:
    """Exact cell averages of a trigonometric polynomial.

    ``coeffs`` are fftn-layout Fourier coefficients on (n_modes,)*dim with
    n_modes a multiple of inv_mesh.  Averaging mode k over a cell of side
    eps multiplies it by prod_i sinc(pi k_i eps), after which evaluation at
    the cell centers is a plain inverse FFT subsampled at the nodes.
    """
    n_modes = coeffs.shape[0]
    n = grid.inv_mesh
    if n_modes % n != 0:
        raise ValidationError(
            f"mode count {n_modes} must be a multiple of inv_mesh {n}")
    k = np.rint(np.fft.fftfreq(n_modes) * n_modes)
    damp_axis = np.sinc(k * grid.mesh)    # np.sinc(x) = sin(pi x)/(pi x)
    damped = coeffs.astype(complex)
    for ax in range(grid.dim):
        shape = [1] * grid.dim
        shape[ax] = n_modes
        damped = damped * damp_axis.reshape(shape)
    full = np.real(np.fft.ifftn(damped))
    stride = n_modes // n
    sel = (slice(None, None, stride),) * grid.dim
    return full[sel].copy()


def sample_walk_path(laplacian: Laplacian, start: int, horizon: float,
                     rng: np.random.Generator) -> tuple:
    """One migration-walk trajectory on [0, horizon].

    Returns (times, nodes): jump times with times[0] = 0 and the flat node
    occupied from each time onward.  Holding times are exponential with
    rate 2 d nu / eps^2 and the jump target is uniform over neighbors.
    """
    grid = laplacian.grid
    rate = 2.0 * grid.dim * laplacian.diffusivity * grid.inv_mesh ** 2
    nbr = grid.neighbor_table()
    times = [0.0]
    nodes = [int(start)]
    t = 0.0
    if rate > 0 and grid.inv_mesh > 1:
        while True:
            t += rng.exponential(1.0 / rate)
            if t >= horizon:
                break
            k = min(int(rng.random() * nbr.shape[1]), nbr.shape[1] - 1)
            nodes.append(int(nbr[nodes[-1], k]))
            times.append(t)
    return np.array(times), np.array(nodes, dtype=np.int64)
