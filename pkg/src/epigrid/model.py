"""Model parameters, initial density profiles, and sampled initial states.

Initial data is a pair of continuum densities (susceptible, infected) on
the torus with total mass one and the susceptible part bounded away from
zero.  On a grid with n^d cells the expected count in cell x for scale
parameter N is N times the cell-averaged density, so the total population
is exactly N * n^d.  ``build_initial_condition`` realizes integer counts:
compartment totals by largest-remainder rounding (so the grand total is
exact) and locations i.i.d. across cells, with every initially infected
individual tracked by its own node.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .grid import TorusGrid, project_cells, project_mode_coeffs


@dataclass(frozen=True)
class ModelParams:
    """Dynamical constants shared by all three model layers.

    nu_s / nu_i are migration diffusivities of the susceptible and
    infected walks, gamma in [0, 1] interpolates the crowding
    normalization of the infection pressure, and horizon is the end time.
    """

    nu_s: float
    nu_i: float
    gamma: float
    horizon: float

    def __post_init__(self):
        if self.nu_s < 0 or self.nu_i < 0:
            raise ValidationError("diffusivities must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.horizon <= 0:
            raise ValidationError("horizon must be > 0")


class DensityPair:
    """Continuum initial densities with optional exact Fourier data."""

    def __init__(self, s_fn, i_fn, dim: int, coeffs_fn=None):
        self.s_fn = s_fn
        self.i_fn = i_fn
        self.dim = dim
        self.coeffs_fn = coeffs_fn

    def patch_averages(self, grid: TorusGrid):
        """Cell-averaged (S, I) fields shaped like the grid."""
        if grid.dim != self.dim:
            raise ValidationError("grid dimension does not match densities")
        if self.coeffs_fn is not None:
            n_modes = _mode_count_for(grid.inv_mesh)
            c_s, c_i = self.coeffs_fn(n_modes)
            return project_mode_coeffs(grid, c_s), project_mode_coeffs(grid, c_i)
        return project_cells(grid, self.s_fn), project_cells(grid, self.i_fn)

    def validate(self, n_check: int = 64) -> list:
        """Names of violated assumptions (empty when admissible)."""
        problems = []
        grid = TorusGrid(self.dim, min(n_check, 64 if self.dim == 1 else 16))
        s_avg, i_avg = self.patch_averages(grid)
        vol = grid.cell_volume
        if s_avg.min() <= 1e-9:
            problems.append("susceptible density not bounded below by a positive constant")
        if i_avg.min() < -1e-9:
            problems.append("infected density takes negative values")
        total = (s_avg.sum() + i_avg.sum()) * vol
        if abs(total - 1.0) > 1e-6:
            problems.append(f"densities do not integrate to one (got {total:.8f})")
        return problems


def _mode_count_for(inv_mesh: int) -> int:
    """A mode grid that is a multiple of inv_mesh and large enough for presets."""
    n_modes = inv_mesh
    while n_modes < 16:
        n_modes *= 2
    return n_modes


def uniform_densities(s_mass: float, i_mass: float, dim: int = 1) -> DensityPair:
    """Spatially constant profile with the given compartment masses."""
    _check_masses(s_mass, i_mass)

    def coeffs(n_modes):
        c_s = np.zeros((n_modes,) * dim, dtype=complex)
        c_i = np.zeros((n_modes,) * dim, dtype=complex)
        c_s.flat[0] = s_mass * n_modes ** dim
        c_i.flat[0] = i_mass * n_modes ** dim
        return c_s, c_i

    return DensityPair(lambda p: np.full(p.shape[:-1], s_mass),
                       lambda p: np.full(p.shape[:-1], i_mass),
                       dim, coeffs)


def cosine_densities(s_mass: float, i_mass: float, s_contrast: float = 0.0,
                     i_contrast: float = 0.0, wavenumber: int = 1,
                     dim: int = 1) -> DensityPair:
    """Masses modulated by cos(2 pi k x_1); contrasts in (-1, 1) keep positivity.

    The two contrasts are applied with opposite signs so infection starts
    where susceptibles are thinner, which gives genuinely spatial dynamics.
    """
    _check_masses(s_mass, i_mass)
    if not (abs(s_contrast) < 1 and abs(i_contrast) < 1):
        raise ValidationError("contrasts must lie in (-1, 1)")
    k = int(wavenumber)
    if k < 1:
        raise ValidationError("wavenumber must be >= 1")

    def s_fn(p):
        return s_mass * (1.0 + s_contrast * np.cos(2 * np.pi * k * p[..., 0]))

    def i_fn(p):
        return i_mass * (1.0 - i_contrast * np.cos(2 * np.pi * k * p[..., 0]))

    def coeffs(n_modes):
        if n_modes <= 2 * k:
            raise ValidationError("mode grid too small for the cosine preset")
        scale = n_modes ** dim
        c_s = np.zeros((n_modes,) * dim, dtype=complex)
        c_i = np.zeros((n_modes,) * dim, dtype=complex)
        c_s.flat[0] = s_mass * scale
        c_i.flat[0] = i_mass * scale
        idx_plus = (k,) + (0,) * (dim - 1)
        idx_minus = (n_modes - k,) + (0,) * (dim - 1)
        c_s[idx_plus] = c_s[idx_minus] = 0.5 * s_mass * s_contrast * scale
        c_i[idx_plus] = c_i[idx_minus] = -0.5 * i_mass * i_contrast * scale
        return c_s, c_i

    return DensityPair(s_fn, i_fn, dim, coeffs)


def fourier_densities(s_modes: dict, i_modes: dict, dim: int = 1) -> DensityPair:
    """Densities from low-mode coefficient dictionaries {k_tuple: amplitude}.

    Mode (0,...,0) carries the mass; other entries are complex amplitudes
    of exp(2 pi i k.x) and must come with their conjugate partners to give
    a real field.  Positivity is checked by :meth:`DensityPair.validate`.
    """

    def normalize(modes):
        out = {}
        for key, amp in modes.items():
            kt = tuple(int(v) for v in (key if isinstance(key, tuple) else (key,)))
            if len(kt) != dim:
                raise ValidationError(f"mode {kt} has wrong dimension")
            out[kt] = complex(amp)
        return out

    s_norm, i_norm = normalize(s_modes), normalize(i_modes)

    def make_fn(modes):
        def fn(p):
            acc = np.zeros(p.shape[:-1], dtype=complex)
            for kt, amp in modes.items():
                phase = np.zeros(p.shape[:-1])
                for ax, kv in enumerate(kt):
                    phase = phase + kv * p[..., ax]
                acc = acc + amp * np.exp(2j * np.pi * phase)
            return np.real(acc)
        return fn

    max_k = max((max(abs(v) for v in kt) for kt in list(s_norm) + list(i_norm)),
                default=0)

    def coeffs(n_modes):
        if n_modes <= 2 * max_k:
            raise ValidationError("mode grid too small for the fourier preset")
        c_s = np.zeros((n_modes,) * dim, dtype=complex)
        c_i = np.zeros((n_modes,) * dim, dtype=complex)
        for target, modes in ((c_s, s_norm), (c_i, i_norm)):
            for kt, amp in modes.items():
                target[tuple(kv % n_modes for kv in kt)] += amp * n_modes ** dim
        return c_s, c_i

    return DensityPair(make_fn(s_norm), make_fn(i_norm), dim, coeffs)


def _check_masses(s_mass: float, i_mass: float):
    if s_mass <= 0 or i_mass < 0:
        raise ValidationError("need s_mass > 0 and i_mass >= 0")
    if abs(s_mass + i_mass - 1.0) > 1e-12:
        raise ValidationError("compartment masses must sum to one")


@dataclass
class InitialCondition:
    """Patch averages plus one sampled integer-count configuration."""

    grid: TorusGrid
    scale: int                     # the N of the population N * n^d
    patch_s: np.ndarray            # cell-averaged densities, grid shape
    patch_i: np.ndarray
    counts_s: np.ndarray           # integer counts, grid shape
    counts_i: np.ndarray
    infected_nodes: np.ndarray     # flat node of each initially infected

    @property
    def total_population(self) -> int:
        return self.scale * self.grid.n_nodes


def build_initial_condition(densities: DensityPair, grid: TorusGrid, scale: int,
                            rng: np.random.Generator) -> InitialCondition:
    """Sample integer initial counts matching the densities.

    The grand total is exactly scale * n^d; the susceptible/infected split
    is the largest-remainder rounding of the mass split, and locations are
    i.i.d. across cells proportionally to cell mass.
    """
    if scale < 1:
        raise ValidationError("population scale must be >= 1")
    problems = densities.validate()
    if problems:
        raise ValidationError("; ".join(problems))
    patch_s, patch_i = densities.patch_averages(grid)
    vol = grid.cell_volume
    mass_s = patch_s.ravel() * vol
    mass_i = patch_i.ravel() * vol

    total = scale * grid.n_nodes
    exact_s = total * mass_s.sum() / (mass_s.sum() + mass_i.sum())
    n_s = int(np.floor(exact_s))
    if exact_s - n_s >= 0.5:
        n_s += 1
    n_i = total - n_s

    counts_s = rng.multinomial(n_s, mass_s / mass_s.sum()).reshape(grid.shape)
    if n_i > 0:
        infected_nodes = rng.choice(grid.n_nodes, size=n_i, p=mass_i / mass_i.sum())
    else:
        infected_nodes = np.zeros(0, dtype=np.int64)
    counts_i = np.bincount(infected_nodes, minlength=grid.n_nodes).reshape(grid.shape)
    return InitialCondition(grid, scale, patch_s, patch_i,
                            counts_s.astype(np.int64), counts_i.astype(np.int64),
                            infected_nodes.astype(np.int64))
