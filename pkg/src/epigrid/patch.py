"""Deterministic node-density limit of the epidemic on the torus grid.

Susceptible and infected cell densities evolve by coupled ODEs: both
diffuse through their discrete Laplacians, while the infection force at a
node is a lagged functional of the past infection flux.  New infections
contribute mean infectivity at the age matching their infection time and
are transported by the infected walk, so the force reads

    force(t, x) = lam0(t) * (T_I(t) i0)(x)
                + integral_0^t lam(t - s) * (T_I(t - s) flux(s))(x) ds

with flux(s, x) = S(s, x) * Gamma(s, x) and the per-node intensity
Gamma(t, x) = mod(t) / B(t, x)^gamma * sum_y beta[x, y] force(t, y).

The marcher discretizes the lag integral by the trapezoid rule on the
step grid, pushes every stored flux slice through the walk semigroup
spectrally, and advances the ODE pair with Heun's method.  The lag-zero
endpoint couples the force to itself through Gamma; it is resolved by a
short fixed-point iteration whose contraction factor is O(step).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contact import ContactKernel, validate_rows
from .errors import NumericalError, ValidationError
from .grid import Laplacian, TorusGrid, TransitionKernel
from .infectivity import InfectivityLaw
from .model import ModelParams


@dataclass
class PatchSolution:
    """Fields of a solved node-density system on a uniform time grid.

    All field arrays are indexed ``[time_step, node...]`` with the node
    axes shaped like the grid.  ``flux`` stores S * Gamma with the raw
    (unclipped) susceptible field, which is what the lag integral uses.
    """

    grid: TorusGrid
    params: ModelParams
    kernel: ContactKernel
    new_law: InfectivityLaw
    initial_law: InfectivityLaw
    step: float
    times: np.ndarray
    susceptible: np.ndarray
    infected: np.ndarray
    force: np.ndarray
    intensity: np.ndarray
    flux: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def occupancy(self) -> np.ndarray:
        return self.susceptible + self.infected

    def total_mass(self) -> np.ndarray:
        """Integral of S + I over the torus at every time step."""
        axes = tuple(range(1, self.grid.dim + 1))
        return self.occupancy.sum(axis=axes) * self.grid.cell_volume

    def time_index(self, t: float) -> int:
        k = int(round(float(t) / self.step))
        if 0 <= k < len(self.times) and abs(self.times[k] - t) <= 1e-9 * max(1.0, self.times[-1]):
            return k
        raise ValidationError(
            f"time {t} is not on the solution grid; interpolation is not provided")


def _inverse_crowding(s_raw: np.ndarray, i_raw: np.ndarray, gamma: float) -> np.ndarray:
    """1 / B^gamma with fields clipped at zero and 0 where the cell is empty."""
    b = np.maximum(s_raw, 0.0) + np.maximum(i_raw, 0.0)
    if gamma == 0.0:
        return np.ones_like(b)
    out = np.zeros_like(b)
    np.divide(1.0, b ** gamma, out=out, where=b > 0.0)
    return out


def solve_patch_system(grid: TorusGrid, params: ModelParams, kernel: ContactKernel,
                       new_law: InfectivityLaw, initial_law: InfectivityLaw,
                       s0: np.ndarray, i0: np.ndarray, step: float, *,
                       neg_tol: float = 1e-8) -> PatchSolution:
    """March the node-density system to the horizon with step ``step``.

    ``s0`` and ``i0`` are cell densities shaped like the grid (for a
    sampled population take ``InitialCondition.patch_s`` / ``patch_i``).
    The step must divide the horizon and satisfy the explicit-scheme
    stability bound step <= mesh^2 / (4 * dim * nu_max); violating the
    bound, or driving a density below ``-neg_tol``, raises
    NumericalError with a suggestion to shrink the step.
    """
    s0 = np.asarray(s0, dtype=float)
    i0 = np.asarray(i0, dtype=float)
    if s0.shape != grid.shape or i0.shape != grid.shape:
        raise ValidationError(
            f"initial fields must have grid shape {grid.shape}")
    if not (np.all(np.isfinite(s0)) and np.all(np.isfinite(i0))):
        raise ValidationError("initial fields must be finite")
    if s0.min() < 0 or i0.min() < 0:
        raise ValidationError("initial densities must be nonnegative")
    if step <= 0:
        raise ValidationError("step must be > 0")
    n_steps = int(round(params.horizon / step))
    if n_steps < 1 or abs(n_steps * step - params.horizon) > 1e-9 * params.horizon:
        raise ValidationError(
            f"step {step} does not divide the horizon {params.horizon}")

    lap_s = Laplacian(grid, params.nu_s)
    lap_i = Laplacian(grid, params.nu_i)
    stiffness = max(-lap_s.eigenvalues().min(), -lap_i.eigenvalues().min())
    if step * stiffness > 1.0 + 1e-12:
        raise NumericalError(
            f"step {step:g} exceeds the diffusion stability bound "
            f"{1.0 / stiffness:g} (mesh^2 / (4 dim nu) rule); reduce the step")

    rows = validate_rows(kernel, grid)
    dim = grid.dim
    shape = grid.shape
    gamma = params.gamma

    times = step * np.arange(n_steps + 1)
    lam_tab = np.asarray(new_law.mean(times), dtype=float)
    lam0_tab = np.asarray(initial_law.mean(times), dtype=float)
    lam_zero = float(new_law.mean(0.0))
    mod_tab = np.asarray(kernel.mod_value(times), dtype=float)

    # walk-semigroup decay of every Fourier mode at every lag on the grid
    mu_i = lap_i.eigenvalues()
    decay = np.exp(times.reshape((-1,) + (1,) * dim) * mu_i[None])
    i0_hat = np.fft.fftn(i0)

    sus = np.empty((n_steps + 1,) + shape)
    inf = np.empty((n_steps + 1,) + shape)
    force = np.empty((n_steps + 1,) + shape)
    intensity = np.empty((n_steps + 1,) + shape)
    flux = np.empty((n_steps + 1,) + shape)
    flux_hat = np.zeros((n_steps + 1,) + shape, dtype=complex)
    lag_shape = (-1,) + (1,) * dim

    fp_iters_max = 0
    fp_resid_max = 0.0

    def kernel_action(f):
        return (rows @ f.ravel()).reshape(shape)

    def endpoint_force(k, s_state, i_state, base_field):
        """Solve force = base + (step/2) lam(0) flux at the lag endpoint."""
        nonlocal fp_iters_max, fp_resid_max
        coef = mod_tab[k] * _inverse_crowding(s_state, i_state, gamma)
        pre = (0.5 * step * lam_zero) * s_state * coef
        f_cur = base_field
        for it in range(1, 61):
            f_next = base_field + pre * kernel_action(f_cur)
            delta = float(np.max(np.abs(f_next - f_cur)))
            f_cur = f_next
            if delta <= 1e-15 * (1.0 + float(np.max(np.abs(f_cur)))):
                break
        else:
            raise NumericalError(
                "lag-endpoint force iteration does not contract; halve the step")
        fp_iters_max = max(fp_iters_max, it)
        fp_resid_max = max(fp_resid_max, delta)
        return f_cur, coef * kernel_action(f_cur)

    def history_hat(k):
        """Fourier side of the force at t_k without the lag-zero endpoint."""
        acc = (lam0_tab[k] * decay[k]) * i0_hat
        if k >= 1 and flux_seen:
            w = np.full(k, step)
            w[0] = 0.5 * step
            coefs = (w * lam_tab[k:0:-1]).reshape(lag_shape)
            acc = acc + (coefs * decay[k:0:-1] * flux_hat[:k]).sum(axis=0)
        return acc

    # t = 0: the lag integral is empty, so the force is purely initial
    sus[0] = s0
    inf[0] = i0
    force[0] = lam0_tab[0] * i0
    intensity[0] = mod_tab[0] * _inverse_crowding(s0, i0, gamma) * kernel_action(force[0])
    flux[0] = s0 * intensity[0]
    flux_seen = bool(np.any(flux[0] != 0.0))
    if flux_seen:
        flux_hat[0] = np.fft.fftn(flux[0])

    for k in range(n_steps):
        s_k, i_k = sus[k], inf[k]
        flux_k = flux[k]
        k1_s = lap_s.apply(s_k) - flux_k
        k1_i = lap_i.apply(i_k) + flux_k

        s_pred = s_k + step * k1_s
        i_pred = i_k + step * k1_i
        base_field = np.real(np.fft.ifftn(history_hat(k + 1)))
        _, g_pred = endpoint_force(k + 1, s_pred, i_pred, base_field)

        flux_pred = s_pred * g_pred
        k2_s = lap_s.apply(s_pred) - flux_pred
        k2_i = lap_i.apply(i_pred) + flux_pred
        s_new = s_k + 0.5 * step * (k1_s + k2_s)
        i_new = i_k + 0.5 * step * (k1_i + k2_i)
        if min(s_new.min(), i_new.min()) < -neg_tol:
            raise NumericalError(
                f"density undershoot below -{neg_tol:g} at t={times[k + 1]:g}; "
                "halve the step")
        sus[k + 1] = s_new
        inf[k + 1] = i_new
        force[k + 1], intensity[k + 1] = endpoint_force(k + 1, s_new, i_new, base_field)
        flux[k + 1] = s_new * intensity[k + 1]
        if np.any(flux[k + 1] != 0.0):
            flux_seen = True
        if flux_seen:
            flux_hat[k + 1] = np.fft.fftn(flux[k + 1])

    meta = {"fixed_point_max_iters": fp_iters_max,
            "fixed_point_max_residual": fp_resid_max}
    return PatchSolution(grid, params, kernel, new_law, initial_law, step,
                         times, sus, inf, force, intensity, flux, meta)


def evaluate_force_representation(sol: PatchSolution, t: float) -> np.ndarray:
    """Force at a grid time, rebuilt slice by slice from the stored flux.

    Walks the lag quadrature again with a fresh transition kernel per
    history slice instead of the marcher's accumulated Fourier sums; it
    is the self-consistency companion of solve_patch_system and should
    agree with the marched force to roughly 1e-10.
    """
    k = sol.time_index(t)
    t_k = sol.times[k]
    lap_i = Laplacian(sol.grid, sol.params.nu_i)
    out = float(sol.initial_law.mean(t_k)) * TransitionKernel(lap_i, t_k).apply(sol.infected[0])
    for j in range(k + 1) if k > 0 else ():
        lag = t_k - sol.times[j]
        weight = 0.5 * sol.step if j in (0, k) else sol.step
        out = out + (weight * float(sol.new_law.mean(lag))) * \
            TransitionKernel(lap_i, lag).apply(sol.flux[j])
    return out


def solution_bounds_report(sol: PatchSolution) -> dict:
    """A-priori bound monitors for a solved instance.

    Checks that the running sup of S never rises, that total occupancy
    B = S + I stays away from zero, that mass is conserved, and that the
    sup of I sits under the growth envelope (|I(0)|_inf + 1) * e^{K t}
    with K = lam_star * beta_star / inf_B^gamma taken from the run's own
    occupancy floor.
    """
    axes = tuple(range(1, sol.grid.dim + 1))
    s_sup = np.abs(sol.susceptible).max(axis=axes)
    i_sup = np.abs(sol.infected).max(axis=axes)
    b_inf = sol.occupancy.min(axis=axes)
    mass = sol.total_mass()
    inf_b = float(b_inf.min())

    gamma = sol.params.gamma
    lam_star = float(sol.new_law.bound)
    beta_star = float(sol.kernel.bound)
    if gamma == 0.0:
        growth = lam_star * beta_star
    elif inf_b > 0.0:
        growth = lam_star * beta_star / inf_b ** gamma
    else:
        growth = float("inf")
    envelope = (i_sup[0] + 1.0) * np.exp(np.minimum(growth * sol.times, 700.0))

    tol = 1e-9 * max(1.0, float(s_sup[0]))
    return {
        "sup_s": float(s_sup.max()),
        "sup_i": float(i_sup.max()),
        "inf_b": inf_b,
        "inf_i_final": float(sol.infected[-1].min()),
        "initial_sup_s": float(s_sup[0]),
        "sup_s_nonincreasing": bool(np.all(np.diff(s_sup) <= tol)),
        "mass_drift": float(np.max(np.abs(mass - mass[0]))),
        "growth_rate": growth,
        "growth_envelope_ok": bool(np.all(i_sup <= envelope)),
    }
