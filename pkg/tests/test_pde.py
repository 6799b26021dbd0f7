"""Continuum solvers: clamp semantics, backend cross-checks, patch comparison."""

import math

import numpy as np
import pytest

from epigrid.contact import CosineModulation, GaussianContact, LocalContact, TopHatContact
from epigrid.errors import NumericalError, ValidationError
from epigrid.grid import HeatSemigroup, TorusGrid
from epigrid.infectivity import ConstantExponential
from epigrid.model import DensityPair, ModelParams, cosine_densities, uniform_densities
from epigrid.patch import solve_patch_system
from epigrid.pde import (
    ClampedFlux,
    compare_patch_to_pde,
    solve_pde_marching,
    solve_pde_picard,
)
from oracles import scalar_volterra_si


def test_apply_h_direct_substitution():
    clamp = ClampedFlux(LocalContact(2.0), gamma=0.0, lam_star=1.0,
                        c_upper=10.0, c_lower=0.1, dim=1, n_modes=8)
    s = np.full(8, 0.5)
    i = np.full(8, 0.2)
    f = np.full(8, 0.3)
    out = clamp.apply(s, i, f, 0.0)
    assert np.allclose(out, 0.5 * 2.0 * 0.3, atol=1e-14)
    assert np.allclose(clamp.apply(s, i, np.zeros(8), 0.0), 0.0, atol=1e-15)
    assert np.allclose(clamp.apply(np.full(8, -0.4), i, f, 0.0), 0.0, atol=1e-15)


def test_apply_h_respects_output_bound():
    rng = np.random.default_rng(3)
    clamp = ClampedFlux(GaussianContact(1.5, 0.15), gamma=0.7, lam_star=1.2,
                        c_upper=2.0, c_lower=0.3, dim=1, n_modes=16)
    bound = clamp.output_bound()
    for _ in range(25):
        s = rng.uniform(-1.0, 2 * clamp.c_upper, 16)
        i = rng.uniform(-0.5, 2.0, 16)
        f = rng.uniform(0.0, 3 * clamp.lam_star * clamp.c_upper, 16)
        out = clamp.apply(s, i, f, rng.uniform(0, 5))
        assert np.all(out >= 0.0)
        assert np.all(out <= bound + 1e-12)


def test_apply_h_lipschitz_property():
    rng = np.random.default_rng(7)
    clamp = ClampedFlux(TopHatContact(1.1, 0.2), gamma=0.5, lam_star=1.2,
                        c_upper=1.5, c_lower=0.4, dim=1, n_modes=16)
    lip = clamp.lipschitz_bound()
    for _ in range(40):
        a = [rng.uniform(-2 * clamp.c_upper, 2 * clamp.c_upper, 16) for _ in range(3)]
        b = [rng.uniform(-2 * clamp.c_upper, 2 * clamp.c_upper, 16) for _ in range(3)]
        t = rng.uniform(0, 3)
        gap = np.max(np.abs(clamp.apply(*a, t) - clamp.apply(*b, t)))
        dist = max(np.max(np.abs(x - y)) for x, y in zip(a, b))
        if dist > 0:
            assert gap <= lip * dist * (1 + 1e-12)


def test_clamp_validation():
    with pytest.raises(ValidationError, match="upper clamp"):
        ClampedFlux(LocalContact(1.0), 0.0, 1.0, 0.0, 0.1, 1, 8)
    with pytest.raises(ValidationError, match="lower clamp"):
        ClampedFlux(LocalContact(1.0), 0.5, 1.0, 1.0, 0.0, 1, 8)


def test_no_infection_is_exact_heat_flow():
    dens = DensityPair(lambda p: 1.0 + 0.3 * np.cos(2 * np.pi * p[..., 0]),
                       lambda p: np.zeros(p.shape[:-1]), 1)
    params = ModelParams(nu_s=0.2, nu_i=0.4, gamma=0.0, horizon=1.0)
    law = ConstantExponential(1.0, 1.0)
    sol = solve_pde_marching(dens, params, LocalContact(1.5), law, law, 16, 1.0 / 64)
    pts = np.arange(16) / 16
    s0 = 1.0 + 0.3 * np.cos(2 * np.pi * pts)
    ref = np.real(np.fft.ifftn(
        np.fft.fftn(s0) * HeatSemigroup(1, 0.2).multipliers(16, 1.0)))
    assert np.max(np.abs(sol.susceptible[-1] - ref)) < 1e-10
    assert np.all(sol.infected == 0.0)
    assert np.all(sol.force == 0.0)


def test_picard_zero_infection_converges_immediately():
    dens = DensityPair(lambda p: 1.0 + 0.2 * np.cos(2 * np.pi * p[..., 0]),
                       lambda p: np.zeros(p.shape[:-1]), 1)
    params = ModelParams(nu_s=0.2, nu_i=0.4, gamma=0.0, horizon=0.5)
    law = ConstantExponential(1.0, 1.0)
    sol = solve_pde_picard(dens, params, LocalContact(1.5), law, law, 16, 1.0 / 64)
    assert sol.meta["iterations"] == 1
    assert sol.meta["residuals"][0] == 0.0


def test_well_mixed_matches_scalar_volterra():
    beta, s_init, i_init = 1.6, 0.94, 0.06
    horizon, h = 2.5, 1.0 / 512
    dens = uniform_densities(s_init, i_init)
    params = ModelParams(nu_s=0.3, nu_i=0.7, gamma=0.0, horizon=horizon)
    sol = solve_pde_marching(dens, params, LocalContact(beta),
                             ConstantExponential(0.9, 0.7),
                             ConstantExponential(0.5, 0.55), 8, h)
    _, s_ref, i_ref, f_ref = scalar_volterra_si(
        lambda t: 0.5 * math.exp(-0.55 * t),
        lambda t: 0.9 * math.exp(-0.7 * t),
        beta, s_init, i_init, horizon, h / 4)
    assert np.max(np.abs(sol.susceptible[:, 0] - s_ref[::4])) < 1e-6
    assert np.max(np.abs(sol.infected[:, 0] - i_ref[::4])) < 1e-6
    assert np.max(np.abs(sol.force[:, 0] - f_ref[::4])) < 1e-6


def _instance(step, horizon=1.0, n_modes=24):
    dens = cosine_densities(0.85, 0.15, s_contrast=0.4, i_contrast=0.5)
    params = ModelParams(nu_s=0.15, nu_i=0.25, gamma=0.5, horizon=horizon)
    kernel = GaussianContact(1.8, 0.12,
                             modulation=CosineModulation(0.7, 0.25, 1.5))
    laws = (ConstantExponential(1.1, 0.8), ConstantExponential(0.7, 0.6))
    return dens, params, kernel, laws


def test_marching_and_picard_agree():
    dens, params, kernel, (new_law, initial_law) = _instance(None)
    h = 1.0 / 128
    march = solve_pde_marching(dens, params, kernel, new_law, initial_law, 24, h)
    picard = solve_pde_picard(dens, params, kernel, new_law, initial_law, 24, h,
                              tol=1e-11)
    for a, b in ((march.susceptible, picard.susceptible),
                 (march.infected, picard.infected),
                 (march.force, picard.force)):
        assert np.max(np.abs(a - b)) < 1e-8


def test_picard_residuals_contract_geometrically():
    dens, params, kernel, (new_law, initial_law) = _instance(None)
    params = ModelParams(params.nu_s, params.nu_i, params.gamma, horizon=0.5)
    sol = solve_pde_picard(dens, params, kernel, new_law, initial_law, 24,
                           1.0 / 128, tol=1e-12)
    res = sol.meta["residuals"]
    assert res[-1] < 1e-12
    for prev, cur in zip(res[1:], res[2:]):
        assert cur < 0.75 * prev or cur < 1e-13


def test_self_convergence_order_two():
    dens, params, kernel, (new_law, initial_law) = _instance(None)
    sols = [solve_pde_marching(dens, params, kernel, new_law, initial_law, 16, h)
            for h in (1.0 / 64, 1.0 / 128, 1.0 / 256)]

    def gap(a, b, stride):
        worst = 0.0
        for fa, fb in ((a.susceptible, b.susceptible), (a.infected, b.infected),
                       (a.force, b.force)):
            worst = max(worst, np.max(np.abs(fa - fb[::stride])))
        return worst

    e_coarse = gap(sols[0], sols[1], 2)
    e_fine = gap(sols[1], sols[2], 2)
    order = math.log2(e_coarse / e_fine)
    assert e_coarse > 1e-12
    assert 1.8 <= order <= 2.6


def test_mass_conservation_and_positivity():
    dens, params, kernel, (new_law, initial_law) = _instance(None)
    sol = solve_pde_marching(dens, params, kernel, new_law, initial_law, 24,
                             1.0 / 128)
    mass = sol.total_mass()
    assert abs(mass[0] - 1.0) < 1e-12
    assert np.max(np.abs(mass - mass[0])) < 1e-10
    assert sol.susceptible.min() > -1e-10
    assert sol.infected.min() > -1e-10
    assert sol.meta["clamp_activations"] == {
        "s_low": 0, "s_high": 0, "b_low": 0, "f_high": 0}


def test_unresolved_density_raises():
    dens = DensityPair(lambda p: 1.0 + 0.5 * np.cos(2 * np.pi * 4 * p[..., 0]),
                       lambda p: np.full(p.shape[:-1], 0.1), 1)
    params = ModelParams(nu_s=0.1, nu_i=0.1, gamma=0.0, horizon=1.0)
    law = ConstantExponential(1.0, 1.0)
    with pytest.raises(NumericalError, match="resolved"):
        solve_pde_marching(dens, params, LocalContact(1.0), law, law, 8, 1.0 / 64)


def test_compare_patch_to_pde_shrinks_with_mesh():
    dens, params, kernel, (new_law, initial_law) = _instance(None)
    pde = solve_pde_marching(dens, params, kernel, new_law, initial_law, 32,
                             1.0 / 256)
    sups = []
    for inv_mesh in (8, 16):
        grid = TorusGrid(1, inv_mesh)
        s0, i0 = dens.patch_averages(grid)
        patch = solve_patch_system(grid, params, kernel, new_law, initial_law,
                                   s0, i0, 1.0 / 256)
        report = compare_patch_to_pde(patch, pde)
        # at t=0 both sides are exact cell averages of the same densities
        assert report["curve"][0] < 1e-12
        sups.append(report["sup"])
    assert sups[1] < sups[0]
    assert sups[0] > 1e-4  # the coarse gap is genuinely visible


def test_compare_patch_to_pde_grid_mismatch():
    dens, params, kernel, (new_law, initial_law) = _instance(None)
    pde = solve_pde_marching(dens, params, kernel, new_law, initial_law, 16,
                             1.0 / 256)
    # 16 modes do not tile 12 patches, so the comparison must refuse
    bad = TorusGrid(1, 12)
    s0b, i0b = dens.patch_averages(bad)
    patch_bad = solve_patch_system(bad, params, kernel, new_law, initial_law,
                                   s0b, i0b, 1.0 / 256)
    with pytest.raises(ValidationError, match="multiple"):
        compare_patch_to_pde(patch_bad, pde)
    with pytest.raises(ValidationError, match="not on the solution grid"):
        pde.time_index(0.12345)
    grid = TorusGrid(1, 8)
    s0, i0 = dens.patch_averages(grid)
    patch = solve_patch_system(grid, params, kernel, new_law, initial_law,
                               s0, i0, 1.0 / 256)
    report = compare_patch_to_pde(patch, pde)
    assert report["sup"] >= 0.0
