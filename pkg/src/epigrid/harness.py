"""Desk-scale convergence experiments tying the three model layers together.

Four experiment families, each feeding an ErrorReport:

* ``run_lln_fixed_eps``: fixed mesh, growing per-node population.  Replicate
  simulations are compared against the patch system; the mean sup-norm error
  should shrink like a CLT, roughly N^(-1/2).
* ``run_deterministic_eps_limit``: no randomness, shrinking mesh.  Patch
  solutions are compared against a fine continuum reference; the 3-point
  stencil makes this second order in the mesh.
* ``run_joint_limit``: population and mesh grow together with N * eps^d
  increasing.  Replicates are compared against the projected continuum
  solution, with a patch-level decomposition recorded alongside.
* ``run_f0_lemma_check``: infections off, only the initial cohort radiates.
  Measures the squared sup-norm gap between the empirical initial-cohort
  infectivity field and its deterministic transport, which scales like
  1 / (N * eps^d).

Error norms follow the two convergence modes of the underlying results:
susceptible/infected gaps are taken uniformly over sampled times, while
force-of-infection gaps are evaluated pointwise at a small probe grid.

Replicates run on a thread pool, seeded by spawning
``SeedSequence([master, entry_index, replicate_index])``, and results are
merged in replicate order, so reports are bit-identical for a given plan
regardless of the worker count.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.random import SeedSequence

from .errors import ValidationError
from .grid import Laplacian, TorusGrid, TransitionKernel, project_mode_coeffs
from .model import DensityPair, ModelParams
from .patch import solve_patch_system
from .pde import compare_patch_to_pde, solve_pde_marching
from .sim.driver import run_replicate

DEFAULT_PROBE_COUNT = 9


@dataclass(frozen=True)
class ScheduleEntry:
    """One point of a limit schedule.

    ``scale`` is the average initial population per node (the N of the
    model); ``None`` marks a purely deterministic entry.  ``inv_mesh`` is
    the reciprocal mesh 1/eps.
    """

    scale: int | None
    inv_mesh: int
    replicates: int = 1

    def __post_init__(self):
        if self.scale is not None and (self.scale != int(self.scale) or self.scale < 1):
            raise ValidationError("entry scale must be a positive integer or None")
        if self.inv_mesh != int(self.inv_mesh) or self.inv_mesh < 1:
            raise ValidationError("entry inv_mesh must be a positive integer")
        if self.replicates < 1:
            raise ValidationError("entry replicate count must be >= 1")

    def n_eps_d(self, dim: int) -> float:
        """The joint-limit pace N * eps^d (population per cell volume unit)."""
        if self.scale is None:
            return float("nan")
        return self.scale / float(self.inv_mesh) ** dim


@dataclass
class ExperimentPlan:
    """Model objects plus a schedule, seeds, and resolution controls."""

    params: ModelParams
    kernel: object
    new_law: object
    initial_law: object
    densities: DensityPair
    entries: list
    master_seed: int
    dim: int = 1
    probe_times: tuple | None = None   # None: 9 evenly spaced points in (0, T]
    sample_count: int = 33             # time resolution of the sup-t norms
    patch_step: float = 1.0 / 256.0
    pde_modes: int | None = None       # None: refined past the finest mesh
    pde_step: float | None = None      # None: patch_step / 4
    threads: int | None = None         # None: EPIGRID_THREADS or serial
    backend: str | None = None         # simulator backend selector

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("experiment plan needs at least one entry")
        self.entries = [e if isinstance(e, ScheduleEntry) else ScheduleEntry(*e)
                        for e in self.entries]
        if self.master_seed != int(self.master_seed) or self.master_seed < 0:
            raise ValidationError("master seed must be a nonnegative integer")
        if self.densities.dim != self.dim:
            raise ValidationError("densities dimension does not match the plan")
        if self.sample_count < 2:
            raise ValidationError("sample_count must be >= 2")

    def resolved_threads(self) -> int:
        if self.threads is not None:
            return max(1, int(self.threads))
        return max(1, int(os.environ.get("EPIGRID_THREADS", "1")))


@dataclass
class ErrorReport:
    """Per-entry error statistics plus optional fitted decay rates.

    ``entries`` is a list of plain dicts (JSON-ready), ``rates`` maps a
    statistic name to its fit summary, and ``notes`` carries flags such as
    degenerate schedules or small replicate counts.
    """

    kind: str
    entries: list
    rates: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self, indent: int | None = None) -> str:
        payload = {"kind": self.kind, "entries": self.entries,
                   "rates": self.rates, "notes": self.notes, "meta": self.meta}
        return json.dumps(payload, sort_keys=True, indent=indent,
                          default=_jsonable)

    def csv_rows(self) -> list:
        """Tidy rows (entry, N, eps, N_eps_d, field, norm, mean, stderr)."""
        rows = []
        for i, e in enumerate(self.entries):
            for stat in e["stats"]:
                rows.append({
                    "entry": i,
                    "N": "" if e["scale"] is None else e["scale"],
                    "eps": repr(1.0 / e["inv_mesh"]),
                    "N_eps_d": "" if e["scale"] is None else repr(e["n_eps_d"]),
                    "field": stat["field"],
                    "norm": stat["norm"],
                    "mean": repr(float(stat["mean"])),
                    "stderr": repr(float(stat["stderr"])),
                })
        return rows


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def fit_decay_rate(scales, errors) -> dict:
    """Least-squares decay exponent rho of error ~ scale^(-rho).

    Log-log regression; R^2 below 0.9 flags the fit unreliable.  Non-finite
    or nonpositive errors make the fit undefined and are flagged too.
    """
    x = np.asarray(scales, dtype=float)
    y = np.asarray(errors, dtype=float)
    if x.size < 2:
        return {"exponent": None, "r_squared": None, "reliable": False,
                "note": "fewer than two schedule points"}
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        return {"exponent": None, "r_squared": None, "reliable": False,
                "note": "nonpositive or non-finite errors"}
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    total = ly - ly.mean()
    denom = float(total @ total)
    r2 = 1.0 - float(resid @ resid) / denom if denom > 0 else 1.0
    return {"exponent": float(-slope), "r_squared": r2,
            "reliable": bool(r2 >= 0.9)}


def _mean_stderr(values) -> tuple:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    if arr.size > 1:
        stderr = float(arr.std(ddof=1) / math.sqrt(arr.size))
    else:
        stderr = 0.0
    return mean, stderr


def _sample_indices(n_steps: int, count: int, probe_fracs) -> tuple:
    """Reference-grid indices to sample, and the probe subset among them.

    Returns (sorted unique indices, probe positions inside that array).
    """
    base = np.round(np.linspace(0.0, n_steps, count)).astype(int)
    probes = np.round(np.asarray(probe_fracs, dtype=float) * n_steps).astype(int)
    idx = np.unique(np.concatenate([base, probes]))
    probe_pos = np.searchsorted(idx, np.unique(probes))
    return idx, probe_pos


def _probe_fracs(plan: ExperimentPlan):
    if plan.probe_times is None:
        k = DEFAULT_PROBE_COUNT
        return [(j + 1) / k for j in range(k)]
    horizon = plan.params.horizon
    fracs = [t / horizon for t in plan.probe_times]
    if any(f < 0 or f > 1 for f in fracs):
        raise ValidationError("probe times must lie in [0, horizon]")
    return fracs


def _sweep(plan: ExperimentPlan, entry_index: int, entry: ScheduleEntry,
           grid: TorusGrid, sample_times, err_fn) -> list:
    """Run one entry's replicates, in order; propagate failures with context."""

    def one(r):
        try:
            seq = SeedSequence([plan.master_seed, entry_index, r])
            res = run_replicate(grid, plan.params, plan.kernel, plan.new_law,
                                plan.initial_law, plan.densities, entry.scale,
                                seq, sample_times, backend=plan.backend)
            return err_fn(res)
        except Exception as exc:
            raise type(exc)(
                f"entry {entry_index} (N={entry.scale}, "
                f"mesh=1/{entry.inv_mesh}), replicate {r}: {exc}") from exc

    workers = plan.resolved_threads()
    if workers == 1 or entry.replicates == 1:
        return [one(r) for r in range(entry.replicates)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(entry.replicates)))


def _entry_record(entry: ScheduleEntry, dim: int) -> dict:
    return {"scale": entry.scale, "inv_mesh": entry.inv_mesh,
            "replicates": entry.replicates,
            "n_eps_d": None if entry.scale is None else entry.n_eps_d(dim)}


def _small_sample_note(report: ErrorReport, entries) -> None:
    small = [i for i, e in enumerate(entries)
             if e.scale is not None and e.replicates < 30]
    if small:
        report.notes.append(
            f"entries {small} use fewer than 30 replicates; "
            "standard errors are indicative only")


def run_lln_fixed_eps(plan: ExperimentPlan) -> ErrorReport:
    """Growing population at fixed mesh, against the patch system.

    Every entry must share ``inv_mesh`` and scales must be strictly
    increasing.  Per replicate the error is the sup over sampled times of
    the larger of the susceptible and infected sup-norm gaps; the force
    gap is recorded pointwise at the probe times.
    """
    entries = plan.entries
    meshes = {e.inv_mesh for e in entries}
    if len(meshes) != 1:
        raise ValidationError("fixed-mesh schedule must share one inv_mesh")
    scales = [e.scale for e in entries]
    if any(s is None for s in scales):
        raise ValidationError("fixed-mesh schedule entries must be stochastic")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValidationError("fixed-mesh schedule must have ascending scales")

    grid = TorusGrid(plan.dim, entries[0].inv_mesh)
    s0, i0 = plan.densities.patch_averages(grid)
    patch = solve_patch_system(grid, plan.params, plan.kernel, plan.new_law,
                               plan.initial_law, s0, i0, plan.patch_step)
    n_steps = patch.times.size - 1
    idx, probe_pos = _sample_indices(n_steps, plan.sample_count,
                                     _probe_fracs(plan))
    sample_times = patch.times[idx]
    ref_s = patch.susceptible[idx]
    ref_i = patch.infected[idx]
    ref_f = patch.force[idx]

    def errs(res):
        gap_s = np.abs(res.susceptible - ref_s).max(axis=tuple(range(1, 1 + plan.dim)))
        gap_i = np.abs(res.infected - ref_i).max(axis=tuple(range(1, 1 + plan.dim)))
        gap_f = np.abs(res.force - ref_f).max(axis=tuple(range(1, 1 + plan.dim)))
        return {"state": max(gap_s.max(), gap_i.max()),
                "force": gap_f[probe_pos]}

    report = ErrorReport("lln_fixed_eps", [])
    for k, entry in enumerate(entries):
        per_rep = _sweep(plan, k, entry, grid, sample_times, errs)
        state = [r["state"] for r in per_rep]
        force = np.array([r["force"] for r in per_rep])
        mean, stderr = _mean_stderr(state)
        rec = _entry_record(entry, plan.dim)
        rec["stats"] = [{"field": "S,I", "norm": "sup_t sup_x",
                         "mean": mean, "stderr": stderr}]
        for j, pos in enumerate(probe_pos):
            fm, fs = _mean_stderr(force[:, j])
            rec["stats"].append({"field": "F", "norm": f"sup_x at t={sample_times[pos]:g}",
                                 "mean": fm, "stderr": fs})
        rec["force_probe_mean_max"] = float(force.mean(axis=0).max())
        report.entries.append(rec)

    state_means = [e["stats"][0]["mean"] for e in report.entries]
    if len(entries) >= 2:
        report.rates["state"] = fit_decay_rate(scales, state_means)
        report.rates["force"] = fit_decay_rate(
            scales, [e["force_probe_mean_max"] for e in report.entries])
    else:
        report.notes.append("single-entry schedule; no rate fit")
    _small_sample_note(report, entries)
    report.meta = {"inv_mesh": entries[0].inv_mesh, "scales": scales,
                   "sample_times": sample_times,
                   "probe_times": sample_times[probe_pos],
                   "patch_step": plan.patch_step,
                   "master_seed": plan.master_seed}
    return report


def _reference_modes(plan: ExperimentPlan, meshes) -> int:
    """Mode count for the continuum reference: a common multiple of every
    mesh in the schedule, at least four refinements past the finest."""
    if plan.pde_modes is not None:
        return plan.pde_modes
    base = 1
    for n in meshes:
        base = math.lcm(base, n)
    if base % 2:
        base *= 2
    target = max(4 * max(meshes), 16)
    return base * math.ceil(target / base)


def _project_to_grid(grid: TorusGrid, field_values) -> np.ndarray:
    """Cell averages of one collocation-sampled continuum field."""
    return project_mode_coeffs(grid, np.fft.fftn(field_values))


def run_deterministic_eps_limit(plan: ExperimentPlan) -> ErrorReport:
    """Shrinking mesh against a fine continuum reference; no randomness."""
    entries = plan.entries
    if any(e.scale is not None for e in entries):
        raise ValidationError("deterministic schedule entries must have scale None")
    meshes = [e.inv_mesh for e in entries]
    if any(b <= a for a, b in zip(meshes, meshes[1:])):
        raise ValidationError("deterministic schedule needs strictly finer meshes")

    modes = _reference_modes(plan, meshes)
    h_ref = plan.pde_step if plan.pde_step is not None else plan.patch_step / 4.0
    pde = solve_pde_marching(plan.densities, plan.params, plan.kernel,
                             plan.new_law, plan.initial_law, modes, h_ref)

    report = ErrorReport("deterministic_eps_limit", [])
    sups = []
    for entry in entries:
        grid = TorusGrid(plan.dim, entry.inv_mesh)
        s0, i0 = plan.densities.patch_averages(grid)
        patch = solve_patch_system(grid, plan.params, plan.kernel,
                                   plan.new_law, plan.initial_law, s0, i0,
                                   plan.patch_step)
        cmp = compare_patch_to_pde(patch, pde)
        rec = _entry_record(entry, plan.dim)
        rec["stats"] = [{"field": name, "norm": "sup_t sup_x",
                         "mean": float(curve.max()), "stderr": 0.0}
                        for name, curve in cmp["per_field"].items()]
        rec["stats"].append({"field": "S,I,F", "norm": "sup_t sup_x",
                             "mean": cmp["sup"], "stderr": 0.0})
        sups.append(cmp["sup"])
        report.entries.append(rec)

    if len(entries) >= 2:
        report.rates["total"] = fit_decay_rate(meshes, sups)
    else:
        report.notes.append("single-entry schedule; no rate fit")
    report.meta = {"meshes": meshes, "pde_modes": modes, "pde_step": h_ref,
                   "patch_step": plan.patch_step,
                   "master_seed": plan.master_seed}
    return report


def run_joint_limit(plan: ExperimentPlan) -> ErrorReport:
    """Population and mesh growing together, against the continuum limit.

    Requires N * eps^d strictly increasing along the schedule.  Per
    replicate the error is sup over sampled times of the sum of the
    susceptible and infected sup-norm gaps to the projected continuum
    fields; the patch-level split of that error is recorded per entry.
    """
    entries = plan.entries
    if any(e.scale is None for e in entries):
        raise ValidationError("joint schedule entries must be stochastic")
    paces = [e.n_eps_d(plan.dim) for e in entries]
    if any(b <= a for a, b in zip(paces, paces[1:])):
        raise ValidationError(
            "joint schedule must have N * eps^d strictly increasing")

    meshes = [e.inv_mesh for e in entries]
    modes = _reference_modes(plan, meshes)
    h_ref = plan.pde_step if plan.pde_step is not None else plan.patch_step / 4.0
    ratio = plan.patch_step / h_ref
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValidationError("patch_step must be an integer multiple of pde_step")
    ratio = int(round(ratio))
    pde = solve_pde_marching(plan.densities, plan.params, plan.kernel,
                             plan.new_law, plan.initial_law, modes, h_ref)

    n_patch_steps = (pde.times.size - 1) // ratio
    idx, probe_pos = _sample_indices(n_patch_steps, plan.sample_count,
                                     _probe_fracs(plan))
    sample_times = pde.times[idx * ratio]

    report = ErrorReport("joint_limit", [])
    for k, entry in enumerate(entries):
        grid = TorusGrid(plan.dim, entry.inv_mesh)
        axes = tuple(range(1, 1 + plan.dim))
        proj_s = np.stack([_project_to_grid(grid, pde.susceptible[j])
                           for j in idx * ratio])
        proj_i = np.stack([_project_to_grid(grid, pde.infected[j])
                           for j in idx * ratio])
        proj_f = np.stack([_project_to_grid(grid, pde.force[j])
                           for j in idx * ratio])

        s0, i0 = plan.densities.patch_averages(grid)
        patch = solve_patch_system(grid, plan.params, plan.kernel,
                                   plan.new_law, plan.initial_law, s0, i0,
                                   plan.patch_step)
        patch_s = patch.susceptible[idx]
        patch_i = patch.infected[idx]
        patch_gap = float(np.maximum(
            np.abs(patch_s - proj_s).max(axis=axes),
            np.abs(patch_i - proj_i).max(axis=axes)).max())

        def errs(res):
            gs = np.abs(res.susceptible - proj_s).max(axis=axes)
            gi = np.abs(res.infected - proj_i).max(axis=axes)
            gf = np.abs(res.force - proj_f).max(axis=axes)
            ps = np.abs(res.susceptible - patch_s).max(axis=axes)
            pi = np.abs(res.infected - patch_i).max(axis=axes)
            return {"total": (gs + gi).max(), "vs_patch": (ps + pi).max(),
                    "force": gf[probe_pos]}

        per_rep = _sweep(plan, k, entry, grid, sample_times, errs)
        total = [r["total"] for r in per_rep]
        vs_patch = [r["vs_patch"] for r in per_rep]
        force = np.array([r["force"] for r in per_rep])
        mean, stderr = _mean_stderr(total)
        pmean, pstderr = _mean_stderr(vs_patch)
        rec = _entry_record(entry, plan.dim)
        rec["stats"] = [
            {"field": "S+I vs pde", "norm": "sup_t sup_x",
             "mean": mean, "stderr": stderr},
            {"field": "S+I vs patch", "norm": "sup_t sup_x",
             "mean": pmean, "stderr": pstderr},
            {"field": "patch vs pde", "norm": "sup_t sup_x",
             "mean": patch_gap, "stderr": 0.0},
        ]
        for j, pos in enumerate(probe_pos):
            fm, fs = _mean_stderr(force[:, j])
            rec["stats"].append({"field": "F vs pde",
                                 "norm": f"sup_x at t={sample_times[pos]:g}",
                                 "mean": fm, "stderr": fs})
        report.entries.append(rec)

    totals = [e["stats"][0]["mean"] for e in report.entries]
    if len(entries) >= 2:
        report.rates["total_vs_pace"] = fit_decay_rate(paces, totals)
        # heuristic split: a * (N eps^d)^(-1/2) + b * eps^2, least squares
        design = np.column_stack([np.asarray(paces, float) ** -0.5,
                                  (1.0 / np.asarray(meshes, float)) ** 2])
        coef, *_ = np.linalg.lstsq(design, np.asarray(totals), rcond=None)
        fitted = design @ coef
        resid = np.asarray(totals) - fitted
        tot = np.asarray(totals) - np.mean(totals)
        denom = float(tot @ tot)
        r2 = 1.0 - float(resid @ resid) / denom if denom > 0 else 1.0
        report.rates["composite"] = {
            "coef_sampling": float(coef[0]), "coef_mesh": float(coef[1]),
            "r_squared": r2, "reliable": bool(r2 >= 0.9)}
    else:
        report.notes.append("single-entry schedule; no rate fit")
    _small_sample_note(report, entries)
    report.meta = {"paces": paces, "pde_modes": modes, "pde_step": h_ref,
                   "patch_step": plan.patch_step,
                   "sample_times": sample_times,
                   "probe_times": sample_times[probe_pos],
                   "master_seed": plan.master_seed}
    return report


def run_f0_lemma_check(plan: ExperimentPlan) -> ErrorReport:
    """Initial-cohort infectivity against its deterministic transport.

    Infections must be disabled (zero contact bound) so the initial cohort
    is the whole story.  Per entry the statistic is the worst probe-time
    Monte Carlo mean of the squared sup-norm gap, expected to scale like
    1 / (N * eps^d).
    """
    if plan.kernel.bound != 0.0:
        raise ValidationError(
            "initial-cohort check needs a zero contact kernel (no infections)")
    entries = plan.entries
    if any(e.scale is None for e in entries):
        raise ValidationError("initial-cohort schedule entries must be stochastic")
    paces = [e.n_eps_d(plan.dim) for e in entries]
    if any(b <= a for a, b in zip(paces, paces[1:])):
        raise ValidationError(
            "initial-cohort schedule must have N * eps^d strictly increasing")

    fracs = _probe_fracs(plan)
    horizon = plan.params.horizon
    probe_times = np.unique(np.asarray([f * horizon for f in fracs]))

    report = ErrorReport("f0_lemma_check", [])
    for k, entry in enumerate(entries):
        grid = TorusGrid(plan.dim, entry.inv_mesh)
        lap_i = Laplacian(grid, plan.params.nu_i)
        _, i0 = plan.densities.patch_averages(grid)
        ref = np.stack([plan.initial_law.mean(t)
                        * TransitionKernel(lap_i, t).apply(i0)
                        for t in probe_times])
        axes = tuple(range(1, 1 + plan.dim))

        def errs(res):
            gap = np.abs(res.force_initial - ref).max(axis=axes)
            return {"sq": gap ** 2}

        per_rep = _sweep(plan, k, entry, grid, probe_times, errs)
        sq = np.array([r["sq"] for r in per_rep])
        means = sq.mean(axis=0)
        worst = int(np.argmax(means))
        _, stderr = _mean_stderr(sq[:, worst])
        rec = _entry_record(entry, plan.dim)
        rec["stats"] = [{"field": "F0 squared", "norm":
                         f"sup_x^2 at t={probe_times[worst]:g}",
                         "mean": float(means[worst]), "stderr": stderr}]
        rec["per_probe_mean"] = means
        report.entries.append(rec)

    worsts = [e["stats"][0]["mean"] for e in report.entries]
    if len(entries) >= 2:
        report.rates["squared_vs_pace"] = fit_decay_rate(paces, worsts)
    else:
        report.notes.append("single-entry schedule; no rate fit")
    _small_sample_note(report, entries)
    report.meta = {"paces": paces, "probe_times": probe_times,
                   "master_seed": plan.master_seed}
    return report
