"""Replicate setup and backend dispatch for the stochastic model.

A replicate is fully determined by (model objects, scale, seed): the seed
feeds a PCG64 stream used first for the initial placement and the initial
cohort's infectivity draws, then handed to the event loop.  The compiled
and pure-Python loops consume that stream identically, so the backend
choice never changes results, only speed.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, PCG64, SeedSequence

from ..contact import validate_rows
from ..errors import ValidationError
from ..grid import TorusGrid
from ..model import ModelParams, build_initial_condition
from . import engine_py
from .state import SimState

try:
    from . import _engine
    HAVE_COMPILED = True
except ImportError:          # pure-Python fallback still provides everything
    _engine = None
    HAVE_COMPILED = False


def active_backend(name: str | None = None) -> str:
    """Resolve a backend request to 'compiled' or 'python'."""
    if name in (None, "auto"):
        if os.environ.get("EPIGRID_PURE_PY"):
            return "python"
        return "compiled" if HAVE_COMPILED else "python"
    if name == "compiled":
        if not HAVE_COMPILED:
            raise ValidationError("compiled backend requested but not built")
        return name
    if name == "python":
        return name
    raise ValidationError(f"unknown backend {name!r}")


def heap_seed(heap_t, heap_id, size, t_val, j) -> int:
    """Push one entry onto the deactivation heap (driver-side setup)."""
    i = size
    heap_t[i] = t_val
    heap_id[i] = j
    while i > 0:
        p = (i - 1) >> 1
        if heap_t[p] > heap_t[i] or (heap_t[p] == heap_t[i] and heap_id[p] > heap_id[i]):
            heap_t[p], heap_t[i] = heap_t[i], heap_t[p]
            heap_id[p], heap_id[i] = heap_id[i], heap_id[p]
            i = p
        else:
            break
    return size + 1


def prepare_state(grid: TorusGrid, params: ModelParams, kernel, new_law,
                  initial_law, ic, sample_times, rng: Generator) -> SimState:
    """Build engine state; consumes rng draws for the initial cohort."""
    sample_times = np.asarray(sample_times, dtype=float)
    if sample_times.size and (np.any(np.diff(sample_times) <= 0)
                              or sample_times[0] < 0
                              or sample_times[-1] > params.horizon):
        raise ValidationError("sample times must be increasing within [0, horizon]")

    m_nodes = grid.n_nodes
    pop = ic.total_population
    law_kind, law_params = new_law.engine_code()
    initial_law.engine_code()   # engine families only; raises otherwise
    mod_kind, mod_params = kernel.mod_engine_code()
    rows = validate_rows(kernel, grid)
    diag = bool(np.array_equal(rows, np.diag(np.diag(rows))))

    counts_s = np.ascontiguousarray(ic.counts_s.ravel(), dtype=np.int64).copy()
    n_init = int(ic.infected_nodes.size)
    cap = pop
    node = np.zeros(cap, np.int32)
    tau = np.zeros(cap)
    amp = np.zeros(cap)
    brk = np.zeros(cap)
    slope = np.zeros(cap)
    endt = np.zeros(cap)
    members = np.zeros((m_nodes, cap), np.int32)
    mem_count = np.zeros(m_nodes, np.int64)
    actives = np.zeros((m_nodes, cap), np.int32)
    act_count = np.zeros(m_nodes, np.int64)
    active_pos = np.full(cap, -1, np.int32)
    heap_t = np.zeros(cap)
    heap_id = np.zeros(cap, np.int32)
    heap_size = 0

    for j in range(n_init):
        x = int(ic.infected_nodes[j])
        tr = initial_law.sample(rng)
        node[j] = x
        tau[j] = 0.0
        amp[j] = tr.amp
        brk[j] = tr.plateau_end
        slope[j] = tr.slope
        endt[j] = tr.end
        members[x, mem_count[x]] = j
        mem_count[x] += 1
        if tr.end > 0.0:
            actives[x, act_count[x]] = j
            active_pos[j] = act_count[x]
            act_count[x] += 1
            if not math.isinf(tr.end):
                heap_size = heap_seed(heap_t, heap_id, heap_size, tr.end, j)

    if diag:
        beta_diag = np.ascontiguousarray(np.diag(rows))
        weight = beta_diag * act_count.astype(float)
    else:
        beta_diag = np.zeros(m_nodes)
        weight = rows @ act_count.astype(float)

    n = grid.inv_mesh
    state = SimState(
        horizon=params.horizon,
        n_scale=float(ic.scale),
        gamma=params.gamma,
        n_pow=float(ic.scale) ** (1.0 - params.gamma),
        rate_s_unit=2.0 * grid.dim * params.nu_s * n * n if n > 1 else 0.0,
        rate_i_unit=2.0 * grid.dim * params.nu_i * n * n if n > 1 else 0.0,
        lam_env=max(new_law.bound, initial_law.bound),
        mod_max=kernel.mod_max(),
        law_kind=law_kind,
        law_params=np.asarray(law_params, dtype=float),
        mod_kind=mod_kind,
        mod_base=float(mod_params[0]),
        mod_amp=float(mod_params[1]),
        mod_omega=2.0 * math.pi / mod_params[2] if mod_kind == 1 else 0.0,
        diag_kernel=diag,
        n_initial=n_init,
        nbr=grid.neighbor_table(),
        beta_diag=beta_diag,
        beta_rows=np.ascontiguousarray(rows),
        counts_s=counts_s,
        s_total=int(counts_s.sum()),
        pop_total=pop,
        node=node, tau=tau, amp=amp, brk=brk, slope=slope, endt=endt,
        n_roster=n_init,
        members=members, mem_count=mem_count,
        actives=actives, act_count=act_count, active_pos=active_pos,
        env=np.zeros(m_nodes), env_total=0.0, weight=weight,
        heap_t=heap_t, heap_id=heap_id, heap_size=heap_size,
        out_times=sample_times,
        out_s=np.zeros((sample_times.size, m_nodes), np.int64),
        out_i=np.zeros((sample_times.size, m_nodes), np.int64),
        out_f=np.zeros((sample_times.size, m_nodes)),
        out_f0=np.zeros((sample_times.size, m_nodes)),
    )
    engine_py.refresh_env_all(state)
    return state


@dataclass
class SimResult:
    """One replicate, with count fields normalized by the scale N."""

    times: np.ndarray
    susceptible: np.ndarray    # (n_out,) + grid.shape
    infected: np.ndarray
    force: np.ndarray          # aggregate infectivity per node, over N
    force_initial: np.ndarray  # contribution of the initial cohort
    stats: dict
    events: list | None
    state: SimState
    grid: TorusGrid


def run_replicate(grid: TorusGrid, params: ModelParams, kernel, new_law,
                  initial_law, densities, scale: int, seed, sample_times,
                  backend: str | None = None,
                  record_events: bool = False) -> SimResult:
    """Simulate one replicate; deterministic in (inputs, seed)."""
    seq = seed if isinstance(seed, SeedSequence) else SeedSequence(seed)
    bitgen = PCG64(seq)
    rng = Generator(bitgen)
    ic = build_initial_condition(densities, grid, scale, rng)
    state = prepare_state(grid, params, kernel, new_law, initial_law, ic,
                          sample_times, rng)
    name = active_backend(backend)
    events = [] if record_events else None
    if name == "compiled" and events is None:
        _engine.run_events(state, bitgen)
    else:
        # the event log needs Python-object traffic, so it always uses the
        # reference loop; backends agree bitwise, nothing changes but speed
        engine_py.run_events(state, rng.random, events)

    shape = (state.out_times.size,) + grid.shape
    inv = 1.0 / scale
    return SimResult(
        times=state.out_times.copy(),
        susceptible=state.out_s.astype(float).reshape(shape) * inv,
        infected=state.out_i.astype(float).reshape(shape) * inv,
        force=state.out_f.reshape(shape) * inv,
        force_initial=state.out_f0.reshape(shape) * inv,
        stats=state.stats(),
        events=events,
        state=state,
        grid=grid,
    )


def infection_pressure(state: SimState, t: float):
    """Per-node pressure and intensity fields at time t, vectorized.

    Independent of the engines' scalar arithmetic; used as a cross-check.
    Returns (pressure, intensity): pressure is the kernel-weighted, crowding-
    normalized force and intensity = S * pressure is the infection rate.
    """
    m_nodes = state.env.shape[0]
    f_loc = np.zeros(m_nodes)
    for x in range(m_nodes):
        k = int(state.act_count[x])
        if k == 0:
            continue
        ids = state.actives[x, :k]
        age = t - state.tau[ids]
        on_plateau = age < state.brk[ids]
        on_ramp = (~on_plateau) & (age < state.endt[ids])
        excess = np.maximum(age - state.brk[ids], 0.0)
        vals = np.where(on_plateau, state.amp[ids],
                        np.where(on_ramp,
                                 state.amp[ids] - state.slope[ids] * excess,
                                 0.0))
        f_loc[x] = vals.sum()
    if state.diag_kernel:
        weighted = state.beta_diag * f_loc
    else:
        weighted = state.beta_rows @ f_loc
    if state.mod_kind == 1:
        m_t = state.mod_base + state.mod_amp * math.cos(state.mod_omega * t)
    else:
        m_t = 1.0
    b = (state.counts_s + state.mem_count).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        bpow = np.power(b, state.gamma)
        pressure = np.where(b > 0, m_t * weighted / (state.n_pow * bpow), 0.0)
    intensity = state.counts_s * pressure
    return pressure, intensity
