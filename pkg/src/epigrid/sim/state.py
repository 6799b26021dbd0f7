"""Mutable state shared between the event-loop backends.

The driver assembles one :class:`SimState` per replicate; an engine then
advances it in place.  Infected individuals live in a flat roster indexed
by id (initial cohort first, then new infections in order).  Per-node
membership uses fixed-capacity arrays with swap-removal, and the subset
still emitting infectivity ("active") is tracked separately together with
a binary heap of deactivation times.  Everything an engine touches is a
numpy array or a float/int scalar so the compiled backend can run without
the GIL.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SimState:
    # static configuration
    horizon: float
    n_scale: float            # the N of the population N * n^d
    gamma: float
    n_pow: float              # N^(1 - gamma), precomputed
    rate_s_unit: float        # per-individual total migration rate, S walk
    rate_i_unit: float        # same for the I walk
    lam_env: float            # upper bound on any trajectory value
    mod_max: float            # sup of the time modulation
    law_kind: int             # trajectory family of new infections
    law_params: np.ndarray    # (4,) family parameters
    mod_kind: int             # 0 none, 1 cosine
    mod_base: float
    mod_amp: float
    mod_omega: float          # 2 pi / period
    diag_kernel: bool
    n_initial: int            # ids below this belong to the initial cohort

    # geometry and kernel
    nbr: np.ndarray           # (M, 2d) int32 neighbor table
    beta_diag: np.ndarray     # (M,) diagonal kernel masses (diag path)
    beta_rows: np.ndarray     # (M, M) kernel masses (general path)

    # population counts
    counts_s: np.ndarray      # (M,) int64
    s_total: int
    pop_total: int

    # roster (capacity = total population)
    node: np.ndarray          # (cap,) int32 current node per infected id
    tau: np.ndarray           # (cap,) float64 infection time
    amp: np.ndarray           # (cap,) float64 trajectory parameters
    brk: np.ndarray
    slope: np.ndarray
    endt: np.ndarray
    n_roster: int

    # per-node member and active lists
    members: np.ndarray       # (M, cap) int32
    mem_count: np.ndarray     # (M,) int64
    actives: np.ndarray       # (M, cap) int32
    act_count: np.ndarray     # (M,) int64
    active_pos: np.ndarray    # (cap,) int32, -1 when inactive

    # thinning envelope
    env: np.ndarray           # (M,) float64
    env_total: float
    weight: np.ndarray        # (M,) float64, kernel-weighted active counts

    # deactivation heap
    heap_t: np.ndarray        # (cap,) float64
    heap_id: np.ndarray       # (cap,) int32
    heap_size: int

    # output sampling
    out_times: np.ndarray     # (n_out,) ascending, all <= horizon
    out_s: np.ndarray         # (n_out, M) int64
    out_i: np.ndarray
    out_f: np.ndarray         # (n_out, M) float64 raw infectivity sums
    out_f0: np.ndarray        # same, initial cohort only
    out_idx: int = 0

    # counters
    n_events: int = 0
    n_s_mig: int = 0
    n_i_mig: int = 0
    n_proposals: int = 0
    n_infections: int = 0
    n_deacts: int = 0

    def stats(self) -> dict:
        return {
            "events": self.n_events,
            "s_migrations": self.n_s_mig,
            "i_migrations": self.n_i_mig,
            "proposals": self.n_proposals,
            "infections": self.n_infections,
            "rejections": self.n_proposals - self.n_infections,
            "deactivations": self.n_deacts,
            "final_susceptible": self.s_total,
            "roster": self.n_roster,
        }
