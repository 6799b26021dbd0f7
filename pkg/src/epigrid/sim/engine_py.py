"""Pure-Python event loop, the reference backend.

The compiled backend in ``_engine.pyx`` is a line-for-line port of this
module.  Both consume the same raw uniform stream (one ``random()`` call
of the replicate generator per draw) and use the same floating-point
expressions in the same order, so given one seed they produce bitwise
identical trajectories.  Any change here must be mirrored there.

Event selection is classical thinning: between structure changes every
node x carries a constant envelope

    env[x] = lam_env * mod_max * S[x] * W[x] / (N^(1-gamma) * B[x]^gamma)

with W[x] the kernel-weighted count of active infecteds, which dominates
the true infection intensity at x for all later times until the structure
changes.  Waiting times race the two migration groups against the summed
envelopes; envelope proposals are accepted with probability equal to the
exact intensity over the envelope.  Deactivations (trajectories hitting
zero) are deterministic times kept in a heap; when one precedes the
sampled event time the clock advances there and the wait is resampled,
which is exact by memorylessness.
"""
from __future__ import annotations

import math

from ..errors import InvariantViolation
from .state import SimState


def traj_value(amp, brk, slope, endt, age):
    """Infectivity of one roster entry at the given nonnegative age."""
    if age < brk:
        return amp
    if age < endt:
        return amp - slope * (age - brk)
    return 0.0


def node_env(state: SimState, counts_s, mem_count, weight, x) -> float:
    """Thinning envelope of node x from the current counts."""
    s_x = counts_s[x]
    if s_x == 0:
        return 0.0
    w = weight[x]
    if w <= 0.0:
        return 0.0
    b = float(s_x + mem_count[x])
    g = state.gamma
    if g == 0.0:
        bpow = 1.0
    elif g == 1.0:
        bpow = b
    else:
        bpow = math.pow(b, g)
    return state.lam_env * state.mod_max * float(s_x) * w / (state.n_pow * bpow)


def refresh_env_all(state: SimState):
    """Recompute every envelope and the running total (driver + fallback)."""
    counts_s, mem_count, weight, env = (state.counts_s, state.mem_count,
                                        state.weight, state.env)
    total = 0.0
    for x in range(env.shape[0]):
        env[x] = node_env(state, counts_s, mem_count, weight, x)
        total += env[x]
    state.env_total = total


def run_events(state: SimState, uniform, event_log=None):
    """Advance the state to the horizon.

    ``uniform`` is a zero-argument callable returning one double in
    [0, 1) from the replicate stream.  ``event_log``, when given, is a
    list collecting (time, kind, node, other) tuples.
    """
    # local bindings for speed; every array is mutated in place
    counts_s = state.counts_s
    nbr = state.nbr
    n_half = nbr.shape[1]
    beta_diag = state.beta_diag
    beta_rows = state.beta_rows
    node = state.node
    tau = state.tau
    amp = state.amp
    brk = state.brk
    slope = state.slope
    endt = state.endt
    members = state.members
    mem_count = state.mem_count
    actives = state.actives
    act_count = state.act_count
    active_pos = state.active_pos
    env = state.env
    weight = state.weight
    heap_t = state.heap_t
    heap_id = state.heap_id
    out_times = state.out_times
    out_s = state.out_s
    out_i = state.out_i
    out_f = state.out_f
    out_f0 = state.out_f0
    n_nodes = env.shape[0]
    n_out = out_times.shape[0]

    horizon = state.horizon
    gamma = state.gamma
    n_pow = state.n_pow
    rate_s_unit = state.rate_s_unit
    rate_i_unit = state.rate_i_unit
    lam_env = state.lam_env
    mod_max = state.mod_max
    coef_env = lam_env * mod_max
    law_kind = state.law_kind
    lp0 = float(state.law_params[0])
    lp1 = float(state.law_params[1])
    lp2 = float(state.law_params[2])
    lp3 = float(state.law_params[3])
    mod_kind = state.mod_kind
    mod_base = state.mod_base
    mod_amp = state.mod_amp
    mod_omega = state.mod_omega
    diag = state.diag_kernel
    n_initial = state.n_initial

    s_total = state.s_total
    pop_total = state.pop_total
    n_roster = state.n_roster
    heap_size = state.heap_size
    env_total = state.env_total
    out_idx = state.out_idx
    n_events = state.n_events
    n_s_mig = state.n_s_mig
    n_i_mig = state.n_i_mig
    n_proposals = state.n_proposals
    n_infections = state.n_infections
    n_deacts = state.n_deacts

    def env_set(x):
        nonlocal env_total
        s_x = counts_s[x]
        if s_x == 0:
            new = 0.0
        else:
            w = weight[x]
            if w <= 0.0:
                new = 0.0
            else:
                b = float(s_x + mem_count[x])
                if gamma == 0.0:
                    bpow = 1.0
                elif gamma == 1.0:
                    bpow = b
                else:
                    bpow = math.pow(b, gamma)
                new = coef_env * float(s_x) * w / (n_pow * bpow)
        env_total += new - env[x]
        env[x] = new

    def weight_add(y, delta):
        # active count at node y changed by delta (+-1)
        if diag:
            weight[y] = beta_diag[y] * float(act_count[y])
            env_set(y)
        else:
            d = float(delta)
            for x in range(n_nodes):
                weight[x] += beta_rows[x, y] * d
            for x in range(n_nodes):
                env_set(x)

    def local_force(y, at):
        total = 0.0
        for i in range(act_count[y]):
            j = actives[y, i]
            total += traj_value(amp[j], brk[j], slope[j], endt[j], at - tau[j])
        return total

    def upsilon(x, at):
        s_x = counts_s[x]
        if s_x == 0:
            return 0.0
        if diag:
            w = beta_diag[x] * local_force(x, at)
        else:
            w = 0.0
            for y in range(n_nodes):
                if act_count[y] > 0:
                    w += beta_rows[x, y] * local_force(y, at)
        if mod_kind == 1:
            m_t = mod_base + mod_amp * math.cos(mod_omega * at)
        else:
            m_t = 1.0
        b = float(s_x + mem_count[x])
        if gamma == 0.0:
            bpow = 1.0
        elif gamma == 1.0:
            bpow = b
        else:
            bpow = math.pow(b, gamma)
        return float(s_x) * m_t * w / (n_pow * bpow)

    def heap_push(t_val, j):
        nonlocal heap_size
        i = heap_size
        heap_size += 1
        heap_t[i] = t_val
        heap_id[i] = j
        while i > 0:
            p = (i - 1) >> 1
            if heap_t[p] > heap_t[i] or (heap_t[p] == heap_t[i]
                                         and heap_id[p] > heap_id[i]):
                heap_t[p], heap_t[i] = heap_t[i], heap_t[p]
                heap_id[p], heap_id[i] = heap_id[i], heap_id[p]
                i = p
            else:
                break

    def heap_pop():
        nonlocal heap_size
        j = heap_id[0]
        heap_size -= 1
        heap_t[0] = heap_t[heap_size]
        heap_id[0] = heap_id[heap_size]
        i = 0
        while True:
            l = 2 * i + 1
            if l >= heap_size:
                break
            c = l
            r = l + 1
            if r < heap_size and (heap_t[r] < heap_t[l] or (heap_t[r] == heap_t[l]
                                                            and heap_id[r] < heap_id[l])):
                c = r
            if heap_t[c] < heap_t[i] or (heap_t[c] == heap_t[i]
                                         and heap_id[c] < heap_id[i]):
                heap_t[c], heap_t[i] = heap_t[i], heap_t[c]
                heap_id[c], heap_id[i] = heap_id[i], heap_id[c]
                i = c
            else:
                break
        return j

    def deactivate(j):
        nonlocal n_deacts
        x = node[j]
        pos = active_pos[j]
        last = act_count[x] - 1
        moved = actives[x, last]
        actives[x, pos] = moved
        active_pos[moved] = pos
        act_count[x] = last
        active_pos[j] = -1
        n_deacts += 1
        weight_add(x, -1)

    def record(at):
        for x in range(n_nodes):
            out_s[out_idx, x] = counts_s[x]
            out_i[out_idx, x] = mem_count[x]
            f = 0.0
            f0 = 0.0
            for i in range(act_count[x]):
                j = actives[x, i]
                v = traj_value(amp[j], brk[j], slope[j], endt[j], at - tau[j])
                f += v
                if j < n_initial:
                    f0 += v
            out_f[out_idx, x] = f
            out_f0[out_idx, x] = f0

    def flush_below(limit):
        nonlocal out_idx
        while out_idx < n_out and out_times[out_idx] < limit:
            record(out_times[out_idx])
            out_idx += 1

    t = 0.0
    while True:
        total = rate_s_unit * float(s_total) + rate_i_unit * float(pop_total - s_total) \
            + env_total
        if total <= 0.0:
            # nothing left that can change counts; deactivations alone
            # do not affect recorded fields (trajectories self-expire)
            flush_below(horizon * (1.0 + 1e-12) + 1e-300)
            break
        u = uniform()
        t_prop = t + (-math.log(1.0 - u)) / total

        if heap_size > 0 and heap_t[0] < t_prop and heap_t[0] < horizon:
            t_deact = heap_t[0]
            flush_below(t_deact)
            t = t_deact
            jd = heap_pop()
            deactivate(jd)
            if event_log is not None:
                event_log.append((t, "deactivate", int(node[jd]), -1))
            continue

        if t_prop >= horizon:
            flush_below(horizon * (1.0 + 1e-12) + 1e-300)
            t = horizon
            break

        flush_below(t_prop)
        t = t_prop

        u = uniform()
        z = u * total
        rate_s_total = rate_s_unit * float(s_total)
        rate_i_total = rate_i_unit * float(pop_total - s_total)

        if z < rate_s_total:
            # susceptible migration; locate the source node
            acc = 0.0
            x = -1
            fallback = -1
            for xx in range(n_nodes):
                c = counts_s[xx]
                if c > 0:
                    fallback = xx
                    acc += rate_s_unit * float(c)
                    if z < acc:
                        x = xx
                        break
            if x < 0:
                x = fallback
            u = uniform()
            k = int(u * n_half)
            if k >= n_half:
                k = n_half - 1
            y = nbr[x, k]
            counts_s[x] -= 1
            counts_s[y] += 1
            env_set(x)
            if y != x:
                env_set(y)
            n_s_mig += 1
            if event_log is not None:
                event_log.append((t, "migrate_s", int(x), int(y)))
        elif z < rate_s_total + rate_i_total:
            z2 = z - rate_s_total
            acc = 0.0
            x = -1
            fallback = -1
            for xx in range(n_nodes):
                c = mem_count[xx]
                if c > 0:
                    fallback = xx
                    acc += rate_i_unit * float(c)
                    if z2 < acc:
                        x = xx
                        break
            if x < 0:
                x = fallback
            u = uniform()
            k = int(u * n_half)
            if k >= n_half:
                k = n_half - 1
            y = nbr[x, k]
            u = uniform()
            idx = int(u * mem_count[x])
            if idx >= mem_count[x]:
                idx = mem_count[x] - 1
            j = members[x, idx]
            last = mem_count[x] - 1
            members[x, idx] = members[x, last]
            mem_count[x] = last
            members[y, mem_count[y]] = j
            mem_count[y] += 1
            node[j] = y
            if active_pos[j] >= 0 and y != x:
                pos = active_pos[j]
                alast = act_count[x] - 1
                moved = actives[x, alast]
                actives[x, pos] = moved
                active_pos[moved] = pos
                act_count[x] = alast
                actives[y, act_count[y]] = j
                active_pos[j] = act_count[y]
                act_count[y] += 1
                if diag:
                    weight[x] = beta_diag[x] * float(act_count[x])
                    weight[y] = beta_diag[y] * float(act_count[y])
                else:
                    for xx in range(n_nodes):
                        weight[xx] += beta_rows[xx, y] - beta_rows[xx, x]
            if diag:
                env_set(x)
                if y != x:
                    env_set(y)
            else:
                for xx in range(n_nodes):
                    env_set(xx)
            n_i_mig += 1
            if event_log is not None:
                event_log.append((t, "migrate_i", int(x), int(y)))
        else:
            z3 = z - rate_s_total - rate_i_total
            acc = 0.0
            x = -1
            fallback = -1
            for xx in range(n_nodes):
                e = env[xx]
                if e > 0.0:
                    fallback = xx
                    acc += e
                    if z3 < acc:
                        x = xx
                        break
            if x < 0:
                x = fallback
            if x < 0:
                # envelope drifted to numerical dust; nothing to propose
                n_events += 1
                continue
            n_proposals += 1
            ups = upsilon(x, t)
            u = uniform()
            if u * env[x] <= ups:
                # accepted: infect one susceptible at x
                if law_kind == 0:
                    a_new, b_new, s_new, e_new = lp0, lp1, 0.0, lp1
                elif law_kind == 1:
                    u = uniform()
                    eta = -math.log(1.0 - u) / lp1
                    a_new, b_new, s_new, e_new = lp0, eta, 0.0, eta
                else:
                    u = uniform()
                    p = lp1 + u * (lp2 - lp1)
                    a_new, b_new, s_new, e_new = lp0, p, lp0 / lp3, p + lp3
                j = n_roster
                n_roster += 1
                node[j] = x
                tau[j] = t
                amp[j] = a_new
                brk[j] = b_new
                slope[j] = s_new
                endt[j] = e_new
                counts_s[x] -= 1
                s_total -= 1
                members[x, mem_count[x]] = j
                mem_count[x] += 1
                if e_new > 0.0:
                    actives[x, act_count[x]] = j
                    active_pos[j] = act_count[x]
                    act_count[x] += 1
                    if not math.isinf(e_new):
                        heap_push(t + e_new, j)
                    weight_add(x, 1)
                else:
                    active_pos[j] = -1
                    env_set(x)
                n_infections += 1
                if event_log is not None:
                    event_log.append((t, "infect", int(x), -1))
            else:
                if event_log is not None:
                    event_log.append((t, "reject", int(x), -1))

        n_events += 1
        if s_total + n_roster != pop_total:
            raise InvariantViolation(
                f"population not conserved: S={s_total} roster={n_roster} "
                f"expected total {pop_total}")

    state.s_total = s_total
    state.n_roster = n_roster
    state.heap_size = heap_size
    state.env_total = env_total
    state.out_idx = out_idx
    state.n_events = n_events
    state.n_s_mig = n_s_mig
    state.n_i_mig = n_i_mig
    state.n_proposals = n_proposals
    state.n_infections = n_infections
    state.n_deacts = n_deacts
    return state.stats()
