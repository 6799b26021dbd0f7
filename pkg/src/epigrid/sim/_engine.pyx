# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event loop, a line-for-line port of ``engine_py``.

Draws raw doubles from the replicate's PCG64 and applies the exact same
floating-point expressions in the same order as the pure-Python loop, so
both backends produce bitwise identical trajectories.  The loop runs
without the GIL, which lets replicate sweeps use real threads.  Any
change in ``engine_py.run_events`` must be mirrored here.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport cos, isinf, log, pow
from numpy.random cimport bitgen_t

from ..errors import InvariantViolation

cnp.import_array()

cdef const char *CAPSULE_NAME = "BitGenerator"


cdef struct Cfg:
    double horizon, gamma, n_pow, rate_s_unit, rate_i_unit, coef_env
    double lp0, lp1, lp2, lp3, mod_base, mod_amp, mod_omega
    long law_kind, mod_kind, diag, n_initial, n_nodes, n_half, n_out


cdef struct Buf:
    long *counts_s
    int *nbr
    double *beta_diag
    double *beta_rows
    int *node
    double *tau
    double *amp
    double *brk
    double *slope
    double *endt
    int *members
    long *mem_count
    int *actives
    long *act_count
    int *active_pos
    double *env
    double *weight
    double *heap_t
    int *heap_id
    double *out_times
    long *out_s
    long *out_i
    double *out_f
    double *out_f0
    long cap


cdef struct Mut:
    long s_total, pop_total, n_roster, heap_size, out_idx
    long n_events, n_s_mig, n_i_mig, n_proposals, n_infections, n_deacts
    double env_total


cdef inline double nd(bitgen_t *bg) noexcept nogil:
    return bg.next_double(bg.state)


cdef inline double traj_value(double amp, double brk, double slope,
                              double endt, double age) noexcept nogil:
    if age < brk:
        return amp
    if age < endt:
        return amp - slope * (age - brk)
    return 0.0


cdef inline void env_set(Cfg *c, Buf *b, Mut *m, long x) noexcept nogil:
    cdef long s_x = b.counts_s[x]
    cdef double new, w, bb, bpow
    if s_x == 0:
        new = 0.0
    else:
        w = b.weight[x]
        if w <= 0.0:
            new = 0.0
        else:
            bb = <double>(s_x + b.mem_count[x])
            if c.gamma == 0.0:
                bpow = 1.0
            elif c.gamma == 1.0:
                bpow = bb
            else:
                bpow = pow(bb, c.gamma)
            new = c.coef_env * (<double>s_x) * w / (c.n_pow * bpow)
    m.env_total += new - b.env[x]
    b.env[x] = new


cdef inline void weight_add(Cfg *c, Buf *b, Mut *m, long y, long delta) noexcept nogil:
    cdef long x
    cdef double d
    if c.diag:
        b.weight[y] = b.beta_diag[y] * (<double>b.act_count[y])
        env_set(c, b, m, y)
    else:
        d = <double>delta
        for x in range(c.n_nodes):
            b.weight[x] += b.beta_rows[x * c.n_nodes + y] * d
        for x in range(c.n_nodes):
            env_set(c, b, m, x)


cdef inline double local_force(Cfg *c, Buf *b, long y, double at) noexcept nogil:
    cdef double total = 0.0
    cdef long i, j
    for i in range(b.act_count[y]):
        j = b.actives[y * b.cap + i]
        total += traj_value(b.amp[j], b.brk[j], b.slope[j], b.endt[j], at - b.tau[j])
    return total


cdef inline double upsilon(Cfg *c, Buf *b, long x, double at) noexcept nogil:
    cdef long s_x = b.counts_s[x]
    cdef double w, m_t, bb, bpow
    cdef long y
    if s_x == 0:
        return 0.0
    if c.diag:
        w = b.beta_diag[x] * local_force(c, b, x, at)
    else:
        w = 0.0
        for y in range(c.n_nodes):
            if b.act_count[y] > 0:
                w += b.beta_rows[x * c.n_nodes + y] * local_force(c, b, y, at)
    if c.mod_kind == 1:
        m_t = c.mod_base + c.mod_amp * cos(c.mod_omega * at)
    else:
        m_t = 1.0
    bb = <double>(s_x + b.mem_count[x])
    if c.gamma == 0.0:
        bpow = 1.0
    elif c.gamma == 1.0:
        bpow = bb
    else:
        bpow = pow(bb, c.gamma)
    return (<double>s_x) * m_t * w / (c.n_pow * bpow)


cdef inline void heap_push(Buf *b, Mut *m, double t_val, long j) noexcept nogil:
    cdef long i = m.heap_size
    cdef long p
    cdef double td
    cdef int jd
    m.heap_size += 1
    b.heap_t[i] = t_val
    b.heap_id[i] = <int>j
    while i > 0:
        p = (i - 1) >> 1
        if b.heap_t[p] > b.heap_t[i] or (b.heap_t[p] == b.heap_t[i]
                                         and b.heap_id[p] > b.heap_id[i]):
            td = b.heap_t[p]; b.heap_t[p] = b.heap_t[i]; b.heap_t[i] = td
            jd = b.heap_id[p]; b.heap_id[p] = b.heap_id[i]; b.heap_id[i] = jd
            i = p
        else:
            break


cdef inline long heap_pop(Buf *b, Mut *m) noexcept nogil:
    cdef long j = b.heap_id[0]
    cdef long i = 0
    cdef long l, cc, r
    cdef double td
    cdef int jd
    m.heap_size -= 1
    b.heap_t[0] = b.heap_t[m.heap_size]
    b.heap_id[0] = b.heap_id[m.heap_size]
    while True:
        l = 2 * i + 1
        if l >= m.heap_size:
            break
        cc = l
        r = l + 1
        if r < m.heap_size and (b.heap_t[r] < b.heap_t[l] or (b.heap_t[r] == b.heap_t[l]
                                                              and b.heap_id[r] < b.heap_id[l])):
            cc = r
        if b.heap_t[cc] < b.heap_t[i] or (b.heap_t[cc] == b.heap_t[i]
                                          and b.heap_id[cc] < b.heap_id[i]):
            td = b.heap_t[cc]; b.heap_t[cc] = b.heap_t[i]; b.heap_t[i] = td
            jd = b.heap_id[cc]; b.heap_id[cc] = b.heap_id[i]; b.heap_id[i] = jd
            i = cc
        else:
            break
    return j


cdef inline void deactivate(Cfg *c, Buf *b, Mut *m, long j) noexcept nogil:
    cdef long x = b.node[j]
    cdef long pos = b.active_pos[j]
    cdef long last = b.act_count[x] - 1
    cdef int moved = b.actives[x * b.cap + last]
    b.actives[x * b.cap + pos] = moved
    b.active_pos[moved] = <int>pos
    b.act_count[x] = last
    b.active_pos[j] = -1
    m.n_deacts += 1
    weight_add(c, b, m, x, -1)


cdef inline void record(Cfg *c, Buf *b, Mut *m, double at) noexcept nogil:
    cdef long x, i, j
    cdef double f, f0, v
    cdef long row = m.out_idx * c.n_nodes
    for x in range(c.n_nodes):
        b.out_s[row + x] = b.counts_s[x]
        b.out_i[row + x] = b.mem_count[x]
        f = 0.0
        f0 = 0.0
        for i in range(b.act_count[x]):
            j = b.actives[x * b.cap + i]
            v = traj_value(b.amp[j], b.brk[j], b.slope[j], b.endt[j], at - b.tau[j])
            f += v
            if j < c.n_initial:
                f0 += v
        b.out_f[row + x] = f
        b.out_f0[row + x] = f0


cdef inline void flush_below(Cfg *c, Buf *b, Mut *m, double limit) noexcept nogil:
    while m.out_idx < c.n_out and b.out_times[m.out_idx] < limit:
        record(c, b, m, b.out_times[m.out_idx])
        m.out_idx += 1


cdef long event_loop(Cfg *c, Buf *b, Mut *m, bitgen_t *bg) noexcept nogil:
    cdef double t = 0.0
    cdef double total, u, t_prop, t_deact, z, z2, z3
    cdef double rate_s_total, rate_i_total, acc, ups
    cdef double a_new, b_new, s_new, e_new, eta, p
    cdef long x, y, xx, k, idx, j, jd, last, pos, alast, fallback
    cdef int moved
    cdef long c_cnt

    while True:
        total = c.rate_s_unit * (<double>m.s_total) \
            + c.rate_i_unit * (<double>(m.pop_total - m.s_total)) + m.env_total
        if total <= 0.0:
            flush_below(c, b, m, c.horizon * (1.0 + 1e-12) + 1e-300)
            break
        u = nd(bg)
        t_prop = t + (-log(1.0 - u)) / total

        if m.heap_size > 0 and b.heap_t[0] < t_prop and b.heap_t[0] < c.horizon:
            t_deact = b.heap_t[0]
            flush_below(c, b, m, t_deact)
            t = t_deact
            jd = heap_pop(b, m)
            deactivate(c, b, m, jd)
            continue

        if t_prop >= c.horizon:
            flush_below(c, b, m, c.horizon * (1.0 + 1e-12) + 1e-300)
            t = c.horizon
            break

        flush_below(c, b, m, t_prop)
        t = t_prop

        u = nd(bg)
        z = u * total
        rate_s_total = c.rate_s_unit * (<double>m.s_total)
        rate_i_total = c.rate_i_unit * (<double>(m.pop_total - m.s_total))

        if z < rate_s_total:
            acc = 0.0
            x = -1
            fallback = -1
            for xx in range(c.n_nodes):
                c_cnt = b.counts_s[xx]
                if c_cnt > 0:
                    fallback = xx
                    acc += c.rate_s_unit * (<double>c_cnt)
                    if z < acc:
                        x = xx
                        break
            if x < 0:
                x = fallback
            u = nd(bg)
            k = <long>(u * c.n_half)
            if k >= c.n_half:
                k = c.n_half - 1
            y = b.nbr[x * c.n_half + k]
            b.counts_s[x] -= 1
            b.counts_s[y] += 1
            env_set(c, b, m, x)
            if y != x:
                env_set(c, b, m, y)
            m.n_s_mig += 1
        elif z < rate_s_total + rate_i_total:
            z2 = z - rate_s_total
            acc = 0.0
            x = -1
            fallback = -1
            for xx in range(c.n_nodes):
                c_cnt = b.mem_count[xx]
                if c_cnt > 0:
                    fallback = xx
                    acc += c.rate_i_unit * (<double>c_cnt)
                    if z2 < acc:
                        x = xx
                        break
            if x < 0:
                x = fallback
            u = nd(bg)
            k = <long>(u * c.n_half)
            if k >= c.n_half:
                k = c.n_half - 1
            y = b.nbr[x * c.n_half + k]
            u = nd(bg)
            idx = <long>(u * (<double>b.mem_count[x]))
            if idx >= b.mem_count[x]:
                idx = b.mem_count[x] - 1
            j = b.members[x * b.cap + idx]
            last = b.mem_count[x] - 1
            b.members[x * b.cap + idx] = b.members[x * b.cap + last]
            b.mem_count[x] = last
            b.members[y * b.cap + b.mem_count[y]] = <int>j
            b.mem_count[y] += 1
            b.node[j] = <int>y
            if b.active_pos[j] >= 0 and y != x:
                pos = b.active_pos[j]
                alast = b.act_count[x] - 1
                moved = b.actives[x * b.cap + alast]
                b.actives[x * b.cap + pos] = moved
                b.active_pos[moved] = <int>pos
                b.act_count[x] = alast
                b.actives[y * b.cap + b.act_count[y]] = <int>j
                b.active_pos[j] = <int>b.act_count[y]
                b.act_count[y] += 1
                if c.diag:
                    b.weight[x] = b.beta_diag[x] * (<double>b.act_count[x])
                    b.weight[y] = b.beta_diag[y] * (<double>b.act_count[y])
                else:
                    for xx in range(c.n_nodes):
                        b.weight[xx] += b.beta_rows[xx * c.n_nodes + y] \
                            - b.beta_rows[xx * c.n_nodes + x]
            if c.diag:
                env_set(c, b, m, x)
                if y != x:
                    env_set(c, b, m, y)
            else:
                for xx in range(c.n_nodes):
                    env_set(c, b, m, xx)
            m.n_i_mig += 1
        else:
            z3 = z - rate_s_total - rate_i_total
            acc = 0.0
            x = -1
            fallback = -1
            for xx in range(c.n_nodes):
                if b.env[xx] > 0.0:
                    fallback = xx
                    acc += b.env[xx]
                    if z3 < acc:
                        x = xx
                        break
            if x < 0:
                x = fallback
            if x < 0:
                m.n_events += 1
                continue
            m.n_proposals += 1
            ups = upsilon(c, b, x, t)
            u = nd(bg)
            if u * b.env[x] <= ups:
                if c.law_kind == 0:
                    a_new = c.lp0; b_new = c.lp1; s_new = 0.0; e_new = c.lp1
                elif c.law_kind == 1:
                    u = nd(bg)
                    eta = -log(1.0 - u) / c.lp1
                    a_new = c.lp0; b_new = eta; s_new = 0.0; e_new = eta
                else:
                    u = nd(bg)
                    p = c.lp1 + u * (c.lp2 - c.lp1)
                    a_new = c.lp0; b_new = p; s_new = c.lp0 / c.lp3; e_new = p + c.lp3
                j = m.n_roster
                m.n_roster += 1
                b.node[j] = <int>x
                b.tau[j] = t
                b.amp[j] = a_new
                b.brk[j] = b_new
                b.slope[j] = s_new
                b.endt[j] = e_new
                b.counts_s[x] -= 1
                m.s_total -= 1
                b.members[x * b.cap + b.mem_count[x]] = <int>j
                b.mem_count[x] += 1
                if e_new > 0.0:
                    b.actives[x * b.cap + b.act_count[x]] = <int>j
                    b.active_pos[j] = <int>b.act_count[x]
                    b.act_count[x] += 1
                    if not isinf(e_new):
                        heap_push(b, m, t + e_new, j)
                    weight_add(c, b, m, x, 1)
                else:
                    b.active_pos[j] = -1
                    env_set(c, b, m, x)
                m.n_infections += 1

        m.n_events += 1
        if m.s_total + m.n_roster != m.pop_total:
            return 1
    return 0


def run_events(state, bit_generator):
    """Advance a SimState to its horizon using the compiled loop."""
    cdef Cfg c
    cdef Buf b
    cdef Mut m
    cdef bitgen_t *bg = <bitgen_t *>PyCapsule_GetPointer(
        bit_generator.capsule, CAPSULE_NAME)

    arrays = (state.counts_s, state.nbr, state.beta_diag, state.beta_rows,
              state.node, state.tau, state.amp, state.brk, state.slope,
              state.endt, state.members, state.mem_count, state.actives,
              state.act_count, state.active_pos, state.env, state.weight,
              state.heap_t, state.heap_id, state.out_times, state.out_s,
              state.out_i, state.out_f, state.out_f0)
    for a in arrays:
        if not a.flags.c_contiguous:
            raise ValueError("engine state arrays must be C-contiguous")

    c.horizon = state.horizon
    c.gamma = state.gamma
    c.n_pow = state.n_pow
    c.rate_s_unit = state.rate_s_unit
    c.rate_i_unit = state.rate_i_unit
    c.coef_env = state.lam_env * state.mod_max
    c.lp0 = state.law_params[0]
    c.lp1 = state.law_params[1]
    c.lp2 = state.law_params[2]
    c.lp3 = state.law_params[3]
    c.mod_base = state.mod_base
    c.mod_amp = state.mod_amp
    c.mod_omega = state.mod_omega
    c.law_kind = state.law_kind
    c.mod_kind = state.mod_kind
    c.diag = 1 if state.diag_kernel else 0
    c.n_initial = state.n_initial
    c.n_nodes = state.env.shape[0]
    c.n_half = state.nbr.shape[1]
    c.n_out = state.out_times.shape[0]

    b.counts_s = <long *>cnp.PyArray_DATA(state.counts_s)
    b.nbr = <int *>cnp.PyArray_DATA(state.nbr)
    b.beta_diag = <double *>cnp.PyArray_DATA(state.beta_diag)
    b.beta_rows = <double *>cnp.PyArray_DATA(state.beta_rows)
    b.node = <int *>cnp.PyArray_DATA(state.node)
    b.tau = <double *>cnp.PyArray_DATA(state.tau)
    b.amp = <double *>cnp.PyArray_DATA(state.amp)
    b.brk = <double *>cnp.PyArray_DATA(state.brk)
    b.slope = <double *>cnp.PyArray_DATA(state.slope)
    b.endt = <double *>cnp.PyArray_DATA(state.endt)
    b.members = <int *>cnp.PyArray_DATA(state.members)
    b.mem_count = <long *>cnp.PyArray_DATA(state.mem_count)
    b.actives = <int *>cnp.PyArray_DATA(state.actives)
    b.act_count = <long *>cnp.PyArray_DATA(state.act_count)
    b.active_pos = <int *>cnp.PyArray_DATA(state.active_pos)
    b.env = <double *>cnp.PyArray_DATA(state.env)
    b.weight = <double *>cnp.PyArray_DATA(state.weight)
    b.heap_t = <double *>cnp.PyArray_DATA(state.heap_t)
    b.heap_id = <int *>cnp.PyArray_DATA(state.heap_id)
    b.out_times = <double *>cnp.PyArray_DATA(state.out_times)
    b.out_s = <long *>cnp.PyArray_DATA(state.out_s)
    b.out_i = <long *>cnp.PyArray_DATA(state.out_i)
    b.out_f = <double *>cnp.PyArray_DATA(state.out_f)
    b.out_f0 = <double *>cnp.PyArray_DATA(state.out_f0)
    b.cap = state.members.shape[1]

    m.s_total = state.s_total
    m.pop_total = state.pop_total
    m.n_roster = state.n_roster
    m.heap_size = state.heap_size
    m.out_idx = state.out_idx
    m.n_events = state.n_events
    m.n_s_mig = state.n_s_mig
    m.n_i_mig = state.n_i_mig
    m.n_proposals = state.n_proposals
    m.n_infections = state.n_infections
    m.n_deacts = state.n_deacts
    m.env_total = state.env_total

    cdef long status
    with nogil:
        status = event_loop(&c, &b, &m, bg)

    state.s_total = int(m.s_total)
    state.n_roster = int(m.n_roster)
    state.heap_size = int(m.heap_size)
    state.out_idx = int(m.out_idx)
    state.n_events = int(m.n_events)
    state.n_s_mig = int(m.n_s_mig)
    state.n_i_mig = int(m.n_i_mig)
    state.n_proposals = int(m.n_proposals)
    state.n_infections = int(m.n_infections)
    state.n_deacts = int(m.n_deacts)
    state.env_total = float(m.env_total)

    if status == 1:
        raise InvariantViolation(
            f"population not conserved: S={state.s_total} "
            f"roster={state.n_roster} expected total {state.pop_total}")
    return state.stats()
