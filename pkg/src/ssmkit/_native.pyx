# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of _purekernels (same arithmetic, per-run C loops)."""

from libc.math cimport exp, floor, ldexp, pow, sqrt, INFINITY

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "native"

cdef double LOG_WEIGHT_CUTOFF = 34.5

cdef double _LOG2E = 1.4426950408889634
cdef double _LN2 = 0.6931471805599453


cdef union _f64bits:
    double d
    unsigned long long u


cdef inline double fast_exp(double x) nogil:
    # Branchless exp for x in (-50, 0]: split off the power of two, then a
    # degree-11 Taylor on |y| <= ln(2)/2.  Relative error ~1e-13, an order of
    # magnitude faster than libm in the kernel-weight loops.
    cdef double k = floor(x * _LOG2E + 0.5)
    cdef double y = x - k * _LN2
    cdef double p = 2.505210838544172e-08         # 1/11!
    p = p * y + 2.755731922398589e-07             # 1/10!
    p = p * y + 2.755731922398589e-06             # 1/9!
    p = p * y + 2.48015873015873e-05              # 1/8!
    p = p * y + 1.984126984126984e-04             # 1/7!
    p = p * y + 1.388888888888889e-03             # 1/6!
    p = p * y + 8.333333333333333e-03             # 1/5!
    p = p * y + 4.166666666666666e-02             # 1/4!
    p = p * y + 0.16666666666666666               # 1/3!
    p = p * y + 0.5
    p = p * y + 1.0
    p = p * y + 1.0
    cdef _f64bits two_k
    two_k.u = (<unsigned long long> (1023 + <long long> k)) << 52
    return p * two_k.d


def simulate_ws_batch(double dv, double ttc, double[::1] t_react,
                      double[::1] madr, double dt):
    cdef Py_ssize_t n = t_react.shape[0]
    out = np.empty(n)
    cdef double[::1] w = out
    cdef Py_ssize_t j, step
    cdef double gap, r, t, new_gap, new_r, free, brake, brake_dist, dist, impact, m
    with nogil:
        for j in range(n):
            gap = dv * ttc
            r = dv
            m = madr[j]
            step = 0
            while True:
                t = step * dt
                free = t_react[j] - t
                if free < 0.0:
                    free = 0.0
                elif free > dt:
                    free = dt
                brake = dt - free
                new_r = r - m * brake
                if new_r < 0.0:
                    new_r = 0.0
                    brake_dist = r * r / (2.0 * m)
                else:
                    brake_dist = r * brake - 0.5 * m * brake * brake
                dist = r * free + brake_dist
                new_gap = gap - dist
                if new_gap <= 0.0:
                    if r * free >= gap:
                        impact = r
                    else:
                        impact = r * r - 2.0 * m * (gap - r * free)
                        impact = sqrt(impact) if impact > 0.0 else 0.0
                    w[j] = -impact
                    break
                if new_gap >= gap:
                    w[j] = gap
                    break
                gap = new_gap
                r = new_r
                step += 1
    return out


def simulate_idm_batch(knots, double knot_dt, double v_ego0, double gap0,
                       double[::1] t_react, double[::1] madr, idm,
                       double dt, double t_cap):
    cdef double[:, ::1] kn = np.maximum(np.ascontiguousarray(knots, dtype=np.float64), 0.0)
    cdef Py_ssize_t n = kn.shape[0]
    cdef Py_ssize_t m = kn.shape[1]
    cdef double v0, hw_t, s0, acc_max, decel_c, dexp
    v0, hw_t, s0, acc_max, decel_c, dexp = idm
    cdef double sqrt_ab2 = 2.0 * sqrt(acc_max * decel_c)
    out = np.empty(n)
    cdef double[::1] w = out
    cdef Py_ssize_t j, i, step
    cdef double v_e, g, t, t_next, t_allow, pos, frac, v_l, v_l_next, s_star, demand, a_eff
    cdef double new_g, new_v, closing
    cdef bint seen
    with nogil:
        for j in range(n):
            v_e = v_ego0
            g = gap0
            t_allow = INFINITY
            seen = False
            step = 0
            while True:
                t = step * dt
                t_next = (step + 1) * dt
                pos = t / knot_dt
                i = <Py_ssize_t> pos
                if i >= m - 1:
                    v_l = kn[j, m - 1]
                else:
                    frac = pos - i
                    v_l = kn[j, i] * (1.0 - frac) + kn[j, i + 1] * frac
                pos = t_next / knot_dt
                i = <Py_ssize_t> pos
                if i >= m - 1:
                    v_l_next = kn[j, m - 1]
                else:
                    frac = pos - i
                    v_l_next = kn[j, i] * (1.0 - frac) + kn[j, i + 1] * frac
                s_star = s0 + v_e * hw_t + v_e * (v_e - v_l) / sqrt_ab2
                demand = 1.0 - (s_star / g) * (s_star / g)
                a_eff = 1.0 - pow(v_e / v0, dexp)
                if a_eff < demand:
                    demand = a_eff
                demand = acc_max * demand
                if demand < 0.0 and not seen:
                    seen = True
                    t_allow = t + t_react[j]
                if demand < 0.0:
                    a_eff = demand if demand > -madr[j] else -madr[j]
                else:
                    a_eff = demand
                if seen and t < t_allow:
                    a_eff = 0.0
                new_v = v_e + a_eff * dt
                if new_v < 0.0:
                    new_v = 0.0
                closing = 0.5 * (v_l + v_l_next) - 0.5 * (v_e + new_v)
                new_g = g + closing * dt
                if new_g <= 0.0:
                    w[j] = closing
                    break
                if new_g >= g:
                    w[j] = g
                    break
                if t_next >= t_cap:
                    w[j] = new_g
                    break
                g = new_g
                v_e = new_v
                step += 1
    return out


def nw_evaluate_many(points, probs, binv_diag, queries, chunk=None):
    # Per query: a branch-free distance accumulation over a transposed copy
    # of the points (vectorizable), a fused min reduction, index compaction
    # of the kernels within the cutoff, then a tight exp loop over those.
    cdef double[:, ::1] ptsT = np.ascontiguousarray(
        np.asarray(points, dtype=np.float64).T)
    cdef double[::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef double[::1] binv = np.ascontiguousarray(binv_diag, dtype=np.float64)
    cdef double[:, ::1] q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
    cdef Py_ssize_t n = ptsT.shape[1]
    cdef Py_ssize_t d = ptsT.shape[0]
    cdef Py_ssize_t m = q.shape[0]
    out = np.empty(m)
    cdef double[::1] res = out
    scratch = np.empty(n)
    cdef double[::1] buf = scratch
    idx_scratch = np.empty(n, dtype=np.int64)
    cdef long long[::1] near = idx_scratch
    cdef Py_ssize_t i, k, a, c, j
    cdef double diff, peak, s, num, e, qa, b, thresh
    with nogil:
        for i in range(m):
            qa = q[i, 0]
            b = binv[0]
            for k in range(n):
                diff = qa - ptsT[0, k]
                buf[k] = b * diff * diff
            for a in range(1, d):
                qa = q[i, a]
                b = binv[a]
                for k in range(n):
                    diff = qa - ptsT[a, k]
                    buf[k] += b * diff * diff
            peak = buf[0]
            for k in range(1, n):
                peak = peak if peak < buf[k] else buf[k]
            thresh = peak + 2.0 * LOG_WEIGHT_CUTOFF
            c = 0
            for k in range(n):
                near[c] = k
                c += buf[k] < thresh
            s = 0.0
            num = 0.0
            for j in range(c):
                k = near[j]
                e = fast_exp(0.5 * (peak - buf[k]))
                s += e
                num += e * p[k]
            res[i] = num / s
    return out


def nw_gradient_many(points, probs, binv_diag, queries, chunk=None):
    # Same structure as nw_evaluate_many, keeping the kernel weights of the
    # compacted near set to accumulate the per-dimension sums of
    # w * binv * (point - query); grad = (numd - phat * sd) / s.
    cdef double[:, ::1] ptsT = np.ascontiguousarray(
        np.asarray(points, dtype=np.float64).T)
    cdef double[::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef double[::1] binv = np.ascontiguousarray(binv_diag, dtype=np.float64)
    cdef double[:, ::1] q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
    cdef Py_ssize_t n = ptsT.shape[1]
    cdef Py_ssize_t d = ptsT.shape[0]
    cdef Py_ssize_t m = q.shape[0]
    out = np.zeros((m, d))
    cdef double[:, ::1] res = out
    scratch = np.empty(n)
    cdef double[::1] buf = scratch
    wgt_scratch = np.empty(n)
    cdef double[::1] wgt = wgt_scratch
    idx_scratch = np.empty(n, dtype=np.int64)
    cdef long long[::1] near = idx_scratch
    sums_scratch = np.empty(64)
    cdef double[::1] sums = sums_scratch
    cdef Py_ssize_t i, k, a, c, j
    cdef double diff, peak, s, num, e, qa, b, thresh, phat, cc
    if d > 64:
        raise ValueError("dimension too large for the native gradient kernel")
    with nogil:
        for i in range(m):
            qa = q[i, 0]
            b = binv[0]
            for k in range(n):
                diff = qa - ptsT[0, k]
                buf[k] = b * diff * diff
            for a in range(1, d):
                qa = q[i, a]
                b = binv[a]
                for k in range(n):
                    diff = qa - ptsT[a, k]
                    buf[k] += b * diff * diff
            peak = buf[0]
            for k in range(1, n):
                peak = peak if peak < buf[k] else buf[k]
            thresh = peak + 2.0 * LOG_WEIGHT_CUTOFF
            c = 0
            for k in range(n):
                near[c] = k
                c += buf[k] < thresh
            s = 0.0
            num = 0.0
            for j in range(c):
                k = near[j]
                e = fast_exp(0.5 * (peak - buf[k]))
                wgt[j] = e
                s += e
                num += e * p[k]
            phat = num / s
            for a in range(d):
                sums[a] = 0.0
            for j in range(c):
                k = near[j]
                cc = wgt[j] * (p[k] - phat)
                for a in range(d):
                    sums[a] += cc * binv[a] * (ptsT[a, k] - q[i, a])
            for a in range(d):
                res[i, a] = sums[a] / s
    return out


def greedy_cover(scaled):
    cdef double[:, ::1] data = np.ascontiguousarray(scaled, dtype=np.float64)
    cdef Py_ssize_t n = data.shape[0]
    cdef Py_ssize_t d = data.shape[1]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    kept_buf = np.empty((n, d))
    idx_buf = np.empty(n, dtype=np.int64)
    cdef double[:, ::1] kept = kept_buf
    cdef long long[::1] idx = idx_buf
    cdef Py_ssize_t count = 0
    cdef Py_ssize_t i, j, a
    cdef double d2, diff
    cdef bint covered
    with nogil:
        for i in range(n):
            covered = False
            for j in range(count):
                d2 = 0.0
                for a in range(d):
                    diff = kept[j, a] - data[i, a]
                    d2 += diff * diff
                    if d2 > 1.0:
                        break
                if d2 <= 1.0:
                    covered = True
                    break
            if not covered:
                for a in range(d):
                    kept[count, a] = data[i, a]
                idx[count] = i
                count += 1
    return idx_buf[:count].copy()
