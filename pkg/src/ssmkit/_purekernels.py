"""Numpy fallback for the hot loops (see _native.pyx for the compiled twin).

Both backends implement the same step-by-step arithmetic so results agree to
floating-point rounding; the batch simulators advance all runs in lockstep
with an active mask.
"""
from __future__ import annotations

import numpy as np

BACKEND = "pure"

# exp(-34.5) ~ 1e-15: kernels this far below the peak cannot move the blend.
LOG_WEIGHT_CUTOFF = 34.5


def simulate_ws_batch(dv: float, ttc: float, t_react: np.ndarray,
                      madr: np.ndarray, dt: float) -> np.ndarray:
    """Constant-speed-leader conflicts; returns the scalar result per run.

    The coast-then-brake closing speed integrates exactly within each step
    (the braking onset may fall mid-step); dt only sets the grid on which
    the crash / gap-not-decreasing termination is checked.
    """
    t_react = np.asarray(t_react, dtype=float)
    madr = np.asarray(madr, dtype=float)
    n = t_react.shape[0]
    gap = np.full(n, dv * ttc)
    r = np.full(n, dv)
    w = np.zeros(n)
    active = np.ones(n, dtype=bool)
    step = 0
    while active.any():
        idx = np.nonzero(active)[0]
        t = step * dt
        t_next = t + dt
        g_a, r_a, m_a = gap[idx], r[idx], madr[idx]
        free = np.clip(t_react[idx] - t, 0.0, dt)
        brake = dt - free
        new_r = r_a - m_a * brake
        stopped = new_r < 0.0
        brake_dist = np.where(stopped, r_a * r_a / (2.0 * m_a),
                              r_a * brake - 0.5 * m_a * brake * brake)
        new_r = np.maximum(new_r, 0.0)
        dist = r_a * free + brake_dist
        new_gap = g_a - dist
        crashed = new_gap <= 0.0
        in_free = r_a * free >= g_a
        impact = np.where(in_free, r_a,
                          np.sqrt(np.maximum(r_a * r_a - 2.0 * m_a * (g_a - r_a * free), 0.0)))
        opened = ~crashed & (new_gap >= g_a)
        w[idx[crashed]] = -impact[crashed]
        w[idx[opened]] = g_a[opened]
        done = crashed | opened
        gap[idx] = new_gap
        r[idx] = new_r
        active[idx[done]] = False
        step += 1
    return w


def simulate_idm_batch(knots: np.ndarray, knot_dt: float, v_ego0: float,
                       gap0: float, t_react: np.ndarray, madr: np.ndarray,
                       idm: tuple, dt: float, t_cap: float) -> np.ndarray:
    """Leader-profile conflicts with a delayed-braking IDM+ ego.

    knots[j] holds run j's leader speeds at times 0, knot_dt, 2*knot_dt, ...;
    the leader speed is interpolated linearly, clamped at zero, and held
    constant after the last knot.
    """
    knots = np.maximum(np.asarray(knots, dtype=float), 0.0)
    t_react = np.asarray(t_react, dtype=float)
    madr = np.asarray(madr, dtype=float)
    v0, hw_t, s0, acc_max, decel_c, dexp = idm
    sqrt_ab2 = 2.0 * np.sqrt(acc_max * decel_c)

    n, m = knots.shape
    v_e = np.full(n, float(v_ego0))
    gap = np.full(n, float(gap0))
    t_allow = np.full(n, np.inf)
    seen = np.zeros(n, dtype=bool)
    w = np.zeros(n)
    active = np.ones(n, dtype=bool)
    step = 0

    def lead_speed(rows, at):
        pos = at / knot_dt
        i = min(int(pos), m - 1)
        if i >= m - 1:
            return knots[rows, m - 1]
        frac = pos - i
        return knots[rows, i] * (1.0 - frac) + knots[rows, i + 1] * frac

    while active.any():
        idx = np.nonzero(active)[0]
        t = step * dt
        t_next = (step + 1) * dt
        v_l = lead_speed(idx, t)
        v_l_next = lead_speed(idx, t_next)

        g_a, v_a = gap[idx], v_e[idx]
        s_star = s0 + v_a * hw_t + v_a * (v_a - v_l) / sqrt_ab2
        demand = acc_max * np.minimum(1.0 - (v_a / v0) ** dexp,
                                      1.0 - (s_star / g_a) ** 2)
        first = (demand < 0.0) & ~seen[idx]
        t_allow[idx[first]] = t + t_react[idx[first]]
        seen[idx[first]] = True
        delayed = seen[idx] & (t < t_allow[idx])
        a_eff = np.where(demand < 0.0, np.maximum(demand, -madr[idx]), demand)
        a_eff = np.where(delayed, 0.0, a_eff)

        new_v = np.maximum(v_a + a_eff * dt, 0.0)
        closing = 0.5 * (v_l + v_l_next) - 0.5 * (v_a + new_v)
        new_gap = g_a + closing * dt
        crashed = new_gap <= 0.0
        opened = ~crashed & (new_gap >= g_a)
        w[idx[crashed]] = closing[crashed]
        w[idx[opened]] = g_a[opened]
        done = crashed | opened
        if t_next >= t_cap:
            expired = ~done
            w[idx[expired]] = new_gap[expired]
            done |= expired
        gap[idx] = new_gap
        v_e[idx] = new_v
        active[idx[done]] = False
        step += 1
    return w


def nw_evaluate_many(points: np.ndarray, probs: np.ndarray,
                     binv_diag: np.ndarray, queries: np.ndarray,
                     chunk: int = 256) -> np.ndarray:
    """Gaussian-kernel local average of the table at each query row."""
    points = np.asarray(points, dtype=float)
    probs = np.asarray(probs, dtype=float)
    binv_diag = np.asarray(binv_diag, dtype=float)
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    out = np.empty(queries.shape[0])
    scaled_pts = points * np.sqrt(binv_diag)
    for start in range(0, queries.shape[0], chunk):
        q = queries[start:start + chunk] * np.sqrt(binv_diag)
        d2 = ((q[:, None, :] - scaled_pts[None, :, :]) ** 2).sum(axis=2)
        logw = -0.5 * d2
        peak = logw.max(axis=1, keepdims=True)
        wgt = np.where(logw - peak > -LOG_WEIGHT_CUTOFF, np.exp(logw - peak), 0.0)
        out[start:start + chunk] = (wgt @ probs) / wgt.sum(axis=1)
    return out


def nw_gradient_many(points: np.ndarray, probs: np.ndarray,
                     binv_diag: np.ndarray, queries: np.ndarray,
                     chunk: int = 128) -> np.ndarray:
    """Analytic gradient of the local average at each query row."""
    points = np.asarray(points, dtype=float)
    probs = np.asarray(probs, dtype=float)
    binv_diag = np.asarray(binv_diag, dtype=float)
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    out = np.empty_like(queries)
    scale = np.sqrt(binv_diag)
    scaled_pts = points * scale
    for start in range(0, queries.shape[0], chunk):
        q = queries[start:start + chunk]
        diff = points[None, :, :] - q[:, None, :]
        d2 = ((q[:, None, :] * scale - scaled_pts[None, :, :]) ** 2).sum(axis=2)
        logw = -0.5 * d2
        peak = logw.max(axis=1, keepdims=True)
        wgt = np.where(logw - peak > -LOG_WEIGHT_CUTOFF, np.exp(logw - peak), 0.0)
        total = wgt.sum(axis=1)
        phat = (wgt @ probs) / total
        resid = wgt * (probs[None, :] - phat[:, None])
        out[start:start + chunk] = (
            np.einsum("mn,mnd->md", resid, diff) * binv_diag / total[:, None]
        )
    return out


def greedy_cover(scaled: np.ndarray) -> np.ndarray:
    """Indices of a greedy design-point cover of pre-scaled rows.

    A row joins the design set when no earlier design row lies within unit
    squared Euclidean distance, so every row ends up covered.
    """
    scaled = np.asarray(scaled, dtype=float)
    n = scaled.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    kept = np.empty_like(scaled)
    kept[0] = scaled[0]
    idx = [0]
    count = 1
    for i in range(1, n):
        d2 = ((kept[:count] - scaled[i]) ** 2).sum(axis=1)
        if d2.min() > 1.0:
            kept[count] = scaled[i]
            idx.append(i)
            count += 1
    return np.asarray(idx, dtype=np.int64)
