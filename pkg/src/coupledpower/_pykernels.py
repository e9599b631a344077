"""Pure-numpy implementations of the hot kernels.

Used when the compiled extension is unavailable and as the reference the
compiled kernels are benchmarked and tested against.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

_CHUNK = 8192
_U_MIN = 1e-300
_U_MAX = 1.0 - 1e-16


def genz_sums(chol, lo, hi, rank, gen, shifts, start, count):
    """Sum the separation-of-variables integrand over lattice points.

    Parameters
    ----------
    chol : (r, r) array
        Lower factor; rows ``rank..r-1`` are singular and act as indicators.
    lo, hi : (r,) arrays
        Centred bounds, same row order as ``chol``.
    rank : int
        Number of rows with a positive pivot.
    gen : (d,) array
        Kronecker generator, ``d`` is the integration dimension.
    shifts : (K, d) array
        Random shifts in [0, 1).
    start, count : int
        Lattice indices ``start .. start + count - 1`` are evaluated.

    Returns
    -------
    (K,) array of integrand sums, one per shift.
    """
    chol = np.asarray(chol, dtype=float)
    r = chol.shape[0]
    dims = len(gen)
    n_shift = shifts.shape[0]
    out = np.zeros(n_shift)
    for c0 in range(start, start + count, _CHUNK):
        idx = np.arange(c0, min(c0 + _CHUNK, start + count), dtype=float)
        base = np.outer(idx, gen)
        for s in range(n_shift):
            w = np.mod(base + shifts[s], 1.0)
            w = 1.0 - np.abs(2.0 * w - 1.0)
            f = np.ones(len(idx))
            y = np.zeros((rank, len(idx)))
            for i in range(rank):
                t = chol[i, :i] @ y[:i] if i else 0.0
                piv = chol[i, i]
                d = ndtr((lo[i] - t) / piv)
                e = ndtr((hi[i] - t) / piv)
                f *= e - d
                if i < dims:
                    u = np.clip(d + w[:, i] * (e - d), _U_MIN, _U_MAX)
                    y[i] = ndtri(u)
            for i in range(rank, r):
                t = chol[i, :rank] @ y
                f *= (t >= lo[i]) & (t <= hi[i])
            out[s] += f.sum()
    return out


def batch_spot(log_costs_a, log_costs_b, caps_a, caps_b, demand_a, demand_b,
               alpha_a, beta_a, alpha_b, beta_b, flow_min, flow_max):
    """Coupled spot outcomes for a batch of states.

    Returns ``(flow, regime, k, l, price_a, price_b, perm_a, perm_b)`` with
    regime codes matching :class:`coupledpower.coupling.Regime`.
    """
    lca = np.asarray(log_costs_a, dtype=float)
    lcb = np.asarray(log_costs_b, dtype=float)
    da = np.asarray(demand_a, dtype=float)
    db = np.asarray(demand_b, dtype=float)
    n, na = lca.shape
    nb = lcb.shape[1]
    rows = np.arange(n)
    perm_a = np.argsort(lca, axis=1, kind="stable")
    perm_b = np.argsort(lcb, axis=1, kind="stable")
    lsa = np.take_along_axis(lca, perm_a, axis=1)
    lsb = np.take_along_axis(lcb, perm_b, axis=1)
    cum_a = np.zeros((n, na + 1))
    cum_a[:, 1:] = np.cumsum(np.asarray(caps_a, dtype=float)[perm_a], axis=1)
    cum_b = np.zeros((n, nb + 1))
    cum_b[:, 1:] = np.cumsum(np.asarray(caps_b, dtype=float)[perm_b], axis=1)
    cbar_a = cum_a[:, -1]
    cbar_b = cum_b[:, -1]

    def rank_a(d):
        return (cum_a[:, 1:na] <= d[:, None]).sum(axis=1)

    def rank_b(d):
        return (cum_b[:, 1:nb] <= d[:, None]).sum(axis=1)

    def lp_a(k, d):
        return lsa[rows, k] + alpha_a + beta_a * (cbar_a - d)

    def lp_b(l, d):
        return lsb[rows, l] + alpha_b + beta_b * (cbar_b - d)

    flow = np.zeros(n)
    regime = np.full(n, -1, dtype=np.int8)
    kk = np.zeros(n, dtype=np.int64)
    ll = np.zeros(n, dtype=np.int64)
    la_out = np.zeros(n)
    lb_out = np.zeros(n)
    todo = np.ones(n, dtype=bool)

    def assign(mask, f, reg, k, l, la, lb):
        nonlocal todo
        m = mask & todo
        flow[m] = f[m]
        regime[m] = reg
        kk[m] = k[m]
        ll[m] = l[m]
        la_out[m] = la[m]
        lb_out[m] = lb[m]
        todo = todo & ~m

    hi = np.full(n, float(flow_max))
    lo = np.full(n, float(flow_min))
    k, l = rank_a(da + hi), rank_b(db - hi)
    la, lb = lp_a(k, da + hi), lp_b(l, db - hi)
    assign(la <= lb, hi, 0, k, l, la, lb)
    k, l = rank_a(da + lo), rank_b(db - lo)
    la, lb = lp_a(k, da + lo), lp_b(l, db - lo)
    assign(la >= lb, lo, 1, k, l, la, lb)

    ea = cum_a[:, 1:na] - da[:, None]
    eb = db[:, None] - cum_b[:, 1:nb]
    pts = np.concatenate([ea, eb], axis=1)
    pts = np.where((pts > flow_min) & (pts < flow_max), pts, flow_max)
    pts = np.sort(pts, axis=1, kind="stable")
    grid = np.concatenate([lo[:, None], pts, hi[:, None]], axis=1)

    have_prev = np.zeros(n, dtype=bool)
    kp = np.zeros(n, dtype=np.int64)
    lp = np.zeros(n, dtype=np.int64)
    for s in range(grid.shape[1] - 1):
        left, right = grid[:, s], grid[:, s + 1]
        live = todo & (right > left)
        if not live.any():
            continue
        mid = 0.5 * (left + right)
        k, l = rank_a(da + mid), rank_b(db - mid)
        chk = live & have_prev
        if chk.any():
            h_left = lp_a(kp, da + left) - lp_b(lp, db - left)
            h_right = lp_a(k, da + left) - lp_b(l, db - left)
            cross = chk & (h_left <= 0.0) & (0.0 <= h_right)
            if cross.any():
                hit_a = ea == left[:, None]
                is_a = hit_a.any(axis=1)
                if na > 1:
                    ja = np.argmax(hit_a, axis=1)
                    ka = rank_a(cum_a[rows, ja + 1])
                    lb_ = rank_b(db - left)
                    common = lp_b(lb_, db - left)
                    assign(cross & is_a, left, 2, ka, lb_, common, common)
                if nb > 1:
                    hit_b = eb == left[:, None]
                    jb = np.argmax(hit_b, axis=1)
                    lb_ = rank_b(cum_b[rows, jb + 1])
                    ka = rank_a(da + left)
                    common = lp_a(ka, da + left)
                    assign(cross & ~is_a, left, 3, ka, lb_, common, common)
                live = live & todo
        num = (lsa[rows, k] - lsb[rows, l] + alpha_a - alpha_b
               + beta_a * (cbar_a - da) - beta_b * (cbar_b - db))
        g = num / (beta_a + beta_b)
        inside = live & (left < g) & (g < right)
        if inside.any():
            common = lp_a(k, da + g)
            assign(inside, g, 4, k, l, common, common)
        kp = np.where(live, k, kp)
        lp = np.where(live, l, lp)
        have_prev = have_prev | live

    if todo.any():
        mid = 0.5 * (grid[:, 0] + grid[:, 1])
        k0, l0 = rank_a(da + mid), rank_b(db - mid)
        at_lo = lp_a(k0, da + lo) >= lp_b(l0, db - lo)
        k, l = rank_a(da + lo), rank_b(db - lo)
        assign(at_lo, lo, 1, k, l, lp_a(k, da + lo), lp_b(l, db - lo))
        k, l = rank_a(da + hi), rank_b(db - hi)
        assign(np.ones(n, dtype=bool), hi, 0, k, l, lp_a(k, da + hi), lp_b(l, db - hi))

    price_a = np.exp(la_out)
    price_b = np.where(regime >= 2, price_a, np.exp(lb_out))
    return flow, regime, kk, ll, price_a, price_b, perm_a, perm_b
