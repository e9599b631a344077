# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; semantics match ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, exp, fabs, floor
from libc.stdlib cimport malloc, free
from scipy.special.cython_special cimport ndtr, ndtri

cnp.import_array()

cdef double U_MIN = 1e-300
cdef double U_MAX = 1.0 - 1e-16


cdef inline double _cdf(double x) nogil:
    if x == INFINITY:
        return 1.0
    if x == -INFINITY:
        return 0.0
    return ndtr(x)


def genz_sums(double[:, ::1] chol, double[::1] lo, double[::1] hi, int rank,
              double[::1] gen, double[:, ::1] shifts, long start, long count):
    cdef Py_ssize_t r = chol.shape[0]
    cdef Py_ssize_t dims = gen.shape[0]
    cdef Py_ssize_t n_shift = shifts.shape[0]
    cdef Py_ssize_t s, i, j
    cdef long p
    cdef double f, t, d, e, w, u, piv, d0, e0
    out_arr = np.zeros(n_shift)
    cdef double[::1] out = out_arr
    cdef double *y = <double *> malloc((rank + 1) * sizeof(double))
    if y == NULL:
        raise MemoryError()
    # the first row has no conditioning, so its limits are fixed
    d0 = _cdf(lo[0] / chol[0, 0]) if rank > 0 else 0.0
    e0 = _cdf(hi[0] / chol[0, 0]) if rank > 0 else 1.0
    try:
        for s in range(n_shift):
            for p in range(start, start + count):
                f = 1.0
                for i in range(rank):
                    if i == 0:
                        d = d0
                        e = e0
                    else:
                        t = 0.0
                        for j in range(i):
                            t += chol[i, j] * y[j]
                        piv = chol[i, i]
                        d = _cdf((lo[i] - t) / piv)
                        e = _cdf((hi[i] - t) / piv)
                    f *= e - d
                    if i < dims:
                        # the argument is nonnegative, so this is exactly fmod(w, 1)
                        w = <double> p * gen[i] + shifts[s, i]
                        w = w - floor(w)
                        w = 1.0 - fabs(2.0 * w - 1.0)
                        u = d + w * (e - d)
                        if u < U_MIN:
                            u = U_MIN
                        elif u > U_MAX:
                            u = U_MAX
                        y[i] = ndtri(u)
                if f != 0.0:
                    for i in range(rank, r):
                        t = 0.0
                        for j in range(rank):
                            t += chol[i, j] * y[j]
                        if not (t >= lo[i] and t <= hi[i]):
                            f = 0.0
                            break
                out[s] += f
    finally:
        free(y)
    return out_arr


cdef inline int _rank(double *cum, int n, double d) nogil:
    # interior breakpoints cum[1..n-1] that are <= d
    cdef int k = 0
    cdef int j
    for j in range(1, n):
        if cum[j] <= d:
            k += 1
    return k


cdef void _stable_argsort(double *v, long *idx, int n) nogil:
    cdef int i, j
    cdef long tmp
    for i in range(n):
        idx[i] = i
    for i in range(1, n):
        tmp = idx[i]
        j = i - 1
        while j >= 0 and v[idx[j]] > v[tmp]:
            idx[j + 1] = idx[j]
            j -= 1
        idx[j + 1] = tmp


def batch_spot(double[:, ::1] log_costs_a, double[:, ::1] log_costs_b,
               double[::1] caps_a, double[::1] caps_b,
               double[::1] demand_a, double[::1] demand_b,
               double alpha_a, double beta_a, double alpha_b, double beta_b,
               double flow_min, double flow_max):
    cdef Py_ssize_t n = log_costs_a.shape[0]
    cdef int na = log_costs_a.shape[1]
    cdef int nb = log_costs_b.shape[1]
    cdef int m = na + nb - 2
    flow_arr = np.zeros(n)
    regime_arr = np.zeros(n, dtype=np.int8)
    k_arr = np.zeros(n, dtype=np.int64)
    l_arr = np.zeros(n, dtype=np.int64)
    pa_arr = np.zeros(n)
    pb_arr = np.zeros(n)
    perm_a_arr = np.zeros((n, na), dtype=np.int64)
    perm_b_arr = np.zeros((n, nb), dtype=np.int64)
    cdef double[::1] flow = flow_arr
    cdef signed char[::1] regime = regime_arr
    cdef long[::1] kk = k_arr
    cdef long[::1] ll = l_arr
    cdef double[::1] pa_out = pa_arr
    cdef double[::1] pb_out = pb_arr
    cdef long[:, ::1] perm_a = perm_a_arr
    cdef long[:, ::1] perm_b = perm_b_arr

    cdef double *va = <double *> malloc(na * sizeof(double))
    cdef double *vb = <double *> malloc(nb * sizeof(double))
    cdef long *ia = <long *> malloc(na * sizeof(long))
    cdef long *ib = <long *> malloc(nb * sizeof(long))
    cdef double *lsa = <double *> malloc(na * sizeof(double))
    cdef double *lsb = <double *> malloc(nb * sizeof(double))
    cdef double *cum_a = <double *> malloc((na + 1) * sizeof(double))
    cdef double *cum_b = <double *> malloc((nb + 1) * sizeof(double))
    cdef double *pts = <double *> malloc((m + 2) * sizeof(double))
    cdef int *tag = <int *> malloc((m + 2) * sizeof(int))
    cdef int *jdx = <int *> malloc((m + 2) * sizeof(int))
    if (va == NULL or vb == NULL or ia == NULL or ib == NULL or lsa == NULL or lsb == NULL
            or cum_a == NULL or cum_b == NULL or pts == NULL or tag == NULL or jdx == NULL):
        raise MemoryError()

    cdef Py_ssize_t q
    cdef int i, j, np_, s, k, l, kp, lp, reg, done, have_prev, ka, lb_
    cdef double da, db, cbar_a, cbar_b, la, lb, e, left, right, mid, g, num
    cdef double h_left, h_right, common, fl, tv
    cdef int tt, tj
    try:
        for q in range(n):
            da = demand_a[q]
            db = demand_b[q]
            for i in range(na):
                va[i] = log_costs_a[q, i]
            for i in range(nb):
                vb[i] = log_costs_b[q, i]
            _stable_argsort(va, ia, na)
            _stable_argsort(vb, ib, nb)
            cum_a[0] = 0.0
            for i in range(na):
                lsa[i] = va[ia[i]]
                cum_a[i + 1] = cum_a[i] + caps_a[ia[i]]
                perm_a[q, i] = ia[i]
            cum_b[0] = 0.0
            for i in range(nb):
                lsb[i] = vb[ib[i]]
                cum_b[i + 1] = cum_b[i] + caps_b[ib[i]]
                perm_b[q, i] = ib[i]
            cbar_a = cum_a[na]
            cbar_b = cum_b[nb]
            done = 0

            k = _rank(cum_a, na, da + flow_max)
            l = _rank(cum_b, nb, db - flow_max)
            la = lsa[k] + alpha_a + beta_a * (cbar_a - (da + flow_max))
            lb = lsb[l] + alpha_b + beta_b * (cbar_b - (db - flow_max))
            if la <= lb:
                fl = flow_max; reg = 0; done = 1
            if not done:
                k = _rank(cum_a, na, da + flow_min)
                l = _rank(cum_b, nb, db - flow_min)
                la = lsa[k] + alpha_a + beta_a * (cbar_a - (da + flow_min))
                lb = lsb[l] + alpha_b + beta_b * (cbar_b - (db - flow_min))
                if la >= lb:
                    fl = flow_min; reg = 1; done = 1

            if not done:
                # interior breakpoints, A before B on ties
                np_ = 0
                for j in range(1, na):
                    e = cum_a[j] - da
                    if e > flow_min and e < flow_max:
                        pts[np_] = e; tag[np_] = 0; jdx[np_] = j; np_ += 1
                for j in range(1, nb):
                    e = db - cum_b[j]
                    if e > flow_min and e < flow_max:
                        pts[np_] = e; tag[np_] = 1; jdx[np_] = j; np_ += 1
                for i in range(1, np_):
                    tv = pts[i]; tt = tag[i]; tj = jdx[i]
                    j = i - 1
                    while j >= 0 and pts[j] > tv:
                        pts[j + 1] = pts[j]; tag[j + 1] = tag[j]; jdx[j + 1] = jdx[j]
                        j -= 1
                    pts[j + 1] = tv; tag[j + 1] = tt; jdx[j + 1] = tj

                have_prev = 0
                kp = 0
                lp = 0
                left = flow_min
                s = 0
                while s <= np_ and not done:
                    right = pts[s] if s < np_ else flow_max
                    if right > left:
                        mid = 0.5 * (left + right)
                        k = _rank(cum_a, na, da + mid)
                        l = _rank(cum_b, nb, db - mid)
                        if have_prev:
                            h_left = ((lsa[kp] + alpha_a + beta_a * (cbar_a - (da + left)))
                                      - (lsb[lp] + alpha_b + beta_b * (cbar_b - (db - left))))
                            h_right = ((lsa[k] + alpha_a + beta_a * (cbar_a - (da + left)))
                                       - (lsb[l] + alpha_b + beta_b * (cbar_b - (db - left))))
                            if h_left <= 0.0 and 0.0 <= h_right:
                                # first point equal to `left` carries the A tag if any
                                i = s - 1
                                while i > 0 and pts[i - 1] == left:
                                    i -= 1
                                if tag[i] == 0:
                                    ka = _rank(cum_a, na, cum_a[jdx[i]])
                                    lb_ = _rank(cum_b, nb, db - left)
                                    common = lsb[lb_] + alpha_b + beta_b * (cbar_b - (db - left))
                                    fl = left; reg = 2; k = ka; l = lb_
                                else:
                                    lb_ = _rank(cum_b, nb, cum_b[jdx[i]])
                                    ka = _rank(cum_a, na, da + left)
                                    common = lsa[ka] + alpha_a + beta_a * (cbar_a - (da + left))
                                    fl = left; reg = 3; k = ka; l = lb_
                                la = common; lb = common; done = 1
                        if not done:
                            num = (lsa[k] - lsb[l] + alpha_a - alpha_b
                                   + beta_a * (cbar_a - da) - beta_b * (cbar_b - db))
                            g = num / (beta_a + beta_b)
                            if left < g and g < right:
                                common = lsa[k] + alpha_a + beta_a * (cbar_a - (da + g))
                                fl = g; reg = 4; la = common; lb = common; done = 1
                            kp = k
                            lp = l
                            have_prev = 1
                        left = right
                    s += 1

                if not done:
                    right = pts[0] if np_ > 0 else flow_max
                    mid = 0.5 * (flow_min + right)
                    k = _rank(cum_a, na, da + mid)
                    l = _rank(cum_b, nb, db - mid)
                    if ((lsa[k] + alpha_a + beta_a * (cbar_a - (da + flow_min)))
                            >= (lsb[l] + alpha_b + beta_b * (cbar_b - (db - flow_min)))):
                        fl = flow_min; reg = 1
                    else:
                        fl = flow_max; reg = 0
                    k = _rank(cum_a, na, da + fl)
                    l = _rank(cum_b, nb, db - fl)
                    la = lsa[k] + alpha_a + beta_a * (cbar_a - (da + fl))
                    lb = lsb[l] + alpha_b + beta_b * (cbar_b - (db - fl))

            flow[q] = fl
            regime[q] = reg
            kk[q] = k
            ll[q] = l
            pa_out[q] = exp(la)
            pb_out[q] = pa_out[q] if reg >= 2 else exp(lb)
    finally:
        free(va); free(vb); free(ia); free(ib); free(lsa); free(lsb)
        free(cum_a); free(cum_b); free(pts); free(tag); free(jdx)
    return flow_arr, regime_arr, k_arr, l_arr, pa_arr, pb_arr, perm_a_arr, perm_b_arr
