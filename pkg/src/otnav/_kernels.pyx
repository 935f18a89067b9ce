# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Semantics match ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fabs
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair
from libcpp.vector cimport vector

cnp.import_array()

ctypedef long long i64

cdef enum:
    P_DT = 0
    P_NC = 1
    P_ALPHA = 2
    P_E0 = 3
    P_RHO = 4
    P_RHOBOX = 5
    P_Q1 = 6
    P_Q2 = 10
    P_P = 14
    P_XMIN = 18
    P_XMAX = 19
    P_YMIN = 20
    P_YMAX = 21


def ssp_flow(i64[::1] indptr, i64[::1] heads, i64[::1] costs, caps_in,
             i64[::1] rev, int source, int sink, int demand):
    cdef cnp.ndarray[i64, ndim=1] caps_arr = np.array(caps_in, dtype=np.int64, copy=True)
    cdef i64[::1] caps = caps_arr
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef vector[i64] pot = vector[i64](n, 0)
    cdef vector[i64] dist = vector[i64](n, 0)
    cdef vector[char] seen = vector[char](n, 0)
    cdef vector[char] done = vector[char](n, 0)
    cdef vector[i64] parent = vector[i64](n, -1)
    cdef priority_queue[pair[i64, i64]] heap
    cdef pair[i64, i64] top
    cdef int sent = 0
    cdef i64 d, nd, dsink, e, u, v
    cdef bint reached
    while sent < demand:
        for v in range(n):
            seen[v] = 0
            done[v] = 0
            parent[v] = -1
        while not heap.empty():
            heap.pop()
        dist[source] = 0
        seen[source] = 1
        # max-heap on negated keys pops the smallest (dist, node)
        heap.push(pair[i64, i64](0, -source))
        reached = False
        while not heap.empty():
            top = heap.top()
            heap.pop()
            d = -top.first
            u = -top.second
            if done[u]:
                continue
            done[u] = 1
            if u == sink:
                reached = True
                break
            for e in range(indptr[u], indptr[u + 1]):
                if caps[e] <= 0:
                    continue
                v = heads[e]
                if done[v]:
                    continue
                nd = d + costs[e] + pot[u] - pot[v]
                if not seen[v] or nd < dist[v]:
                    seen[v] = 1
                    dist[v] = nd
                    parent[v] = e
                    heap.push(pair[i64, i64](-nd, -v))
        if not reached:
            break
        dsink = dist[sink]
        for v in range(n):
            if not seen[v] or not done[v] or dist[v] > dsink:
                pot[v] += dsink
            else:
                pot[v] += dist[v]
        v = sink
        while v != source:
            e = parent[v]
            caps[e] -= 1
            caps[rev[e]] += 1
            v = heads[rev[e]]
        sent += 1
    return sent, caps_arr


def unicycle_rollout(x0, u_in, double dt):
    cdef double[:, ::1] u = np.ascontiguousarray(u_in, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t H = u.shape[0], k
    cdef cnp.ndarray[double, ndim=2] out = np.empty((H + 1, 3))
    cdef double px = float(x0[0]), py = float(x0[1]), th = float(x0[2])
    cdef double h6 = dt / 6.0, v, w, t2, t4
    out[0, 0] = px
    out[0, 1] = py
    out[0, 2] = th
    for k in range(H):
        v = u[k, 0]
        w = u[k, 1]
        t2 = th + 0.5 * dt * w
        t4 = th + dt * w
        px += h6 * v * (cos(th) + 4.0 * cos(t2) + cos(t4))
        py += h6 * v * (sin(th) + 4.0 * sin(t2) + sin(t4))
        th = t4
        out[k + 1, 0] = px
        out[k + 1, 1] = py
        out[k + 1, 2] = th
    return out


cdef struct Prm:
    double dt
    int nc
    double alpha, e0, rho, rho_box
    double q1[4]
    double q2[4]
    double pm[4]
    double xmin, xmax, ymin, ymax


cdef Prm _unpack(double[::1] p):
    cdef Prm r
    cdef int i
    r.dt = p[P_DT]
    r.nc = <int>(p[P_NC] + 0.5)
    r.alpha = p[P_ALPHA]
    r.e0 = p[P_E0]
    r.rho = p[P_RHO]
    r.rho_box = p[P_RHOBOX]
    for i in range(4):
        r.q1[i] = p[P_Q1 + i]
        r.q2[i] = p[P_Q2 + i]
        r.pm[i] = p[P_P + i]
    r.xmin = p[P_XMIN]
    r.xmax = p[P_XMAX]
    r.ymin = p[P_YMIN]
    r.ymax = p[P_YMAX]
    return r


cdef double _cost_grad(double x0, double y0, double th0, double* u, const double* ref,
                       int H, Prm* p, double* xs, double* ys, double* ths,
                       double* grad) nogil:
    """Cost; fills ``grad`` when it is not NULL.  ``u`` and ``ref`` are row-major."""
    cdef double dt = p.dt, h6 = p.dt / 6.0
    cdef double px = x0, py = y0, th = th0
    cdef double f = 0.0, v, w, t2, t4, ex, ey, viol = 0.0, pn = 0.0, s
    cdef double c1, s1, c2, s2, c4, s4, C, S, a13, a23, b11, b21, b12, b22
    cdef double lx = 0.0, ly = 0.0, lt = 0.0
    cdef double* q1 = p.q1
    cdef double* q2 = p.q2
    cdef double* pm = p.pm
    cdef int k, j, nc = p.nc
    xs[0] = px
    ys[0] = py
    ths[0] = th
    for k in range(H):
        v = u[2 * k]
        w = u[2 * k + 1]
        f += dt * (v * (q2[0] * v + q2[1] * w) + w * (q2[2] * v + q2[3] * w))
        t2 = th + 0.5 * dt * w
        t4 = th + dt * w
        px += h6 * v * (cos(th) + 4.0 * cos(t2) + cos(t4))
        py += h6 * v * (sin(th) + 4.0 * sin(t2) + sin(t4))
        th = t4
        xs[k + 1] = px
        ys[k + 1] = py
        ths[k + 1] = th
        ex = px - ref[2 * (k + 1)]
        ey = py - ref[2 * (k + 1) + 1]
        f += dt * (ex * (q1[0] * ex + q1[1] * ey) + ey * (q1[2] * ex + q1[3] * ey))
        if px > p.xmax:
            f += p.rho_box * (px - p.xmax) * (px - p.xmax)
        elif px < p.xmin:
            f += p.rho_box * (p.xmin - px) * (p.xmin - px)
        if py > p.ymax:
            f += p.rho_box * (py - p.ymax) * (py - p.ymax)
        elif py < p.ymin:
            f += p.rho_box * (p.ymin - py) * (p.ymin - py)
    if 1 <= nc <= H:
        ex = xs[nc] - ref[2 * nc]
        ey = ys[nc] - ref[2 * nc + 1]
        pn = ex * (pm[0] * ex + pm[1] * ey) + ey * (pm[2] * ex + pm[3] * ey)
        pn = sqrt(pn) if pn > 0.0 else 0.0
        viol = pn - p.alpha * p.e0
        if viol > 0.0:
            f += p.rho * viol * viol
    if grad == NULL:
        return f
    for k in range(H, 0, -1):
        ex = xs[k] - ref[2 * k]
        ey = ys[k] - ref[2 * k + 1]
        lx += dt * ((q1[0] + q1[0]) * ex + (q1[1] + q1[2]) * ey)
        ly += dt * ((q1[2] + q1[1]) * ex + (q1[3] + q1[3]) * ey)
        if xs[k] > p.xmax:
            lx += 2.0 * p.rho_box * (xs[k] - p.xmax)
        elif xs[k] < p.xmin:
            lx -= 2.0 * p.rho_box * (p.xmin - xs[k])
        if ys[k] > p.ymax:
            ly += 2.0 * p.rho_box * (ys[k] - p.ymax)
        elif ys[k] < p.ymin:
            ly -= 2.0 * p.rho_box * (p.ymin - ys[k])
        if k == nc and viol > 0.0 and pn > 0.0:
            s = p.rho * viol / pn
            lx += s * ((pm[0] + pm[0]) * ex + (pm[1] + pm[2]) * ey)
            ly += s * ((pm[2] + pm[1]) * ex + (pm[3] + pm[3]) * ey)
        j = k - 1
        v = u[2 * j]
        w = u[2 * j + 1]
        th = ths[j]
        t2 = th + 0.5 * dt * w
        t4 = th + dt * w
        c1 = cos(th)
        s1 = sin(th)
        c2 = cos(t2)
        s2 = sin(t2)
        c4 = cos(t4)
        s4 = sin(t4)
        C = c1 + 4.0 * c2 + c4
        S = s1 + 4.0 * s2 + s4
        a13 = -h6 * v * S
        a23 = h6 * v * C
        b11 = h6 * C
        b21 = h6 * S
        b12 = h6 * v * (-2.0 * dt * s2 - dt * s4)
        b22 = h6 * v * (2.0 * dt * c2 + dt * c4)
        grad[2 * j] = dt * ((q2[0] + q2[0]) * v + (q2[1] + q2[2]) * w) + b11 * lx + b21 * ly
        grad[2 * j + 1] = (dt * ((q2[2] + q2[1]) * v + (q2[3] + q2[3]) * w)
                           + b12 * lx + b22 * ly + dt * lt)
        lt = a13 * lx + a23 * ly + lt
    return f


def mpc_cost_grad(x0, u_in, ref_in, prm_in, want_grad=True):
    cdef cnp.ndarray[double, ndim=2] u = np.ascontiguousarray(u_in, dtype=np.float64).reshape(-1, 2)
    cdef cnp.ndarray[double, ndim=2] ref = np.ascontiguousarray(ref_in, dtype=np.float64).reshape(-1, 2)
    cdef double[::1] prm = np.ascontiguousarray(prm_in, dtype=np.float64)
    cdef int H = u.shape[0]
    cdef Prm p = _unpack(prm)
    cdef vector[double] xs = vector[double](H + 1)
    cdef vector[double] ys = vector[double](H + 1)
    cdef vector[double] ths = vector[double](H + 1)
    cdef cnp.ndarray[double, ndim=2] grad
    cdef double f
    if want_grad:
        grad = np.empty((H, 2))
        f = _cost_grad(float(x0[0]), float(x0[1]), float(x0[2]), &u[0, 0] if H else NULL,
                       &ref[0, 0], H, &p, xs.data(), ys.data(), ths.data(), &grad[0, 0] if H else NULL)
        return f, grad
    f = _cost_grad(float(x0[0]), float(x0[1]), float(x0[2]), &u[0, 0] if H else NULL,
                   &ref[0, 0], H, &p, xs.data(), ys.data(), ths.data(), NULL)
    return f, None


cdef inline double _clip(double x, double lo, double hi) nogil:
    return lo if x < lo else (hi if x > hi else x)


def mpc_optimize(x0, u0, ref_in, prm_in, lo_in, hi_in, int max_iters, double tol):
    cdef cnp.ndarray[double, ndim=2] ref = np.ascontiguousarray(ref_in, dtype=np.float64).reshape(-1, 2)
    cdef double[::1] prm = np.ascontiguousarray(prm_in, dtype=np.float64)
    cdef double[::1] lo = np.ascontiguousarray(lo_in, dtype=np.float64)
    cdef double[::1] hi = np.ascontiguousarray(hi_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] u_arr = np.array(u0, dtype=np.float64).reshape(-1, 2)
    cdef int H = u_arr.shape[0]
    cdef int n = 2 * H
    cdef Prm p = _unpack(prm)
    cdef double ax = float(x0[0]), ay = float(x0[1]), ath = float(x0[2])
    cdef vector[double] xs = vector[double](H + 1)
    cdef vector[double] ys = vector[double](H + 1)
    cdef vector[double] ths = vector[double](H + 1)
    cdef vector[double] g = vector[double](n)
    cdef vector[double] gn = vector[double](n)
    cdef vector[double] d = vector[double](n)
    cdef vector[double] un = vector[double](n)
    cdef vector[double] hist
    cdef double* u = &u_arr[0, 0] if H else NULL
    cdef double* r = &ref[0, 0]
    cdef double f, fn, fmax, gd, step, lam, dn, sy, ss, t
    cdef int it = 0, i, b
    cdef bint accepted
    if H == 0:
        return u_arr, 0.0, 0
    for i in range(n):
        u[i] = _clip(u[i], lo[i % 2], hi[i % 2])
    f = _cost_grad(ax, ay, ath, u, r, H, &p, xs.data(), ys.data(), ths.data(), g.data())
    hist.push_back(f)
    dn = 0.0
    for i in range(n):
        t = fabs(_clip(u[i] - g[i], lo[i % 2], hi[i % 2]) - u[i])
        if t > dn:
            dn = t
    lam = 1.0 / dn if dn > 0 else 1.0
    lam = _clip(lam, 1e-10, 1e10)
    for it in range(1, max_iters + 1):
        dn = 0.0
        gd = 0.0
        for i in range(n):
            d[i] = _clip(u[i] - lam * g[i], lo[i % 2], hi[i % 2]) - u[i]
            t = fabs(d[i])
            if t > dn:
                dn = t
            gd += g[i] * d[i]
        if dn <= tol:
            it -= 1
            break
        fmax = hist[0]
        for b in range(<int>hist.size()):
            if hist[b] > fmax:
                fmax = hist[b]
        step = 1.0
        accepted = False
        while step >= 1e-12:
            for i in range(n):
                un[i] = u[i] + step * d[i]
            fn = _cost_grad(ax, ay, ath, un.data(), r, H, &p, xs.data(), ys.data(), ths.data(), NULL)
            if fn <= fmax + 1e-4 * step * gd:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        _cost_grad(ax, ay, ath, un.data(), r, H, &p, xs.data(), ys.data(), ths.data(), gn.data())
        sy = 0.0
        ss = 0.0
        for i in range(n):
            t = un[i] - u[i]
            sy += t * (gn[i] - g[i])
            ss += t * t
            u[i] = un[i]
            g[i] = gn[i]
        lam = _clip(ss / sy, 1e-10, 1e10) if sy > 0 else 1e10
        f = fn
        hist.push_back(f)
        if hist.size() > 10:
            hist.erase(hist.begin())
    return u_arr, f, it
