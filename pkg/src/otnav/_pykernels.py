"""Pure-Python hot kernels.

These mirror ``_kernels.pyx`` operation for operation; the compiled module is
preferred when it imports.  The flow kernel here also accepts arbitrary
precision integer and float costs, which the compiled one does not.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

# layout of the packed MPC parameter vector shared with the compiled kernel
P_DT, P_NC, P_ALPHA, P_E0, P_RHO, P_RHOBOX = range(6)
P_Q1, P_Q2, P_P = 6, 10, 14
P_XMIN, P_XMAX, P_YMIN, P_YMAX = 18, 19, 20, 21
N_PARAMS = 22


def ssp_flow(indptr, heads, costs, caps, rev, source, sink, demand):
    """Successive shortest paths with Dijkstra on reduced costs.

    The residual graph is in CSR form: arcs ``indptr[u]:indptr[u+1]`` leave
    ``u``; ``rev[e]`` is the paired reverse arc.  ``caps`` holds residual
    capacities and is returned updated.  Ties are broken by the (distance,
    node) heap order and by scanning arcs in CSR order, so the result is
    deterministic.  Returns ``(units_sent, residual_caps)``.
    """
    indptr = [int(x) for x in indptr]
    heads = [int(x) for x in heads]
    costs = [c if isinstance(c, (int, float)) else c.item() for c in costs]
    caps = [int(x) for x in caps]
    rev = [int(x) for x in rev]
    n = len(indptr) - 1
    pot = [0] * n
    sent = 0
    while sent < demand:
        dist = [None] * n
        done = [False] * n
        parent = [-1] * n
        dist[source] = 0
        heap = [(0, source)]
        reached = False
        while heap:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            if u == sink:
                reached = True
                break
            pu = pot[u]
            for e in range(indptr[u], indptr[u + 1]):
                if caps[e] <= 0:
                    continue
                v = heads[e]
                if done[v]:
                    continue
                nd = d + costs[e] + pu - pot[v]
                dv = dist[v]
                if dv is None or nd < dv:
                    dist[v] = nd
                    parent[v] = e
                    heapq.heappush(heap, (nd, v))
        if not reached:
            break
        dsink = dist[sink]
        for v in range(n):
            dv = dist[v]
            if dv is None or not done[v] or dv > dsink:
                pot[v] += dsink
            else:
                pot[v] += dv
        v = sink
        while v != source:
            e = parent[v]
            caps[e] -= 1
            caps[rev[e]] += 1
            v = heads[rev[e]]
        sent += 1
    return sent, np.asarray(caps, dtype=np.int64)


def unicycle_rollout(x0, u, dt):
    """RK4 rollout of the unicycle under piecewise-constant controls.

    The heading derivative is constant within a step, so the four RK4 stages
    collapse to closed form.  Returns an ``(n+1, 3)`` array of states.
    """
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    px, py, th = (float(v) for v in x0)
    out = np.empty((u.shape[0] + 1, 3))
    out[0] = px, py, th
    h6 = dt / 6.0
    for k in range(u.shape[0]):
        v, w = float(u[k, 0]), float(u[k, 1])
        t2 = th + 0.5 * dt * w
        t4 = th + dt * w
        c2 = math.cos(t2)
        s2 = math.sin(t2)
        px += h6 * v * (math.cos(th) + 4.0 * c2 + math.cos(t4))
        py += h6 * v * (math.sin(th) + 4.0 * s2 + math.sin(t4))
        th = t4
        out[k + 1] = px, py, th
    return out


def _unpack(prm):
    p = [float(x) for x in prm]
    return (
        p[P_DT], int(round(p[P_NC])), p[P_ALPHA], p[P_E0], p[P_RHO], p[P_RHOBOX],
        p[P_Q1:P_Q1 + 4], p[P_Q2:P_Q2 + 4], p[P_P:P_P + 4],
        p[P_XMIN], p[P_XMAX], p[P_YMIN], p[P_YMAX],
    )


def mpc_cost_grad(x0, u, ref, prm, want_grad=True):
    """Discretized tracking cost plus penalties, and its gradient by adjoint.

    ``u`` is ``(H, 2)``, ``ref`` is ``(H+1, 2)`` reference positions at the
    step instants.  Rectangle quadrature: output error at steps ``1..H``,
    control at steps ``0..H-1``.  The contraction and position-box terms
    are quadratic exterior penalties.
    """
    dt, nc, alpha, e0, rho, rho_box, q1, q2, pm, xmin, xmax, ymin, ymax = _unpack(prm)
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    ref = np.asarray(ref, dtype=float).reshape(-1, 2)
    H = u.shape[0]
    px, py, th = (float(v) for v in x0)
    h6 = dt / 6.0
    xs = [0.0] * (H + 1)
    ys = [0.0] * (H + 1)
    ths = [0.0] * (H + 1)
    xs[0], ys[0], ths[0] = px, py, th
    f = 0.0
    for k in range(H):
        v, w = float(u[k, 0]), float(u[k, 1])
        f += dt * (v * (q2[0] * v + q2[1] * w) + w * (q2[2] * v + q2[3] * w))
        t2 = th + 0.5 * dt * w
        t4 = th + dt * w
        px += h6 * v * (math.cos(th) + 4.0 * math.cos(t2) + math.cos(t4))
        py += h6 * v * (math.sin(th) + 4.0 * math.sin(t2) + math.sin(t4))
        th = t4
        xs[k + 1], ys[k + 1], ths[k + 1] = px, py, th
        ex = px - float(ref[k + 1, 0])
        ey = py - float(ref[k + 1, 1])
        f += dt * (ex * (q1[0] * ex + q1[1] * ey) + ey * (q1[2] * ex + q1[3] * ey))
        if px > xmax:
            f += rho_box * (px - xmax) ** 2
        elif px < xmin:
            f += rho_box * (xmin - px) ** 2
        if py > ymax:
            f += rho_box * (py - ymax) ** 2
        elif py < ymin:
            f += rho_box * (ymin - py) ** 2
    viol = 0.0
    pn = 0.0
    if 1 <= nc <= H:
        ex = xs[nc] - float(ref[nc, 0])
        ey = ys[nc] - float(ref[nc, 1])
        pn = math.sqrt(max(ex * (pm[0] * ex + pm[1] * ey) + ey * (pm[2] * ex + pm[3] * ey), 0.0))
        viol = pn - alpha * e0
        if viol > 0.0:
            f += rho * viol * viol
    if not want_grad:
        return f, None

    grad = np.empty((H, 2))
    lx = ly = lt = 0.0
    for k in range(H, 0, -1):
        # accumulate dJ/dx_k into the costate
        ex = xs[k] - float(ref[k, 0])
        ey = ys[k] - float(ref[k, 1])
        lx += dt * ((q1[0] + q1[0]) * ex + (q1[1] + q1[2]) * ey)
        ly += dt * ((q1[2] + q1[1]) * ex + (q1[3] + q1[3]) * ey)
        if xs[k] > xmax:
            lx += 2.0 * rho_box * (xs[k] - xmax)
        elif xs[k] < xmin:
            lx -= 2.0 * rho_box * (xmin - xs[k])
        if ys[k] > ymax:
            ly += 2.0 * rho_box * (ys[k] - ymax)
        elif ys[k] < ymin:
            ly -= 2.0 * rho_box * (ymin - ys[k])
        if k == nc and viol > 0.0 and pn > 0.0:
            s = rho * viol / pn
            lx += s * ((pm[0] + pm[0]) * ex + (pm[1] + pm[2]) * ey)
            ly += s * ((pm[2] + pm[1]) * ex + (pm[3] + pm[3]) * ey)
        # step k-1 -> k sensitivities
        j = k - 1
        v, w = float(u[j, 0]), float(u[j, 1])
        th = ths[j]
        t2 = th + 0.5 * dt * w
        t4 = th + dt * w
        c1, s1 = math.cos(th), math.sin(th)
        c2, s2 = math.cos(t2), math.sin(t2)
        c4, s4 = math.cos(t4), math.sin(t4)
        C = c1 + 4.0 * c2 + c4
        S = s1 + 4.0 * s2 + s4
        a13 = -h6 * v * S
        a23 = h6 * v * C
        b11 = h6 * C
        b21 = h6 * S
        b12 = h6 * v * (-2.0 * dt * s2 - dt * s4)
        b22 = h6 * v * (2.0 * dt * c2 + dt * c4)
        grad[j, 0] = dt * ((q2[0] + q2[0]) * v + (q2[1] + q2[2]) * w) + b11 * lx + b21 * ly
        grad[j, 1] = dt * ((q2[2] + q2[1]) * v + (q2[3] + q2[3]) * w) + b12 * lx + b22 * ly + dt * lt
        lt = a13 * lx + a23 * ly + lt
    return f, grad


def mpc_optimize(x0, u0, ref, prm, lo, hi, max_iters, tol):
    """Spectral projected gradient (nonmonotone Armijo, memory 10) on the box.

    Returns ``(u, f, iterations)``.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    u = np.clip(np.asarray(u0, dtype=float).reshape(-1, 2), lo, hi)
    f, g = mpc_cost_grad(x0, u, ref, prm)
    hist = [f]
    d = np.clip(u - g, lo, hi) - u
    dn = float(np.max(np.abs(d))) if d.size else 0.0
    lam = 1.0 / dn if dn > 0 else 1.0
    lam = min(max(lam, 1e-10), 1e10)
    it = 0
    for it in range(1, max_iters + 1):
        d = np.clip(u - lam * g, lo, hi) - u
        if float(np.max(np.abs(d))) <= tol:
            it -= 1
            break
        gd = float(np.sum(g * d))
        fmax = max(hist)
        step = 1.0
        accepted = False
        while step >= 1e-12:
            un = u + step * d
            fn, _ = mpc_cost_grad(x0, un, ref, prm, want_grad=False)
            if fn <= fmax + 1e-4 * step * gd:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        _, gn = mpc_cost_grad(x0, un, ref, prm)
        s = un - u
        y = gn - g
        sy = float(np.sum(s * y))
        if sy > 0:
            lam = min(max(float(np.sum(s * s)) / sy, 1e-10), 1e10)
        else:
            lam = 1e10
        u, f, g = un, fn, gn
        hist.append(f)
        if len(hist) > 10:
            hist.pop(0)
    return u, f, it
