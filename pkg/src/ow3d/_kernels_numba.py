"""Numba builds of the hot kernels.

Same contracts as ``_kernels_numpy``; loop bodies keep float64 expressions
in the same association order as the fallback so selection results match
bit for bit. No ``fastmath`` anywhere: reassociation/contraction would
break cross-backend equality.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def nearest_pixel_index(us, vs, zs, idxs, width, height, radius):
    n_pix = width * height
    owner = np.full(n_pix, -1, dtype=np.int64)
    depth = np.full(n_pix, np.nan, dtype=np.float64)
    if us.shape[0] == 0 or radius < 0.0:
        return owner, depth
    best_d2 = np.full(n_pix, np.inf, dtype=np.float64)
    r2 = radius * radius
    for p in range(us.shape[0]):
        u = us[p]
        v = vs[p]
        z = zs[p]
        idx = idxs[p]
        x_lo = int(math.ceil(u - radius))
        x_hi = int(math.floor(u + radius))
        y_lo = int(math.ceil(v - radius))
        y_hi = int(math.floor(v + radius))
        if x_lo < 0:
            x_lo = 0
        if y_lo < 0:
            y_lo = 0
        if x_hi >= width:
            x_hi = width - 1
        if y_hi >= height:
            y_hi = height - 1
        for py in range(y_lo, y_hi + 1):
            dv = v - py
            for px in range(x_lo, x_hi + 1):
                du = u - px
                d2 = du * du + dv * dv
                if d2 > r2:
                    continue
                pix = py * width + px
                if d2 < best_d2[pix]:
                    better = True
                elif d2 == best_d2[pix]:
                    if z < depth[pix]:
                        better = True
                    elif z == depth[pix] and idx < owner[pix]:
                        better = True
                    else:
                        better = False
                else:
                    better = False
                if better:
                    best_d2[pix] = d2
                    depth[pix] = z
                    owner[pix] = idx
    return owner, depth


@njit(cache=True)
def greedy_select(prior, owner, points, delta, budget):
    n_pix = prior.shape[0]
    sel = np.empty(budget if budget > 0 else 0, dtype=np.int64)
    vals = np.empty(budget if budget > 0 else 0, dtype=np.float64)
    count = 0
    while count < budget:
        best = -1
        best_v = 0.0
        for i in range(n_pix):
            if owner[i] >= 0 and prior[i] > best_v:
                best = i
                best_v = prior[i]
        if best < 0:
            break
        sel[count] = best
        vals[count] = best_v
        count += 1
        sp = points[owner[best]]
        for i in range(n_pix):
            if owner[i] >= 0:
                pt = points[owner[i]]
                dx = pt[0] - sp[0]
                dy = pt[1] - sp[1]
                dz = pt[2] - sp[2]
                dist = math.sqrt(dx * dx + dy * dy + dz * dz)
                if dist < delta:
                    prior[i] = 0.0
    return sel[:count], vals[:count]


@njit(cache=True)
def raycast_aabbs(origin, dirs, bmin, bmax, min_t):
    n = dirs.shape[0]
    t_best = np.full(n, np.inf, dtype=np.float64)
    hit = np.full(n, -1, dtype=np.int64)
    axis = np.zeros(n, dtype=np.int64)
    side = np.zeros(n, dtype=np.int64)
    for p in range(n):
        for b in range(bmin.shape[0]):
            enter = -np.inf
            leave = np.inf
            eaxis = -1
            missed = False
            for a in range(3):
                d = dirs[p, a]
                o = origin[a]
                if d != 0.0:
                    t1 = (bmin[b, a] - o) / d
                    t2 = (bmax[b, a] - o) / d
                    if t1 < t2:
                        lo = t1
                        hi = t2
                    else:
                        lo = t2
                        hi = t1
                else:
                    if o >= bmin[b, a] and o <= bmax[b, a]:
                        lo = -np.inf
                        hi = np.inf
                    else:
                        missed = True
                        break
                if lo > enter:
                    enter = lo
                    eaxis = a
                if hi < leave:
                    leave = hi
            if missed:
                continue
            if enter <= leave and enter > min_t and enter < t_best[p]:
                t_best[p] = enter
                hit[p] = b
                axis[p] = eaxis
                side[p] = 1 if dirs[p, eaxis] < 0.0 else 0
    return t_best, hit, axis, side


@njit(cache=True)
def radius_neighbors(points, eps):
    n = points.shape[0]
    indptr = np.zeros(n + 1, dtype=np.int64)
    if n == 0:
        return indptr, np.zeros(0, dtype=np.int64)
    eps2 = eps * eps
    counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        c = 0
        for j in range(n):
            if j == i:
                continue
            dx = points[i, 0] - points[j, 0]
            dy = points[i, 1] - points[j, 1]
            dz = points[i, 2] - points[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 <= eps2:
                c += 1
        counts[i] = c
    total = 0
    for i in range(n):
        indptr[i] = total
        total += counts[i]
    indptr[n] = total
    indices = np.empty(total, dtype=np.int64)
    for i in range(n):
        k = indptr[i]
        for j in range(n):
            if j == i:
                continue
            dx = points[i, 0] - points[j, 0]
            dy = points[i, 1] - points[j, 1]
            dz = points[i, 2] - points[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 <= eps2:
                indices[k] = j
                k += 1
    return indptr, indices


@njit(cache=True)
def conv3d_k3(x, w):
    ci, nx, ny, nz = x.shape
    co = w.shape[0]
    out = np.zeros((co, nx, ny, nz), dtype=np.float64)
    for o in range(co):
        for i in range(ci):
            for px in range(nx):
                for py in range(ny):
                    for pz in range(nz):
                        acc = 0.0
                        for a in range(3):
                            qx = px + a - 1
                            if qx < 0 or qx >= nx:
                                continue
                            for b in range(3):
                                qy = py + b - 1
                                if qy < 0 or qy >= ny:
                                    continue
                                for c in range(3):
                                    qz = pz + c - 1
                                    if qz < 0 or qz >= nz:
                                        continue
                                    acc += x[i, qx, qy, qz] * w[o, i, a, b, c]
                        out[o, px, py, pz] += acc
    return out


@njit(cache=True)
def conv3d_k3_grad_weight(dy, x):
    co = dy.shape[0]
    ci, nx, ny, nz = x.shape
    dw = np.zeros((co, ci, 3, 3, 3), dtype=np.float64)
    for o in range(co):
        for i in range(ci):
            for a in range(3):
                for b in range(3):
                    for c in range(3):
                        acc = 0.0
                        for px in range(nx):
                            qx = px + a - 1
                            if qx < 0 or qx >= nx:
                                continue
                            for py in range(ny):
                                qy = py + b - 1
                                if qy < 0 or qy >= ny:
                                    continue
                                for pz in range(nz):
                                    qz = pz + c - 1
                                    if qz < 0 or qz >= nz:
                                        continue
                                    acc += dy[o, px, py, pz] * x[i, qx, qy, qz]
                        dw[o, i, a, b, c] = acc
    return dw


@njit(cache=True)
def conv3d_k3_grad_input(dy, w):
    co, nx, ny, nz = dy.shape
    ci = w.shape[1]
    dx_out = np.zeros((ci, nx, ny, nz), dtype=np.float64)
    for i in range(ci):
        for o in range(co):
            for px in range(nx):
                for py in range(ny):
                    for pz in range(nz):
                        acc = 0.0
                        for a in range(3):
                            qx = px - a + 1
                            if qx < 0 or qx >= nx:
                                continue
                            for b in range(3):
                                qy = py - b + 1
                                if qy < 0 or qy >= ny:
                                    continue
                                for c in range(3):
                                    qz = pz - c + 1
                                    if qz < 0 or qz >= nz:
                                        continue
                                    acc += dy[o, qx, qy, qz] * w[o, i, a, b, c]
                        dx_out[i, px, py, pz] += acc
    return dx_out
