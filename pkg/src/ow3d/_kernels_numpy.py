"""Pure-numpy kernel fallback.

Reference semantics for the numba build in ``_kernels_numba``. Selection
kernels keep every float64 expression in the same shape and association
order as the numba loops so both builds return identical results; see the
backend module docstring for what that guarantee covers.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def nearest_pixel_index(us, vs, zs, idxs, width, height, radius):
    """Assign each pixel the nearest projected point within ``radius``.

    us/vs/zs/idxs describe visible projections (continuous pixel coords,
    camera depth, original point index). Pixel centers sit at integer
    coordinates; candidacy is the closed disk ``d <= radius``. Ties break
    by smaller depth, then smaller point index.

    Returns flat row-major (owner, depth) arrays; owner -1 and depth NaN
    where unassigned.
    """
    n_pix = width * height
    owner = np.full(n_pix, -1, dtype=np.int64)
    depth = np.full(n_pix, np.nan, dtype=np.float64)
    if us.size == 0 or radius < 0.0:
        return owner, depth

    r2 = radius * radius
    x0 = np.ceil(us - radius).astype(np.int64)
    y0 = np.ceil(vs - radius).astype(np.int64)
    span = int(math.floor(2.0 * radius)) + 1

    pix_parts, d2_parts, z_parts, i_parts = [], [], [], []
    for oy in range(span):
        py = y0 + oy
        dv = vs - py
        for ox in range(span):
            px = x0 + ox
            du = us - px
            d2 = du * du + dv * dv
            ok = (px >= 0) & (px < width) & (py >= 0) & (py < height) & (d2 <= r2)
            if not ok.any():
                continue
            pix_parts.append(py[ok] * width + px[ok])
            d2_parts.append(d2[ok])
            z_parts.append(zs[ok])
            i_parts.append(idxs[ok])
    if not pix_parts:
        return owner, depth

    pix = np.concatenate(pix_parts)
    d2c = np.concatenate(d2_parts)
    zc = np.concatenate(z_parts)
    ic = np.concatenate(i_parts)
    # lexsort: last key is primary -> group by pixel, then (d2, depth, index)
    order = np.lexsort((ic, zc, d2c, pix))
    pix = pix[order]
    first = np.ones(pix.size, dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    owner[pix[first]] = ic[order][first]
    depth[pix[first]] = zc[order][first]
    return owner, depth


def greedy_select(prior, owner, points, delta, budget):
    """Greedy highest-prior selection with 3D suppression.

    prior: flat row-major float64 working copy (mutated). owner: flat
    int64 point index per pixel, -1 unassigned. Each round picks the
    assigned pixel with the largest strictly positive prior (ties: first
    in row-major order), then zeroes every assigned pixel whose owning
    point lies within ``delta`` meters of the pick's owning point (the
    pick included). Stops at ``budget`` picks or when no positive prior
    remains.

    Returns (selected flat pixel ids, prior values at selection).
    """
    assigned = np.nonzero(owner >= 0)[0]
    work = np.full(prior.shape[0], -1.0, dtype=np.float64)
    work[assigned] = prior[assigned]
    apts = points[owner[assigned]] if assigned.size else points[:0]

    sel: list[int] = []
    vals: list[float] = []
    while len(sel) < budget and assigned.size:
        b = int(np.argmax(work))
        v = float(work[b])
        if v <= 0.0:
            break
        sel.append(b)
        vals.append(v)
        sp = points[owner[b]]
        diff = apts - sp
        dist = np.sqrt((diff * diff).sum(axis=1))
        suppressed = assigned[dist < delta]
        work[suppressed] = 0.0
        prior[suppressed] = 0.0
    return np.asarray(sel, dtype=np.int64), np.asarray(vals, dtype=np.float64)


def raycast_aabbs(origin, dirs, bmin, bmax, min_t):
    """Nearest axis-aligned-box hit per ray (slab method).

    Returns per ray: entry parameter t (inf if none), hit box index
    (-1 if none), entry axis, entry side (0 = min face, 1 = max face).
    Ties on t keep the lower box index; ties on the entry axis keep the
    lower axis index.
    """
    n = dirs.shape[0]
    t_best = np.full(n, np.inf, dtype=np.float64)
    hit = np.full(n, -1, dtype=np.int64)
    axis = np.zeros(n, dtype=np.int64)
    side = np.zeros(n, dtype=np.int64)

    lo = np.empty((n, 3), dtype=np.float64)
    hi = np.empty((n, 3), dtype=np.float64)
    for b in range(bmin.shape[0]):
        for a in range(3):
            d = dirs[:, a]
            o = origin[a]
            nz = d != 0.0
            safe = np.where(nz, d, 1.0)
            t1 = (bmin[b, a] - o) / safe
            t2 = (bmax[b, a] - o) / safe
            l = np.minimum(t1, t2)
            h = np.maximum(t1, t2)
            inside = (o >= bmin[b, a]) & (o <= bmax[b, a])
            lo[:, a] = np.where(nz, l, np.where(inside, -np.inf, np.inf))
            hi[:, a] = np.where(nz, h, np.where(inside, np.inf, -np.inf))
        enter = lo.max(axis=1)
        leave = hi.min(axis=1)
        eaxis = lo.argmax(axis=1)
        ok = (enter <= leave) & (enter > min_t) & (enter < t_best)
        t_best = np.where(ok, enter, t_best)
        hit = np.where(ok, b, hit)
        axis = np.where(ok, eaxis, axis)
        dsign = dirs[np.arange(n), eaxis] < 0.0
        side = np.where(ok, dsign.astype(np.int64), side)
    return t_best, hit, axis, side


def radius_neighbors(points, eps):
    """CSR adjacency of pairs with Euclidean distance <= eps (self excluded)."""
    n = points.shape[0]
    indptr = np.zeros(n + 1, dtype=np.int64)
    if n == 0:
        return indptr, np.zeros(0, dtype=np.int64)
    eps2 = eps * eps
    rows = []
    chunk = max(1, 4_000_000 // n)
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        diff = points[s:e, None, :] - points[None, :, :]
        d2 = (diff * diff).sum(axis=2)
        mask = d2 <= eps2
        mask[np.arange(e - s), np.arange(s, e)] = False
        for i in range(e - s):
            idx = np.nonzero(mask[i])[0].astype(np.int64)
            rows.append(idx)
            indptr[s + i + 1] = idx.size
    np.cumsum(indptr, out=indptr)
    indices = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    return indptr, indices


def conv3d_k3(x, w):
    """3x3x3 convolution, stride 1, zero padding 1. x: (Ci,X,Y,Z), w: (Co,Ci,3,3,3)."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3, 3), axis=(1, 2, 3))
    return np.einsum("ixyzabc,oiabc->oxyz", win, w, optimize=True)


def conv3d_k3_grad_weight(dy, x):
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3, 3), axis=(1, 2, 3))
    return np.einsum("ixyzabc,oxyz->oiabc", win, dy, optimize=True)


def conv3d_k3_grad_input(dy, w):
    dyp = np.pad(dy, ((0, 0), (1, 1), (1, 1), (1, 1)))
    win = sliding_window_view(dyp, (3, 3, 3), axis=(1, 2, 3))
    wf = w[:, :, ::-1, ::-1, ::-1]
    return np.einsum("oxyzabc,oiabc->ixyz", win, wf, optimize=True)
