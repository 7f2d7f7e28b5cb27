"""Exact closest-point / signed-distance kernels.

Two interchangeable paths compute the same quantities:

* ``_query_bvh``: per-query BVH traversal, compiled by numba.
* ``_query_brute``: vectorised numpy, all triangles per query chunk.

Region codes returned for the closest feature of a triangle ``(a, b, c)``:
0/1/2 vertex a/b/c, 3/4/5 edge ab/bc/ca, 6 face interior.  The same codes
index the per-face pseudo-normal table ``pn[face, region]``.
"""

import numpy as np

from .._accel import HAVE_NUMBA, njit

ON_SURFACE = 1e-7  # below this |distance| the gradient falls back to the pseudo-normal
_STACK = 128


@njit(cache=True)
def _closest_on_triangle(a0, a1, a2, b0, b1, b2, c0, c1, c2, p0, p1, p2):
    ab0 = b0 - a0
    ab1 = b1 - a1
    ab2 = b2 - a2
    ac0 = c0 - a0
    ac1 = c1 - a1
    ac2 = c2 - a2
    ap0 = p0 - a0
    ap1 = p1 - a1
    ap2 = p2 - a2
    d1 = ab0 * ap0 + ab1 * ap1 + ab2 * ap2
    d2 = ac0 * ap0 + ac1 * ap1 + ac2 * ap2
    if d1 <= 0.0 and d2 <= 0.0:
        return a0, a1, a2, 0
    bp0 = p0 - b0
    bp1 = p1 - b1
    bp2 = p2 - b2
    d3 = ab0 * bp0 + ab1 * bp1 + ab2 * bp2
    d4 = ac0 * bp0 + ac1 * bp1 + ac2 * bp2
    if d3 >= 0.0 and d4 <= d3:
        return b0, b1, b2, 1
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a0 + v * ab0, a1 + v * ab1, a2 + v * ab2, 3
    cp0 = p0 - c0
    cp1 = p1 - c1
    cp2 = p2 - c2
    d5 = ab0 * cp0 + ab1 * cp1 + ab2 * cp2
    d6 = ac0 * cp0 + ac1 * cp1 + ac2 * cp2
    if d6 >= 0.0 and d5 <= d6:
        return c0, c1, c2, 2
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a0 + w * ac0, a1 + w * ac1, a2 + w * ac2, 5
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b0 + w * (c0 - b0), b1 + w * (c1 - b1), b2 + w * (c2 - b2), 4
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return (
        a0 + ab0 * v + ac0 * w,
        a1 + ab1 * v + ac1 * w,
        a2 + ab2 * v + ac2 * w,
        6,
    )


@njit(cache=True)
def _finish(q0, q1, q2, c0, c1, c2, d2, n0, n1, n2, out_v, out_g, out_c, i):
    e0 = q0 - c0
    e1 = q1 - c1
    e2 = q2 - c2
    d = np.sqrt(d2)
    s = e0 * n0 + e1 * n1 + e2 * n2
    val = d if s >= 0.0 else -d
    out_v[i] = val
    out_c[i, 0] = c0
    out_c[i, 1] = c1
    out_c[i, 2] = c2
    if d > ON_SURFACE:
        out_g[i, 0] = e0 / val
        out_g[i, 1] = e1 / val
        out_g[i, 2] = e2 / val
    else:
        out_g[i, 0] = n0
        out_g[i, 1] = n1
        out_g[i, 2] = n2


@njit(cache=True)
def _query_bvh(queries, tris, pn, bmin, bmax, left, right, start, count, order, out_v, out_g, out_c, out_f, out_r):
    stack = np.empty(_STACK, dtype=np.int64)
    for i in range(queries.shape[0]):
        q0 = queries[i, 0]
        q1 = queries[i, 1]
        q2 = queries[i, 2]
        best = np.inf
        bf = -1
        br = -1
        bc0 = 0.0
        bc1 = 0.0
        bc2 = 0.0
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            # squared distance from query to the node box
            dd = 0.0
            for k in range(3):
                qk = queries[i, k]
                if qk < bmin[node, k]:
                    dd += (bmin[node, k] - qk) ** 2
                elif qk > bmax[node, k]:
                    dd += (qk - bmax[node, k]) ** 2
            if dd > best:
                continue
            if left[node] < 0:
                for j in range(start[node], start[node] + count[node]):
                    f = order[j]
                    c0, c1, c2, reg = _closest_on_triangle(
                        tris[f, 0, 0], tris[f, 0, 1], tris[f, 0, 2],
                        tris[f, 1, 0], tris[f, 1, 1], tris[f, 1, 2],
                        tris[f, 2, 0], tris[f, 2, 1], tris[f, 2, 2],
                        q0, q1, q2,
                    )
                    e0 = q0 - c0
                    e1 = q1 - c1
                    e2 = q2 - c2
                    d2 = e0 * e0 + e1 * e1 + e2 * e2
                    if d2 < best or (d2 == best and f < bf):
                        best = d2
                        bf = f
                        br = reg
                        bc0 = c0
                        bc1 = c1
                        bc2 = c2
            else:
                l = left[node]
                r = right[node]
                dl = 0.0
                dr = 0.0
                for k in range(3):
                    qk = queries[i, k]
                    if qk < bmin[l, k]:
                        dl += (bmin[l, k] - qk) ** 2
                    elif qk > bmax[l, k]:
                        dl += (qk - bmax[l, k]) ** 2
                    if qk < bmin[r, k]:
                        dr += (bmin[r, k] - qk) ** 2
                    elif qk > bmax[r, k]:
                        dr += (qk - bmax[r, k]) ** 2
                # nearer child is popped first
                if dl <= dr:
                    stack[top] = r
                    stack[top + 1] = l
                else:
                    stack[top] = l
                    stack[top + 1] = r
                top += 2
        out_f[i] = bf
        out_r[i] = br
        _finish(q0, q1, q2, bc0, bc1, bc2, best, pn[bf, br, 0], pn[bf, br, 1], pn[bf, br, 2], out_v, out_g, out_c, i)


def _closest_on_triangles_np(tris, p):
    """Vectorised closest points for queries ``p`` (Q,1,3) against ``tris`` (F,3,3)."""
    a = tris[None, :, 0, :]
    b = tris[None, :, 1, :]
    c = tris[None, :, 2, :]

    def dot(u, v):
        return u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1] + u[..., 2] * v[..., 2]

    ab = b - a
    ac = c - a
    ap = p - a
    d1 = dot(ab, ap)
    d2 = dot(ac, ap)
    bp = p - b
    d3 = dot(ab, bp)
    d4 = dot(ac, bp)
    cp_ = p - c
    d5 = dot(ab, cp_)
    d6 = dot(ac, cp_)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    shape = np.broadcast_shapes(d1.shape, d2.shape)
    region = np.full(shape, 6, dtype=np.int64)
    out = np.empty(shape + (3,))
    done = np.zeros(shape, dtype=bool)

    def assign(mask, reg, value):
        m = mask & ~done
        region[m] = reg
        out[m] = np.broadcast_to(value, shape + (3,))[m]
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0.0) & (d2 <= 0.0), 0, a)
        assign((d3 >= 0.0) & (d4 <= d3), 1, b)
        v = d1 / (d1 - d3)
        assign((vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0), 3, a + v[..., None] * ab)
        assign((d6 >= 0.0) & (d5 <= d6), 2, c)
        w = d2 / (d2 - d6)
        assign((vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0), 5, a + w[..., None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0.0) & ((d4 - d3) >= 0.0) & ((d5 - d6) >= 0.0), 4, b + w[..., None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        assign(np.ones(shape, dtype=bool), 6, a + ab * v[..., None] + ac * w[..., None])
    return out, region


def _query_brute(queries, tris, pn, chunk=4096):
    n = queries.shape[0]
    nf = tris.shape[0]
    out_v = np.empty(n)
    out_g = np.empty((n, 3))
    out_c = np.empty((n, 3))
    out_f = np.empty(n, dtype=np.int64)
    out_r = np.empty(n, dtype=np.int64)
    step = max(1, chunk * 16 // max(nf, 1))
    for s in range(0, n, step):
        q = queries[s : s + step, None, :]
        cps, regs = _closest_on_triangles_np(tris, q)
        e = q - cps
        d2 = e[..., 0] * e[..., 0] + e[..., 1] * e[..., 1] + e[..., 2] * e[..., 2]
        f = np.argmin(d2, axis=1)
        rows = np.arange(f.shape[0])
        c = cps[rows, f]
        r = regs[rows, f]
        best = d2[rows, f]
        nrm = pn[f, r]
        diff = q[:, 0, :] - c
        d = np.sqrt(best)
        sdot = diff[:, 0] * nrm[:, 0] + diff[:, 1] * nrm[:, 1] + diff[:, 2] * nrm[:, 2]
        val = np.where(sdot >= 0.0, d, -d)
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = diff / val[:, None]
        grad = np.where((d > ON_SURFACE)[:, None], grad, nrm)
        sl = slice(s, s + f.shape[0])
        out_v[sl] = val
        out_g[sl] = grad
        out_c[sl] = c
        out_f[sl] = f
        out_r[sl] = r
    return out_v, out_g, out_c, out_f, out_r


def query(mesh, queries, use_numba=None):
    """Signed distance, gradient, closest point, face and region for each query."""
    queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if not use_numba:
        return _query_brute(queries, mesh.tris, mesh.region_normals)
    n = queries.shape[0]
    out_v = np.empty(n)
    out_g = np.empty((n, 3))
    out_c = np.empty((n, 3))
    out_f = np.empty(n, dtype=np.int64)
    out_r = np.empty(n, dtype=np.int64)
    b = mesh.bvh
    _query_bvh(
        queries, mesh.tris, mesh.region_normals,
        b.bmin, b.bmax, b.left, b.right, b.start, b.count, b.order,
        out_v, out_g, out_c, out_f, out_r,
    )
    return out_v, out_g, out_c, out_f, out_r
