"""Pure-numpy rasterizer kernels (fallback for the Cython extension).

Same contract as ``_cykernels``: soft_forward/soft_backward implement a
sigmoid-of-signed-squared-distance silhouette per part with per-pixel
"1 - product of (1 - D_j)" aggregation; hard_forward is a z-buffered label
rasterizer. Faces are processed in ascending index order in chunks, so
results match the sequential C loops to float accumulation order.
"""

from __future__ import annotations

import numpy as np

# Contributions with |gamma * d^2| beyond this logit are clamped to exactly
# 0/1; sigmoid(-23.03) ~ 1e-10, far below every gradient-check tolerance.
CUT = 23.025850929940457
_DEGENERATE_AREA = 1e-12
_CHUNK = 96


def _pixel_centers(res):
    step = 2.0 / res
    xs = -1.0 + (np.arange(res) + 0.5) * step
    ys = 1.0 - (np.arange(res) + 0.5) * step
    px = np.tile(xs, res)
    py = np.repeat(ys, res)
    return np.stack([px, py], axis=1)  # (P, 2), row-major over (i, j)


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _segment_geometry(tri, pix):
    """Min squared point-segment distance over the 3 edges of each triangle.

    Returns (d2min (C, P), seg (C, P) uint8, t (C, P)) where seg is the edge
    index (0: v0->v1, 1: v1->v2, 2: v2->v0) and t the clamped projection
    parameter along that edge.
    """
    c = tri.shape[0]
    p = pix.shape[0]
    d2 = np.empty((3, c, p))
    ts = np.empty((3, c, p))
    for e in range(3):
        u = tri[:, e][:, None, :]
        v = tri[:, (e + 1) % 3][:, None, :]
        uv = v - u
        den = (uv * uv).sum(-1)
        t = ((pix[None] - u) * uv).sum(-1) / np.maximum(den, 1e-30)
        t = np.clip(t, 0.0, 1.0)
        diff = pix[None] - (u + t[..., None] * uv)
        d2[e] = (diff * diff).sum(-1)
        ts[e] = t
    seg = np.argmin(d2, axis=0)
    d2min = np.take_along_axis(d2, seg[None], 0)[0]
    tmin = np.take_along_axis(ts, seg[None], 0)[0]
    return d2min, seg.astype(np.uint8), tmin


def _inside(tri, pix):
    a = tri[:, 0][:, None, :]
    b = tri[:, 1][:, None, :]
    c = tri[:, 2][:, None, :]
    cr0 = _cross(b - a, pix[None] - a)
    cr1 = _cross(c - b, pix[None] - b)
    cr2 = _cross(a - c, pix[None] - c)
    pos = (cr0 >= 0) & (cr1 >= 0) & (cr2 >= 0)
    neg = (cr0 <= 0) & (cr1 <= 0) & (cr2 <= 0)
    area2 = _cross((b - a)[:, 0, :], (c - a)[:, 0, :])
    return (pos | neg) & (np.abs(area2) > _DEGENERATE_AREA)[:, None]


def soft_forward(verts, faces, face_part, res, gamma):
    """Soft part silhouettes. Returns (stack (6, res, res), saved buffers)."""
    n_faces = faces.shape[0]
    n_pix = res * res
    pix = _pixel_centers(res)
    d_buf = np.zeros((n_faces, n_pix), dtype=np.float32)
    seg_buf = np.zeros((n_faces, n_pix), dtype=np.uint8)
    t_buf = np.zeros((n_faces, n_pix), dtype=np.float32)
    prod = np.ones((6, n_pix))
    nsat = np.zeros((6, n_pix), dtype=np.int32)
    for lo in range(0, n_faces, _CHUNK):
        sel = slice(lo, min(lo + _CHUNK, n_faces))
        tri = verts[faces[sel]]
        d2, seg, t = _segment_geometry(tri, pix)
        inside = _inside(tri, pix)
        arg = gamma * np.where(inside, d2, -d2)
        sat = arg >= CUT
        mid = (arg > -CUT) & ~sat
        dv = np.zeros_like(arg)
        dv[mid] = 1.0 / (1.0 + np.exp(-arg[mid]))
        dv[sat] = 1.0
        d_buf[sel] = dv
        seg_buf[sel] = seg | (inside.astype(np.uint8) << 2)
        t_buf[sel] = t
        parts = face_part[sel]
        for part in np.unique(parts):
            rows = np.nonzero(parts == part)[0]
            factors = np.where(sat[rows], 1.0, 1.0 - dv[rows])
            prod[part - 1] *= np.prod(factors, axis=0)
            nsat[part - 1] += sat[rows].sum(axis=0, dtype=np.int32)
    stack = np.where(nsat > 0, 1.0, 1.0 - prod).reshape(6, res, res)
    return stack, (d_buf, seg_buf, t_buf, prod, nsat)


def soft_backward(gstack, verts, faces, face_part, res, gamma, saved):
    """Gradient of soft_forward w.r.t. the 2-D vertices."""
    d_buf, seg_buf, t_buf, prod, nsat = saved
    n_faces = faces.shape[0]
    pix = _pixel_centers(res)
    gflat = gstack.reshape(6, -1)
    gverts = np.zeros_like(verts)
    for lo in range(0, n_faces, _CHUNK):
        sel = slice(lo, min(lo + _CHUNK, n_faces))
        fidx = faces[sel]
        tri = verts[fidx]
        dv = d_buf[sel]
        info = seg_buf[sel]
        t = t_buf[sel]
        part_idx = face_part[sel] - 1
        live = (dv > 0.0) & (dv < 1.0)
        if not live.any():
            continue
        one_minus = np.where(live, 1.0 - dv, 1.0)
        # d(stack)/dD_j is the product over the *other* faces of the part;
        # any saturated face zeroes it for every non-saturated contributor.
        excl = np.where(nsat[part_idx] > 0, 0.0, prod[part_idx] / one_minus)
        sgn = np.where(info & 4, 1.0, -1.0)
        coef = gflat[part_idx] * excl * dv * (1.0 - dv) * gamma * sgn * (-2.0)
        coef[~live] = 0.0
        seg = info & 3
        for e in range(3):
            mask = (seg == e) & live
            if not mask.any():
                continue
            u = tri[:, e][:, None, :]
            v = tri[:, (e + 1) % 3][:, None, :]
            resid = pix[None] - (u + t[..., None] * (v - u))
            w = np.where(mask, coef, 0.0)
            gu = ((w * (1.0 - t))[..., None] * resid).sum(axis=1)
            gv = ((w * t)[..., None] * resid).sum(axis=1)
            np.add.at(gverts, fidx[:, e], gu)
            np.add.at(gverts, fidx[:, (e + 1) % 3], gv)
    return gverts


def hard_forward(verts, depth, faces, face_part, res):
    """Z-buffered part-label image (res, res) uint8, 0 = background."""
    labels = np.zeros((res, res), dtype=np.uint8)
    zbuf = np.full((res, res), np.inf)
    step = 2.0 / res
    xs = -1.0 + (np.arange(res) + 0.5) * step
    ys = 1.0 - (np.arange(res) + 0.5) * step
    for f in range(faces.shape[0]):
        ia, ib, ic = faces[f]
        ax, ay = verts[ia]
        bx, by = verts[ib]
        cx, cy = verts[ic]
        denom = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(denom) < _DEGENERATE_AREA:
            continue
        xmin, xmax = min(ax, bx, cx), max(ax, bx, cx)
        ymin, ymax = min(ay, by, cy), max(ay, by, cy)
        j0 = max(0, int(np.ceil((xmin + 1.0) / step - 0.5)))
        j1 = min(res - 1, int(np.floor((xmax + 1.0) / step - 0.5)))
        i0 = max(0, int(np.ceil((1.0 - ymax) / step - 0.5)))
        i1 = min(res - 1, int(np.floor((1.0 - ymin) / step - 0.5)))
        if j0 > j1 or i0 > i1:
            continue
        px = xs[j0 : j1 + 1][None, :]
        py = ys[i0 : i1 + 1][:, None]
        wa = ((bx - px) * (cy - py) - (by - py) * (cx - px)) / denom
        wb = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) / denom
        wc = 1.0 - wa - wb
        inside = (wa >= 0) & (wb >= 0) & (wc >= 0)
        z = wa * depth[ia] + wb * depth[ib] + wc * depth[ic]
        zwin = zbuf[i0 : i1 + 1, j0 : j1 + 1]
        upd = inside & (z < zwin)
        zwin[upd] = z[upd]
        labels[i0 : i1 + 1, j0 : j1 + 1][upd] = face_part[f]
    return labels
