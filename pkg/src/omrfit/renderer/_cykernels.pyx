# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Cython rasterizer kernels; contract identical to ``_npkernels``."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt

cnp.import_array()

# Contributions with |gamma * d^2| beyond this logit are clamped to exactly
# 0/1; sigmoid(-23.03) ~ 1e-10, far below every gradient-check tolerance.
cdef double CUT = 23.025850929940457
cdef double DEGENERATE_AREA = 1e-12


cdef inline double _fmin3(double a, double b, double c) noexcept nogil:
    cdef double m = a
    if b < m:
        m = b
    if c < m:
        m = c
    return m


cdef inline double _fmax3(double a, double b, double c) noexcept nogil:
    cdef double m = a
    if b > m:
        m = b
    if c > m:
        m = c
    return m


def soft_forward(const double[:, ::1] verts, const int[:, ::1] faces,
                 const int[::1] face_part, int res, double gamma):
    """Soft part silhouettes. Returns (stack (6, res, res), saved buffers)."""
    cdef int n_faces = faces.shape[0]
    cdef int n_pix = res * res
    d_arr = np.zeros((n_faces, n_pix), dtype=np.float32)
    seg_arr = np.zeros((n_faces, n_pix), dtype=np.uint8)
    t_arr = np.zeros((n_faces, n_pix), dtype=np.float32)
    prod_arr = np.ones((6, n_pix))
    nsat_arr = np.zeros((6, n_pix), dtype=np.int32)
    stack_arr = np.zeros((6, res, res))
    cdef float[:, ::1] d_buf = d_arr
    cdef unsigned char[:, ::1] seg_buf = seg_arr
    cdef float[:, ::1] t_buf = t_arr
    cdef double[:, ::1] prod = prod_arr
    cdef int[:, ::1] nsat = nsat_arr

    cdef double step = 2.0 / res
    cdef double rcut = sqrt(CUT / gamma)
    cdef int f, i, j, e, p, part, i0, i1, j0, j1, best_e, is_inside
    cdef int ia, ib, ic, ua, ub
    cdef double tx[3]
    cdef double ty[3]
    cdef double xmin, xmax, ymin, ymax, area2
    cdef double px, py, dx, dy, ux, uy, vx, vy, den, t, ddx, ddy, d2
    cdef double best_d2, best_t, cr0, cr1, cr2, arg, dv
    cdef bint pos, neg, degenerate

    for f in range(n_faces):
        ia = faces[f, 0]
        ib = faces[f, 1]
        ic = faces[f, 2]
        tx[0] = verts[ia, 0]
        ty[0] = verts[ia, 1]
        tx[1] = verts[ib, 0]
        ty[1] = verts[ib, 1]
        tx[2] = verts[ic, 0]
        ty[2] = verts[ic, 1]
        part = face_part[f] - 1
        xmin = _fmin3(tx[0], tx[1], tx[2])
        xmax = _fmax3(tx[0], tx[1], tx[2])
        ymin = _fmin3(ty[0], ty[1], ty[2])
        ymax = _fmax3(ty[0], ty[1], ty[2])
        area2 = (tx[1] - tx[0]) * (ty[2] - ty[0]) - (ty[1] - ty[0]) * (tx[2] - tx[0])
        degenerate = fabs(area2) < DEGENERATE_AREA
        j0 = <int>((xmin - rcut + 1.0) / step - 0.5) - 1
        j1 = <int>((xmax + rcut + 1.0) / step - 0.5) + 1
        i0 = <int>((1.0 - ymax - rcut) / step - 0.5) - 1
        i1 = <int>((1.0 - ymin + rcut) / step - 0.5) + 1
        if j0 < 0:
            j0 = 0
        if j1 > res - 1:
            j1 = res - 1
        if i0 < 0:
            i0 = 0
        if i1 > res - 1:
            i1 = res - 1
        for i in range(i0, i1 + 1):
            py = 1.0 - (i + 0.5) * step
            dy = 0.0
            if ymin - py > dy:
                dy = ymin - py
            if py - ymax > dy:
                dy = py - ymax
            for j in range(j0, j1 + 1):
                px = -1.0 + (j + 0.5) * step
                dx = 0.0
                if xmin - px > dx:
                    dx = xmin - px
                if px - xmax > dx:
                    dx = px - xmax
                if gamma * (dx * dx + dy * dy) > CUT:
                    continue
                best_d2 = 1e300
                best_t = 0.0
                best_e = 0
                for e in range(3):
                    ux = tx[e]
                    uy = ty[e]
                    vx = tx[(e + 1) % 3]
                    vy = ty[(e + 1) % 3]
                    ddx = vx - ux
                    ddy = vy - uy
                    den = ddx * ddx + ddy * ddy
                    if den < 1e-30:
                        den = 1e-30
                    t = ((px - ux) * ddx + (py - uy) * ddy) / den
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                    ddx = px - (ux + t * ddx)
                    ddy = py - (uy + t * ddy)
                    d2 = ddx * ddx + ddy * ddy
                    if d2 < best_d2:
                        best_d2 = d2
                        best_t = t
                        best_e = e
                cr0 = (tx[1] - tx[0]) * (py - ty[0]) - (ty[1] - ty[0]) * (px - tx[0])
                cr1 = (tx[2] - tx[1]) * (py - ty[1]) - (ty[2] - ty[1]) * (px - tx[1])
                cr2 = (tx[0] - tx[2]) * (py - ty[2]) - (ty[0] - ty[2]) * (px - tx[2])
                pos = cr0 >= 0.0 and cr1 >= 0.0 and cr2 >= 0.0
                neg = cr0 <= 0.0 and cr1 <= 0.0 and cr2 <= 0.0
                is_inside = 1 if ((pos or neg) and not degenerate) else 0
                arg = gamma * (best_d2 if is_inside else -best_d2)
                if arg <= -CUT:
                    continue
                p = i * res + j
                if arg >= CUT:
                    d_buf[f, p] = 1.0
                    nsat[part, p] += 1
                    continue
                dv = 1.0 / (1.0 + exp(-arg))
                d_buf[f, p] = <float>dv
                seg_buf[f, p] = <unsigned char>(best_e | (4 if is_inside else 0))
                t_buf[f, p] = <float>best_t
                prod[part, p] *= 1.0 - dv

    cdef double[:, :, ::1] stack = stack_arr
    for part in range(6):
        for i in range(res):
            for j in range(res):
                p = i * res + j
                if nsat[part, p] > 0:
                    stack[part, i, j] = 1.0
                else:
                    stack[part, i, j] = 1.0 - prod[part, p]
    return stack_arr, (d_arr, seg_arr, t_arr, prod_arr, nsat_arr)


def soft_backward(const double[:, :, ::1] gstack, const double[:, ::1] verts,
                  const int[:, ::1] faces, const int[::1] face_part,
                  int res, double gamma, saved):
    """Gradient of soft_forward w.r.t. the 2-D vertices."""
    d_arr, seg_arr, t_arr, prod_arr, nsat_arr = saved
    cdef float[:, ::1] d_buf = d_arr
    cdef unsigned char[:, ::1] seg_buf = seg_arr
    cdef float[:, ::1] t_buf = t_arr
    cdef double[:, ::1] prod = prod_arr
    cdef int[:, ::1] nsat = nsat_arr
    cdef int n_faces = faces.shape[0]
    gverts_arr = np.zeros((verts.shape[0], 2))
    cdef double[:, ::1] gverts = gverts_arr

    cdef double step = 2.0 / res
    cdef double rcut = sqrt(CUT / gamma)
    cdef int f, i, j, e, p, part, i0, i1, j0, j1, ua, ub
    cdef double tx[3]
    cdef double ty[3]
    cdef double xmin, xmax, ymin, ymax
    cdef double px, py, dv, t, excl, coef, sgn, ux, uy, vx, vy, rx, ry, gs

    for f in range(n_faces):
        tx[0] = verts[faces[f, 0], 0]
        ty[0] = verts[faces[f, 0], 1]
        tx[1] = verts[faces[f, 1], 0]
        ty[1] = verts[faces[f, 1], 1]
        tx[2] = verts[faces[f, 2], 0]
        ty[2] = verts[faces[f, 2], 1]
        part = face_part[f] - 1
        xmin = _fmin3(tx[0], tx[1], tx[2])
        xmax = _fmax3(tx[0], tx[1], tx[2])
        ymin = _fmin3(ty[0], ty[1], ty[2])
        ymax = _fmax3(ty[0], ty[1], ty[2])
        j0 = <int>((xmin - rcut + 1.0) / step - 0.5) - 1
        j1 = <int>((xmax + rcut + 1.0) / step - 0.5) + 1
        i0 = <int>((1.0 - ymax - rcut) / step - 0.5) - 1
        i1 = <int>((1.0 - ymin + rcut) / step - 0.5) + 1
        if j0 < 0:
            j0 = 0
        if j1 > res - 1:
            j1 = res - 1
        if i0 < 0:
            i0 = 0
        if i1 > res - 1:
            i1 = res - 1
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                p = i * res + j
                dv = d_buf[f, p]
                if dv <= 0.0 or dv >= 1.0:
                    continue
                if nsat[part, p] > 0:
                    continue
                gs = gstack[part, i, j]
                if gs == 0.0:
                    continue
                excl = prod[part, p] / (1.0 - dv)
                sgn = 1.0 if (seg_buf[f, p] & 4) else -1.0
                coef = gs * excl * dv * (1.0 - dv) * gamma * sgn * (-2.0)
                e = seg_buf[f, p] & 3
                t = t_buf[f, p]
                ux = tx[e]
                uy = ty[e]
                vx = tx[(e + 1) % 3]
                vy = ty[(e + 1) % 3]
                px = -1.0 + (j + 0.5) * step
                py = 1.0 - (i + 0.5) * step
                rx = px - (ux + t * (vx - ux))
                ry = py - (uy + t * (vy - uy))
                ua = faces[f, e]
                ub = faces[f, (e + 1) % 3]
                gverts[ua, 0] += coef * (1.0 - t) * rx
                gverts[ua, 1] += coef * (1.0 - t) * ry
                gverts[ub, 0] += coef * t * rx
                gverts[ub, 1] += coef * t * ry
    return gverts_arr


def hard_forward(const double[:, ::1] verts, const double[::1] depth,
                 const int[:, ::1] faces, const int[::1] face_part, int res):
    """Z-buffered part-label image (res, res) uint8, 0 = background."""
    labels_arr = np.zeros((res, res), dtype=np.uint8)
    zbuf_arr = np.full((res, res), np.inf)
    cdef unsigned char[:, ::1] labels = labels_arr
    cdef double[:, ::1] zbuf = zbuf_arr
    cdef int n_faces = faces.shape[0]
    cdef double step = 2.0 / res
    cdef int f, i, j, i0, i1, j0, j1, ia, ib, ic
    cdef double ax, ay, bx, by, cx, cy, denom, xmin, xmax, ymin, ymax
    cdef double px, py, wa, wb, wc, z

    for f in range(n_faces):
        ia = faces[f, 0]
        ib = faces[f, 1]
        ic = faces[f, 2]
        ax = verts[ia, 0]
        ay = verts[ia, 1]
        bx = verts[ib, 0]
        by = verts[ib, 1]
        cx = verts[ic, 0]
        cy = verts[ic, 1]
        denom = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if fabs(denom) < DEGENERATE_AREA:
            continue
        xmin = _fmin3(ax, bx, cx)
        xmax = _fmax3(ax, bx, cx)
        ymin = _fmin3(ay, by, cy)
        ymax = _fmax3(ay, by, cy)
        j0 = <int>((xmin + 1.0) / step + 0.5) - 1
        j1 = <int>((xmax + 1.0) / step - 0.5) + 1
        i0 = <int>((1.0 - ymax) / step + 0.5) - 1
        i1 = <int>((1.0 - ymin) / step - 0.5) + 1
        if j0 < 0:
            j0 = 0
        if j1 > res - 1:
            j1 = res - 1
        if i0 < 0:
            i0 = 0
        if i1 > res - 1:
            i1 = res - 1
        for i in range(i0, i1 + 1):
            py = 1.0 - (i + 0.5) * step
            for j in range(j0, j1 + 1):
                px = -1.0 + (j + 0.5) * step
                wa = ((bx - px) * (cy - py) - (by - py) * (cx - px)) / denom
                wb = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) / denom
                wc = 1.0 - wa - wb
                if wa < 0.0 or wb < 0.0 or wc < 0.0:
                    continue
                z = wa * depth[ia] + wb * depth[ib] + wc * depth[ic]
                if z < zbuf[i, j]:
                    zbuf[i, j] = z
                    labels[i, j] = <unsigned char>face_part[f]
    return labels_arr
