# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics mirror sportcal._kernels_py exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, ceil, INFINITY, isfinite

cnp.import_array()


cdef void _envelope_1d(const double* f, double* d, Py_ssize_t n, Py_ssize_t stride,
                       Py_ssize_t* v, double* z) noexcept nogil:
    # Lower envelope of parabolas rooted at finite samples only.
    cdef Py_ssize_t q, k = -1, vk
    cdef double s, fq
    for q in range(n):
        fq = f[q * stride]
        if not isfinite(fq):
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -INFINITY
            z[1] = INFINITY
            continue
        while True:
            vk = v[k]
            s = ((fq + <double>(q * q)) - (f[vk * stride] + <double>(vk * vk))) / (2.0 * (q - vk))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = INFINITY
    if k < 0:
        for q in range(n):
            d[q * stride] = INFINITY
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        vk = v[k]
        d[q * stride] = <double>((q - vk) * (q - vk)) + f[vk * stride]


def squared_edt(cnp.uint8_t[:, ::1] sites):
    """Exact squared Euclidean distance to the nearest nonzero pixel (inf if none)."""
    cdef Py_ssize_t h = sites.shape[0], w = sites.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] f = np.empty((h, w), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g = np.empty((h, w), dtype=np.float64)
    cdef Py_ssize_t m = max(h, w)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] v = np.empty(m, dtype=np.intp)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] z = np.empty(m + 1, dtype=np.float64)
    cdef double* fp = <double*> f.data
    cdef double* gp = <double*> g.data
    cdef Py_ssize_t* vp = <Py_ssize_t*> v.data
    cdef double* zp = <double*> z.data
    with nogil:
        for i in range(h):
            for j in range(w):
                fp[i * w + j] = 0.0 if sites[i, j] else INFINITY
        for i in range(h):
            _envelope_1d(fp + i * w, gp + i * w, w, 1, vp, zp)
        for j in range(w):
            _envelope_1d(gp + j, fp + j, h, w, vp, zp)
    return f


cdef inline bint _clip_segment(double* p, double xmin, double ymin,
                               double xmax, double ymax) noexcept nogil:
    # Liang-Barsky; p = [x0, y0, x1, y1] is clipped in place.
    cdef double dx = p[2] - p[0], dy = p[3] - p[1]
    cdef double t0 = 0.0, t1 = 1.0, r, x0, y0
    cdef double pk[4]
    cdef double qk[4]
    cdef int i
    pk[0] = -dx; qk[0] = p[0] - xmin
    pk[1] = dx; qk[1] = xmax - p[0]
    pk[2] = -dy; qk[2] = p[1] - ymin
    pk[3] = dy; qk[3] = ymax - p[1]
    for i in range(4):
        if pk[i] == 0.0:
            if qk[i] < 0.0:
                return False
        else:
            r = qk[i] / pk[i]
            if pk[i] < 0.0:
                if r > t1:
                    return False
                if r > t0:
                    t0 = r
            else:
                if r < t0:
                    return False
                if r < t1:
                    t1 = r
    x0 = p[0]
    y0 = p[1]
    p[0] = x0 + t0 * dx
    p[1] = y0 + t0 * dy
    p[2] = x0 + t1 * dx
    p[3] = y0 + t1 * dy
    return True


cdef inline void _update_interval(double a, double b, double* lo, double* hi) noexcept nogil:
    if a < lo[0]:
        lo[0] = a
    if b > hi[0]:
        hi[0] = b


cdef void _draw_capsule(cnp.uint8_t[:, ::1] img, double ax, double ay, double bx, double by,
                        double r) noexcept nogil:
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef double dx = bx - ax, dy = by - ay
    cdef double l2 = dx * dx + dy * dy
    cdef double rl = r * sqrt(l2)
    cdef double r2 = r * r
    cdef double ymin = (ay if ay < by else by) - r
    cdef double ymax = (ay if ay > by else by) + r
    cdef Py_ssize_t row, col, r0, r1, c0, c1
    cdef double y, ey, hw, lo, hi, slo, shi, plo, phi, tmp, ca, cb
    r0 = <Py_ssize_t> ceil(ymin - 0.5)
    r1 = <Py_ssize_t> floor(ymax - 0.5)
    if r0 < 0:
        r0 = 0
    if r1 > h - 1:
        r1 = h - 1
    for row in range(r0, r1 + 1):
        y = row + 0.5
        lo = INFINITY
        hi = -INFINITY
        ey = y - ay
        if ey * ey <= r2:
            hw = sqrt(r2 - ey * ey)
            _update_interval(ax - hw, ax + hw, &lo, &hi)
        ey = y - by
        if ey * ey <= r2:
            hw = sqrt(r2 - ey * ey)
            _update_interval(bx - hw, bx + hw, &lo, &hi)
        if l2 > 0.0:
            ey = y - ay
            slo = -INFINITY
            shi = INFINITY
            # projection parameter within [0, 1]
            if dx != 0.0:
                ca = ax + (-ey * dy) / dx
                cb = ax + (l2 - ey * dy) / dx
                if ca > cb:
                    tmp = ca; ca = cb; cb = tmp
                slo = ca
                shi = cb
            elif not (0.0 <= ey * dy and ey * dy <= l2):
                slo = INFINITY
            # perpendicular distance within r
            if dy != 0.0:
                ca = ax + (ey * dx - rl) / dy
                cb = ax + (ey * dx + rl) / dy
                if ca > cb:
                    tmp = ca; ca = cb; cb = tmp
                plo = ca
                phi = cb
            elif (ey * dx if ey * dx >= 0.0 else -ey * dx) <= rl:
                plo = -INFINITY
                phi = INFINITY
            else:
                plo = INFINITY
                phi = -INFINITY
            if plo > slo:
                slo = plo
            if phi < shi:
                shi = phi
            if slo <= shi:
                _update_interval(slo, shi, &lo, &hi)
        if lo > hi:
            continue
        c0 = <Py_ssize_t> ceil(lo - 0.5)
        c1 = <Py_ssize_t> floor(hi - 0.5)
        if c0 < 0:
            c0 = 0
        if c1 > w - 1:
            c1 = w - 1
        for col in range(c0, c1 + 1):
            img[row, col] = 255


def draw_segments(cnp.uint8_t[:, ::1] img, double[:, ::1] segs, double radius):
    """Set every pixel whose center is within `radius` of any segment to 255."""
    cdef Py_ssize_t n = segs.shape[0], i
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef double p[4]
    cdef double pad = radius + 1.0
    with nogil:
        for i in range(n):
            p[0] = segs[i, 0]
            p[1] = segs[i, 1]
            p[2] = segs[i, 2]
            p[3] = segs[i, 3]
            if not (isfinite(p[0]) and isfinite(p[1]) and isfinite(p[2]) and isfinite(p[3])):
                continue
            if not _clip_segment(p, -pad, -pad, w + pad, h + pad):
                continue
            _draw_capsule(img, p[0], p[1], p[2], p[3], radius)


def lk_accumulate(float[:, ::1] ref, float[:, ::1] query, float[:, ::1] gx, float[:, ::1] gy,
                  double[:, ::1] hn, bint with_jacobian=True, double border=0.0):
    """Gauss-Newton normal equations for query(W(x)) ~ ref(x).

    The warp acts in normalized coordinates x_n = (x - w/2) / (w/2) with pixel
    centers at integer + 0.5. Samples landing within ``border`` pixels of the
    query edge are skipped. Returns (JtJ (8, 8), Jt r (8,), sse, count).
    """
    cdef Py_ssize_t h = ref.shape[0], w = ref.shape[1]
    cdef double s = w / 2.0, cx = w / 2.0, cy = h / 2.0
    cdef cnp.ndarray[cnp.float64_t, ndim=2] A = np.zeros((8, 8), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] b = np.zeros(8, dtype=np.float64)
    cdef double[:, ::1] Av = A
    cdef double[::1] bv = b
    cdef double h00 = hn[0, 0], h01 = hn[0, 1], h02 = hn[0, 2]
    cdef double h10 = hn[1, 0], h11 = hn[1, 1], h12 = hn[1, 2]
    cdef double h20 = hn[2, 0], h21 = hn[2, 1], h22 = hn[2, 2]
    cdef double sse = 0.0
    cdef Py_ssize_t count = 0, i, j, a, c, x0, y0
    cdef double xn, yn, nu, nv, den, un, vn, ix, iy, fx, fy, qv, e, dqx, dqy, inv
    cdef double J[8]
    with nogil:
        for i in range(h):
            yn = (i + 0.5 - cy) / s
            for j in range(w):
                xn = (j + 0.5 - cx) / s
                den = h20 * xn + h21 * yn + h22
                if den <= 1e-12:
                    continue
                inv = 1.0 / den
                un = (h00 * xn + h01 * yn + h02) * inv
                vn = (h10 * xn + h11 * yn + h12) * inv
                ix = un * s + cx - 0.5
                iy = vn * s + cy - 0.5
                if not (ix >= border and ix <= w - 1 - border
                        and iy >= border and iy <= h - 1 - border):
                    continue
                x0 = <Py_ssize_t> floor(ix)
                y0 = <Py_ssize_t> floor(iy)
                if x0 > w - 2:
                    x0 = w - 2
                if y0 > h - 2:
                    y0 = h - 2
                fx = ix - x0
                fy = iy - y0
                qv = ((1.0 - fy) * ((1.0 - fx) * query[y0, x0] + fx * query[y0, x0 + 1])
                      + fy * ((1.0 - fx) * query[y0 + 1, x0] + fx * query[y0 + 1, x0 + 1]))
                e = ref[i, j] - qv
                sse += e * e
                count += 1
                if not with_jacobian:
                    continue
                dqx = s * ((1.0 - fy) * ((1.0 - fx) * gx[y0, x0] + fx * gx[y0, x0 + 1])
                           + fy * ((1.0 - fx) * gx[y0 + 1, x0] + fx * gx[y0 + 1, x0 + 1]))
                dqy = s * ((1.0 - fy) * ((1.0 - fx) * gy[y0, x0] + fx * gy[y0, x0 + 1])
                           + fy * ((1.0 - fx) * gy[y0 + 1, x0] + fx * gy[y0 + 1, x0 + 1]))
                if dqx == 0.0 and dqy == 0.0:
                    continue
                J[0] = dqx * xn * inv
                J[1] = dqx * yn * inv
                J[2] = dqx * inv
                J[3] = dqy * xn * inv
                J[4] = dqy * yn * inv
                J[5] = dqy * inv
                J[6] = -(dqx * un + dqy * vn) * xn * inv
                J[7] = -(dqx * un + dqy * vn) * yn * inv
                for a in range(8):
                    bv[a] += J[a] * e
                    for c in range(a, 8):
                        Av[a, c] += J[a] * J[c]
    for a in range(8):
        for c in range(a):
            A[a, c] = A[c, a]
    return A, b, sse, count
