"""Pure numpy implementations of the compiled kernels in ``_kernels.pyx``.

Used when the extension is not built or SPORTCAL_PURE_PYTHON=1 is set.
EDT and segment drawing are bit-identical to the compiled versions; the LK
accumulation matches up to floating-point summation order.
"""

from __future__ import annotations

import numpy as np


def _envelope_lines(f: np.ndarray) -> np.ndarray:
    """1D lower-envelope distance transform applied to every row of ``f`` at once."""
    m, n = f.shape
    out = np.full((m, n), np.inf)
    if m == 0 or n == 0:
        return out
    v = np.zeros((m, n), dtype=np.intp)
    z = np.zeros((m, n + 1))
    k = np.full(m, -1, dtype=np.intp)
    finite = np.isfinite(f)
    qsq = np.arange(n, dtype=np.float64) ** 2

    for q in range(n):
        col = finite[:, q]
        if not col.any():
            continue
        first = np.flatnonzero(col & (k < 0))
        if first.size:
            k[first] = 0
            v[first, 0] = q
            z[first, 0] = -np.inf
            z[first, 1] = np.inf
        active = np.flatnonzero(col & (k >= 0))
        active = np.setdiff1d(active, first, assume_unique=True)
        fq = f[:, q] + qsq[q]
        while active.size:
            ka = k[active]
            vk = v[active, ka]
            s = (fq[active] - (f[active, vk] + qsq[vk])) / (2.0 * (q - vk))
            pop = s <= z[active, ka]
            done = active[~pop]
            if done.size:
                kd = k[done] + 1
                k[done] = kd
                v[done, kd] = q
                z[done, kd] = s[~pop]
                z[done, kd + 1] = np.inf
            popped = active[pop]
            k[popped] -= 1
            active = popped

    rows = np.flatnonzero(k >= 0)
    if rows.size == 0:
        return out
    kk = np.zeros(rows.size, dtype=np.intp)
    for q in range(n):
        adv = z[rows, kk + 1] < q
        while adv.any():
            kk[adv] += 1
            adv = z[rows, kk + 1] < q
        vk = v[rows, kk]
        out[rows, q] = ((q - vk) * (q - vk)).astype(np.float64) + f[rows, vk]
    return out


def squared_edt(sites: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest nonzero pixel (inf if none)."""
    f = np.where(np.asarray(sites) != 0, 0.0, np.inf)
    g = _envelope_lines(f)
    return np.ascontiguousarray(_envelope_lines(g.T).T)


def _clip_segment(p: list[float], xmin: float, ymin: float, xmax: float, ymax: float) -> bool:
    dx = p[2] - p[0]
    dy = p[3] - p[1]
    t0, t1 = 0.0, 1.0
    for pk, qk in ((-dx, p[0] - xmin), (dx, xmax - p[0]), (-dy, p[1] - ymin), (dy, ymax - p[1])):
        if pk == 0.0:
            if qk < 0.0:
                return False
        else:
            r = qk / pk
            if pk < 0.0:
                if r > t1:
                    return False
                if r > t0:
                    t0 = r
            else:
                if r < t0:
                    return False
                if r < t1:
                    t1 = r
    x0, y0 = p[0], p[1]
    p[0] = x0 + t0 * dx
    p[1] = y0 + t0 * dy
    p[2] = x0 + t1 * dx
    p[3] = y0 + t1 * dy
    return True


def _draw_capsule(img: np.ndarray, ax: float, ay: float, bx: float, by: float, r: float) -> None:
    h, w = img.shape
    dx = bx - ax
    dy = by - ay
    l2 = dx * dx + dy * dy
    rl = r * np.sqrt(l2)
    r2 = r * r
    r0 = max(int(np.ceil(min(ay, by) - r - 0.5)), 0)
    r1 = min(int(np.floor(max(ay, by) + r - 0.5)), h - 1)
    if r1 < r0:
        return
    y = np.arange(r0, r1 + 1, dtype=np.float64) + 0.5
    lo = np.full(y.shape, np.inf)
    hi = np.full(y.shape, -np.inf)

    for cx, cy in ((ax, ay), (bx, by)):
        ey = y - cy
        inside = ey * ey <= r2
        hw = np.sqrt(np.where(inside, r2 - ey * ey, 0.0))
        lo = np.where(inside, np.minimum(lo, cx - hw), lo)
        hi = np.where(inside, np.maximum(hi, cx + hw), hi)

    if l2 > 0.0:
        ey = y - ay
        with np.errstate(divide="ignore", invalid="ignore"):
            if dx != 0.0:
                ca = ax + (-ey * dy) / dx
                cb = ax + (l2 - ey * dy) / dx
                slo, shi = np.minimum(ca, cb), np.maximum(ca, cb)
            else:
                ok = (0.0 <= ey * dy) & (ey * dy <= l2)
                slo = np.where(ok, -np.inf, np.inf)
                shi = np.full(y.shape, np.inf)
            if dy != 0.0:
                ca = ax + (ey * dx - rl) / dy
                cb = ax + (ey * dx + rl) / dy
                plo, phi = np.minimum(ca, cb), np.maximum(ca, cb)
            else:
                ok = np.abs(ey * dx) <= rl
                plo = np.where(ok, -np.inf, np.inf)
                phi = np.where(ok, np.inf, -np.inf)
        slo = np.maximum(slo, plo)
        shi = np.minimum(shi, phi)
        ok = slo <= shi
        lo = np.where(ok, np.minimum(lo, slo), lo)
        hi = np.where(ok, np.maximum(hi, shi), hi)

    for idx in np.flatnonzero(lo <= hi):
        c0 = max(int(np.ceil(lo[idx] - 0.5)), 0)
        c1 = min(int(np.floor(hi[idx] - 0.5)), w - 1)
        if c1 >= c0:
            img[r0 + idx, c0:c1 + 1] = 255


def draw_segments(img: np.ndarray, segs: np.ndarray, radius: float) -> None:
    """Set every pixel whose center is within `radius` of any segment to 255."""
    h, w = img.shape
    pad = radius + 1.0
    for row in np.asarray(segs, dtype=np.float64):
        if not np.all(np.isfinite(row)):
            continue
        p = [float(c) for c in row]
        if not _clip_segment(p, -pad, -pad, w + pad, h + pad):
            continue
        _draw_capsule(img, p[0], p[1], p[2], p[3], radius)


def _bilinear_weights(ix: np.ndarray, iy: np.ndarray, w: int, h: int):
    x0 = np.minimum(np.floor(ix).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(iy).astype(np.intp), h - 2)
    return x0, y0, ix - x0, iy - y0


def _sample(img: np.ndarray, x0, y0, fx, fy) -> np.ndarray:
    img = img.astype(np.float64, copy=False)
    return ((1.0 - fy) * ((1.0 - fx) * img[y0, x0] + fx * img[y0, x0 + 1])
            + fy * ((1.0 - fx) * img[y0 + 1, x0] + fx * img[y0 + 1, x0 + 1]))


def lk_accumulate(ref, query, gx, gy, hn, with_jacobian=True, border=0.0):
    """Gauss-Newton normal equations for query(W(x)) ~ ref(x); see the compiled twin."""
    h, w = ref.shape
    s = w / 2.0
    cx, cy = w / 2.0, h / 2.0
    yn, xn = np.meshgrid((np.arange(h) + 0.5 - cy) / s, (np.arange(w) + 0.5 - cx) / s,
                         indexing="ij")
    den = hn[2, 0] * xn + hn[2, 1] * yn + hn[2, 2]
    valid = den > 1e-12
    inv = np.where(valid, 1.0 / np.where(valid, den, 1.0), 0.0)
    un = (hn[0, 0] * xn + hn[0, 1] * yn + hn[0, 2]) * inv
    vn = (hn[1, 0] * xn + hn[1, 1] * yn + hn[1, 2]) * inv
    ix = un * s + cx - 0.5
    iy = vn * s + cy - 0.5
    valid &= (ix >= border) & (ix <= w - 1 - border) & (iy >= border) & (iy <= h - 1 - border)

    ix, iy, xn, yn, un, vn, inv = (a[valid] for a in (ix, iy, xn, yn, un, vn, inv))
    x0, y0, fx, fy = _bilinear_weights(ix, iy, w, h)
    e = np.asarray(ref, dtype=np.float64)[valid] - _sample(query, x0, y0, fx, fy)
    sse = float(e @ e)
    count = int(e.size)
    A = np.zeros((8, 8))
    b = np.zeros(8)
    if not with_jacobian or count == 0:
        return A, b, sse, count
    dqx = s * _sample(gx, x0, y0, fx, fy)
    dqy = s * _sample(gy, x0, y0, fx, fy)
    keep = (dqx != 0.0) | (dqy != 0.0)
    dqx, dqy, xn, yn, un, vn, inv, e = (a[keep] for a in (dqx, dqy, xn, yn, un, vn, inv, e))
    mix = -(dqx * un + dqy * vn)
    J = np.stack([dqx * xn * inv, dqx * yn * inv, dqx * inv,
                  dqy * xn * inv, dqy * yn * inv, dqy * inv,
                  mix * xn * inv, mix * yn * inv], axis=1)
    return J.T @ J, J.T @ e, sse, count
