"""Compiled polygon/pixel-grid kernels shared by the renderer and the OT solver.

A pixel grid is described by ``(x0, y0, dx, dy, nw, nh)``: origin of the
region, pixel sizes and pixel counts. Images are indexed ``img[row, col]``
with ``row`` growing with ``y``.

All loops are serial so floating-point accumulation order is fixed.
"""
import numpy as np
import numba as nb

MAXV = 24  # convex polygon clipped by 4 half-planes; cells may carry more


@nb.njit(cache=True, inline="always")
def _coord(px, py, k, axis):
    return px[k] if axis == 0 else py[k]


@nb.njit(cache=True)
def _clip(px, py, n, axis, c, keep_greater, ox, oy):
    """Sutherland-Hodgman clip against ``coord >= c`` or ``coord <= c``."""
    m = 0
    for k in range(n):
        k2 = k + 1 if k + 1 < n else 0
        a = _coord(px, py, k, axis)
        b = _coord(px, py, k2, axis)
        ina = a >= c if keep_greater else a <= c
        inb = b >= c if keep_greater else b <= c
        if ina:
            ox[m] = px[k]
            oy[m] = py[k]
            m += 1
        if ina != inb:
            t = (c - a) / (b - a)
            if axis == 0:
                ox[m] = c
                oy[m] = py[k] + t * (py[k2] - py[k])
            else:
                ox[m] = px[k] + t * (px[k2] - px[k])
                oy[m] = c
            m += 1
    return m


@nb.njit(cache=True)
def _clip_jac(px, py, pj, n, axis, c, keep_greater, ox, oy, oj):
    """Same as ``_clip`` while carrying d(vertex)/d(input params), shape (2, P)."""
    m = 0
    npar = pj.shape[2]
    other = 1 - axis
    for k in range(n):
        k2 = k + 1 if k + 1 < n else 0
        a = _coord(px, py, k, axis)
        b = _coord(px, py, k2, axis)
        ina = a >= c if keep_greater else a <= c
        inb = b >= c if keep_greater else b <= c
        if ina:
            ox[m] = px[k]
            oy[m] = py[k]
            for q in range(npar):
                oj[m, 0, q] = pj[k, 0, q]
                oj[m, 1, q] = pj[k, 1, q]
            m += 1
        if ina != inb:
            den = b - a
            t = (c - a) / den
            if axis == 0:
                ox[m] = c
                oy[m] = py[k] + t * (py[k2] - py[k])
                dother = py[k2] - py[k]
            else:
                ox[m] = px[k] + t * (px[k2] - px[k])
                oy[m] = c
                dother = px[k2] - px[k]
            for q in range(npar):
                dt = (-(1.0 - t) * pj[k, axis, q] - t * pj[k2, axis, q]) / den
                oj[m, axis, q] = 0.0
                oj[m, other, q] = ((1.0 - t) * pj[k, other, q]
                                   + t * pj[k2, other, q] + dt * dother)
            m += 1
    return m


@nb.njit(cache=True)
def _shoelace(px, py, n):
    s = 0.0
    for k in range(n):
        k2 = k + 1 if k + 1 < n else 0
        s += px[k] * py[k2] - px[k2] * py[k]
    return 0.5 * s


@nb.njit(cache=True)
def _shoelace_grad(px, py, pj, n, sign, w, out):
    """out += w * sign * dA/dparams for the polygon with Jacobian ``pj``."""
    npar = pj.shape[2]
    for k in range(n):
        kn = k + 1 if k + 1 < n else 0
        kp = k - 1 if k > 0 else n - 1
        gx = 0.5 * (py[kn] - py[kp]) * sign * w
        gy = 0.5 * (px[kp] - px[kn]) * sign * w
        for q in range(npar):
            out[q] += gx * pj[k, 0, q] + gy * pj[k, 1, q]


@nb.njit(cache=True)
def green_second_moment(px, py, n, x0, y0):
    """Integral of (x-x0)^2 + (y-y0)^2 over a CCW simple polygon.

    Sums the closed-form line integrals of Q dy with Q = x (y-y0)^2 and
    P dx with P = -y (x-x0)^2 over every boundary edge.
    """
    total = 0.0
    for k in range(n):
        k2 = k + 1 if k + 1 < n else 0
        x1 = px[k]
        y1 = py[k]
        x2 = px[k2]
        y2 = py[k2]
        cr = x1 * y2 - x2 * y1
        qdy = ((x2 - x1) / 4.0 * (y1 + y2) * (y1 * y1 + y2 * y2)
               + (cr - 2.0 * y0 * (x2 - x1)) / 3.0 * (y1 * y1 + y2 * y2 + y1 * y2)
               + (y0 * y0 * (x2 - x1) - 2.0 * y0 * cr) / 2.0 * (y1 + y2)
               + y0 * y0 * cr)
        pdx = ((y1 - y2) / 4.0 * (x1 + x2) * (x1 * x1 + x2 * x2)
               + (cr + 2.0 * x0 * (y2 - y1)) / 3.0 * (x1 * x1 + x2 * x2 + x1 * x2)
               + (x0 * x0 * (y1 - y2) - 2.0 * x0 * cr) / 2.0 * (x1 + x2)
               + x0 * x0 * cr)
        total += qdy + pdx
    return total


@nb.njit(cache=True)
def _first_moments(px, py, n):
    sx = 0.0
    sy = 0.0
    for k in range(n):
        k2 = k + 1 if k + 1 < n else 0
        cr = px[k] * py[k2] - px[k2] * py[k]
        sx += (px[k] + px[k2]) * cr
        sy += (py[k] + py[k2]) * cr
    return sx / 6.0, sy / 6.0


@nb.njit(cache=True)
def _pixel_range(lo, hi, origin, step, count):
    a = int(np.floor((lo - origin) / step))
    b = int(np.floor((hi - origin) / step))
    if a < 0:
        a = 0
    if b > count - 1:
        b = count - 1
    return a, b


# --------------------------------------------------------------------------
# triangles -> pixels
# --------------------------------------------------------------------------

@nb.njit(cache=True)
def raster_forward(tris, phi, x0, y0, dx, dy, nw, nh, degen_tol):
    """Spread each triangle's flux over the pixels it overlaps.

    Returns ``(image, spilled, signed_areas)``. Flux outside the grid goes to
    ``spilled``; a triangle thinner than ``degen_tol`` (absolute area) drops
    all of its flux in the pixel containing its centroid.
    """
    img = np.zeros((nh, nw))
    spilled = 0.0
    nt = tris.shape[0]
    areas = np.empty(nt)
    cx = np.empty(MAXV)
    cy = np.empty(MAXV)
    rx = np.empty(MAXV)
    ry = np.empty(MAXV)
    tx = np.empty(3)
    ty = np.empty(3)
    ox = np.empty(MAXV)
    oy = np.empty(MAXV)
    for i in range(nt):
        bx = min(tris[i, 0, 0], tris[i, 1, 0], tris[i, 2, 0])
        by = min(tris[i, 0, 1], tris[i, 1, 1], tris[i, 2, 1])
        ex = max(tris[i, 0, 0], tris[i, 1, 0], tris[i, 2, 0])
        ey = max(tris[i, 0, 1], tris[i, 1, 1], tris[i, 2, 1])
        for k in range(3):
            tx[k] = tris[i, k, 0] - bx
            ty[k] = tris[i, k, 1] - by
        sa = _shoelace(tx, ty, 3)
        areas[i] = sa
        a = abs(sa)
        if phi[i] == 0.0:
            continue
        if a <= degen_tol:
            gx = (tris[i, 0, 0] + tris[i, 1, 0] + tris[i, 2, 0]) / 3.0
            gy = (tris[i, 0, 1] + tris[i, 1, 1] + tris[i, 2, 1]) / 3.0
            c = int(np.floor((gx - x0) / dx))
            r = int(np.floor((gy - y0) / dy))
            if 0 <= c < nw and 0 <= r < nh:
                img[r, c] += phi[i]
            else:
                spilled += phi[i]
            continue
        sign = 1.0 if sa > 0 else -1.0
        coef = phi[i] / a
        deposited = 0.0
        c0, c1 = _pixel_range(bx, ex, x0, dx, nw)
        r0, r1 = _pixel_range(by, ey, y0, dy, nh)
        for c in range(c0, c1 + 1):
            xl = x0 + c * dx - bx
            m = _clip(tx, ty, 3, 0, xl, True, cx, cy)
            if m < 3:
                continue
            m = _clip(cx, cy, m, 0, xl + dx, False, rx, ry)
            if m < 3:
                continue
            for r in range(r0, r1 + 1):
                yb = y0 + r * dy - by
                k = _clip(rx, ry, m, 1, yb, True, cx, cy)
                if k < 3:
                    continue
                k = _clip(cx, cy, k, 1, yb + dy, False, ox, oy)
                if k < 3:
                    continue
                v = coef * sign * _shoelace(ox, oy, k)
                if v != 0.0:
                    img[r, c] += v
                    deposited += v
        spilled += phi[i] - deposited
    return img, spilled, areas


@nb.njit(cache=True)
def _tri_weighted_area(tri, weights, x0, y0, dx, dy, nw, nh, grad, want_grad,
                       cx, cy, cj, rx, ry, rj, ox, oy, oj, tj):
    """Sum over pixels of weights[r, c] * |A(tri ∩ pixel)|; grad is (6,)."""
    bx = min(tri[0, 0], tri[1, 0], tri[2, 0])
    by = min(tri[0, 1], tri[1, 1], tri[2, 1])
    ex = max(tri[0, 0], tri[1, 0], tri[2, 0])
    ey = max(tri[0, 1], tri[1, 1], tri[2, 1])
    tx = np.empty(3)
    ty = np.empty(3)
    for k in range(3):
        tx[k] = tri[k, 0] - bx
        ty[k] = tri[k, 1] - by
    sa = _shoelace(tx, ty, 3)
    sign = 1.0 if sa >= 0 else -1.0
    total = 0.0
    c0, c1 = _pixel_range(bx, ex, x0, dx, nw)
    r0, r1 = _pixel_range(by, ey, y0, dy, nh)
    for c in range(c0, c1 + 1):
        xl = x0 + c * dx - bx
        if want_grad:
            m = _clip_jac(tx, ty, tj, 3, 0, xl, True, cx, cy, cj)
        else:
            m = _clip(tx, ty, 3, 0, xl, True, cx, cy)
        if m < 3:
            continue
        if want_grad:
            m = _clip_jac(cx, cy, cj, m, 0, xl + dx, False, rx, ry, rj)
        else:
            m = _clip(cx, cy, m, 0, xl + dx, False, rx, ry)
        if m < 3:
            continue
        for r in range(r0, r1 + 1):
            w = weights[r, c]
            if w == 0.0:
                continue
            yb = y0 + r * dy - by
            if want_grad:
                k = _clip_jac(rx, ry, rj, m, 1, yb, True, cx, cy, cj)
            else:
                k = _clip(rx, ry, m, 1, yb, True, cx, cy)
            if k < 3:
                continue
            if want_grad:
                k = _clip_jac(cx, cy, cj, k, 1, yb + dy, False, ox, oy, oj)
            else:
                k = _clip(cx, cy, k, 1, yb + dy, False, ox, oy)
            if k < 3:
                continue
            total += w * sign * _shoelace(ox, oy, k)
            if want_grad:
                _shoelace_grad(ox, oy, oj, k, sign, w, grad)
    return total, sa


@nb.njit(cache=True)
def _scratch():
    cx = np.empty(MAXV)
    cy = np.empty(MAXV)
    cj = np.empty((MAXV, 2, 6))
    rx = np.empty(MAXV)
    ry = np.empty(MAXV)
    rj = np.empty((MAXV, 2, 6))
    ox = np.empty(MAXV)
    oy = np.empty(MAXV)
    oj = np.empty((MAXV, 2, 6))
    tj = np.zeros((3, 2, 6))
    for k in range(3):
        tj[k, 0, 2 * k] = 1.0
        tj[k, 1, 2 * k + 1] = 1.0
    return cx, cy, cj, rx, ry, rj, ox, oy, oj, tj


@nb.njit(cache=True)
def weighted_areas(tris, weights, x0, y0, dx, dy, nw, nh, want_grad):
    """Per-triangle weighted overlap area with a pixel grid and its gradient.

    Returns ``(values (n,), grads (n, 3, 2))``.
    """
    nt = tris.shape[0]
    vals = np.zeros(nt)
    grads = np.zeros((nt, 3, 2))
    cx, cy, cj, rx, ry, rj, ox, oy, oj, tj = _scratch()
    g = np.zeros(6)
    for i in range(nt):
        g[:] = 0.0
        v, _ = _tri_weighted_area(tris[i], weights, x0, y0, dx, dy, nw, nh, g,
                                  want_grad, cx, cy, cj, rx, ry, rj, ox, oy, oj, tj)
        vals[i] = v
        if want_grad:
            for k in range(3):
                grads[i, k, 0] = g[2 * k]
                grads[i, k, 1] = g[2 * k + 1]
    return vals, grads


@nb.njit(cache=True)
def raster_vjp(tris, phi, wpix, wspill, x0, y0, dx, dy, nw, nh, degen_tol):
    """Adjoint of ``raster_forward`` for L = sum(wpix * image) + wspill * spilled.

    Returns ``(dL/dtris (n,3,2), dL/dphi (n,))`` with clip topology frozen.
    """
    nt = tris.shape[0]
    gt = np.zeros((nt, 3, 2))
    gphi = np.zeros(nt)
    wrel = wpix - wspill
    cx, cy, cj, rx, ry, rj, ox, oy, oj, tj = _scratch()
    g = np.zeros(6)
    for i in range(nt):
        ax = tris[i, 1, 0] - tris[i, 0, 0]
        ay = tris[i, 1, 1] - tris[i, 0, 1]
        bx = tris[i, 2, 0] - tris[i, 0, 0]
        by = tris[i, 2, 1] - tris[i, 0, 1]
        sa = 0.5 * (ax * by - ay * bx)
        a = abs(sa)
        if a <= degen_tol:
            gx = (tris[i, 0, 0] + tris[i, 1, 0] + tris[i, 2, 0]) / 3.0
            gy = (tris[i, 0, 1] + tris[i, 1, 1] + tris[i, 2, 1]) / 3.0
            c = int(np.floor((gx - x0) / dx))
            r = int(np.floor((gy - y0) / dy))
            if 0 <= c < nw and 0 <= r < nh:
                gphi[i] = wpix[r, c]
            else:
                gphi[i] = wspill
            continue
        g[:] = 0.0
        s, _ = _tri_weighted_area(tris[i], wrel, x0, y0, dx, dy, nw, nh, g,
                                  True, cx, cy, cj, rx, ry, rj, ox, oy, oj, tj)
        gphi[i] = wspill + s / a
        if phi[i] == 0.0:
            continue
        sign = 1.0 if sa > 0 else -1.0
        # dA/dtri for |signed area|
        da = np.empty(6)
        da[0] = 0.5 * sign * (tris[i, 1, 1] - tris[i, 2, 1])
        da[1] = 0.5 * sign * (tris[i, 2, 0] - tris[i, 1, 0])
        da[2] = 0.5 * sign * (tris[i, 2, 1] - tris[i, 0, 1])
        da[3] = 0.5 * sign * (tris[i, 0, 0] - tris[i, 2, 0])
        da[4] = 0.5 * sign * (tris[i, 0, 1] - tris[i, 1, 1])
        da[5] = 0.5 * sign * (tris[i, 1, 0] - tris[i, 0, 0])
        f = phi[i] / a
        for k in range(3):
            for d in range(2):
                q = 2 * k + d
                gt[i, k, d] = f * (g[q] - s * da[q] / a)
    return gt, gphi


# --------------------------------------------------------------------------
# convex cells -> pixels (OT)
# --------------------------------------------------------------------------

@nb.njit(cache=True)
def cell_moments(ptr, poly, centers, density, x0, y0, dx, dy, nw, nh):
    """Integrate a piecewise-constant density over convex CCW cells.

    ``poly[ptr[i]:ptr[i+1]]`` are the vertices of cell ``i``. Returns per
    cell ``(mass, first moment (n,2), second moment about centers[i], area)``,
    each accumulated pixel by pixel over the sub-polygons cell ∩ pixel.
    """
    n = ptr.shape[0] - 1
    mass = np.zeros(n)
    mom = np.zeros((n, 2))
    sec = np.zeros(n)
    area = np.zeros(n)
    big = 8
    for i in range(n):
        big = max(big, ptr[i + 1] - ptr[i] + 8)
    px = np.empty(big)
    py = np.empty(big)
    cx = np.empty(big)
    cy = np.empty(big)
    rx = np.empty(big)
    ry = np.empty(big)
    ox = np.empty(big)
    oy = np.empty(big)
    for i in range(n):
        nv = ptr[i + 1] - ptr[i]
        if nv < 3:
            continue
        bx = np.inf
        by = np.inf
        ex = -np.inf
        ey = -np.inf
        for k in range(nv):
            x = poly[ptr[i] + k, 0]
            y = poly[ptr[i] + k, 1]
            bx = min(bx, x)
            by = min(by, y)
            ex = max(ex, x)
            ey = max(ey, y)
        for k in range(nv):
            px[k] = poly[ptr[i] + k, 0] - bx
            py[k] = poly[ptr[i] + k, 1] - by
        area[i] = _shoelace(px, py, nv)
        c0, c1 = _pixel_range(bx, ex, x0, dx, nw)
        r0, r1 = _pixel_range(by, ey, y0, dy, nh)
        for c in range(c0, c1 + 1):
            xl = x0 + c * dx
            m = _clip(px, py, nv, 0, xl - bx, True, cx, cy)
            if m < 3:
                continue
            m = _clip(cx, cy, m, 0, xl + dx - bx, False, rx, ry)
            if m < 3:
                continue
            for r in range(r0, r1 + 1):
                rho = density[r, c]
                if rho == 0.0:
                    continue
                yb = y0 + r * dy
                k = _clip(rx, ry, m, 1, yb - by, True, cx, cy)
                if k < 3:
                    continue
                k = _clip(cx, cy, k, 1, yb + dy - by, False, ox, oy)
                if k < 3:
                    continue
                # local frame at the pixel corner keeps magnitudes small
                for q in range(k):
                    ox[q] -= xl - bx
                    oy[q] -= yb - by
                a = _shoelace(ox, oy, k)
                if a <= 0.0:
                    continue
                sx, sy = _first_moments(ox, oy, k)
                mass[i] += rho * a
                mom[i, 0] += rho * (sx + xl * a)
                mom[i, 1] += rho * (sy + yb * a)
                sec[i] += rho * green_second_moment(
                    ox, oy, k, centers[i, 0] - xl, centers[i, 1] - yb)
    return mass, mom, sec, area


@nb.njit(cache=True)
def power_cells(sites, weights, nbr_ptr, nbr_idx, rx0, ry0, rx1, ry1):
    """Clip the region rectangle by power bisectors against listed neighbours.

    Returns ``(ptr, poly)`` in the layout used by :func:`cell_moments`.
    """
    n = sites.shape[0]
    ptr = np.zeros(n + 1, dtype=np.int64)
    cap = 8 * n + 16
    poly = np.empty((cap, 2))
    deg = 0
    for i in range(n):
        deg = max(deg, nbr_ptr[i + 1] - nbr_ptr[i])
    ax = np.empty(deg + 8)
    ay = np.empty(deg + 8)
    bx = np.empty(deg + 8)
    by = np.empty(deg + 8)
    used = 0
    for i in range(n):
        ax[0] = rx0
        ay[0] = ry0
        ax[1] = rx1
        ay[1] = ry0
        ax[2] = rx1
        ay[2] = ry1
        ax[3] = rx0
        ay[3] = ry1
        m = 4
        if n > 1 and nbr_ptr[i + 1] == nbr_ptr[i]:
            m = 0  # absent from the lower hull: hidden site
        ci0 = sites[i, 0]
        ci1 = sites[i, 1]
        ni = ci0 * ci0 + ci1 * ci1
        for q in range(nbr_ptr[i], nbr_ptr[i + 1]):
            if m == 0:
                break
            j = nbr_idx[q]
            if j == i:
                continue
            nx_ = sites[j, 0] - ci0
            ny_ = sites[j, 1] - ci1
            rhs = 0.5 * (sites[j, 0] ** 2 + sites[j, 1] ** 2 - ni
                         + weights[i] - weights[j])
            # keep nx_*x + ny_*y <= rhs
            k = 0
            for p in range(m):
                p2 = p + 1 if p + 1 < m else 0
                fa = nx_ * ax[p] + ny_ * ay[p] - rhs
                fb = nx_ * ax[p2] + ny_ * ay[p2] - rhs
                if fa <= 0.0:
                    bx[k] = ax[p]
                    by[k] = ay[p]
                    k += 1
                if (fa <= 0.0) != (fb <= 0.0):
                    t = fa / (fa - fb)
                    bx[k] = ax[p] + t * (ax[p2] - ax[p])
                    by[k] = ay[p] + t * (ay[p2] - ay[p])
                    k += 1
            m = k
            for p in range(m):
                ax[p] = bx[p]
                ay[p] = by[p]
            if m < 3:
                m = 0
                break
        if used + m > cap:
            cap = 2 * (used + m) + 16
            grown = np.empty((cap, 2))
            grown[:used] = poly[:used]
            poly = grown
        for p in range(m):
            poly[used + p, 0] = ax[p]
            poly[used + p, 1] = ay[p]
        used += m
        ptr[i + 1] = used
    return ptr, poly[:used].copy()
