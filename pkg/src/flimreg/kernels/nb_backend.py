"""Numba-accelerated kernels; same semantics as :mod:`np_backend`.

``warp_pull`` and ``fit_plane`` parallelise over pixels (independent writes,
so results are scheduling-invariant).  ``loss_grad`` stays sequential: its
reduction order is then fixed, keeping regression runs bitwise reproducible.
"""

import numpy as np
from numba import njit, prange

SNAP_EPS = 1e-9
LM_LAMBDA0 = 1e-3
LM_MAX_RETRY = 25


@njit(cache=True, inline="always")
def _snap1(p):
    r = np.rint(p)
    if abs(p - r) < SNAP_EPS:
        return r
    return p


@njit(cache=True, inline="always")
def _sample_ch(src, ch, px, py):
    """Bilinear sample one channel with zero padding; also returns d/dpx, d/dpy."""
    h, w = src.shape[0], src.shape[1]
    x0 = int(np.floor(px))
    y0 = int(np.floor(py))
    fx = px - x0
    fy = py - y0
    v00 = src[y0, x0, ch] if (0 <= x0 < w and 0 <= y0 < h) else 0.0
    v10 = src[y0, x0 + 1, ch] if (0 <= x0 + 1 < w and 0 <= y0 < h) else 0.0
    v01 = src[y0 + 1, x0, ch] if (0 <= x0 < w and 0 <= y0 + 1 < h) else 0.0
    v11 = src[y0 + 1, x0 + 1, ch] if (0 <= x0 + 1 < w and 0 <= y0 + 1 < h) else 0.0
    top = v00 + fx * (v10 - v00)
    bot = v01 + fx * (v11 - v01)
    val = top + fy * (bot - top)
    dmdx = (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy
    dmdy = (v01 - v00) * (1.0 - fx) + (v11 - v10) * fx
    return val, dmdx, dmdy


@njit(cache=True, parallel=True)
def warp_pull(src, mat, out_h, out_w):
    c = src.shape[2]
    out = np.zeros((out_h, out_w, c), dtype=np.float64)
    for i in prange(out_h):
        y = float(i)
        for j in range(out_w):
            x = float(j)
            u = mat[0, 0] * x + mat[0, 1] * y + mat[0, 2]
            v = mat[1, 0] * x + mat[1, 1] * y + mat[1, 2]
            d = mat[2, 0] * x + mat[2, 1] * y + mat[2, 2]
            if abs(d) < 1e-12:
                continue
            px = _snap1(u / d)
            py = _snap1(v / d)
            for ch in range(c):
                val, _, _ = _sample_ch(src, ch, px, py)
                out[i, j, ch] = val
    return out


@njit(cache=True)
def loss_grad(moving, target, g, window):
    n = target.shape[0]
    hm = moving.shape[0]
    wm = moving.shape[1]
    c = moving.shape[2]
    b = (n - window) // 2
    loss = 0.0
    g00 = 0.0
    g01 = 0.0
    g02 = 0.0
    g10 = 0.0
    g11 = 0.0
    g12 = 0.0
    g20 = 0.0
    g21 = 0.0
    for i in range(b, b + window):
        y = (2.0 * i + 1.0) / n - 1.0
        for j in range(b, b + window):
            x = (2.0 * j + 1.0) / n - 1.0
            u = g[0, 0] * x + g[0, 1] * y + g[0, 2]
            v = g[1, 0] * x + g[1, 1] * y + g[1, 2]
            d = g[2, 0] * x + g[2, 1] * y + g[2, 2]
            if abs(d) < 1e-12:
                # behind-camera / degenerate ray: samples as zero padding
                for ch in range(c):
                    loss += abs(0.0 - target[i, j, ch])
                continue
            s = u / d
            t = v / d
            px = _snap1((s + 1.0) * 0.5 * wm - 0.5)
            py = _snap1((t + 1.0) * 0.5 * hm - 0.5)
            gs = 0.0
            gt = 0.0
            for ch in range(c):
                m, dmdx, dmdy = _sample_ch(moving, ch, px, py)
                r = m - target[i, j, ch]
                if r > 0.0:
                    loss += r
                    sg = 1.0
                elif r < 0.0:
                    loss -= r
                    sg = -1.0
                else:
                    sg = 0.0
                gs += sg * dmdx * (wm * 0.5)
                gt += sg * dmdy * (hm * 0.5)
            du = gs / d
            dv = gt / d
            dw = -(gs * s + gt * t) / d
            g00 += du * x
            g01 += du * y
            g02 += du
            g10 += dv * x
            g11 += dv * y
            g12 += dv
            g20 += dw * x
            g21 += dw * y
    scale = 1.0 / (window * window * c)
    grad = np.empty(8, dtype=np.float64)
    grad[0] = g00 * scale
    grad[1] = g01 * scale
    grad[2] = g02 * scale
    grad[3] = g10 * scale
    grad[4] = g11 * scale
    grad[5] = g12 * scale
    grad[6] = g20 * scale
    grad[7] = g21 * scale
    return loss * scale, grad


@njit(cache=True, inline="always")
def _solve_sym3(h00, h01, h02, h11, h12, h22, r0, r1, r2):
    c00 = h11 * h22 - h12 * h12
    c01 = h12 * h02 - h01 * h22
    c02 = h01 * h12 - h11 * h02
    det = h00 * c00 + h01 * c01 + h02 * c02
    if abs(det) < 1e-300:
        return 0.0, 0.0, 0.0, False
    d0 = (c00 * r0 + c01 * r1 + c02 * r2) / det
    c11 = h00 * h22 - h02 * h02
    c12 = h02 * h01 - h00 * h12
    d1 = (c01 * r0 + c11 * r1 + c12 * r2) / det
    c22 = h00 * h11 - h01 * h01
    d2 = (c02 * r0 + c12 * r1 + c22 * r2) / det
    return d0, d1, d2, True


@njit(cache=True)
def _lm_exp_fit(t, y, with_offset, max_iter, tol):
    n = len(y)
    b0 = 0.0
    if with_offset:
        b0 = y[0]
        for k in range(1, n):
            if y[k] < b0:
                b0 = y[k]
    peak = 0.0
    for k in range(n):
        z = y[k] - b0
        if z > peak:
            peak = z
    floor = peak * 0.05
    if floor < 1e-12:
        floor = 1e-12
    tmax = t[n - 1] if t[n - 1] > 0 else 1.0

    # log-linear initial guess on offset-subtracted counts
    sn = 0.0
    sx = 0.0
    sxx = 0.0
    sy = 0.0
    sxy = 0.0
    for k in range(n):
        z = y[k] - b0
        if z > floor:
            lz = np.log(z)
            sn += 1.0
            sx += t[k]
            sxx += t[k] * t[k]
            sy += lz
            sxy += t[k] * lz
    a0 = peak
    tau0 = tmax * 0.5
    if sn >= 3.0:
        det = sn * sxx - sx * sx
        if det > 0.0:
            slope = (sn * sxy - sx * sy) / det
            icpt = (sy * sxx - sx * sxy) / det
            a0 = np.exp(icpt)
            if slope < 0.0:
                tau0 = -1.0 / slope
            else:
                tau0 = tmax
    if tau0 < 1e-3:
        tau0 = 1e-3
    if tau0 > 1e3:
        tau0 = 1e3
    if a0 < 1e-12:
        a0 = 1e-12

    ta = a0
    tt = tau0
    tb = b0
    c = 0.0
    r = np.empty(n, dtype=np.float64)
    for k in range(n):
        r[k] = ta * np.exp(-t[k] / tt) + tb - y[k]
        c += r[k] * r[k]

    lam = LM_LAMBDA0
    converged = False
    for _ in range(max_iter):
        h00 = 0.0
        h01 = 0.0
        h02 = 0.0
        h11 = 0.0
        h12 = 0.0
        h22 = 0.0
        gr0 = 0.0
        gr1 = 0.0
        gr2 = 0.0
        inv_tau2 = 1.0 / (tt * tt)
        for k in range(n):
            e = np.exp(-t[k] / tt)
            ja = e
            jt = ta * e * t[k] * inv_tau2
            h00 += ja * ja
            h01 += ja * jt
            h11 += jt * jt
            gr0 += ja * r[k]
            gr1 += jt * r[k]
            if with_offset:
                h02 += ja
                h12 += jt
                h22 += 1.0
                gr2 += r[k]
        gn = np.sqrt(gr0 * gr0 + gr1 * gr1 + gr2 * gr2)
        if gn < 1e-12 * (1.0 + c):
            converged = True
            break
        accepted = False
        rel = 0.0
        for _ in range(LM_MAX_RETRY):
            if with_offset:
                d0, d1, d2, ok = _solve_sym3(
                    h00 * (1.0 + lam), h01, h02,
                    h11 * (1.0 + lam), h12,
                    h22 * (1.0 + lam), -gr0, -gr1, -gr2)
            else:
                a11 = h00 * (1.0 + lam)
                a22 = h11 * (1.0 + lam)
                det = a11 * a22 - h01 * h01
                if abs(det) < 1e-300:
                    ok = False
                    d0 = 0.0
                    d1 = 0.0
                else:
                    ok = True
                    d0 = (-gr0 * a22 + gr1 * h01) / det
                    d1 = (-a11 * gr1 + h01 * gr0) / det
                d2 = 0.0
            if not ok:
                lam *= 10.0
                continue
            na = ta + d0
            nt = tt + d1
            nb = tb + d2 if with_offset else 0.0
            if na <= 0.0 or nt <= 0.0:
                lam *= 10.0
                continue
            if with_offset and nb < 0.0:
                nb = 0.0
            c_new = 0.0
            for k in range(n):
                rk = na * np.exp(-t[k] / nt) + nb - y[k]
                c_new += rk * rk
            if c_new <= c:
                rel = abs(na - ta) / (abs(ta) + 1e-12)
                q = abs(nt - tt) / (abs(tt) + 1e-12)
                if q > rel:
                    rel = q
                q = abs(nb - tb) / (abs(tb) + 1e-12)
                if with_offset and q > rel:
                    rel = q
                ta = na
                tt = nt
                tb = nb
                c = c_new
                for k in range(n):
                    r[k] = ta * np.exp(-t[k] / tt) + tb - y[k]
                lam = lam / 3.0
                if lam < 1e-12:
                    lam = 1e-12
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        if rel < tol:
            converged = True
            break
    return ta, tt, tb, c, converged


@njit(cache=True)
def fit_decay(y, t, min_total, f_crit, max_iter, tol):
    total = 0.0
    for k in range(len(y)):
        total += y[k]
    if total <= 0.0 or total < min_total:
        return 0.0, 0.0, 0.0, 0.0, False, False
    n = len(y)
    a3, tau3, b3, c3, cv3 = _lm_exp_fit(t, y, True, max_iter, tol)
    a2, tau2, b2, c2, cv2 = _lm_exp_fit(t, y, False, max_iter, tol)
    dof = n - 3
    fstat = 0.0
    if dof > 0 and c2 > c3:
        denom = c3 / dof
        if denom < 1e-30:
            denom = 1e-30
        fstat = (c2 - c3) / denom
    if fstat > f_crit:
        a, tau, b, c, cv = a3, tau3, b3, c3, cv3
    else:
        a, tau, b, c, cv = a2, tau2, b2, c2, cv2
    rms = np.sqrt(c / n)
    return a, tau, b, rms, cv, True


@njit(cache=True, parallel=True)
def fit_plane(band_counts, t, min_total, f_crit, max_iter, tol):
    w = band_counts.shape[0]
    h = band_counts.shape[1]
    nt = band_counts.shape[2]
    out = np.zeros((h, w), dtype=np.float64)
    for yy in prange(h):
        buf = np.empty(nt, dtype=np.float64)
        for xx in range(w):
            for k in range(nt):
                buf[k] = band_counts[xx, yy, k]
            _, tau, _, _, _, ok = fit_decay(buf, t, min_total, f_crit, max_iter, tol)
            if ok:
                out[yy, xx] = tau
    return out
