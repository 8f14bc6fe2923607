"""Pure-numpy reference implementations of the hot kernels.

Semantics here are the contract; the numba backend mirrors them loop-for-loop.
All image arrays are float64 ``(rows, cols, channels)``; matrices map
homogeneous ``(x, y, 1)`` column vectors with ``x`` along columns.

Coordinate conventions (shared package-wide):
  * normalized frame: pixel center ``p`` of an ``n``-wide axis sits at
    ``(2p + 1) / n - 1``, so [-1, 1] spans the image edges;
  * sampling is bilinear with zero padding outside the source grid;
  * sample coordinates within ``SNAP_EPS`` of an integer are snapped, so
    pure-integer transforms reproduce source pixels bit-exactly.
"""

import numpy as np

SNAP_EPS = 1e-9

# LM exponential-decay fit settings
LM_LAMBDA0 = 1e-3
LM_MAX_RETRY = 25


def _snap(coords):
    r = np.rint(coords)
    return np.where(np.abs(coords - r) < SNAP_EPS, r, coords)


def _gather(src_c, xi, yi):
    h, w = src_c.shape
    ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = np.zeros(xi.shape, dtype=np.float64)
    out[ok] = src_c[yi[ok], xi[ok]]
    return out


def warp_pull(src, mat, out_h, out_w):
    """Pull-warp ``src`` (h, w, c) through pixel-frame matrix ``mat``.

    ``mat`` maps output pixel coords (x, y, 1) to source pixel coords.
    """
    h, w, c = src.shape
    xs = np.arange(out_w, dtype=np.float64)
    ys = np.arange(out_h, dtype=np.float64)
    x, y = np.meshgrid(xs, ys)
    u = mat[0, 0] * x + mat[0, 1] * y + mat[0, 2]
    v = mat[1, 0] * x + mat[1, 1] * y + mat[1, 2]
    d = mat[2, 0] * x + mat[2, 1] * y + mat[2, 2]
    bad = np.abs(d) < 1e-12
    d = np.where(bad, 1.0, d)
    px = _snap(u / d)
    py = _snap(v / d)
    px = np.where(bad, -1e9, px)
    py = np.where(bad, -1e9, py)

    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = px - x0
    fy = py - y0
    out = np.empty((out_h, out_w, c), dtype=np.float64)
    for ch in range(c):
        s = src[:, :, ch]
        v00 = _gather(s, x0, y0)
        v10 = _gather(s, x0 + 1, y0)
        v01 = _gather(s, x0, y0 + 1)
        v11 = _gather(s, x0 + 1, y0 + 1)
        top = v00 + fx * (v10 - v00)
        bot = v01 + fx * (v11 - v01)
        out[:, :, ch] = top + fy * (bot - top)
    return out


def loss_grad(moving, target, g, window):
    """Partial photometric L1 loss and its gradient in the 8 free entries of ``g``.

    ``g`` maps normalized target coords to normalized moving coords (the pull
    direction used throughout the optimiser).  Loss is the mean absolute
    difference over the centered ``window x window`` square and all channels.
    Returns ``(loss, grad)`` with ``grad`` ordered row-major g00..g21.
    """
    n = target.shape[0]
    hm, wm, c = moving.shape
    b = (n - window) // 2
    coords = (2.0 * np.arange(n, dtype=np.float64) + 1.0) / n - 1.0
    cw = coords[b:b + window]
    x, y = np.meshgrid(cw, cw)

    u = g[0, 0] * x + g[0, 1] * y + g[0, 2]
    v = g[1, 0] * x + g[1, 1] * y + g[1, 2]
    d = g[2, 0] * x + g[2, 1] * y + g[2, 2]
    bad = np.abs(d) < 1e-12
    d = np.where(bad, 1.0, d)
    s = u / d
    t = v / d
    px = _snap((s + 1.0) * 0.5 * wm - 0.5)
    py = _snap((t + 1.0) * 0.5 * hm - 0.5)
    px = np.where(bad, -1e9, px)
    py = np.where(bad, -1e9, py)

    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = px - x0
    fy = py - y0

    loss = 0.0
    gs = np.zeros_like(x)
    gt = np.zeros_like(x)
    for ch in range(c):
        sch = moving[:, :, ch]
        v00 = _gather(sch, x0, y0)
        v10 = _gather(sch, x0 + 1, y0)
        v01 = _gather(sch, x0, y0 + 1)
        v11 = _gather(sch, x0 + 1, y0 + 1)
        top = v00 + fx * (v10 - v00)
        bot = v01 + fx * (v11 - v01)
        m = top + fy * (bot - top)
        r = m - target[b:b + window, b:b + window, ch]
        loss += float(np.sum(np.abs(r)))
        sg = np.sign(r)
        dmdx = (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy
        dmdy = (v01 - v00) * (1.0 - fx) + (v11 - v10) * fx
        gs += sg * dmdx * (wm * 0.5)
        gt += sg * dmdy * (hm * 0.5)

    du = gs / d
    dv = gt / d
    dw = -(gs * s + gt * t) / d
    scale = 1.0 / (window * window * c)
    grad = np.array([
        np.sum(du * x), np.sum(du * y), np.sum(du),
        np.sum(dv * x), np.sum(dv * y), np.sum(dv),
        np.sum(dw * x), np.sum(dw * y),
    ]) * scale
    return loss * scale, grad


def _solve_sym(h, rhs):
    """Solve a small (2x2 or 3x3) symmetric system; returns None when singular."""
    k = h.shape[0]
    if k == 2:
        det = h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]
        if abs(det) < 1e-300:
            return None
        return np.array([
            (rhs[0] * h[1, 1] - rhs[1] * h[0, 1]) / det,
            (h[0, 0] * rhs[1] - h[1, 0] * rhs[0]) / det,
        ])
    c00 = h[1, 1] * h[2, 2] - h[1, 2] * h[2, 1]
    c01 = h[1, 2] * h[2, 0] - h[1, 0] * h[2, 2]
    c02 = h[1, 0] * h[2, 1] - h[1, 1] * h[2, 0]
    det = h[0, 0] * c00 + h[0, 1] * c01 + h[0, 2] * c02
    if abs(det) < 1e-300:
        return None
    inv = np.empty((3, 3))
    inv[0, 0] = c00
    inv[0, 1] = h[0, 2] * h[2, 1] - h[0, 1] * h[2, 2]
    inv[0, 2] = h[0, 1] * h[1, 2] - h[0, 2] * h[1, 1]
    inv[1, 0] = c01
    inv[1, 1] = h[0, 0] * h[2, 2] - h[0, 2] * h[2, 0]
    inv[1, 2] = h[0, 2] * h[1, 0] - h[0, 0] * h[1, 2]
    inv[2, 0] = c02
    inv[2, 1] = h[0, 1] * h[2, 0] - h[0, 0] * h[2, 1]
    inv[2, 2] = h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]
    return (inv @ rhs) / det


def _lm_exp_fit(t, y, with_offset, max_iter, tol):
    """Levenberg-Marquardt fit of a*exp(-t/tau) (+ offset, clamped >= 0).

    Returns (a, tau, offset, sse, converged).
    """
    n_par = 3 if with_offset else 2
    b0 = float(y.min()) if with_offset else 0.0
    z = y - b0
    peak = float(z.max())
    use = z > max(peak * 0.05, 1e-12)
    tmax = float(t[-1]) if t[-1] > 0 else 1.0
    if int(use.sum()) >= 3:
        tt = t[use]
        zz = np.log(z[use])
        sn = float(len(tt))
        sx = float(np.sum(tt))
        sxx = float(np.sum(tt * tt))
        sy = float(np.sum(zz))
        sxy = float(np.sum(tt * zz))
        det = sn * sxx - sx * sx
        if det > 0:
            slope = (sn * sxy - sx * sy) / det
            icpt = (sy * sxx - sx * sxy) / det
            a0 = float(np.exp(icpt))
            tau0 = -1.0 / slope if slope < 0 else tmax
        else:
            a0, tau0 = peak, tmax * 0.5
    else:
        a0, tau0 = peak, tmax * 0.5
    tau0 = min(max(tau0, 1e-3), 1e3)
    a0 = max(a0, 1e-12)

    theta = np.array([a0, tau0, b0])

    def residual(th):
        base = th[2] if with_offset else 0.0
        return th[0] * np.exp(-t / th[1]) + base - y

    r = residual(theta)
    c = float(np.dot(r, r))
    lam = LM_LAMBDA0
    converged = False
    for _ in range(max_iter):
        e = np.exp(-t / theta[1])
        ja = e
        jt = theta[0] * e * t / (theta[1] * theta[1])
        if with_offset:
            jac = np.stack([ja, jt, np.ones_like(t)], axis=1)
        else:
            jac = np.stack([ja, jt], axis=1)
        hess = jac.T @ jac
        grad = jac.T @ r
        if float(np.sqrt(np.dot(grad, grad))) < 1e-12 * (1.0 + c):
            converged = True
            break
        accepted = False
        rel = 0.0
        for _ in range(LM_MAX_RETRY):
            haug = hess + lam * np.diag(np.diag(hess))
            delta = _solve_sym(haug, -grad)
            if delta is None:
                lam *= 10.0
                continue
            th_new = theta.copy()
            th_new[:n_par] += delta
            if th_new[0] <= 0 or th_new[1] <= 0:
                lam *= 10.0
                continue
            if with_offset and th_new[2] < 0:
                th_new[2] = 0.0
            r_new = residual(th_new)
            c_new = float(np.dot(r_new, r_new))
            if c_new <= c:
                rel = float(np.max(np.abs(th_new - theta) / (np.abs(theta) + 1e-12)))
                theta, r, c = th_new, r_new, c_new
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        if rel < tol:
            converged = True
            break
    return theta[0], theta[1], (theta[2] if with_offset else 0.0), c, converged


def fit_decay(y, t, min_total, f_crit, max_iter, tol):
    """Fit a mono-exponential decay with non-negative offset to photon counts.

    The offset term is kept only when it improves the fit significantly
    (F-test against the offset-free submodel at ``f_crit``); an unconstrained
    offset is statistically degenerate with tau over short time windows.

    Returns (amplitude, tau, offset, rms, converged, ok) where ok is False
    for insufficient signal.
    """
    total = float(np.sum(y))
    if total <= 0 or total < min_total:
        return 0.0, 0.0, 0.0, 0.0, False, False
    n = len(y)
    a3, tau3, b3, c3, cv3 = _lm_exp_fit(t, y, True, max_iter, tol)
    a2, tau2, b2, c2, cv2 = _lm_exp_fit(t, y, False, max_iter, tol)
    dof = n - 3
    if dof > 0 and c2 > c3:
        fstat = (c2 - c3) / max(c3 / dof, 1e-30)
    else:
        fstat = 0.0
    if fstat > f_crit:
        a, tau, b, c, cv = a3, tau3, b3, c3, cv3
    else:
        a, tau, b, c, cv = a2, tau2, b2, c2, cv2
    rms = float(np.sqrt(c / n))
    return a, tau, b, rms, cv, True


def fit_plane(band_counts, t, min_total, f_crit, max_iter, tol):
    """Fit every pixel of a (width, height, time) count block.

    Returns a (height, width) lifetime array; pixels with insufficient
    signal hold 0.
    """
    w, h, _ = band_counts.shape
    out = np.zeros((h, w), dtype=np.float64)
    for yy in range(h):
        for xx in range(w):
            _, tau, _, _, _, ok = fit_decay(
                band_counts[xx, yy], t, min_total, f_crit, max_iter, tol)
            if ok:
                out[yy, xx] = tau
    return out
