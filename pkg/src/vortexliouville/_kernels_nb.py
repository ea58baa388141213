"""Compiled kernels (numba).  Same signatures and semantics as ``_kernels_np``."""

from __future__ import annotations

import numpy as np

from ._backend import jit, prange

TORUS, SPHERE, DISK, PLANE = 0, 1, 2, 3
TWO_PI = 2.0 * np.pi
INV_2PI = 1.0 / TWO_PI
SPHERE_C = (np.log(2.0) - 0.5) / TWO_PI
N_SAMPLES = 8
REFINE_FACTOR = 1.5
GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)


@jit
def wrap(d):
    return d - TWO_PI * np.floor((d + np.pi) / TWO_PI)


@jit
def sing(q, eps):
    e2 = eps * eps
    if q >= e2:
        return -0.25 / np.pi * np.log(q), -INV_2PI / q, INV_2PI / (q * q)
    s = q / e2
    p = (-s * s + 4.0 * s - 3.0) / 4.0
    return -INV_2PI * (np.log(eps) + p), -(2.0 - s) * INV_2PI / e2, INV_2PI / (e2 * e2)


@jit
def spline(coef, tp, x, y):
    u = (x - tp[0]) * tp[1]
    v = (y - tp[0]) * tp[1]
    i = int(np.floor(u))
    j = int(np.floor(v))
    t = u - i
    s = v - j
    t2 = t * t
    s2 = s * s
    wu = ((1 - t) ** 3 / 6.0, (3 * t2 * t - 6 * t2 + 4) / 6.0,
          (-3 * t2 * t + 3 * t2 + 3 * t + 1) / 6.0, t2 * t / 6.0)
    du = (-(1 - t) ** 2 / 2.0, (3 * t2 - 4 * t) / 2.0, (-3 * t2 + 2 * t + 1) / 2.0, t2 / 2.0)
    ddu = (1 - t, 3 * t - 2, -3 * t + 1, t)
    wv = ((1 - s) ** 3 / 6.0, (3 * s2 * s - 6 * s2 + 4) / 6.0,
          (-3 * s2 * s + 3 * s2 + 3 * s + 1) / 6.0, s2 * s / 6.0)
    dv = (-(1 - s) ** 2 / 2.0, (3 * s2 - 4 * s) / 2.0, (-3 * s2 + 2 * s + 1) / 2.0, s2 / 2.0)
    ddv = (1 - s, 3 * s - 2, -3 * s + 1, s)
    val = 0.0
    gx = 0.0
    gy = 0.0
    hxx = 0.0
    hxy = 0.0
    hyy = 0.0
    for a in range(4):
        for b in range(4):
            c = coef[i - 1 + a, j - 1 + b]
            val += wu[a] * wv[b] * c
            gx += du[a] * wv[b] * c
            gy += wu[a] * dv[b] * c
            hxx += ddu[a] * wv[b] * c
            hxy += du[a] * dv[b] * c
            hyy += wu[a] * ddv[b] * c
    if x == 0.0 and y == 0.0:
        # the regular part is even in each coordinate
        gx = 0.0
        gy = 0.0
        hxy = 0.0
    sc = tp[1]
    return val, gx * sc, gy * sc, hxx * sc * sc, hxy * sc * sc, hyy * sc * sc


@jit
def flat_pair(code, zx, zy, eps, coef, tp):
    """G_eps value, gradient and Hessian at separation z (translation-invariant part)."""
    S, a, ap = sing(zx * zx + zy * zy, eps)
    gx = a * zx
    gy = a * zy
    hxx = a + 2.0 * ap * zx * zx
    hxy = 2.0 * ap * zx * zy
    hyy = a + 2.0 * ap * zy * zy
    if code == TORUS:
        v, sx, sy, sxx, sxy, syy = spline(coef, tp, zx, zy)
        S += v
        gx += sx
        gy += sy
        hxx += sxx
        hxy += sxy
        hyy += syy
    return S, gx, gy, hxx, hxy, hyy


@jit
def disk_grad1_g(x0, x1, y0, y1):
    x2 = x0 * x0 + x1 * x1
    y2 = y0 * y0 + y1 * y1
    Q = 1.0 - 2.0 * (x0 * y0 + x1 * y1) + x2 * y2
    return INV_2PI * (y2 * x0 - y0) / Q, INV_2PI * (y2 * x1 - y1) / Q


@jit
def disk_hess_g(x0, x1, y0, y1, Hx, Hy):
    """Fill Hx = d/dx grad_x g(x, y) and Hy = d/dy grad_x g(x, y)."""
    x2 = x0 * x0 + x1 * x1
    y2 = y0 * y0 + y1 * y1
    Q = 1.0 - 2.0 * (x0 * y0 + x1 * y1) + x2 * y2
    u = (y2 * x0 - y0, y2 * x1 - y1)
    v = (x2 * y0 - x0, x2 * y1 - x1)
    xs = (x0, x1)
    ys = (y0, y1)
    for r in range(2):
        for c in range(2):
            d = 1.0 if r == c else 0.0
            Hx[r, c] = INV_2PI * (y2 * d / Q - 2.0 * u[r] * u[c] / (Q * Q))
            Hy[r, c] = INV_2PI * ((2.0 * xs[r] * ys[c] - d) / Q - 2.0 * u[r] * v[c] / (Q * Q))


@jit
def velocity(code, pos, xi, sc, eps, coef, tp, n, dim):
    out = np.zeros(n * dim)
    if code == SPHERE:
        for i in range(n):
            a0 = pos[3 * i]
            a1 = pos[3 * i + 1]
            a2 = pos[3 * i + 2]
            for j in range(i + 1, n):
                b0 = pos[3 * j]
                b1 = pos[3 * j + 1]
                b2 = pos[3 * j + 2]
                d0 = a0 - b0
                d1 = a1 - b1
                d2 = a2 - b2
                _, a, _ = sing(d0 * d0 + d1 * d1 + d2 * d2, eps)
                c0 = -a * (a1 * b2 - a2 * b1)
                c1 = -a * (a2 * b0 - a0 * b2)
                c2 = -a * (a0 * b1 - a1 * b0)
                out[3 * i] += xi[j] * c0
                out[3 * i + 1] += xi[j] * c1
                out[3 * i + 2] += xi[j] * c2
                out[3 * j] -= xi[i] * c0
                out[3 * j + 1] -= xi[i] * c1
                out[3 * j + 2] -= xi[i] * c2
        return out
    for i in range(n):
        for j in range(i + 1, n):
            zx = pos[2 * i] - pos[2 * j]
            zy = pos[2 * i + 1] - pos[2 * j + 1]
            if code == TORUS:
                zx = wrap(zx)
                zy = wrap(zy)
            S, gx, gy, hxx, hxy, hyy = flat_pair(code, zx, zy, eps, coef, tp)
            out[2 * i] += xi[j] * gy
            out[2 * i + 1] -= xi[j] * gx
            out[2 * j] -= xi[i] * gy
            out[2 * j + 1] += xi[i] * gx
            if code == DISK:
                ex, ey = disk_grad1_g(pos[2 * i], pos[2 * i + 1], pos[2 * j], pos[2 * j + 1])
                out[2 * i] += xi[j] * ey
                out[2 * i + 1] -= xi[j] * ex
                ex, ey = disk_grad1_g(pos[2 * j], pos[2 * j + 1], pos[2 * i], pos[2 * i + 1])
                out[2 * j] += xi[i] * ey
                out[2 * j + 1] -= xi[i] * ex
    if code == DISK:
        for i in range(n):
            x0 = pos[2 * i]
            x1 = pos[2 * i + 1]
            den = TWO_PI * (1.0 - x0 * x0 - x1 * x1)
            out[2 * i] += sc[i] * (-x1) / den
            out[2 * i + 1] += sc[i] * x0 / den
    return out


@jit
def velocity_jacobian(code, pos, xi, sc, eps, coef, tp, n, dim):
    m = n * dim
    J = np.zeros((m, m))
    if code == SPHERE:
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                x = pos[3 * i:3 * i + 3]
                y = pos[3 * j:3 * j + 3]
                z0 = x[0] - y[0]
                z1 = x[1] - y[1]
                z2 = x[2] - y[2]
                _, a, ap = sing(z0 * z0 + z1 * z1 + z2 * z2, eps)
                c = (x[1] * y[2] - x[2] * y[1], x[2] * y[0] - x[0] * y[2],
                     x[0] * y[1] - x[1] * y[0])
                z = (z0, z1, z2)
                w = xi[j]
                for r in range(3):
                    for s in range(3):
                        outer = 2.0 * ap * c[r] * z[s]
                        J[3 * i + r, 3 * i + s] -= w * outer
                        J[3 * i + r, 3 * j + s] += w * outer
                # a [y]_x and -a [x]_x
                J[3 * i + 0, 3 * i + 1] += w * a * (-y[2])
                J[3 * i + 0, 3 * i + 2] += w * a * y[1]
                J[3 * i + 1, 3 * i + 0] += w * a * y[2]
                J[3 * i + 1, 3 * i + 2] += w * a * (-y[0])
                J[3 * i + 2, 3 * i + 0] += w * a * (-y[1])
                J[3 * i + 2, 3 * i + 1] += w * a * y[0]
                J[3 * i + 0, 3 * j + 1] -= w * a * (-x[2])
                J[3 * i + 0, 3 * j + 2] -= w * a * x[1]
                J[3 * i + 1, 3 * j + 0] -= w * a * x[2]
                J[3 * i + 1, 3 * j + 2] -= w * a * (-x[0])
                J[3 * i + 2, 3 * j + 0] -= w * a * (-x[1])
                J[3 * i + 2, 3 * j + 1] -= w * a * x[0]
        return J
    Hx = np.empty((2, 2))
    Hy = np.empty((2, 2))
    for i in range(n):
        for j in range(i + 1, n):
            zx = pos[2 * i] - pos[2 * j]
            zy = pos[2 * i + 1] - pos[2 * j + 1]
            if code == TORUS:
                zx = wrap(zx)
                zy = wrap(zy)
            S, gx, gy, hxx, hxy, hyy = flat_pair(code, zx, zy, eps, coef, tp)
            # d K(z)/dz = R Hess = [[hxy, hyy], [-hxx, -hxy]]
            r00 = hxy
            r01 = hyy
            r10 = -hxx
            r11 = -hxy
            wi = xi[j]
            J[2 * i, 2 * i] += wi * r00
            J[2 * i, 2 * i + 1] += wi * r01
            J[2 * i + 1, 2 * i] += wi * r10
            J[2 * i + 1, 2 * i + 1] += wi * r11
            J[2 * i, 2 * j] -= wi * r00
            J[2 * i, 2 * j + 1] -= wi * r01
            J[2 * i + 1, 2 * j] -= wi * r10
            J[2 * i + 1, 2 * j + 1] -= wi * r11
            wj = xi[i]
            # K(x_j - x_i) = -K(z): d/dx_j = R Hess(z), d/dx_i = -R Hess(z)
            J[2 * j, 2 * j] += wj * r00
            J[2 * j, 2 * j + 1] += wj * r01
            J[2 * j + 1, 2 * j] += wj * r10
            J[2 * j + 1, 2 * j + 1] += wj * r11
            J[2 * j, 2 * i] -= wj * r00
            J[2 * j, 2 * i + 1] -= wj * r01
            J[2 * j + 1, 2 * i] -= wj * r10
            J[2 * j + 1, 2 * i + 1] -= wj * r11
            if code == DISK:
                for p in range(2):
                    a_ = i if p == 0 else j
                    b_ = j if p == 0 else i
                    w = xi[b_]
                    disk_hess_g(pos[2 * a_], pos[2 * a_ + 1], pos[2 * b_], pos[2 * b_ + 1], Hx, Hy)
                    for c in range(2):
                        J[2 * a_, 2 * a_ + c] += w * Hx[1, c]
                        J[2 * a_ + 1, 2 * a_ + c] -= w * Hx[0, c]
                        J[2 * a_, 2 * b_ + c] += w * Hy[1, c]
                        J[2 * a_ + 1, 2 * b_ + c] -= w * Hy[0, c]
    if code == DISK:
        for i in range(n):
            x0 = pos[2 * i]
            x1 = pos[2 * i + 1]
            om = 1.0 - x0 * x0 - x1 * x1
            den = TWO_PI * om
            f = sc[i] / den
            g = 2.0 * sc[i] / (den * om)
            J[2 * i, 2 * i] += g * (-x1) * x0
            J[2 * i, 2 * i + 1] += -f + g * (-x1) * x1
            J[2 * i + 1, 2 * i] += f + g * x0 * x0
            J[2 * i + 1, 2 * i + 1] += g * x0 * x1
    return J


@jit
def pair_d2(code, pos, i, j, dim):
    s = 0.0
    for c in range(dim):
        d = pos[dim * i + c] - pos[dim * j + c]
        if code == TORUS:
            d = wrap(d)
        s += d * d
    return s


@jit
def min_distance(code, pos, n, dim):
    best = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            d2 = pair_d2(code, pos, i, j, dim)
            if d2 < best:
                best = d2
    return np.sqrt(best)


@jit
def dense_eval(r1, r2, r3, r4, r5, th, out):
    for k in range(out.size):
        out[k] = r1[k] + th * (r2[k] + (1.0 - th) * (r3[k] + th * (r4[k] + (1.0 - th) * r5[k])))


@jit
def _pair_d2_at(code, r1, r2, r3, r4, r5, i, j, dim, th):
    s = 0.0
    for c in range(dim):
        a = dim * i + c
        b = dim * j + c
        xa = r1[a] + th * (r2[a] + (1.0 - th) * (r3[a] + th * (r4[a] + (1.0 - th) * r5[a])))
        xb = r1[b] + th * (r2[b] + (1.0 - th) * (r3[b] + th * (r4[b] + (1.0 - th) * r5[b])))
        d = xa - xb
        if code == TORUS:
            d = wrap(d)
        s += d * d
    return s


@jit
def _min_d2_at(code, r1, r2, r3, r4, r5, n, dim, th, buf):
    dense_eval(r1, r2, r3, r4, r5, th, buf)
    best = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            d2 = pair_d2(code, buf, i, j, dim)
            if d2 < best:
                best = d2
    return best


@jit
def dense_min(code, r1, r2, r3, r4, r5, n, dim, run_min):
    if n < 2:
        return np.inf, 0.0
    buf = np.empty(n * dim)
    best = np.inf
    bk = 0
    bi = 0
    bj = 1
    for k in range(N_SAMPLES + 1):
        th = k / N_SAMPLES
        dense_eval(r1, r2, r3, r4, r5, th, buf)
        for i in range(n):
            for j in range(i + 1, n):
                d2 = pair_d2(code, buf, i, j, dim)
                if d2 < best:
                    best = d2
                    bk = k
                    bi = i
                    bj = j
    dmin = np.sqrt(best)
    tmin = bk / N_SAMPLES
    if dmin <= REFINE_FACTOR * run_min:
        lo = max(bk - 1, 0) / N_SAMPLES
        hi = min(bk + 1, N_SAMPLES) / N_SAMPLES
        c = hi - GOLDEN * (hi - lo)
        d = lo + GOLDEN * (hi - lo)
        fc = _pair_d2_at(code, r1, r2, r3, r4, r5, bi, bj, dim, c)
        fd = _pair_d2_at(code, r1, r2, r3, r4, r5, bi, bj, dim, d)
        for _ in range(60):
            if fc < fd:
                hi = d
                d = c
                fd = fc
                c = hi - GOLDEN * (hi - lo)
                fc = _pair_d2_at(code, r1, r2, r3, r4, r5, bi, bj, dim, c)
            else:
                lo = c
                c = d
                fc = fd
                d = lo + GOLDEN * (hi - lo)
                fd = _pair_d2_at(code, r1, r2, r3, r4, r5, bi, bj, dim, d)
        tt = 0.5 * (lo + hi)
        ft = np.sqrt(_pair_d2_at(code, r1, r2, r3, r4, r5, bi, bj, dim, tt))
        if ft < dmin:
            dmin = ft
            tmin = tt
    return dmin, tmin


@jit
def dense_event(code, r1, r2, r3, r4, r5, n, dim, thr, theta_star, tol):
    buf = np.empty(n * dim)
    t2 = thr * thr
    lo = 0.0
    hi = -1.0
    for k in range(N_SAMPLES + 1):
        th = k / N_SAMPLES
        if _min_d2_at(code, r1, r2, r3, r4, r5, n, dim, th, buf) <= t2:
            if k == 0:
                return 0.0
            lo = (k - 1) / N_SAMPLES
            hi = th
            break
    if hi < 0.0:
        if _min_d2_at(code, r1, r2, r3, r4, r5, n, dim, theta_star, buf) > t2:
            return -1.0
        lo = np.floor(theta_star * N_SAMPLES) / N_SAMPLES
        hi = theta_star
        if _min_d2_at(code, r1, r2, r3, r4, r5, n, dim, lo, buf) <= t2:
            return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _min_d2_at(code, r1, r2, r3, r4, r5, n, dim, mid, buf) <= t2:
            hi = mid
        else:
            lo = mid
    return hi


@jit
def _green_pt(code, P, a, xa, coef, tp, dim):
    """Unregularised G(xa, P[a]) for a single pair; xa is a dim-tuple buffer."""
    s = 0.0
    for c in range(dim):
        d = xa[c] - P[a * dim + c]
        if code == TORUS:
            d = wrap(d)
        s += d * d
    S = -0.25 / np.pi * np.log(s)
    if code == TORUS:
        zx = wrap(xa[0] - P[a * dim])
        zy = wrap(xa[1] - P[a * dim + 1])
        S += spline(coef, tp, zx, zy)[0]
    elif code == SPHERE:
        S += SPHERE_C
    elif code == DISK:
        x0 = xa[0]
        x1 = xa[1]
        y0 = P[a * dim]
        y1 = P[a * dim + 1]
        Q = 1.0 - 2.0 * (x0 * y0 + x1 * y1) + (x0 * x0 + x1 * x1) * (y0 * y0 + y1 * y1)
        S += np.log(Q) / (4.0 * np.pi)
    return S


@jit
def _site_energy(code, P, xi, k, xk, coef, tp, self_w, n, dim):
    e = 0.0
    for j in range(n):
        if j != k:
            e += xi[k] * xi[j] * _green_pt(code, P, j, xk, coef, tp, dim)
    if code == DISK:
        q = xk[0] * xk[0] + xk[1] * xk[1]
        e += self_w[k] * np.log(1.0 - 2.0 * q + q * q) / (4.0 * np.pi)
    return e


@jit(parallel=True)
def metropolis_chunk(code, P, step, acc, xi, self_w, beta, coef, tp, n, dim, props, unif):
    S = P.shape[0]
    sweeps = props.shape[1]
    for s in prange(S):
        row = P[s]
        old = np.empty(dim)
        new = np.empty(dim)
        for sw in range(sweeps):
            for k in range(n):
                nn = 0.0
                for c in range(dim):
                    old[c] = row[k * dim + c]
                    new[c] = old[c] + step[s] * props[s, sw, k, c]
                    nn += new[c] * new[c]
                if code == SPHERE:
                    nn = np.sqrt(nn)
                    for c in range(dim):
                        new[c] /= nn
                elif code == DISK:
                    if nn >= 1.0:
                        continue
                dH = (_site_energy(code, row, xi, k, new, coef, tp, self_w, n, dim)
                      - _site_energy(code, row, xi, k, old, coef, tp, self_w, n, dim))
                if np.log(unif[s, sw, k]) < -beta * dH:
                    for c in range(dim):
                        row[k * dim + c] = new[c]
                    acc[s] += 1
        if code == TORUS:
            for c in range(n * dim):
                row[c] = row[c] % TWO_PI
