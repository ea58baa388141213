"""Pure-numpy kernels.

Every pair function takes batched points ``X, Y`` of shape (M, D) and
returns per-pair results.  The integrator-facing functions (``velocity``,
``velocity_jacobian``, ``min_distance``, ``dense_min``, ``dense_event``,
``metropolis_chunk``) share their signatures with ``_kernels_nb``.

Conventions: grad S = a z, Hess S = a I + 2 a' z z^T for the radial part
S(q), q = |z|^2; the rotation is (v1, v2) -> (v2, -v1).
"""

from __future__ import annotations

import numpy as np

TORUS, SPHERE, DISK, PLANE = 0, 1, 2, 3
TWO_PI = 2.0 * np.pi
INV_2PI = 1.0 / TWO_PI
SPHERE_C = (np.log(2.0) - 0.5) / TWO_PI
N_SAMPLES = 8
REFINE_FACTOR = 1.5


def wrap(d):
    return d - TWO_PI * np.floor((d + np.pi) / TWO_PI)


def sing(q, eps):
    """Radial part and its q-derivatives: returns S, a, a'."""
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        S = -0.25 / np.pi * np.log(q)
        a = -INV_2PI / q
        ap = INV_2PI / (q * q)
    if eps > 0.0:
        e2 = eps * eps
        inside = q < e2
        if np.any(inside):
            s = q[inside] / e2
            S = np.where(inside, 0.0, S)
            a = np.where(inside, 0.0, a)
            ap = np.where(inside, 0.0, ap)
            S[inside] = -INV_2PI * (np.log(eps) + (-s * s + 4.0 * s - 3.0) / 4.0)
            a[inside] = -(2.0 - s) * INV_2PI / e2
            ap[inside] = INV_2PI / (e2 * e2)
    return S, a, ap


def _bspline_weights(t):
    t2 = t * t
    t3 = t2 * t
    u = 1.0 - t
    w = np.stack([u * u * u / 6.0, (3 * t3 - 6 * t2 + 4) / 6.0,
                  (-3 * t3 + 3 * t2 + 3 * t + 1) / 6.0, t3 / 6.0])
    dw = np.stack([-u * u / 2.0, (3 * t2 - 4 * t) / 2.0,
                   (-3 * t2 + 2 * t + 1) / 2.0, t2 / 2.0])
    ddw = np.stack([u, 3 * t - 2, -3 * t + 1, t])
    return w, dw, ddw


def spline(coef, tp, x, y):
    """Cubic B-spline value, gradient and Hessian at points (x, y)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    u = (x - tp[0]) * tp[1]
    v = (y - tp[0]) * tp[1]
    i = np.floor(u).astype(np.int64)
    j = np.floor(v).astype(np.int64)
    wu, du, ddu = _bspline_weights(u - i)
    wv, dv, ddv = _bspline_weights(v - j)
    val = np.zeros_like(x)
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    hxx = np.zeros_like(x)
    hxy = np.zeros_like(x)
    hyy = np.zeros_like(x)
    for a in range(4):
        for b in range(4):
            c = coef[i - 1 + a, j - 1 + b]
            val += wu[a] * wv[b] * c
            gx += du[a] * wv[b] * c
            gy += wu[a] * dv[b] * c
            hxx += ddu[a] * wv[b] * c
            hxy += du[a] * dv[b] * c
            hyy += wu[a] * ddv[b] * c
    # the regular part is even in each coordinate, so these vanish exactly at the origin
    origin = (x == 0.0) & (y == 0.0)
    gx[origin] = 0.0
    gy[origin] = 0.0
    hxy[origin] = 0.0
    s = tp[1]
    return val, gx * s, gy * s, hxx * s * s, hxy * s * s, hyy * s * s


def separation(code, X, Y):
    """x - y, wrapped into [-pi, pi)^2 on the torus."""
    Z = np.asarray(X, dtype=np.float64) - np.asarray(Y, dtype=np.float64)
    if code == TORUS:
        Z = wrap(Z)
    return Z


def distance(code, X, Y):
    Z = separation(code, X, Y)
    return np.sqrt(np.sum(Z * Z, axis=-1))


# ---------------------------------------------------------------- disk image part

def disk_g(X, Y):
    """g(x, y) = log(1 - 2 x.y + |x|^2 |y|^2) / (4 pi)."""
    xy = np.sum(X * Y, axis=-1)
    Q = 1.0 - 2.0 * xy + np.sum(X * X, axis=-1) * np.sum(Y * Y, axis=-1)
    return np.log(Q) / (4.0 * np.pi)


def disk_grad1_g(X, Y):
    x2 = np.sum(X * X, axis=-1)[..., None]
    y2 = np.sum(Y * Y, axis=-1)[..., None]
    Q = 1.0 - 2.0 * np.sum(X * Y, axis=-1)[..., None] + x2 * y2
    return INV_2PI * (y2 * X - Y) / Q


def disk_hess_g(X, Y):
    """d/dx and d/dy of grad_x g(x, y); each (M, 2, 2)."""
    x2 = np.sum(X * X, axis=-1)
    y2 = np.sum(Y * Y, axis=-1)
    Q = 1.0 - 2.0 * np.sum(X * Y, axis=-1) + x2 * y2
    U = y2[:, None] * X - Y
    V = x2[:, None] * Y - X
    eye = np.eye(2)
    Hx = (y2 / Q)[:, None, None] * eye - 2.0 * U[:, :, None] * U[:, None, :] / (Q * Q)[:, None, None]
    Hy = (2.0 * X[:, :, None] * Y[:, None, :] - eye) / Q[:, None, None] \
        - 2.0 * U[:, :, None] * V[:, None, :] / (Q * Q)[:, None, None]
    return INV_2PI * Hx, INV_2PI * Hy


def disk_self_velocity(X, sc):
    """sc * W(x), W(x) = (-x2, x1) / (2 pi (1 - |x|^2))."""
    q = np.sum(X * X, axis=-1)
    W = np.stack([-X[:, 1], X[:, 0]], axis=-1) / (TWO_PI * (1.0 - q))[:, None]
    return sc[:, None] * W


def disk_self_jacobian(X, sc):
    q = np.sum(X * X, axis=-1)
    den = TWO_PI * (1.0 - q)
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    W = np.stack([-X[:, 1], X[:, 0]], axis=-1)
    J = rot[None] / den[:, None, None] + W[:, :, None] * (2.0 * X)[:, None, :] \
        / (den * (1.0 - q))[:, None, None]
    return sc[:, None, None] * J


# ---------------------------------------------------------------- batched pair functions

def green_xy(code, X, Y, eps, coef, tp):
    """Regularised Green function G_eps(x, y) (eps = 0: exact G)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    Z = separation(code, X, Y)
    S, _, _ = sing(np.sum(Z * Z, axis=-1), eps)
    if code == TORUS:
        S = S + spline(coef, tp, Z[:, 0], Z[:, 1])[0]
    elif code == SPHERE:
        S = S + SPHERE_C
    elif code == DISK:
        S = S + disk_g(X, Y)
    return S


def smooth_xy(code, X, Y, coef, tp):
    """g(x, y) = G(x, y) + log d(x, y) / (2 pi); finite on the diagonal."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if code == TORUS:
        Z = separation(code, X, Y)
        return spline(coef, tp, Z[:, 0], Z[:, 1])[0]
    if code == SPHERE:
        return np.full(X.shape[0], SPHERE_C)
    if code == DISK:
        return disk_g(X, Y)
    return np.zeros(X.shape[0])


def grad1_xy(code, X, Y, eps, coef, tp):
    """Gradient of G_eps(x, y) in x (ambient coordinates on the sphere)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    Z = separation(code, X, Y)
    _, a, _ = sing(np.sum(Z * Z, axis=-1), eps)
    G = a[:, None] * Z
    if code == TORUS:
        _, sx, sy, _, _, _ = spline(coef, tp, Z[:, 0], Z[:, 1])
        G = G + np.stack([sx, sy], axis=-1)
    elif code == DISK:
        G = G + disk_grad1_g(X, Y)
    return G


def rotate(G):
    return np.stack([G[..., 1], -G[..., 0]], axis=-1)


def kernel_xy(code, X, Y, eps, coef, tp):
    """Biot-Savart kernel K_eps(x, y)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if code == SPHERE:
        Z = X - Y
        _, a, _ = sing(np.sum(Z * Z, axis=-1), eps)
        return -a[:, None] * np.cross(X, Y)
    return rotate(grad1_xy(code, X, Y, eps, coef, tp))


def _skew(v):
    M = np.zeros(v.shape[:-1] + (3, 3))
    M[..., 0, 1] = -v[..., 2]
    M[..., 0, 2] = v[..., 1]
    M[..., 1, 0] = v[..., 2]
    M[..., 1, 2] = -v[..., 0]
    M[..., 2, 0] = -v[..., 1]
    M[..., 2, 1] = v[..., 0]
    return M


def dkernel_xy(code, X, Y, eps, coef, tp):
    """Jacobians of K_eps(x, y) with respect to x and to y, each (M, D, D)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    Z = separation(code, X, Y)
    _, a, ap = sing(np.sum(Z * Z, axis=-1), eps)
    if code == SPHERE:
        C = np.cross(X, Y)
        outer = 2.0 * ap[:, None, None] * C[:, :, None] * Z[:, None, :]
        Dx = -outer + a[:, None, None] * _skew(Y)
        Dy = outer - a[:, None, None] * _skew(X)
        return Dx, Dy
    H = a[:, None, None] * np.eye(2) + 2.0 * ap[:, None, None] * Z[:, :, None] * Z[:, None, :]
    if code == TORUS:
        _, _, _, sxx, sxy, syy = spline(coef, tp, Z[:, 0], Z[:, 1])
        H = H + np.stack([np.stack([sxx, sxy], -1), np.stack([sxy, syy], -1)], -2)
    Hx = H
    Hy = -H
    if code == DISK:
        gx, gy = disk_hess_g(X, Y)
        Hx = Hx + gx
        Hy = Hy + gy
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])
    return rot @ Hx, rot @ Hy


# ---------------------------------------------------------------- state-level kernels

def _offdiag(n):
    I, J = np.nonzero(~np.eye(n, dtype=bool))
    return I, J


def velocity(code, pos, xi, sc, eps, coef, tp, n, dim):
    P = pos.reshape(n, dim)
    out = np.zeros((n, dim))
    if n > 1:
        I, J = _offdiag(n)
        Kv = kernel_xy(code, P[I], P[J], eps, coef, tp)
        np.add.at(out, I, xi[J][:, None] * Kv)
    if code == DISK:
        out += disk_self_velocity(P, sc)
    return out.ravel()


def velocity_jacobian(code, pos, xi, sc, eps, coef, tp, n, dim):
    P = pos.reshape(n, dim)
    J4 = np.zeros((n, dim, n, dim))
    if n > 1:
        I, J = _offdiag(n)
        Dx, Dy = dkernel_xy(code, P[I], P[J], eps, coef, tp)
        w = xi[J][:, None, None]
        np.add.at(J4, (I, slice(None), I, slice(None)), w * Dx)
        J4[I, :, J, :] += w * Dy
    if code == DISK:
        Js = disk_self_jacobian(P, sc)
        idx = np.arange(n)
        J4[idx, :, idx, :] += Js
    return J4.reshape(n * dim, n * dim)


def min_distance(code, pos, n, dim):
    if n < 2:
        return np.inf
    P = pos.reshape(n, dim)
    iu, ju = np.triu_indices(n, 1)
    return float(distance(code, P[iu], P[ju]).min())


def dense_eval(r1, r2, r3, r4, r5, theta):
    th = np.asarray(theta, dtype=np.float64)[..., None]
    return r1 + th * (r2 + (1.0 - th) * (r3 + th * (r4 + (1.0 - th) * r5)))


def _pair_dist_at(code, r, theta, n, dim, iu, ju):
    """Distances of pairs (iu, ju) at the (broadcast) dense-output times."""
    Y = dense_eval(*r, theta).reshape(np.shape(theta) + (n, dim))
    Z = Y[..., iu, :] - Y[..., ju, :]
    if code == TORUS:
        Z = wrap(Z)
    return np.sqrt(np.sum(Z * Z, axis=-1))


def dense_min(code, r1, r2, r3, r4, r5, n, dim, run_min):
    """Minimum pairwise distance over one step of dense output; (dmin, theta)."""
    if n < 2:
        return np.inf, 0.0
    r = (r1, r2, r3, r4, r5)
    iu, ju = np.triu_indices(n, 1)
    thetas = np.arange(N_SAMPLES + 1) / N_SAMPLES
    D = _pair_dist_at(code, r, thetas, n, dim, iu, ju)
    k, p = np.unravel_index(np.argmin(D), D.shape)
    dmin = D[k, p]
    tmin = thetas[k]
    if dmin <= REFINE_FACTOR * run_min:
        lo = thetas[max(k - 1, 0)]
        hi = thetas[min(k + 1, N_SAMPLES)]
        pi_, pj = iu[p:p + 1], ju[p:p + 1]
        gr = 0.5 * (np.sqrt(5.0) - 1.0)
        c = hi - gr * (hi - lo)
        d = lo + gr * (hi - lo)
        fc = _pair_dist_at(code, r, c, n, dim, pi_, pj)[0]
        fd = _pair_dist_at(code, r, d, n, dim, pi_, pj)[0]
        for _ in range(60):
            if fc < fd:
                hi, d, fd = d, c, fc
                c = hi - gr * (hi - lo)
                fc = _pair_dist_at(code, r, c, n, dim, pi_, pj)[0]
            else:
                lo, c, fc = c, d, fd
                d = lo + gr * (hi - lo)
                fd = _pair_dist_at(code, r, d, n, dim, pi_, pj)[0]
        tt = 0.5 * (lo + hi)
        ft = _pair_dist_at(code, r, tt, n, dim, pi_, pj)[0]
        if ft < dmin:
            dmin, tmin = ft, tt
    return float(dmin), float(tmin)


def dense_event(code, r1, r2, r3, r4, r5, n, dim, thr, theta_star, tol):
    """First theta in [0, 1] where the minimum pair distance is <= thr, or -1."""
    r = (r1, r2, r3, r4, r5)
    iu, ju = np.triu_indices(n, 1)

    def f(th):
        return _pair_dist_at(code, r, th, n, dim, iu, ju).min()

    thetas = np.arange(N_SAMPLES + 1) / N_SAMPLES
    D = _pair_dist_at(code, r, thetas, n, dim, iu, ju).min(axis=1)
    below = np.nonzero(D <= thr)[0]
    if below.size:
        k = below[0]
        if k == 0:
            return 0.0
        lo, hi = thetas[k - 1], thetas[k]
    elif f(theta_star) <= thr:
        lo = np.floor(theta_star * N_SAMPLES) / N_SAMPLES
        hi = theta_star
        if f(lo) <= thr:
            return float(lo)
    else:
        return -1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) <= thr:
            hi = mid
        else:
            lo = mid
    return float(hi)


# ---------------------------------------------------------------- Gibbs sampling

def _energy_row(code, P, xi, k, xk, coef, tp, self_w):
    """Energy terms involving vortex k placed at xk, for a batch of chains.

    P: (S, n, dim); xk: (S, dim).  Returns (S,).
    """
    S, n, dim = P.shape
    e = np.zeros(S)
    for j in range(n):
        if j == k:
            continue
        e += xi[k] * xi[j] * green_xy(code, xk, P[:, j, :], 0.0, coef, tp)
    if code == DISK:
        e += self_w[k] * disk_g(xk, xk)
    return e


def metropolis_chunk(code, P, step, acc, xi, self_w, beta, coef, tp, n, dim, props, unif):
    """Run one chunk of single-site Metropolis sweeps in place.

    P: (S, n*dim) positions; step: (S,); acc: (S,) accepted-move counters;
    props: (S, sweeps, n, dim) standard normals; unif: (S, sweeps, n).
    """
    S = P.shape[0]
    V = P.reshape(S, n, dim)
    sweeps = props.shape[1]
    for sw in range(sweeps):
        for k in range(n):
            old = V[:, k, :].copy()
            new = old + step[:, None] * props[:, sw, k, :]
            valid = np.ones(S, dtype=bool)
            if code == SPHERE:
                new /= np.linalg.norm(new, axis=1)[:, None]
            elif code == DISK:
                valid = np.sum(new * new, axis=1) < 1.0
                new = np.where(valid[:, None], new, old)
            e_old = _energy_row(code, V, xi, k, old, coef, tp, self_w)
            e_new = _energy_row(code, V, xi, k, new, coef, tp, self_w)
            dH = e_new - e_old
            with np.errstate(over="ignore", invalid="ignore"):
                ok = valid & (np.log(unif[:, sw, k]) < -beta * dH)
            V[:, k, :] = np.where(ok[:, None], new, old)
            acc += ok
    if code == TORUS:
        V[...] = np.mod(V, TWO_PI)
