"""Dormand-Prince 5(4) integrator with dense output and min-distance tracking.

A single source compiled by numba or run as plain Python, depending on the
backend.  The state vector is the flattened positions, optionally followed by
the row-major variational matrix Y (dY/dt = DB(x) Y).
"""

from __future__ import annotations

import numpy as np

from ._backend import USE_NUMBA, jit, prange

if USE_NUMBA:
    from ._kernels_nb import dense_event, dense_min, min_distance, velocity, velocity_jacobian
else:
    from ._kernels_np import dense_event, dense_min, min_distance, velocity, velocity_jacobian

SPHERE, DISK = 1, 2

OK, EVENT, UNDERFLOW, MAX_STEPS, SURFACE_DRIFT, NONFINITE, BOUNDARY = 0, 1, 2, 3, 4, 5, 6

H_UNDERFLOW = 1e-13
EVENT_TOL = 1e-10
DRIFT_TOL = 1e-9
BOUNDARY_TOL = 1e-12

# Dormand-Prince tableau
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0,
                           49.0 / 176.0, -5103.0 / 18656.0)
A71, A73, A74, A75, A76 = (35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0,
                           -2187.0 / 6784.0, 11.0 / 84.0)
E1, E3, E4, E5, E6, E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                          -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)
D1, D3, D4, D5, D6, D7 = (-12715105075.0 / 11282082432.0, 87487479700.0 / 32700410799.0,
                          -10690763975.0 / 1880347072.0, 701980252875.0 / 199316789632.0,
                          -1453857185.0 / 822651844.0, 69997945.0 / 29380423.0)

# PI step-size control
BETA = 0.04
EXPO1 = 0.2 - BETA * 0.75
SAFE = 0.9
FAC_MIN = 0.2
FAC_MAX = 10.0


@jit
def rhs(y, code, xi, sc, eps, coef, tp, n, dim, var):
    m = n * dim
    f = np.empty(y.size)
    x = np.ascontiguousarray(y[:m])
    f[:m] = velocity(code, x, xi, sc, eps, coef, tp, n, dim)
    if var:
        J = velocity_jacobian(code, x, xi, sc, eps, coef, tp, n, dim)
        Y = np.ascontiguousarray(y[m:]).reshape((m, m))
        f[m:] = (J @ Y).ravel()
    return f


@jit
def _all_finite(v):
    for k in range(v.size):
        if not np.isfinite(v[k]):
            return False
    return True


@jit
def _err_norm(y, y1, e, rtol, atol):
    s = 0.0
    for k in range(y.size):
        sk = atol + rtol * max(abs(y[k]), abs(y1[k]))
        s += (e[k] / sk) ** 2
    return np.sqrt(s / y.size)


@jit
def _initial_step(y, f0, t_span, rtol, atol, max_step, code, xi, sc, eps, coef, tp, n, dim, var):
    direction = 1.0 if t_span >= 0 else -1.0
    dnf = 0.0
    dny = 0.0
    for k in range(y.size):
        sk = atol + rtol * abs(y[k])
        dnf += (f0[k] / sk) ** 2
        dny += (y[k] / sk) ** 2
    dnf /= y.size
    dny /= y.size
    if dnf <= 1e-10 or dny <= 1e-10:
        h = 1e-6
    else:
        h = 0.01 * np.sqrt(dny / dnf)
    h = min(h, max_step, abs(t_span))
    f1 = rhs(y + direction * h * f0, code, xi, sc, eps, coef, tp, n, dim, var)
    der2 = 0.0
    for k in range(y.size):
        sk = atol + rtol * abs(y[k])
        der2 += ((f1[k] - f0[k]) / sk) ** 2
    der2 = np.sqrt(der2 / y.size) / h
    der12 = max(der2, np.sqrt(dnf))
    if not np.isfinite(der12):
        h1 = 1e-6
    elif der12 <= 1e-15:
        h1 = max(1e-6, h * 1e-3)
    else:
        h1 = (0.01 / der12) ** 0.2
    return direction * min(100.0 * h, h1, max_step)


@jit
def _project_sphere(y, n):
    worst = 0.0
    for i in range(n):
        r = np.sqrt(y[3 * i] ** 2 + y[3 * i + 1] ** 2 + y[3 * i + 2] ** 2)
        worst = max(worst, abs(r - 1.0))
        for c in range(3):
            y[3 * i + c] /= r
    return worst


@jit
def _near_boundary(y, n):
    for i in range(n):
        if 1.0 - np.sqrt(y[2 * i] ** 2 + y[2 * i + 1] ** 2) < BOUNDARY_TOL:
            return True
    return False


@jit
def integrate_core(y0, t0, t1, rtol, atol, max_step, code, xi, sc, eps, coef, tp,
                   n, dim, var, thr, store, max_steps):
    """Integrate from t0 to t1.

    Returns (ts, ys, conts, hs, mins, status, t_event, run_min, drift, n_accept, n_reject).
    With ``store`` false only the final node is returned in ``ts``/``ys``.
    ``conts[k]`` holds the five dense-output coefficient vectors of step k and
    ``hs[k]`` its full step size (the dense-output time scale).
    """
    ny = y0.size
    m = n * dim
    cap = 64 if store else 1
    ts = np.empty(cap)
    ys = np.empty((cap, ny))
    conts = np.empty((cap, 5, ny))
    hs = np.empty(cap)
    mins = np.empty(cap)
    count = 1

    y = y0.copy()
    t = t0
    run_min = min_distance(code, np.ascontiguousarray(y[:m]), n, dim)
    ts[0] = t
    ys[0] = y
    mins[0] = run_min
    status = OK
    t_event = np.nan
    drift = 0.0
    n_acc = 0
    n_rej = 0

    if thr > 0.0 and run_min <= thr:
        return ts[:1], ys[:1], conts[:0], hs[:0], mins[:1], EVENT, t0, run_min, drift, n_acc, n_rej
    if t1 == t0:
        return ts[:1], ys[:1], conts[:0], hs[:0], mins[:1], status, t_event, run_min, drift, n_acc, n_rej

    direction = 1.0 if t1 > t0 else -1.0
    k1 = rhs(y, code, xi, sc, eps, coef, tp, n, dim, var)
    if not _all_finite(k1):
        return ts[:1], ys[:1], conts[:0], hs[:0], mins[:1], NONFINITE, t0, run_min, drift, n_acc, n_rej
    h = _initial_step(y, k1, t1 - t0, rtol, atol, max_step, code, xi, sc, eps, coef, tp, n, dim, var)
    facold = 1e-4
    rejected = False
    span = abs(t1 - t0)

    while True:
        remaining = (t1 - t) * direction
        if remaining <= 1e-15 * max(1.0, abs(t1)):
            break
        if n_acc + n_rej >= max_steps:
            status = MAX_STEPS
            break
        last = False
        if abs(h) >= remaining:
            h = t1 - t
            last = True
        elif abs(h) < H_UNDERFLOW:
            status = UNDERFLOW
            t_event = t
            break

        k2 = rhs(y + h * A21 * k1, code, xi, sc, eps, coef, tp, n, dim, var)
        k3 = rhs(y + h * (A31 * k1 + A32 * k2), code, xi, sc, eps, coef, tp, n, dim, var)
        k4 = rhs(y + h * (A41 * k1 + A42 * k2 + A43 * k3), code, xi, sc, eps, coef, tp, n, dim, var)
        k5 = rhs(y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4),
                 code, xi, sc, eps, coef, tp, n, dim, var)
        k6 = rhs(y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5),
                 code, xi, sc, eps, coef, tp, n, dim, var)
        y1 = y + h * (A71 * k1 + A73 * k3 + A74 * k4 + A75 * k5 + A76 * k6)
        k7 = rhs(y1, code, xi, sc, eps, coef, tp, n, dim, var)
        e = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        err = _err_norm(y, y1, e, rtol, atol)

        if not np.isfinite(err):
            h *= 0.2
            rejected = True
            n_rej += 1
            continue

        fac11 = err ** EXPO1
        fac = fac11 / facold ** BETA
        fac = max(1.0 / FAC_MAX, min(1.0 / FAC_MIN, fac / SAFE))
        if err > 1.0:
            h = h / min(1.0 / FAC_MIN, fac11 / SAFE)
            rejected = True
            n_rej += 1
            continue

        # accepted step
        n_acc += 1
        facold = max(err, 1e-4)
        ydiff = y1 - y
        bspl = h * k1 - ydiff
        r1 = y
        r2 = ydiff
        r3 = bspl
        r4 = ydiff - h * k7 - bspl
        r5 = h * (D1 * k1 + D3 * k3 + D4 * k4 + D5 * k5 + D6 * k6 + D7 * k7)

        xr1 = np.ascontiguousarray(r1[:m])
        xr2 = np.ascontiguousarray(r2[:m])
        xr3 = np.ascontiguousarray(r3[:m])
        xr4 = np.ascontiguousarray(r4[:m])
        xr5 = np.ascontiguousarray(r5[:m])
        dmin, th = dense_min(code, xr1, xr2, xr3, xr4, xr5, n, dim, run_min)
        fired = False
        if thr > 0.0 and dmin <= thr:
            tc = dense_event(code, xr1, xr2, xr3, xr4, xr5, n, dim, thr, th,
                             EVENT_TOL / abs(h))
            if tc >= 0.0:
                fired = True
                y1 = r1 + tc * (r2 + (1.0 - tc) * (r3 + tc * (r4 + (1.0 - tc) * r5)))
                t_new = t + tc * h
                run_min = min(run_min, thr)
        if not fired:
            t_new = t1 if last else t + h
            if dmin < run_min:
                run_min = dmin

        if code == SPHERE:
            drift = max(drift, _project_sphere(y1, n))

        if store:
            if count == ts.size:
                ts2 = np.empty(2 * count)
                ys2 = np.empty((2 * count, ny))
                conts2 = np.empty((2 * count, 5, ny))
                hs2 = np.empty(2 * count)
                mins2 = np.empty(2 * count)
                ts2[:count] = ts
                ys2[:count] = ys
                conts2[:count] = conts
                hs2[:count] = hs
                mins2[:count] = mins
                ts, ys, conts, hs, mins = ts2, ys2, conts2, hs2, mins2
            ts[count] = t_new
            ys[count] = y1
            conts[count - 1, 0] = r1
            conts[count - 1, 1] = r2
            conts[count - 1, 2] = r3
            conts[count - 1, 3] = r4
            conts[count - 1, 4] = r5
            hs[count - 1] = h
            mins[count] = run_min
            count += 1
        else:
            ts[0] = t_new
            ys[0] = y1

        y = y1
        t = t_new
        if fired:
            status = EVENT
            t_event = t
            break
        if code == SPHERE and drift > DRIFT_TOL:
            status = SURFACE_DRIFT
            break
        if code == DISK and _near_boundary(y, n):
            status = BOUNDARY
            t_event = t
            break
        if last:
            t = t1
            break

        if code == SPHERE:
            k1 = rhs(y, code, xi, sc, eps, coef, tp, n, dim, var)
        else:
            k1 = k7
        if not _all_finite(k1):
            status = NONFINITE
            t_event = t
            break
        hnew = h / fac
        if rejected:
            hnew = direction * min(abs(hnew), abs(h))
            rejected = False
        h = direction * min(abs(hnew), max_step, span)

    if store:
        return (ts[:count], ys[:count], conts[:count - 1], hs[:count - 1], mins[:count], status, t_event,
                run_min, drift, n_acc, n_rej)
    return ts[:1], ys[:1], conts[:0], hs[:0], mins[:1], status, t_event, run_min, drift, n_acc, n_rej


@jit(parallel=True)
def integrate_batch(Y0, XI, SC, t1, rtol, atol, max_step, code, eps, coef, tp, n, dim, thr,
                    max_steps):
    """Integrate many initial states (rows of Y0) without storing trajectories.

    Returns (final states, running minima, status codes, event times).
    """
    S = Y0.shape[0]
    out = np.empty_like(Y0)
    mins = np.empty(S)
    status = np.empty(S, dtype=np.int64)
    tev = np.empty(S)
    for s in prange(S):
        res = integrate_core(Y0[s].copy(), 0.0, t1, rtol, atol, max_step, code, XI[s], SC[s],
                             eps, coef, tp, n, dim, False, thr, False, max_steps)
        out[s] = res[1][0]
        status[s] = res[5]
        tev[s] = res[6]
        mins[s] = res[7]
    return out, mins, status, tev
