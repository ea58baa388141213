"""Independent reference values used by the oracle tests."""

import mpmath
import numpy as np

Q = mpmath.exp(-mpmath.pi)


def _theta_part(z1, z2):
    """-log|theta_1(z/2 | i)| / (2 pi) + z2^2 / (8 pi^2), z = z1 + i z2."""
    th = mpmath.jtheta(1, mpmath.mpc(z1, z2) / 2, Q)
    return float(-mpmath.log(abs(th)) / (2 * mpmath.pi) + z2 * z2 / (8 * mpmath.pi**2))


def _torus_offset():
    """Constant making the theta form zero-mean over the torus."""
    x, w = np.polynomial.legendre.leggauss(48)
    x, w = np.pi * x, np.pi * w
    total = 0.0
    for a, wa in zip(x, w):
        for b, wb in zip(x, w):
            total += wa * wb * (_theta_part(a, b) + np.log(np.hypot(a, b)) / (2 * np.pi))
    # int over [-pi, pi]^2 of log r, from int_[0,1]^2 log(x^2 + y^2) = log 2 - 3 + pi / 2
    a = np.pi
    log_r = 4 * a * a * (np.log(a) + (np.log(2.0) - 3.0 + np.pi / 2) / 2)
    total -= log_r / (2 * np.pi)
    return -total / (4 * np.pi**2)


_OFFSET = []


def torus_green(z):
    """Zero-mean periodic Green function of -Laplacian on [0, 2pi)^2 at separation z."""
    if not _OFFSET:
        _OFFSET.append(_torus_offset())
    z = np.mod(np.asarray(z, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    return _theta_part(z[0], z[1]) + _OFFSET[0]


def torus_regular_at_zero():
    """lim_{z -> 0} G(z) + log|z| / (2 pi)."""
    if not _OFFSET:
        _OFFSET.append(_torus_offset())
    d = mpmath.diff(lambda u: mpmath.jtheta(1, u, Q), 0)
    return float(-mpmath.log(abs(d) / 2) / (2 * mpmath.pi)) + _OFFSET[0]
