import os
import subprocess
import sys

import numpy as np
import pytest

from vortexliouville import _kernels_nb as nb
from vortexliouville import _kernels_np as npk
from vortexliouville.geometry import Geometry

GEOMS = [Geometry(k) for k in ("torus", "sphere", "disk", "plane")]


def _state(geom, rng, n):
    if geom.kind == "plane":
        P = rng.normal(size=(n, 2))
    else:
        P = geom.uniform(rng, n)
    if geom.kind == "disk":
        P *= 0.8
    xi = rng.uniform(-1.5, 1.5, n)
    return np.ascontiguousarray(P.ravel()), xi


@pytest.mark.parametrize("geom", GEOMS, ids=lambda g: g.kind)
@pytest.mark.parametrize("eps", [0.0, 0.1])
def test_velocity_and_jacobian_agree(geom, eps):
    rng = np.random.default_rng(0)
    for n in (1, 2, 5):
        pos, xi = _state(geom, rng, n)
        sc = geom.self_coefficients(xi)
        args = (geom.code, pos, xi, sc, eps, geom.coef, geom.tp, n, geom.dim)
        assert np.allclose(nb.velocity(*args), npk.velocity(*args), rtol=1e-12, atol=1e-13)
        assert np.allclose(nb.velocity_jacobian(*args), npk.velocity_jacobian(*args),
                           rtol=1e-11, atol=1e-12)
        assert nb.min_distance(geom.code, pos, n, geom.dim) == pytest.approx(
            npk.min_distance(geom.code, pos, n, geom.dim), rel=1e-14)


@pytest.mark.parametrize("geom", GEOMS[:3], ids=lambda g: g.kind)
def test_metropolis_chunk_agrees(geom):
    rng = np.random.default_rng(1)
    S, n, sweeps = 4, 3, 20
    xi = np.array([1.0, -1.0, 0.5])
    P0 = np.stack([geom.uniform(rng, n).ravel() for _ in range(S)])
    props = rng.standard_normal((S, sweeps, n, geom.dim))
    unif = rng.random((S, sweeps, n))
    out = []
    for mod in (nb, npk):
        P = P0.copy()
        acc = np.zeros(S, dtype=np.int64)
        mod.metropolis_chunk(geom.code, P, np.full(S, 0.3), acc, xi, geom.self_energy_weights(xi),
                             2.0, geom.coef, geom.tp, n, geom.dim, props, unif)
        out.append((P, acc))
    assert np.array_equal(out[0][1], out[1][1])
    assert np.allclose(out[0][0], out[1][0], atol=1e-12)


def test_numpy_backend_end_to_end():
    code = ("from vortexliouville._backend import BACKEND;"
            "from vortexliouville.dynamics import VortexState, flow;"
            "from vortexliouville.geometry import Geometry;"
            "s = flow(VortexState([[0.5, 0.0], [-0.5, 0.0]], [1.0, 1.0], Geometry('plane')), 0.3);"
            "print(BACKEND, float(s.positions[0, 0]), float(s.positions[0, 1]))")
    env = dict(os.environ, VL_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    assert out[0] == "numpy"
    # unit pair at separation 1 rotates at angular speed 1 / pi
    theta = 0.3 / np.pi
    assert float(out[1]) == pytest.approx(0.5 * np.cos(theta), abs=1e-9)
    assert float(out[2]) == pytest.approx(0.5 * np.sin(theta), abs=1e-9)
