import json

import numpy as np
import pytest

from vortexliouville.dynamics import FlowOptions, VortexState, arrested_flow, flow, integrate
from vortexliouville.geometry import Geometry
from vortexliouville.observables import (Bump, Conj, Const, Coord, CylinderObservable, Exp,
                                         TestFunction, arrested_koopman_apply,
                                         arrested_liouville_apply, config_generator_apply,
                                         diagonal_cutoff, evaluate, gradient_batch, koopman_apply,
                                         liouville_apply, random_observable, step_function,
                                         symmetrized_kernel, symmetrized_kernel_batch,
                                         weak_form_residual)

TORUS, SPHERE, DISK, PLANE = (Geometry(k) for k in ("torus", "sphere", "disk", "plane"))


def torus_state(rng, xi, min_sep=0.1):
    while True:
        P = TORUS.uniform(rng, len(xi))
        Z = (P[:, None] - P[None] + np.pi) % (2 * np.pi) - np.pi
        d = np.linalg.norm(Z, axis=-1) + np.eye(len(xi)) * 10
        if d.min() > min_sep:
            return VortexState(P, xi, TORUS)


def single_mode(k, amp=1.0):
    return TestFunction.fourier([k], [amp])


# ---------------------------------------------------------------- evaluation

def test_direct_coupling():
    x0 = np.array([0.3, 1.1])
    k = (2, -1)
    obs = CylinderObservable(Coord(0), [single_mode(k)])
    val = evaluate(obs, VortexState([x0], [2.0], TORUS))
    assert val == pytest.approx(2 * np.exp(1j * np.dot(k, x0)), abs=1e-15)


def test_cutoff_zero_near_diagonal():
    obs = random_observable(TORUS, np.random.default_rng(0), delta=0.2)
    s = VortexState([[1.0, 1.0], [1.05, 1.0], [3.0, 2.0]], [1.0, -1.0, 1.0], TORUS)
    assert evaluate(obs, s) == 0.0
    assert liouville_apply(obs, s) == 0.0


def test_permutation_invariance():
    rng = np.random.default_rng(1)
    obs = random_observable(TORUS, rng, delta=0.1)
    s = torus_state(rng, [1.0, -0.5, 2.0])
    perm = [2, 0, 1]
    t = VortexState(s.positions[perm], s.intensities[perm], TORUS)
    assert evaluate(obs, t) == pytest.approx(evaluate(obs, s), abs=1e-14)


def test_step_function_shape():
    s = np.linspace(0, 2, 401)
    for order in (None, 2, 4):
        eta, _ = step_function(s, order)
        assert np.all(eta[s <= 0.5] == 0.0) and np.all(eta[s >= 1.0] == 1.0)
        assert np.all(np.diff(eta) >= 0)


@pytest.mark.parametrize("order", [None, 3])
def test_step_function_derivative(order):
    s = np.linspace(0.52, 0.98, 50)
    h = 1e-6
    fd = (step_function(s + h, order)[0] - step_function(s - h, order)[0]) / (2 * h)
    assert np.allclose(step_function(s, order)[1], fd, atol=1e-6)


def test_cutoff_gradient_matches_finite_difference():
    rng = np.random.default_rng(2)
    P = np.array([[[1.0, 1.0], [1.15, 1.05], [2.0, 1.1]]])
    chi, grad = diagonal_cutoff(TORUS, P, 0.25)
    h = 1e-6
    for i in range(3):
        for d in range(2):
            e = np.zeros_like(P)
            e[0, i, d] = h
            fd = (diagonal_cutoff(TORUS, P + e, 0.25)[0] - diagonal_cutoff(TORUS, P - e, 0.25)[0]) / (2 * h)
            assert grad[0, i, d] == pytest.approx(fd[0], abs=1e-6)


@pytest.mark.parametrize("geom", [TORUS, SPHERE, DISK, PLANE], ids=lambda g: g.kind)
def test_gradient_matches_finite_difference(geom):
    rng = np.random.default_rng(3)
    obs = random_observable(geom, rng, delta=0.1 if geom.kind == "torus" else 0.0)
    P = (geom.uniform(rng, 3) if geom.kind != "plane" else rng.normal(size=(3, 2)))
    if geom.kind == "disk":
        P *= 0.7
    xi = np.array([1.0, -0.6, 0.9])
    f0, grad = gradient_batch(obs, geom, P[None], xi)
    h = 1e-6
    for i in range(3):
        for d in range(geom.dim):
            e = np.zeros_like(P)
            e[i, d] = h
            fp = gradient_batch(obs, geom, (P + e)[None], xi)[0][0]
            fm = gradient_batch(obs, geom, (P - e)[None], xi)[0][0]
            assert grad[0, i, d] == pytest.approx((fp - fm) / (2 * h), abs=1e-6)


# ---------------------------------------------------------------- Liouville operator

def test_liouville_trivial_cases():
    const = CylinderObservable(Const(2.0 + 1j), [single_mode((1, 0))])
    s = torus_state(np.random.default_rng(4), [1.0, -1.0, 1.0])
    assert liouville_apply(const, s) == 0.0
    obs = random_observable(TORUS, np.random.default_rng(5))
    assert liouville_apply(obs, VortexState([[1.0, 2.0]], [1.0], TORUS)) == 0.0


@pytest.mark.parametrize("geom", [TORUS, SPHERE, DISK, PLANE], ids=lambda g: g.kind)
def test_liouville_matches_flow_derivative(geom):
    rng = np.random.default_rng(6)
    opts = FlowOptions(rel_tol=1e-13, abs_tol=1e-14)
    for _ in range(3):
        obs = random_observable(geom, rng, delta=0.2 if geom.kind == "torus" else 0.0)
        if geom.kind == "torus":
            s = torus_state(rng, [1.0, -1.0, 0.5], 0.3)
        else:
            P = geom.uniform(rng, 3) if geom.kind != "plane" else rng.normal(size=(3, 2))
            s = VortexState(0.7 * P if geom.kind == "disk" else P, [1.0, -1.0, 0.5], geom)
        h = 1e-4
        fd = (evaluate(obs, flow(s, h, opts)) - evaluate(obs, flow(s, -h, opts))) / (2 * h)
        lf = liouville_apply(obs, s)
        assert abs(fd - 1j * lf) <= 1e-6 * max(1.0, abs(lf))


def test_config_generator_equals_liouville():
    rng = np.random.default_rng(7)
    for _ in range(5):
        obs = random_observable(TORUS, rng)
        s = torus_state(rng, rng.uniform(-1, 1, 3))
        assert config_generator_apply(obs, s) == pytest.approx(liouville_apply(obs, s), abs=1e-10)
    const = CylinderObservable(Const(1.0), [single_mode((1, 1))])
    assert config_generator_apply(const, s) == 0.0
    assert config_generator_apply(obs, VortexState([[1.0, 1.0]], [2.0], TORUS)) == 0.0


# ---------------------------------------------------------------- Koopman actions

def test_koopman_t_zero_and_group_law():
    rng = np.random.default_rng(8)
    obs = random_observable(TORUS, rng)
    s = torus_state(rng, [1.0, 1.0, -1.0], 0.3)
    assert koopman_apply(obs, s, 0.0) == evaluate(obs, s)
    a = koopman_apply(obs, s, 1.5)
    b = koopman_apply(obs, flow(s, 1.0), 0.5)
    assert a == pytest.approx(b, abs=1e-7)


def test_koopman_corotation_period():
    phi = TestFunction.polynomial([[2, 0], [1, 1]], [1.0, 0.5j])
    obs = CylinderObservable(Bump(Coord(0), 5.0) * (Coord(0) + Conj(Coord(0))), [phi])
    s = VortexState([[0.5, 0.0], [-0.5, 0.1]], [1.0, 1.0], PLANE)
    period = 2 * np.pi**2 * (0.5**2 + 0.05**2) / 0.25  # T = 2 pi^2 d^2 for unit intensities
    assert koopman_apply(obs, s, period) == pytest.approx(evaluate(obs, s), abs=1e-6)


def test_arrested_koopman():
    obs = random_observable(TORUS, np.random.default_rng(9))
    close = VortexState([[1.0, 1.0], [1.0, 1.005], [3.0, 3.0]], [1.0, -1.0, 1.0], TORUS)
    assert arrested_koopman_apply(obs, close, 1.0, 0.01) == evaluate(obs, close)
    far = VortexState([[1.0, 1.0], [3.0, 1.5], [5.0, 4.0]], [1.0, -1.0, 1.0], TORUS)
    assert arrested_koopman_apply(obs, far, 1.0, 0.01) == pytest.approx(
        koopman_apply(obs, far, 1.0), abs=1e-10)


def test_arrested_liouville_commutes():
    rng = np.random.default_rng(10)
    opts = FlowOptions(rel_tol=1e-12, abs_tol=1e-13)
    for _ in range(4):
        obs = random_observable(TORUS, rng)
        s = torus_state(rng, [1.0, -1.0, 1.0], 0.2)
        eps = 0.05
        lhs = arrested_liouville_apply(obs, s, 1.0, eps, opts)
        # right side: (Lf) evaluated at R^eps_t x
        r = arrested_flow(s, 1.0, eps, opts)
        rhs = liouville_apply(obs, r.final)
        assert lhs == pytest.approx(rhs, abs=1e-6)


# ---------------------------------------------------------------- symmetrised kernel

def test_symmetrized_kernel_basics():
    rng = np.random.default_rng(11)
    phi = TestFunction.fourier([[1, 2], [-1, -2]], [0.3 + 0.1j, 0.3 - 0.1j])
    x, y = rng.uniform(0, 2 * np.pi, (2, 2))
    assert symmetrized_kernel(phi, TORUS, x, x) == 0.0
    assert symmetrized_kernel(phi, TORUS, x, y) == pytest.approx(symmetrized_kernel(phi, TORUS, y, x), abs=1e-14)
    lin = TestFunction.polynomial([[1, 0], [0, 1]], [2.0, -1.0])
    X, Y = rng.normal(size=(2, 50, 2))
    assert np.all(symmetrized_kernel_batch(lin, PLANE, X, Y) == 0.0)
    with pytest.raises(ValueError):
        symmetrized_kernel(lin, DISK, [0.1, 0.0], [0.0, 0.2])


def test_symmetrized_kernel_zero_average():
    rng = np.random.default_rng(12)
    for _ in range(5):
        phi = TestFunction.fourier([[1, 1], [-1, -1], [2, 0], [-2, 0]], [0.5, 0.5, 0.2, 0.2])
        x = rng.uniform(0, 2 * np.pi, 2)
        Y = TORUS.uniform(rng, 100_000)
        v = symmetrized_kernel_batch(phi, TORUS, np.broadcast_to(x, Y.shape), Y)
        assert abs(v.mean()) <= 3 * v.std() / np.sqrt(v.size)


def test_weak_form_residual():
    rng = np.random.default_rng(13)
    phi = TestFunction.fourier([[1, 1], [-1, -1], [0, 2], [0, -2]], [0.5, 0.5, 0.3j, -0.3j])
    s = torus_state(rng, [1.0, -1.0, 0.5, -0.8], 0.3)
    assert weak_form_residual(integrate(s, 0.0), phi) == 0.0
    assert weak_form_residual(integrate(s, 2.0), phi) <= 1e-5
    quad = TestFunction.polynomial([[2, 0], [0, 2], [1, 1]], [1.0, 0.5, 0.25])
    pair = VortexState([[0.5, 0.0], [-0.5, 0.0]], [1.0, 1.0], PLANE)
    assert weak_form_residual(integrate(pair, 1.0), quad) <= 1e-6


# ---------------------------------------------------------------- serialisation

def test_observable_json_round_trip():
    obs = CylinderObservable(Exp(Const(0.1) * Coord(1)) * Bump(Coord(0) + Conj(Coord(1)), 2.0),
                             [single_mode((1, 0), 0.5 + 0.1j), TestFunction.fourier([[0, 1], [1, 1]], [1.0, -2j])],
                             0.1, 3)
    again = CylinderObservable.from_json(json.dumps(obs.to_dict()))
    s = torus_state(np.random.default_rng(14), [1.0, 0.5])
    assert evaluate(again, s) == evaluate(obs, s)
    assert again.to_dict() == obs.to_dict()


def test_test_function_reality():
    assert TestFunction.fourier([[1, 0], [-1, 0]], [1 + 1j, 1 - 1j]).is_real
    assert not TestFunction.fourier([[1, 0]], [1.0]).is_real
