import numpy as np
import pytest

from vortexliouville import _tables
from vortexliouville.geometry import (SPHERE_CONSTANT, BoundaryError, CoincidentPointsError,
                                      Geometry, GeometryError, OffSurfaceError,
                                      RegularizationSpec, distance, green, kernel,
                                      regularized_gradient, regularized_green, regularized_kernel,
                                      routh_velocity, smooth_part, tangent_frame, tangent_pair)

import oracles

TORUS, SPHERE, DISK, PLANE = (Geometry(k) for k in ("torus", "sphere", "disk", "plane"))
ALL = (TORUS, SPHERE, DISK, PLANE)


def points(geom, rng, n):
    if geom.kind == "plane":
        return rng.normal(size=(n, 2))
    return geom.uniform(rng, n)


# ---------------------------------------------------------------- closed-form values

def test_plane_green_unit_distance_is_zero():
    assert green(PLANE, [1.0, 0.0], [0.0, 0.0]) == 0.0


def test_disk_green_origin_half():
    # image formula: -log|x - y| / 2pi + log(|y| |x - y*|) / 2pi, y* = y / |y|^2
    expected = np.log(2.0) / (2 * np.pi)
    assert green(DISK, [0.0, 0.0], [0.5, 0.0]) == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.110318, abs=1e-6)


def test_disk_smooth_part_on_diagonal():
    assert smooth_part(DISK, [0.0, 0.0], [0.0, 0.0]) == 0.0
    assert smooth_part(DISK, [0.5, 0.0], [0.5, 0.0]) == pytest.approx(np.log(0.75) / (2 * np.pi), abs=1e-15)
    assert np.log(0.75) / (2 * np.pi) == pytest.approx(-0.045787, abs=1e-6)


def test_plane_kernel_value():
    assert np.allclose(kernel(PLANE, [1.0, 0.0], [0.0, 0.0]), [0.0, 1 / (2 * np.pi)], atol=1e-16)


def test_sphere_kernel_value():
    k = kernel(SPHERE, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
    assert np.allclose(k, [0.0, 1 / (4 * np.pi), 0.0], atol=1e-16)


def test_sphere_constant_is_mean_of_log():
    # mean of log|x - y| over the unit sphere equals log 2 - 1/2
    assert SPHERE_CONSTANT == pytest.approx((np.log(2.0) - 0.5) / (2 * np.pi), rel=1e-15)
    rng = np.random.default_rng(1)
    Y = SPHERE.uniform(rng, 200_000)
    x = np.array([0.0, 0.0, 1.0])
    vals = green(SPHERE, np.broadcast_to(x, Y.shape), Y)
    assert abs(vals.mean()) < 4 * vals.std() / np.sqrt(len(vals))


def test_plane_kernel_antisymmetric_exactly():
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(2, 500, 2))
    assert np.array_equal(kernel(PLANE, X, Y), -kernel(PLANE, Y, X))


def test_regularized_green_at_zero():
    # -(log eps + p(0)) / 2pi with p(0) = -3/4
    expected = -(np.log(0.1) - 0.75) / (2 * np.pi)
    assert expected == pytest.approx(0.485834, abs=1e-6)
    reg = RegularizationSpec(0.1)
    assert regularized_green(PLANE, reg, [0.0, 0.0], [0.0, 0.0]) == pytest.approx(expected, rel=1e-15)


def test_regularized_matches_at_boundary_and_outside():
    reg = RegularizationSpec(0.1)
    x, y = np.array([0.3, 0.2]), np.array([0.4, 0.2])
    assert regularized_green(PLANE, reg, x, y) == pytest.approx(green(PLANE, x, y), abs=1e-15)
    y2 = np.array([0.5, 0.2])
    assert np.allclose(regularized_kernel(PLANE, reg, x, y2), kernel(PLANE, x, y2), atol=1e-14, rtol=0)


def test_regularized_gradient_bound_half_eps():
    reg = RegularizationSpec(0.1)
    g = regularized_gradient(PLANE, reg, [0.05, 0.0], [0.0, 0.0])
    assert np.linalg.norm(g) <= 1 / (0.1 * np.pi)


def test_regularized_kernel_zero_on_diagonal():
    for geom in (TORUS, SPHERE, PLANE):
        x = points(geom, np.random.default_rng(3), 1)[0]
        assert np.all(regularized_kernel(geom, RegularizationSpec(0.05), x, x) == 0.0)


def test_routh_velocity_values():
    v = routh_velocity(DISK, 1.0, [0.5, 0.0])
    assert np.allclose(v, [0.0, 1 / (3 * np.pi)], atol=1e-16)
    assert np.array_equal(routh_velocity(DISK, -1.0, [0.5, 0.0]), -v)
    assert np.all(routh_velocity(DISK, 2.0, [0.0, 0.0]) == 0.0)


def test_routh_velocity_matches_image_vortex():
    x = np.array([0.3, -0.4])
    image = x / np.dot(x, x)
    expected = -kernel(PLANE, x, image)
    assert np.allclose(routh_velocity(DISK, 1.0, x), expected, atol=1e-15)


def test_routh_literal_flag_doubles_xi_squared():
    lit = Geometry("disk", disk_self_term="literal")
    x = np.array([0.2, 0.1])
    assert np.allclose(routh_velocity(lit, 3.0, x), 18.0 * routh_velocity(DISK, 1.0, x))


# ---------------------------------------------------------------- torus oracle

def test_torus_matches_theta_oracle():
    rng = np.random.default_rng(4)
    for _ in range(40):
        x, y = rng.uniform(0, 2 * np.pi, (2, 2))
        assert green(TORUS, x, y) == pytest.approx(oracles.torus_green(x - y), abs=1e-8)


def test_torus_regular_part_at_zero_matches_oracle():
    ref = oracles.torus_regular_at_zero()
    assert smooth_part(TORUS, [1.0, 2.0], [1.0, 2.0]) == pytest.approx(ref, abs=1e-8)


def test_torus_kernel_matches_exact_ewald_gradient():
    rng = np.random.default_rng(5)
    X, Y = rng.uniform(0, 2 * np.pi, (2, 200, 2))
    z = np.mod(X - Y + np.pi, 2 * np.pi) - np.pi
    grad = _tables.ewald_gradient(z)
    assert np.allclose(kernel(TORUS, X, Y), np.stack([grad[:, 1], -grad[:, 0]], 1), atol=1e-8)


def test_torus_fourier_coefficients():
    # G = sum_{k != 0} exp(i k.z) / (4 pi^2 |k|^2); a cell-centred grid avoids the singular node
    m = 128
    h = 2 * np.pi / m
    x = (np.arange(m) + 0.5) * h
    Z = np.stack(np.meshgrid(x, x, indexing="ij"), -1).reshape(-1, 2)
    vals = green(TORUS, Z, np.zeros_like(Z)).reshape(m, m)
    coef = np.fft.fft2(vals) / m**2
    for k in [(1, 0), (1, 1), (2, 1), (3, 0)]:
        phase = np.exp(1j * (k[0] + k[1]) * h / 2)
        target = 1.0 / (4 * np.pi**2 * (k[0] ** 2 + k[1] ** 2))
        assert abs(coef[k] / phase - target) < 2e-3 * target


def test_table_cache_round_trip(tmp_path):
    vals = np.arange(12.0).reshape(3, 4)
    path = tmp_path / "t.vlg"
    _tables.write_cache(path, 16, 1.0, vals)
    assert path.read_bytes()[:8] == b"VLGTBL01"
    assert np.array_equal(_tables.read_cache(path, 16, 1.0), vals)
    assert _tables.read_cache(path, 32, 1.0) is None


def test_table_independent_of_ewald_split():
    a = Geometry("torus", 64, 1.0)
    b = Geometry("torus", 64, 2.0)
    x, y = np.array([0.3, 1.0]), np.array([2.0, 5.5])
    assert green(a, x, y) == pytest.approx(green(b, x, y), abs=1e-6)


# ---------------------------------------------------------------- properties

@pytest.mark.parametrize("geom", ALL, ids=lambda g: g.kind)
def test_green_symmetric(geom):
    rng = np.random.default_rng(6)
    X, Y = points(geom, rng, 1000), points(geom, rng, 1000)
    assert np.allclose(green(geom, X, Y), green(geom, Y, X), atol=1e-13, rtol=0)


@pytest.mark.parametrize("geom", ALL, ids=lambda g: g.kind)
def test_singularity_split(geom):
    rng = np.random.default_rng(7)
    X = points(geom, rng, 200)
    if geom.kind == "disk":
        X *= 0.8
    for d in (1e-6, 1e-4, 1e-2, 1e-1):
        if geom.kind == "sphere":
            e1, _ = tangent_frame(X)
            Y = np.cos(d) * X + np.sin(d) * e1
        else:
            a = rng.uniform(0, 2 * np.pi, len(X))
            Y = X + d * np.stack([np.cos(a), np.sin(a)], 1)
        lhs = green(geom, X, Y) + np.log(distance(geom, X, Y)) / (2 * np.pi)
        assert np.allclose(lhs, smooth_part(geom, X, Y), atol=1e-10, rtol=0)


@pytest.mark.parametrize("geom", ALL, ids=lambda g: g.kind)
@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_exact_cancellation(geom, eps):
    rng = np.random.default_rng(8)
    X, Y = points(geom, rng, 10_000), points(geom, rng, 10_000)
    close = rng.random(10_000) < 0.5
    if geom.kind != "sphere":
        Y[close] = X[close] + eps * rng.normal(size=(close.sum(), 2))
        if geom.kind == "disk":
            Y[close] *= 0.5 / np.maximum(0.5, np.linalg.norm(Y[close], axis=1))[:, None]
            X[close] *= 0.5 / np.maximum(0.5, np.linalg.norm(X[close], axis=1))[:, None]
    G, K = tangent_pair(geom, RegularizationSpec(eps), X, Y)
    assert np.all(np.sum(G * K, axis=1) == 0.0)


@pytest.mark.parametrize("eps", [0.1, 0.05])
def test_regularization_sandwich(eps):
    reg = RegularizationSpec(eps)
    r = np.logspace(-8, np.log10(eps), 200)
    X = np.stack([r, np.zeros_like(r)], 1)
    g = np.linalg.norm(regularized_gradient(PLANE, reg, X, np.zeros_like(X)), axis=1)
    assert np.all(g <= 1 / (2 * np.pi * r) * (1 + 1e-14))


def test_regularization_c2_at_eps():
    eps = 0.1
    reg = RegularizationSpec(eps)
    f = lambda r: regularized_green(PLANE, reg, [r, 0.0], [0.0, 0.0])
    h = 1e-4
    # one-sided second differences from each side converge to the common value 1 / (2 pi eps^2)
    inner = (f(eps) - 2 * f(eps - h) + f(eps - 2 * h)) / h**2
    outer = (f(eps) - 2 * f(eps + h) + f(eps + 2 * h)) / h**2
    target = 1 / (2 * np.pi * eps**2)
    assert inner == pytest.approx(target, rel=1e-2)
    assert outer == pytest.approx(target, rel=1e-2)
    assert inner - outer == pytest.approx(0.0, abs=1e-2 * target)
    d_in = (3 * f(eps) - 4 * f(eps - h) + f(eps - 2 * h)) / (2 * h)
    d_out = (-3 * f(eps) + 4 * f(eps + h) - f(eps + 2 * h)) / (2 * h)
    assert d_in == pytest.approx(-1 / (2 * np.pi * eps), rel=1e-5)
    assert d_out == pytest.approx(-1 / (2 * np.pi * eps), rel=1e-5)


def test_disk_maximum_principle_bounds():
    rng = np.random.default_rng(9)
    X, Y = DISK.uniform(rng, 2000), DISK.uniform(rng, 2000)
    g = smooth_part(DISK, X, Y)
    far = np.maximum(1 - np.linalg.norm(X, axis=1), 1 - np.linalg.norm(Y, axis=1))
    assert np.all(g >= np.log(far) / (2 * np.pi) - 1e-14)
    assert np.all(g <= np.log(2.0) / (2 * np.pi) + 1e-14)


def test_disk_green_vanishes_at_boundary():
    y = np.array([0.3, -0.2])
    for a in np.linspace(0, 2 * np.pi, 7):
        x = (1 - 1e-9) * np.array([np.cos(a), np.sin(a)])
        assert abs(green(DISK, x, y)) < 1e-8


# ---------------------------------------------------------------- errors

def test_errors():
    with pytest.raises(CoincidentPointsError):
        green(PLANE, [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(OffSurfaceError):
        green(SPHERE, [0.0, 0.0, 1.0 + 1e-9], [1.0, 0.0, 0.0])
    with pytest.raises(BoundaryError):
        routh_velocity(DISK, 1.0, [1.0 - 1e-13, 0.0])
    with pytest.raises(GeometryError, match="kind"):
        Geometry("cube")
