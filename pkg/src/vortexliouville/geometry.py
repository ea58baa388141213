"""Green functions, Biot-Savart kernels and their regularisations on four surfaces.

Conventions
-----------
The perpendicular gradient is ``grad_perp = (d2, -d1)``, so the flat kernel is
the rotation ``(v1, v2) -> (v2, -v1)`` of ``grad_x G``.  On the plane
``G(x, y) = -log|x - y| / (2 pi)`` and a positive vortex pair turns
counterclockwise.  On the sphere the kernel is ``x cross grad_x G``, which
gives ``K(x, y) = (x cross y) / (2 pi |x - y|^2)``.

Points are arrays of shape (D,) or batches (M, D); batched inputs return
batched outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels_np as kn
from ._tables import TorusTable, get_table

KINDS = {"torus": kn.TORUS, "sphere": kn.SPHERE, "disk": kn.DISK, "plane": kn.PLANE}
COINCIDENT_TOL = 1e-14
SURFACE_TOL = 1e-12
BOUNDARY_TOL = 1e-12
SPHERE_CONSTANT = kn.SPHERE_C


class GeometryError(ValueError):
    """Base class for invalid geometric input."""


class CoincidentPointsError(GeometryError):
    pass


class OffSurfaceError(GeometryError):
    pass


class BoundaryError(GeometryError):
    pass


@dataclass(frozen=True)
class Geometry:
    """Phase-space surface.

    Parameters
    ----------
    kind : {"torus", "sphere", "disk", "plane"}
    torus_table_resolution : int
        Grid cells per side of the tabulated torus regular part.
    ewald_split : float
        Screening parameter of the Ewald construction (torus only).
    disk_self_term : {"image", "literal"}
        ``"image"`` uses the Kirchhoff-Routh self-advection ``xi * W(x)``;
        ``"literal"`` uses ``2 xi^2 W(x)`` with Hamiltonian self-energy
        ``xi^2 g(x, x)`` instead of ``xi^2 g(x, x) / 2``.
    """

    kind: str
    torus_table_resolution: int = 256
    ewald_split: float = 1.0
    disk_self_term: str = "image"
    _table: list = field(default_factory=list, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GeometryError(f"kind: unknown geometry {self.kind!r}")
        if self.torus_table_resolution < 8:
            raise GeometryError("torus_table_resolution: must be at least 8")
        if not self.ewald_split > 0:
            raise GeometryError("ewald_split: must be positive")
        if self.disk_self_term not in ("image", "literal"):
            raise GeometryError(f"disk_self_term: unknown option {self.disk_self_term!r}")

    @property
    def code(self) -> int:
        return KINDS[self.kind]

    @property
    def dim(self) -> int:
        return 3 if self.kind == "sphere" else 2

    @property
    def table(self) -> TorusTable | None:
        if self.kind != "torus":
            return None
        if not self._table:
            self._table.append(get_table(self.torus_table_resolution, self.ewald_split))
        return self._table[0]

    @property
    def coef(self) -> np.ndarray:
        t = self.table
        return t.coef if t is not None else np.zeros((1, 1))

    @property
    def tp(self) -> np.ndarray:
        t = self.table
        return t.tp if t is not None else np.zeros(2)

    @property
    def diameter(self) -> float:
        return {"torus": np.pi * np.sqrt(2.0), "sphere": 2.0, "disk": 2.0, "plane": np.inf}[self.kind]

    def self_coefficients(self, xi: np.ndarray) -> np.ndarray:
        """Per-vortex weight of the disk self-advection W(x)."""
        xi = np.asarray(xi, dtype=np.float64)
        if self.kind != "disk":
            return np.zeros_like(xi)
        return xi.copy() if self.disk_self_term == "image" else 2.0 * xi * xi

    def self_energy_weights(self, xi: np.ndarray) -> np.ndarray:
        """Per-vortex weight of g(x, x) in the Hamiltonian."""
        xi = np.asarray(xi, dtype=np.float64)
        if self.kind != "disk":
            return np.zeros_like(xi)
        return 0.5 * xi * xi if self.disk_self_term == "image" else xi * xi

    def check_points(self, x) -> np.ndarray:
        """Validate surface membership; returns a float (M, D) array."""
        X = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if X.shape[-1] != self.dim:
            raise GeometryError(f"points: expected dimension {self.dim}, got {X.shape[-1]}")
        if self.kind == "sphere":
            r = np.linalg.norm(X, axis=-1)
            if np.any(np.abs(r - 1.0) > SURFACE_TOL):
                raise OffSurfaceError("sphere point with ||x| - 1| > 1e-12")
        elif self.kind == "disk":
            if np.any(np.sum(X * X, axis=-1) >= 1.0):
                raise OffSurfaceError("disk point outside the open unit disk")
        return X

    def uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n points drawn from the normalised surface measure."""
        if self.kind == "torus":
            return rng.uniform(0.0, 2.0 * np.pi, size=(n, 2))
        if self.kind == "sphere":
            v = rng.standard_normal((n, 3))
            return v / np.linalg.norm(v, axis=1)[:, None]
        if self.kind == "disk":
            r = np.sqrt(rng.uniform(0.0, 1.0, n))
            a = rng.uniform(0.0, 2.0 * np.pi, n)
            return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
        raise GeometryError("plane: no normalised uniform measure")

    def canonical(self, x) -> np.ndarray:
        """Representative coordinates (torus positions reduced to [0, 2 pi))."""
        X = np.asarray(x, dtype=np.float64)
        return np.mod(X, 2.0 * np.pi) if self.kind == "torus" else X


@dataclass(frozen=True)
class RegularizationSpec:
    """Smoothing radius for the logarithmic singularity.

    Inside ``r < epsilon`` the singular part ``-log r / (2 pi)`` becomes
    ``-(log epsilon + p(s)) / (2 pi)`` with ``s = (r / epsilon)^2``.
    """

    epsilon: float

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise GeometryError("epsilon: must be nonnegative")

    @staticmethod
    def blend_poly(s):
        return (-s * s + 4.0 * s - 3.0) / 4.0


def _finish(out, scalar):
    return out[0] if scalar else out


def _pair(geom: Geometry, x, y, check_coincident: bool):
    scalar = np.ndim(x) == 1 and np.ndim(y) == 1
    X = geom.check_points(x)
    Y = geom.check_points(y)
    X, Y = np.broadcast_arrays(X, Y)
    if check_coincident and np.any(kn.distance(geom.code, X, Y) < COINCIDENT_TOL):
        raise CoincidentPointsError("coincident points: d(x, y) < 1e-14")
    return X, Y, scalar


def distance(geom: Geometry, x, y):
    """Geodesic-free distance used throughout: periodic on the torus, chordal on the sphere."""
    X, Y, scalar = _pair(geom, x, y, False)
    return _finish(kn.distance(geom.code, X, Y), scalar)


def green(geom: Geometry, x, y):
    """G(x, y); symmetric, zero-mean on compact surfaces, Dirichlet on the disk."""
    X, Y, scalar = _pair(geom, x, y, True)
    return _finish(kn.green_xy(geom.code, X, Y, 0.0, geom.coef, geom.tp), scalar)


def smooth_part(geom: Geometry, x, y):
    """g(x, y) = G(x, y) + log d(x, y) / (2 pi); finite on the diagonal."""
    X, Y, scalar = _pair(geom, x, y, False)
    return _finish(kn.smooth_xy(geom.code, X, Y, geom.coef, geom.tp), scalar)


def kernel(geom: Geometry, x, y):
    """Biot-Savart kernel K(x, y)."""
    X, Y, scalar = _pair(geom, x, y, True)
    return _finish(kn.kernel_xy(geom.code, X, Y, 0.0, geom.coef, geom.tp), scalar)


def regularized_green(geom: Geometry, reg: RegularizationSpec, x, y):
    X, Y, scalar = _pair(geom, x, y, reg.epsilon == 0.0)
    return _finish(kn.green_xy(geom.code, X, Y, reg.epsilon, geom.coef, geom.tp), scalar)


def regularized_gradient(geom: Geometry, reg: RegularizationSpec, x, y):
    """grad_x G_eps(x, y) (ambient R^3 vector on the sphere)."""
    X, Y, scalar = _pair(geom, x, y, reg.epsilon == 0.0)
    return _finish(kn.grad1_xy(geom.code, X, Y, reg.epsilon, geom.coef, geom.tp), scalar)


def regularized_kernel(geom: Geometry, reg: RegularizationSpec, x, y):
    X, Y, scalar = _pair(geom, x, y, reg.epsilon == 0.0)
    return _finish(kn.kernel_xy(geom.code, X, Y, reg.epsilon, geom.coef, geom.tp), scalar)


def tangent_frame(x) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal tangent frame (e1, e2) at sphere points with e1 x e2 = -x.

    In this frame ``x cross v`` has components ``(v2, -v1)``, the same
    rotation as on flat surfaces.
    """
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    axis = np.zeros_like(X)
    axis[np.arange(X.shape[0]), np.argmin(np.abs(X), axis=1)] = 1.0
    e1 = axis - np.sum(axis * X, axis=1)[:, None] * X
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(e1, X)
    return e1, e2


def tangent_pair(geom: Geometry, reg: RegularizationSpec, x, y):
    """Intrinsic components of (grad_x G_eps, K_eps) at x.

    Flat surfaces use Cartesian components; the sphere uses ``tangent_frame``.
    The kernel components are the rotation of the gradient components, so
    their dot product is exactly zero in floating point.
    """
    X, Y, scalar = _pair(geom, x, y, reg.epsilon == 0.0)
    G = kn.grad1_xy(geom.code, X, Y, reg.epsilon, geom.coef, geom.tp)
    if geom.kind == "sphere":
        e1, e2 = tangent_frame(X)
        G = np.stack([np.sum(G * e1, axis=1), np.sum(G * e2, axis=1)], axis=1)
    K = kn.rotate(G)
    return _finish(G, scalar), _finish(K, scalar)


def routh_velocity(geom: Geometry, xi: float, x):
    """Self-advection of a single disk vortex of strength xi at x.

    With the default ``"image"`` self term this is the velocity induced by
    the image vortex ``-xi`` at ``x / |x|^2``.
    """
    if geom.kind != "disk":
        raise GeometryError("routh_velocity: defined on the disk only")
    scalar = np.ndim(x) == 1
    X = geom.check_points(x)
    if np.any(1.0 - np.linalg.norm(X, axis=1) < BOUNDARY_TOL):
        raise BoundaryError("vortex within 1e-12 of the disk boundary")
    xi_arr = np.broadcast_to(np.asarray(xi, dtype=np.float64), (X.shape[0],))
    return _finish(kn.disk_self_velocity(X, geom.self_coefficients(xi_arr)), scalar)
