"""Cylinder observables and the operators acting on them.

An observable is ``f(x) = chi_delta(x) * outer(z_1, ..., z_n)`` with couplings
``z_k = sum_i xi_i phi_k(x_i)``.  ``outer`` is an expression tree whose nodes
return value and both Wirtinger derivatives, so every gradient is exact.

Batched functions take positions (S, N, D) and intensities (N,) or (S, N).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import _kernels_np as kn
from .dynamics import (FlowOptions, NearCollapseError, Outcome, Trajectory, VortexState,
                       arrested_flow, flow, integrate)
from .geometry import Geometry


# ---------------------------------------------------------------- test functions

@dataclass(frozen=True)
class TestFunction:
    """Trigonometric polynomial on the torus or polynomial in coordinates elsewhere.

    ``fourier``: phi(x) = sum_k c_k exp(i k.x) with integer ``powers`` rows k.
    ``polynomial``: phi(x) = sum_k c_k prod_d x_d^{p_kd} with nonnegative ``powers``.
    """

    __test__ = False

    kind: str
    powers: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        if self.kind not in ("fourier", "polynomial"):
            raise ValueError(f"kind: unknown test-function kind {self.kind!r}")
        p = np.atleast_2d(np.asarray(self.powers, dtype=np.int64))
        c = np.atleast_1d(np.asarray(self.coefficients, dtype=np.complex128))
        if p.shape[0] != c.shape[0]:
            raise ValueError("coefficients: one coefficient per frequency/monomial required")
        if self.kind == "polynomial" and np.any(p < 0):
            raise ValueError("powers: monomial exponents must be nonnegative")
        object.__setattr__(self, "powers", p)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def fourier(cls, modes, amplitudes):
        return cls("fourier", modes, amplitudes)

    @classmethod
    def polynomial(cls, powers, coefficients):
        return cls("polynomial", powers, coefficients)

    @property
    def dim(self) -> int:
        return self.powers.shape[1]

    @property
    def is_real(self) -> bool:
        """True when phi is real-valued (Hermitian-symmetric Fourier coefficients)."""
        if self.kind == "polynomial":
            return bool(np.all(self.coefficients.imag == 0))
        table = {tuple(k): c for k, c in zip(self.powers.tolist(), self.coefficients)}
        return all(np.isclose(table.get(tuple(-v for v in k), 0.0), np.conj(c), atol=0, rtol=1e-14)
                   for k, c in table.items())

    def value(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "fourier":
            return np.exp(1j * X @ self.powers.T) @ self.coefficients
        mon = np.prod(X[..., None, :] ** self.powers, axis=-1)
        return mon @ self.coefficients

    def gradient(self, X) -> np.ndarray:
        """Complex gradient, shape X.shape."""
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "fourier":
            E = np.exp(1j * X @ self.powers.T) * self.coefficients
            return 1j * E @ self.powers.astype(np.float64)
        out = np.zeros(X.shape, dtype=np.complex128)
        for d in range(self.dim):
            p = self.powers.copy()
            fac = p[:, d].astype(np.float64)
            p[:, d] = np.maximum(p[:, d] - 1, 0)
            mon = np.prod(X[..., None, :] ** p, axis=-1)
            out[..., d] = mon @ (self.coefficients * fac)
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "powers": self.powers.tolist(),
                "re": self.coefficients.real.tolist(), "im": self.coefficients.imag.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TestFunction":
        c = np.asarray(d["re"], dtype=np.float64) + 1j * np.asarray(d.get("im", [0.0] * len(d["re"])))
        return cls(d["kind"], d["powers"], c)


# ---------------------------------------------------------------- outer functions

class Node:
    """Expression node; ``evaluate(z)`` returns (value, d/dz, d/dzbar) for z of shape (S, n)."""

    def evaluate(self, z):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __add__(self, other):
        return Add(self, _lift(other))

    __radd__ = __add__

    def __mul__(self, other):
        return Mul(self, _lift(other))

    __rmul__ = __mul__


def _lift(v):
    return v if isinstance(v, Node) else Const(complex(v))


@dataclass(frozen=True)
class Coord(Node):
    index: int

    def evaluate(self, z):
        dz = np.zeros_like(z)
        dz[:, self.index] = 1.0
        return z[:, self.index].copy(), dz, np.zeros_like(z)

    def to_dict(self):
        return {"op": "coord", "index": self.index}


@dataclass(frozen=True)
class Const(Node):
    value: complex

    def evaluate(self, z):
        return np.full(z.shape[0], self.value, dtype=np.complex128), np.zeros_like(z), np.zeros_like(z)

    def to_dict(self):
        return {"op": "const", "re": float(np.real(self.value)), "im": float(np.imag(self.value))}


@dataclass(frozen=True)
class Conj(Node):
    arg: Node

    def evaluate(self, z):
        v, a, b = self.arg.evaluate(z)
        return np.conj(v), np.conj(b), np.conj(a)

    def to_dict(self):
        return {"op": "conj", "arg": self.arg.to_dict()}


@dataclass(frozen=True)
class Add(Node):
    left: Node
    right: Node

    def evaluate(self, z):
        v1, a1, b1 = self.left.evaluate(z)
        v2, a2, b2 = self.right.evaluate(z)
        return v1 + v2, a1 + a2, b1 + b2

    def to_dict(self):
        return {"op": "add", "args": [self.left.to_dict(), self.right.to_dict()]}


@dataclass(frozen=True)
class Mul(Node):
    left: Node
    right: Node

    def evaluate(self, z):
        v1, a1, b1 = self.left.evaluate(z)
        v2, a2, b2 = self.right.evaluate(z)
        return v1 * v2, a1 * v2[:, None] + v1[:, None] * a2, b1 * v2[:, None] + v1[:, None] * b2

    def to_dict(self):
        return {"op": "mul", "args": [self.left.to_dict(), self.right.to_dict()]}


@dataclass(frozen=True)
class Exp(Node):
    arg: Node

    def evaluate(self, z):
        v, a, b = self.arg.evaluate(z)
        e = np.exp(v)
        return e, e[:, None] * a, e[:, None] * b

    def to_dict(self):
        return {"op": "exp", "arg": self.arg.to_dict()}


@dataclass(frozen=True)
class Bump(Node):
    """exp(-1 / (1 - |w|^2 / R^2)) for |w| < R, else 0; smooth with compact support."""

    arg: Node
    radius: float = 1.0

    def evaluate(self, z):
        w, a, b = self.arg.evaluate(z)
        s = (w * np.conj(w)).real / self.radius ** 2
        inside = s < 1.0
        val = np.zeros(w.shape, dtype=np.complex128)
        ds = np.zeros(w.shape)
        si = s[inside]
        val[inside] = np.exp(-1.0 / (1.0 - si))
        ds[inside] = -val[inside].real / (1.0 - si) ** 2
        # d|w|^2 = conj(w) dw + w d(conj w)
        du_dz = np.conj(w)[:, None] * a + w[:, None] * np.conj(b)
        du_dzb = np.conj(w)[:, None] * b + w[:, None] * np.conj(a)
        f = (ds / self.radius ** 2)[:, None]
        return val, f * du_dz, f * du_dzb

    def to_dict(self):
        return {"op": "bump", "radius": self.radius, "arg": self.arg.to_dict()}


def node_from_dict(d: dict) -> Node:
    op = d["op"]
    if op == "coord":
        return Coord(int(d["index"]))
    if op == "const":
        return Const(complex(d.get("re", 0.0), d.get("im", 0.0)))
    if op == "conj":
        return Conj(node_from_dict(d["arg"]))
    if op == "exp":
        return Exp(node_from_dict(d["arg"]))
    if op == "bump":
        return Bump(node_from_dict(d["arg"]), float(d.get("radius", 1.0)))
    if op in ("add", "mul"):
        args = [node_from_dict(a) for a in d["args"]]
        if len(args) < 2:
            raise ValueError(f"{op}: needs at least two arguments")
        out = args[0]
        for a in args[1:]:
            out = Add(out, a) if op == "add" else Mul(out, a)
        return out
    raise ValueError(f"op: unknown outer-function node {op!r}")


# ---------------------------------------------------------------- diagonal cutoff

def _psi(t):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)


def step_function(s, order=None):
    """Step eta with eta = 0 on [0, 1/2], eta = 1 on [1, inf); returns (eta, eta').

    ``order=None`` is the C-infinity quotient of exp(-1/t) bumps; an integer
    k gives the C^k polynomial smoothstep.
    """
    s = np.asarray(s, dtype=np.float64)
    if order is None:
        a = s - 0.5
        b = 1.0 - s
        A = _psi(a)
        B = _psi(b)
        with np.errstate(divide="ignore", invalid="ignore"):
            dA = np.where(a > 0, A / np.where(a > 0, a * a, 1.0), 0.0)
            dB = np.where(b > 0, B / np.where(b > 0, b * b, 1.0), 0.0)
        den = A + B
        eta = A / den
        deta = (dA * B + A * dB) / (den * den)
        return eta, deta
    k = int(order)
    u = np.clip(2.0 * (s - 0.5), 0.0, 1.0)
    poly = np.polynomial.Polynomial([0.0])
    for j in range(k + 1):
        poly = poly + comb(k + j, j) * comb(2 * k + 1, k - j) * (-1) ** j * \
            np.polynomial.Polynomial([0.0] * (k + 1 + j) + [1.0])
    eta = poly(u)
    deta = np.where((u > 0) & (u < 1), 2.0 * poly.deriv()(u), 0.0)
    return eta, deta


def diagonal_cutoff(geom: Geometry, P: np.ndarray, delta: float, order=None):
    """chi_delta = prod_{i<j} eta(d_ij / delta) and its gradient; P is (S, N, D)."""
    S, n, dim = P.shape
    if delta == 0.0 or n < 2:
        return np.ones(S), np.zeros((S, n, dim))
    iu, ju = np.triu_indices(n, 1)
    Z = kn.separation(geom.code, P[:, iu], P[:, ju])
    d = np.sqrt(np.sum(Z * Z, axis=-1))
    eta, deta = step_function(d / delta, order)
    chi = np.prod(eta, axis=1)
    grad = np.zeros((S, n, dim))
    for p in range(iu.size):
        others = np.prod(np.delete(eta, p, axis=1), axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = Z[:, p] / d[:, p, None]
        w = np.where(deta[:, p] != 0, others * deta[:, p] / delta, 0.0)[:, None]
        contrib = np.where(w != 0, w * unit, 0.0)
        grad[:, iu[p]] += contrib
        grad[:, ju[p]] -= contrib
    return chi, grad


# ---------------------------------------------------------------- observables

@dataclass(frozen=True)
class CylinderObservable:
    """f = chi_delta * outer(<phi_1, gamma>, ..., <phi_n, gamma>)."""

    outer: Node
    inner: tuple
    cutoff_delta: float = 0.0
    cutoff_order: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "inner", tuple(self.inner))
        if self.cutoff_delta < 0:
            raise ValueError("cutoff_delta: must be nonnegative")

    def to_dict(self) -> dict:
        return {"outer": self.outer.to_dict(), "inner": [p.to_dict() for p in self.inner],
                "cutoff_delta": self.cutoff_delta, "cutoff_order": self.cutoff_order}

    @classmethod
    def from_dict(cls, d: dict) -> "CylinderObservable":
        return cls(node_from_dict(d["outer"]), [TestFunction.from_dict(p) for p in d["inner"]],
                   float(d.get("cutoff_delta", 0.0)), d.get("cutoff_order"))

    @classmethod
    def from_json(cls, text: str) -> "CylinderObservable":
        return cls.from_dict(json.loads(text))


def _xi_batch(xi, S, n):
    return np.broadcast_to(np.asarray(xi, dtype=np.float64), (S, n))


def couplings(obs: CylinderObservable, P, xi):
    """z_k = sum_i xi_i phi_k(x_i), shape (S, n_inner)."""
    S, n, _ = P.shape
    XI = _xi_batch(xi, S, n)
    return np.stack([np.sum(XI * phi.value(P), axis=1) for phi in obs.inner], axis=1)


def evaluate_batch(obs: CylinderObservable, geom: Geometry, P, xi) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    chi, _ = diagonal_cutoff(geom, P, obs.cutoff_delta, obs.cutoff_order)
    val, _, _ = obs.outer.evaluate(couplings(obs, P, xi))
    return chi * val


def gradient_batch(obs: CylinderObservable, geom: Geometry, P, xi):
    """(f, grad f) with grad f of shape (S, N, D), complex."""
    P = np.asarray(P, dtype=np.float64)
    S, n, _ = P.shape
    XI = _xi_batch(xi, S, n)
    chi, dchi = diagonal_cutoff(geom, P, obs.cutoff_delta, obs.cutoff_order)
    z = couplings(obs, P, xi)
    val, dz, dzb = obs.outer.evaluate(z)
    grad = dchi * val[:, None, None]
    for k, phi in enumerate(obs.inner):
        gphi = XI[:, :, None] * phi.gradient(P)
        grad = grad + chi[:, None, None] * (dz[:, k, None, None] * gphi
                                            + dzb[:, k, None, None] * np.conj(gphi))
    return chi * val, grad


def velocity_batch(geom: Geometry, P, xi, epsilon: float = 0.0) -> np.ndarray:
    """Vector field for S states at once, (S, N, D)."""
    P = np.asarray(P, dtype=np.float64)
    S, n, dim = P.shape
    XI = _xi_batch(xi, S, n)
    out = np.zeros((S, n, dim))
    if n > 1:
        I, J = np.nonzero(~np.eye(n, dtype=bool))
        Kv = kn.kernel_xy(geom.code, P[:, I].reshape(-1, dim), P[:, J].reshape(-1, dim),
                          epsilon, geom.coef, geom.tp).reshape(S, I.size, dim)
        W = XI[:, J][:, :, None] * Kv
        for i in range(n):
            out[:, i] = W[:, I == i].sum(axis=1)
    if geom.kind == "disk":
        for i in range(n):
            out[:, i] += kn.disk_self_velocity(P[:, i], geom.self_coefficients(XI[:, i]))
    return out


def _min_pair_distance(geom, P):
    S, n, _ = P.shape
    if n < 2:
        return np.full(S, np.inf)
    iu, ju = np.triu_indices(n, 1)
    return kn.distance(geom.code, P[:, iu], P[:, ju]).min(axis=1)


def liouville_batch(obs: CylinderObservable, geom: Geometry, P, xi) -> np.ndarray:
    """Lf = -i sum_i grad_i f . B_i; zero on the cutoff's vanishing region."""
    P = np.asarray(P, dtype=np.float64)
    S = P.shape[0]
    out = np.zeros(S, dtype=np.complex128)
    active = np.ones(S, dtype=bool)
    if obs.cutoff_delta > 0:
        active = _min_pair_distance(geom, P) > 0.5 * obs.cutoff_delta
    if not np.any(active):
        return out
    XI = _xi_batch(xi, S, P.shape[1])[active]
    _, grad = gradient_batch(obs, geom, P[active], XI)
    B = velocity_batch(geom, P[active], XI)
    out[active] = -1j * np.sum(grad * B, axis=(1, 2))
    return out


# ---------------------------------------------------------------- single-state operations

def _single(state: VortexState):
    return state.positions[None], state.intensities


def evaluate(obs: CylinderObservable, state: VortexState) -> complex:
    P, xi = _single(state)
    return complex(evaluate_batch(obs, state.geometry, P, xi)[0])


eval = evaluate  # noqa: A001  operation name used by the CLI and docs


def liouville_apply(obs: CylinderObservable, state: VortexState) -> complex:
    P, xi = _single(state)
    return complex(liouville_batch(obs, state.geometry, P, xi)[0])


def koopman_apply(obs: CylinderObservable, state: VortexState, t: float,
                  opts: FlowOptions = FlowOptions()) -> complex:
    """U_t f = f o T_t; ``NearCollapseError`` propagates from the flow."""
    return evaluate(obs, flow(state, t, opts))


def arrested_koopman_apply(obs: CylinderObservable, state: VortexState, t: float, epsilon: float,
                           opts: FlowOptions = FlowOptions()) -> complex:
    """V^eps_t f = f o R^eps_t."""
    return evaluate(obs, arrested_flow(state, t, epsilon, opts).final)


def arrested_liouville_apply(obs: CylinderObservable, state: VortexState, t: float, epsilon: float,
                             opts: FlowOptions = FlowOptions()) -> complex:
    """L(V^eps_t f) at a regular point, via the variational flow.

    Off the arrested set the chain rule gives ``-i grad f(T x) . DT B(x)``;
    on the open arrested set ``V^eps_t f = f`` near x.
    """
    o = FlowOptions(opts.epsilon, opts.rel_tol, opts.abs_tol, opts.max_step, True,
                    None, opts.max_steps)
    res = arrested_flow(state, t, epsilon, o)
    if res.arrested:
        return liouville_apply(obs, state)
    from .dynamics import vector_field

    DT = res.trajectory.jacobians[-1]
    B = vector_field(state, epsilon).ravel()
    P, xi = _single(res.final)
    _, grad = gradient_batch(obs, state.geometry, P, xi)
    return complex(-1j * grad.ravel() @ (DT @ B))


# ---------------------------------------------------------------- symmetrised kernel

def _odd_kernel_only(geom: Geometry):
    if geom.kind == "disk":
        raise ValueError("symmetrised kernel: the disk kernel is not odd")


def symmetrized_kernel_batch(phi: TestFunction, geom: Geometry, X, Y) -> np.ndarray:
    """H_phi(x, y) = (grad phi(x) - grad phi(y)) . K(x, y) / 2, zero where x = y."""
    _odd_kernel_only(geom)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    X, Y = np.broadcast_arrays(X, Y)
    d = kn.distance(geom.code, X, Y)
    same = d < 1e-14
    out = np.zeros(X.shape[0], dtype=np.complex128)
    ok = ~same
    if np.any(ok):
        K = kn.kernel_xy(geom.code, X[ok], Y[ok], 0.0, geom.coef, geom.tp)
        out[ok] = 0.5 * np.sum((phi.gradient(X[ok]) - phi.gradient(Y[ok])) * K, axis=1)
    return out.real if phi.is_real else out


def symmetrized_kernel(phi: TestFunction, geom: Geometry, x, y):
    out = symmetrized_kernel_batch(phi, geom, x, y)
    return out[0] if np.ndim(x) == 1 and np.ndim(y) == 1 else out


def pair_energy_batch(phi: TestFunction, geom: Geometry, P, xi) -> np.ndarray:
    """<H_phi, gamma x gamma> = sum_{i != j} xi_i xi_j H_phi(x_i, x_j) for S states."""
    P = np.asarray(P, dtype=np.float64)
    S, n, dim = P.shape
    XI = _xi_batch(xi, S, n)
    out = np.zeros(S, dtype=np.complex128 if not phi.is_real else np.float64)
    for i, j in zip(*np.triu_indices(n, 1)):
        out = out + 2.0 * XI[:, i] * XI[:, j] * symmetrized_kernel_batch(phi, geom, P[:, i], P[:, j])
    return out


def weak_form_residual(traj: Trajectory, phi: TestFunction, tol: float = 1e-8) -> float:
    """|<phi, w_t> - <phi, w_0> - int_0^t <H_phi, w_s x w_s> ds| along a trajectory.

    The time integral runs over the dense output with 12-point Gauss-Legendre per
    accepted step, halving steps until the 8-point rule agrees to ``tol``.
    """
    geom = traj.geometry
    _odd_kernel_only(geom)
    xi = traj.intensities
    t = traj.t_end
    lhs = np.sum(xi * phi.value(traj.positions[-1])) - np.sum(xi * phi.value(traj.positions[0]))
    if t == traj.time_grid[0]:
        return float(abs(lhs))

    lo, hi = sorted((traj.time_grid[0], t))
    edges = np.unique(np.clip(traj.time_grid, lo, hi))

    def composite(edges, order):
        # Gauss-Legendre on every accepted step at once; the integrand is smooth within a step
        x, w = np.polynomial.legendre.leggauss(order)
        a, b = edges[:-1, None], edges[1:, None]
        nodes = (0.5 * (b - a) * x + 0.5 * (b + a)).ravel()
        vals = pair_energy_batch(phi, geom, traj.at(nodes), xi).reshape(-1, order)
        return np.sum(0.5 * (b - a) * w * vals)

    for _ in range(8):
        coarse, total = composite(edges, 8), composite(edges, 12)
        if abs(total - coarse) <= tol * max(1.0, abs(total)):
            break
        edges = np.sort(np.concatenate([edges, 0.5 * (edges[:-1] + edges[1:])]))
    if t < traj.time_grid[0]:
        total = -total
    return float(abs(lhs - total))


def config_generator_apply(F: CylinderObservable, state: VortexState) -> complex:
    """Configuration-space generator -i sum_k (d_k f h_k + dbar_k f conj(h_k)).

    ``h_k = <H_{phi_k}, gamma x gamma>``.  Defined for observables without a
    diagonal cutoff.
    """
    if F.cutoff_delta != 0.0:
        raise ValueError("config_generator_apply: requires cutoff_delta = 0")
    P, xi = _single(state)
    z = couplings(F, P, xi)
    _, dz, dzb = F.outer.evaluate(z)
    total = 0.0 + 0.0j
    for k, phi in enumerate(F.inner):
        h = complex(pair_energy_batch(phi, state.geometry, P, xi)[0])
        total += dz[0, k] * h + dzb[0, k] * np.conj(h)
    return complex(-1j * total)


def random_observable(geom: Geometry, rng: np.random.Generator, n_inner: int = 2,
                      delta: float = 0.0, order=None, kmax: int = 2,
                      radius: float = 3.0) -> CylinderObservable:
    """A random smooth compactly supported observable from the constructive class."""
    inner = []
    for _ in range(n_inner):
        if geom.kind == "torus":
            modes = rng.integers(-kmax, kmax + 1, size=(2, 2))
            modes[np.all(modes == 0, axis=1)] = [1, 0]
            amps = rng.normal(size=2) + 1j * rng.normal(size=2)
            inner.append(TestFunction.fourier(modes, 0.5 * amps))
        else:
            powers = rng.integers(0, 3, size=(2, geom.dim))
            inner.append(TestFunction.polynomial(powers, 0.5 * (rng.normal(size=2) + 1j * rng.normal(size=2))))
    c = rng.normal(size=3) + 1j * rng.normal(size=3)
    outer = Bump(Coord(0), radius) * (Const(c[0]) + Const(c[1]) * Coord(n_inner - 1)
                                      + Const(c[2]) * Conj(Coord(0)))
    return CylinderObservable(outer, inner, delta, order)
