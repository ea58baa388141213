"""Point-vortex flow: vector field, adaptive integration, arrested flow, invariants."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import _core
from . import _kernels_np as kn
from .geometry import GeometryError, Geometry


class DiagonalError(ValueError):
    """Two vortices coincide where the unregularised field is singular."""


class SurfaceDriftError(RuntimeError):
    """Sphere renormalisation residual exceeded tolerance."""


class NearCollapseError(RuntimeError):
    """Raised by consumers that need the unregularised flow up to a fixed time."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class Outcome(IntEnum):
    OK = _core.OK
    EVENT = _core.EVENT
    NEAR_COLLAPSE = _core.UNDERFLOW
    MAX_STEPS = _core.MAX_STEPS
    SURFACE_DRIFT = _core.SURFACE_DRIFT
    NONFINITE = _core.NONFINITE
    BOUNDARY = _core.BOUNDARY


DIAGONAL_TOL = 1e-14
ARREST_TIE = 1e-12


@dataclass
class VortexState:
    """N positions on a surface with real intensities."""

    positions: np.ndarray
    intensities: np.ndarray
    geometry: Geometry

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=np.float64, ndmin=2)
        self.intensities = np.array(self.intensities, dtype=np.float64, ndmin=1)
        n = self.intensities.shape[0]
        if n < 1:
            raise GeometryError("intensities: need at least one vortex")
        if self.positions.shape != (n, self.geometry.dim):
            raise GeometryError(
                f"positions: expected shape ({n}, {self.geometry.dim}), got {self.positions.shape}"
            )
        self.geometry.check_points(self.positions)

    @property
    def n(self) -> int:
        return self.intensities.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return np.ascontiguousarray(self.positions.ravel())

    def with_positions(self, positions: np.ndarray) -> "VortexState":
        return VortexState(self.geometry.canonical(positions), self.intensities, self.geometry)


@dataclass(frozen=True)
class FlowOptions:
    """Integration settings; ``epsilon = 0`` selects the unregularised field."""

    epsilon: float = 0.0
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = np.inf
    track_variational: bool = False
    min_distance_event: float | None = None
    max_steps: int = 2_000_000

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            v = getattr(self, name)
            if not 1e-14 <= v <= 1e-2:
                raise ValueError(f"{name}: must lie in [1e-14, 1e-2]")
        if self.epsilon < 0:
            raise ValueError("epsilon: must be nonnegative")
        if not self.max_step > 0:
            raise ValueError("max_step: must be positive")
        if self.min_distance_event is not None and not self.min_distance_event > 0:
            raise ValueError("min_distance_event: must be positive")


@dataclass
class Trajectory:
    """Dense-output solution record.

    ``positions`` are the raw integrated coordinates (torus positions are not
    reduced, so paths are continuous).  ``min_distance_history[k]`` is the
    running minimum pairwise distance over ``[0, time_grid[k]]``.
    """

    time_grid: np.ndarray
    positions: np.ndarray
    intensities: np.ndarray
    geometry: Geometry
    dense_coeffs: np.ndarray
    step_sizes: np.ndarray
    min_distance_history: np.ndarray
    epsilon: float
    outcome: Outcome
    event_time: float | None = None
    jacobians: np.ndarray | None = None
    surface_drift: float = 0.0
    n_accepted: int = 0
    n_rejected: int = 0
    jacobian_det: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.jacobians is not None and self.jacobian_det is None:
            self.jacobian_det = np.linalg.det(self.jacobians)

    @property
    def running_min_distance(self) -> float:
        return float(self.min_distance_history[-1])

    @property
    def t_end(self) -> float:
        return float(self.time_grid[-1])

    @property
    def states(self) -> list[VortexState]:
        return [self._state(p) for p in self.positions]

    @property
    def final_state(self) -> VortexState:
        return self._state(self.positions[-1])

    def _state(self, p):
        return VortexState(self.geometry.canonical(p), self.intensities, self.geometry)

    def _locate(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        tg = self.time_grid
        sign = 1.0 if tg[-1] >= tg[0] else -1.0
        lo, hi = min(tg[0], tg[-1]), max(tg[0], tg[-1])
        if np.any(t < lo - 1e-12) or np.any(t > hi + 1e-12):
            raise ValueError("time outside the integrated interval")
        k = np.searchsorted(sign * tg, sign * t, side="right") - 1
        k = np.clip(k, 0, len(tg) - 2)
        theta = (t - tg[k]) / self.step_sizes[k]
        return k, theta

    def _dense(self, t, upto):
        if len(self.time_grid) == 1:
            return np.broadcast_to(self._y0()[:upto], (np.size(t), upto)).copy()
        k, th = self._locate(t)
        C = self.dense_coeffs[k][:, :, :upto]
        return kn.dense_eval(C[:, 0], C[:, 1], C[:, 2], C[:, 3], C[:, 4], th)

    def _y0(self):
        y = self.positions[0].ravel()
        if self.jacobians is not None:
            y = np.concatenate([y, self.jacobians[0].ravel()])
        return y

    def at(self, t) -> np.ndarray:
        """Positions (..., N, D) at arbitrary times in the integrated range."""
        n, d = self.positions.shape[1:]
        scalar = np.ndim(t) == 0
        out = self._dense(t, n * d).reshape(-1, n, d)
        return out[0] if scalar else out

    def jacobian_at(self, t) -> np.ndarray:
        if self.jacobians is None:
            raise ValueError("trajectory was integrated without variational flow")
        n, d = self.positions.shape[1:]
        m = n * d
        scalar = np.ndim(t) == 0
        full = self._dense(t, m + m * m)
        out = full[:, m:].reshape(-1, m, m)
        return out[0] if scalar else out


def _check_off_diagonal(state: VortexState, epsilon: float):
    if epsilon == 0.0 and state.n > 1:
        d = kn.min_distance(state.geometry.code, state.flat, state.n, state.geometry.dim)
        if d < DIAGONAL_TOL:
            raise DiagonalError("two vortices coincide (distance < 1e-14)")


def _args(state: VortexState):
    g = state.geometry
    xi = np.ascontiguousarray(state.intensities)
    return g.code, xi, g.self_coefficients(xi), g.coef, g.tp


def vector_field(state: VortexState, epsilon: float = 0.0) -> np.ndarray:
    """B_i = sum_{j != i} xi_j K_eps(x_i, x_j), plus the disk self-advection."""
    _check_off_diagonal(state, epsilon)
    code, xi, sc, coef, tp = _args(state)
    v = _core.velocity(code, state.flat, xi, sc, float(epsilon), coef, tp, state.n,
                       state.geometry.dim)
    return np.asarray(v).reshape(state.n, state.geometry.dim)


def velocity_jacobian(state: VortexState, epsilon: float = 0.0) -> np.ndarray:
    """DB as a (N*D, N*D) matrix from analytic kernel derivatives."""
    _check_off_diagonal(state, epsilon)
    code, xi, sc, coef, tp = _args(state)
    return np.asarray(_core.velocity_jacobian(code, state.flat, xi, sc, float(epsilon), coef, tp,
                                              state.n, state.geometry.dim))


def integrate(state: VortexState, t_final: float, opts: FlowOptions = FlowOptions()) -> Trajectory:
    """Adaptive Dormand-Prince integration with dense output.

    Raises ``DiagonalError`` for a singular unregularised start,
    ``SurfaceDriftError`` if sphere renormalisation drifts, and
    ``geometry.BoundaryError`` when a disk vortex reaches the boundary.  A
    collapsing step size at ``epsilon = 0`` is reported as
    ``Outcome.NEAR_COLLAPSE`` with ``event_time`` holding the collapse time.
    """
    from .geometry import BoundaryError

    _check_off_diagonal(state, opts.epsilon)
    code, xi, sc, coef, tp = _args(state)
    n, dim = state.n, state.geometry.dim
    m = n * dim
    y0 = state.flat
    if opts.track_variational:
        y0 = np.concatenate([y0, np.eye(m).ravel()])
    thr = float(opts.min_distance_event) if opts.min_distance_event is not None else 0.0
    res = _core.integrate_core(y0, 0.0, float(t_final), opts.rel_tol, opts.abs_tol,
                               float(opts.max_step), code, xi, sc, float(opts.epsilon), coef, tp,
                               n, dim, opts.track_variational, thr, True, int(opts.max_steps))
    ts, ys, conts, hs, mins, status, t_event, _, drift, n_acc, n_rej = res
    outcome = Outcome(int(status))
    if outcome == Outcome.SURFACE_DRIFT:
        raise SurfaceDriftError(f"sphere renormalisation residual {drift:.3e} exceeds 1e-9")
    if outcome == Outcome.BOUNDARY:
        raise BoundaryError(f"disk vortex reached the boundary at t = {t_event:.6g}")
    if outcome == Outcome.NONFINITE and opts.epsilon == 0.0:
        outcome = Outcome.NEAR_COLLAPSE
    jac = None
    if opts.track_variational:
        jac = np.asarray(ys[:, m:]).reshape(-1, m, m)
    return Trajectory(
        time_grid=np.asarray(ts),
        positions=np.asarray(ys[:, :m]).reshape(-1, n, dim),
        intensities=xi.copy(),
        geometry=state.geometry,
        dense_coeffs=np.asarray(conts),
        step_sizes=np.asarray(hs),
        min_distance_history=np.asarray(mins),
        epsilon=float(opts.epsilon),
        outcome=outcome,
        event_time=None if np.isnan(t_event) else float(t_event),
        jacobians=jac,
        surface_drift=float(drift),
        n_accepted=int(n_acc),
        n_rejected=int(n_rej),
    )


def flow(state: VortexState, t: float, opts: FlowOptions = FlowOptions()) -> VortexState:
    """T_t (or T^eps_t) applied to one state; raises on near-collapse."""
    traj = integrate(state, t, opts)
    if traj.outcome == Outcome.NEAR_COLLAPSE:
        raise NearCollapseError("step size collapsed before the requested time", traj.event_time)
    if traj.outcome == Outcome.MAX_STEPS:
        raise RuntimeError("step budget exhausted")
    return traj.final_state


@dataclass
class BatchResult:
    """Endpoints of many independent integrations."""

    positions: np.ndarray
    min_distance: np.ndarray
    status: np.ndarray
    event_time: np.ndarray


def flow_batch(geom: Geometry, positions: np.ndarray, intensities: np.ndarray, t: float,
               opts: FlowOptions = FlowOptions()) -> BatchResult:
    """Integrate S initial states (S, N, D) in parallel.

    ``intensities`` is (N,) or (S, N).  No trajectories are stored; the
    running minimum distance and outcome code are returned per sample.
    """
    P = np.ascontiguousarray(positions, dtype=np.float64)
    S, n, dim = P.shape
    XI = np.ascontiguousarray(np.broadcast_to(np.asarray(intensities, dtype=np.float64), (S, n)))
    SC = np.ascontiguousarray(np.stack([geom.self_coefficients(x) for x in XI]))
    thr = float(opts.min_distance_event) if opts.min_distance_event is not None else 0.0
    out, mins, status, tev = _core.integrate_batch(
        P.reshape(S, n * dim), XI, SC, float(t), opts.rel_tol, opts.abs_tol, float(opts.max_step),
        geom.code, float(opts.epsilon), geom.coef, geom.tp, n, dim, thr, int(opts.max_steps))
    return BatchResult(np.asarray(out).reshape(S, n, dim), np.asarray(mins),
                       np.asarray(status), np.asarray(tev))


def _pairs(n):
    return np.triu_indices(n, 1)


def hamiltonian(state: VortexState) -> float:
    """H = sum_{i<j} xi_i xi_j G(x_i, x_j) (+ disk self-energy)."""
    _check_off_diagonal(state, 0.0)
    g = state.geometry
    P, xi = state.positions, state.intensities
    H = 0.0
    if state.n > 1:
        i, j = _pairs(state.n)
        H = float(np.sum(xi[i] * xi[j] * kn.green_xy(g.code, P[i], P[j], 0.0, g.coef, g.tp)))
    if g.kind == "disk":
        H += float(np.sum(g.self_energy_weights(xi) * kn.disk_g(P, P)))
    return H


def hamiltonian_batch(geom: Geometry, positions: np.ndarray, intensities: np.ndarray) -> np.ndarray:
    """Hamiltonian of S states (S, N, D) at once."""
    P = np.asarray(positions, dtype=np.float64)
    S, n, dim = P.shape
    XI = np.broadcast_to(np.asarray(intensities, dtype=np.float64), (S, n))
    H = np.zeros(S)
    for i, j in zip(*_pairs(n)):
        H += XI[:, i] * XI[:, j] * kn.green_xy(geom.code, P[:, i], P[:, j], 0.0, geom.coef, geom.tp)
    if geom.kind == "disk":
        for i in range(n):
            H += geom.self_energy_weights(XI[:, i]) * kn.disk_g(P[:, i], P[:, i])
    return H


@dataclass(frozen=True)
class Invariants:
    M: np.ndarray
    I: float


def invariants(state: VortexState) -> Invariants:
    """Centre of vorticity and moment of inertia (plane and sphere only)."""
    if state.geometry.kind not in ("plane", "sphere"):
        raise GeometryError(f"invariants: not conserved on the {state.geometry.kind}")
    xi = state.intensities
    P = state.positions
    return Invariants(M=xi @ P, I=float(xi @ np.sum(P * P, axis=1)))


def lyapunov(state: VortexState, epsilon: float) -> float:
    """Sum of G_eps(x_i, x_j) over ordered pairs i != j."""
    if state.n < 2:
        return 0.0
    g = state.geometry
    i, j = _pairs(state.n)
    P = state.positions
    return 2.0 * float(np.sum(kn.green_xy(g.code, P[i], P[j], epsilon, g.coef, g.tp)))


def lyapunov_rate(state: VortexState, epsilon: float) -> float:
    """Time derivative of ``lyapunov`` along the eps-regularised flow.

    For kernels depending only on the separation this is the sum over
    distinct triples ``2 xi_k grad G_eps(x_i - x_j) . K_eps(x_i - x_k)``; the
    pair terms cancel exactly.  On the disk the Green function is not
    translation invariant and the rate is ``2 sum_{i != j} grad_1 G_eps(x_i, x_j) . B_i``
    with the full regularised velocity, self-advection included.
    """
    n = state.n
    if n < 2:
        return 0.0
    g = state.geometry
    P = state.positions
    xi = state.intensities
    if g.kind == "disk":
        B = vector_field(state, epsilon)
        I, J = np.nonzero(~np.eye(n, dtype=bool))
        grad = kn.grad1_xy(g.code, P[I], P[J], epsilon, g.coef, g.tp)
        return 2.0 * float(np.sum(grad * B[I]))
    I, J, K = np.nonzero(
        (np.arange(n)[:, None, None] != np.arange(n)[None, :, None])
        & (np.arange(n)[:, None, None] != np.arange(n)[None, None, :])
        & (np.arange(n)[None, :, None] != np.arange(n)[None, None, :])
    )
    if I.size == 0:
        return 0.0
    grad = kn.grad1_xy(g.code, P[I], P[J], epsilon, g.coef, g.tp)
    ker = kn.kernel_xy(g.code, P[I], P[K], epsilon, g.coef, g.tp)
    return 2.0 * float(np.sum(xi[K] * np.sum(grad * ker, axis=1)))


def variational_flow(state: VortexState, t_final: float, opts: FlowOptions = FlowOptions()) -> np.ndarray:
    """DT_t from the linearised equation dY/dt = DB(x(t)) Y, Y(0) = I."""
    o = FlowOptions(opts.epsilon, opts.rel_tol, opts.abs_tol, opts.max_step, True,
                    opts.min_distance_event, opts.max_steps)
    traj = integrate(state, t_final, o)
    if traj.outcome == Outcome.NEAR_COLLAPSE:
        raise NearCollapseError("step size collapsed", traj.event_time)
    return traj.jacobians[-1]


@dataclass
class ArrestedResult:
    final: VortexState
    arrested: bool
    min_distance: float
    trajectory: Trajectory | None = None


def arrested_flow(state: VortexState, t_final: float, epsilon: float,
                  opts: FlowOptions = FlowOptions()) -> ArrestedResult:
    """R^eps_t: the eps-flow endpoint if pairs stay farther than eps apart, else the input.

    Distances within 1e-12 of eps count as arrested.
    """
    if not epsilon > 0:
        raise ValueError("epsilon: must be positive")
    o = FlowOptions(epsilon, opts.rel_tol, opts.abs_tol, opts.max_step, opts.track_variational,
                    epsilon + ARREST_TIE, opts.max_steps)
    traj = integrate(state, t_final, o)
    if traj.outcome == Outcome.EVENT:
        return ArrestedResult(state, True, traj.running_min_distance, traj)
    if traj.outcome != Outcome.OK:
        raise RuntimeError(f"integration ended with {traj.outcome.name}")
    return ArrestedResult(traj.final_state, False, traj.running_min_distance, traj)


def arrested_flow_batch(geom: Geometry, positions: np.ndarray, intensities: np.ndarray, t: float,
                        epsilon: float, opts: FlowOptions = FlowOptions()):
    """Batched R^eps_t; returns (final positions, arrested mask, running minima)."""
    o = FlowOptions(epsilon, opts.rel_tol, opts.abs_tol, opts.max_step, False,
                    epsilon + ARREST_TIE, opts.max_steps)
    res = flow_batch(geom, positions, intensities, t, o)
    arrested = res.status == Outcome.EVENT
    bad = ~arrested & (res.status != Outcome.OK)
    if np.any(bad):
        raise RuntimeError(f"{int(bad.sum())} samples ended abnormally")
    final = np.where(arrested[:, None, None], positions, geom.canonical(res.positions))
    return final, arrested, res.min_distance
