"""Configuration measures, samplers and the ensemble experiments."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels_np as kn
from ._backend import USE_NUMBA
from ._tables import ewald_gradient
from .dynamics import (FlowOptions, Outcome, VortexState, arrested_flow_batch, flow_batch,
                       hamiltonian_batch)
from .geometry import Geometry
from .observables import (CylinderObservable, TestFunction, evaluate_batch, liouville_batch,
                          pair_energy_batch)
from .rng import check_seed, derive, stream
from .stats import (Estimate, TestReport, correlation_bound, ks_two_sample, ks_uniform,
                    MIN_SAMPLES)

if USE_NUMBA:
    from ._kernels_nb import metropolis_chunk
else:
    from ._kernels_np import metropolis_chunk

KINDS = ("uniform", "gibbs", "gaussian_plane", "poisson")
TARGET_ACCEPTANCE = 0.3
CHUNK_SWEEPS = 500
BLOCK = 256


class GibbsDiagnosticWarning(RuntimeWarning):
    """Acceptance outside (0.05, 0.95) or beta outside the heuristic integrability window."""


# ---------------------------------------------------------------- specifications

@dataclass(frozen=True)
class IntensityLaw:
    """Law nu of a single vortex intensity.

    ``two_point``: value a with probability p, else b.  ``uniform``: U(a, b).
    ``gaussian``: mean a, standard deviation b.
    """

    family: str
    a: float
    b: float
    p: float = 0.5

    def __post_init__(self):
        if self.family not in ("two_point", "uniform", "gaussian"):
            raise ValueError(f"nu.family: unknown intensity law {self.family!r}")
        if self.family == "two_point" and not 0.0 <= self.p <= 1.0:
            raise ValueError("nu.p: must lie in [0, 1]")
        if self.family == "uniform" and not self.b > self.a:
            raise ValueError("nu: uniform law needs b > a")
        if self.family == "gaussian" and not self.b >= 0:
            raise ValueError("nu: gaussian law needs b >= 0")

    @property
    def second_moment(self) -> float:
        a, b, p = self.a, self.b, self.p
        if self.family == "two_point":
            return p * a * a + (1.0 - p) * b * b
        if self.family == "uniform":
            return (a * a + a * b + b * b) / 3.0
        return a * a + b * b

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.family == "two_point":
            return np.where(rng.random(n) < self.p, self.a, self.b)
        if self.family == "uniform":
            return rng.uniform(self.a, self.b, n)
        return rng.normal(self.a, self.b, n)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MeasureSpec:
    """A configuration measure.

    ``uniform`` and ``gibbs`` place ``n_vortices`` vortices with the fixed
    ``intensities``; ``gaussian_plane`` is the plane density proportional to
    exp(-alpha I - eta . M); ``poisson`` draws N ~ Poisson(lam) and i.i.d.
    (uniform position, nu intensity) pairs.
    """

    kind: str
    geometry: Geometry
    n_vortices: int = 1
    intensities: tuple = ()
    beta: float = 0.0
    alpha: float = 1.0
    eta: tuple = (0.0, 0.0)
    lam: float = 1.0
    nu: IntensityLaw | None = None
    burn_in_sweeps: int = 10_000
    thin_sweeps: int = 10

    def __post_init__(self):
        object.__setattr__(self, "intensities", tuple(float(v) for v in self.intensities))
        object.__setattr__(self, "eta", tuple(float(v) for v in self.eta))
        if self.kind not in KINDS:
            raise ValueError(f"kind: unknown measure {self.kind!r}")
        if self.kind == "poisson":
            if self.nu is None:
                raise ValueError("nu: Poisson configurations need an intensity law")
            if not self.lam > 0:
                raise ValueError("lam: must be positive")
            return
        if self.n_vortices < 1:
            raise ValueError("n_vortices: must be positive")
        if len(self.intensities) != self.n_vortices:
            raise ValueError(f"intensities: expected {self.n_vortices} values, "
                             f"got {len(self.intensities)}")
        if self.kind == "uniform" and self.geometry.kind == "plane":
            raise ValueError("kind: the plane has no uniform probability measure")
        if self.kind == "gibbs" and self.geometry.kind == "plane":
            raise ValueError("kind: Gibbs measures need a bounded surface")
        if self.kind == "gaussian_plane":
            if self.geometry.kind != "plane":
                raise ValueError("kind: gaussian_plane requires the plane geometry")
            if any(v <= 0 for v in self.intensities):
                raise ValueError("intensities: gaussian_plane requires all vortices positive")
            if not self.alpha > 0:
                raise ValueError("alpha: must be positive")
            if len(self.eta) != 2:
                raise ValueError("eta: must be a 2-vector")

    @property
    def xi(self) -> np.ndarray:
        return np.asarray(self.intensities, dtype=np.float64)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("geometry", "nu")}
        d["intensities"] = list(self.intensities)
        d["eta"] = list(self.eta)
        d["geometry"] = self.geometry.kind
        d["nu"] = self.nu.to_dict() if self.nu is not None else None
        return d


@dataclass
class Ensemble:
    """S fixed-N states: positions (S, N, D) and intensities (S, N)."""

    positions: np.ndarray
    intensities: np.ndarray
    geometry: Geometry
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return self.positions.shape[0]

    def state(self, i: int) -> VortexState:
        return VortexState(self.positions[i], self.intensities[i], self.geometry)


# ---------------------------------------------------------------- samplers

def _uniform_batch(spec: MeasureSpec, n: int, seed: int, start: int) -> Ensemble:
    g = spec.geometry
    P = np.stack([g.uniform(stream(seed, start + i), spec.n_vortices) for i in range(n)])
    return Ensemble(P, np.broadcast_to(spec.xi, (n, spec.n_vortices)).copy(), g)


def _gaussian_batch(spec: MeasureSpec, n: int, seed: int, start: int) -> Ensemble:
    xi = spec.xi
    std = 1.0 / np.sqrt(2.0 * spec.alpha * xi)
    mean = -np.asarray(spec.eta) / (2.0 * spec.alpha)
    P = np.stack([mean + std[:, None] * stream(seed, start + i).standard_normal((xi.size, 2))
                  for i in range(n)])
    return Ensemble(P, np.broadcast_to(xi, (n, xi.size)).copy(), spec.geometry)


def integrability_margin(beta: float, xi: np.ndarray) -> float:
    """|beta| max|xi_i xi_j| relative to the heuristic window 4 pi / (N - 1)."""
    n = xi.size
    if n < 2:
        return 0.0
    pair = np.abs(np.outer(xi, xi))[np.triu_indices(n, 1)].max()
    return abs(beta) * pair / (4.0 * np.pi / (n - 1))


def _max_step(geom: Geometry) -> float:
    return {"torus": np.pi, "sphere": 2.0, "disk": 1.0}[geom.kind]


def _gibbs_batch(spec: MeasureSpec, n: int, seed: int, start: int,
                 samples_per_chain: int = 1) -> Ensemble:
    """Independent Metropolis chains, one per block of ``samples_per_chain`` states."""
    g = spec.geometry
    N, dim = spec.n_vortices, g.dim
    xi = spec.xi
    if integrability_margin(spec.beta, xi) >= 1.0:
        warnings.warn("beta outside the heuristic integrability window |beta| max|xi xi| < "
                      "4 pi / (N - 1)", GibbsDiagnosticWarning, stacklevel=3)
    self_w = g.self_energy_weights(xi)
    n_chains = -(-n // samples_per_chain)
    out = np.empty((n_chains * samples_per_chain, N, dim))
    rates = np.empty(n_chains)
    steps_out = np.empty(n_chains)
    for b0 in range(0, n_chains, BLOCK):
        ids = range(b0, min(b0 + BLOCK, n_chains))
        gens = [stream(seed, start + c) for c in ids]
        S = len(gens)
        P = np.ascontiguousarray(np.stack([g.uniform(r, N).ravel() for r in gens]))
        step = np.full(S, 0.5 * _max_step(g))

        def run(sweeps):
            acc = np.zeros(S, dtype=np.int64)
            props = np.stack([r.standard_normal((sweeps, N, dim)) for r in gens])
            unif = np.stack([r.random((sweeps, N)) for r in gens])
            metropolis_chunk(g.code, P, step, acc, xi, self_w, float(spec.beta), g.coef, g.tp,
                             N, dim, props, unif)
            return acc / (sweeps * N)

        done = 0
        while done < spec.burn_in_sweeps:
            sweeps = min(CHUNK_SWEEPS, spec.burn_in_sweeps - done)
            rate = run(sweeps)
            step[:] = np.clip(step * np.exp(2.0 * (rate - TARGET_ACCEPTANCE)), 1e-4, _max_step(g))
            done += sweeps
        acc_total = np.zeros(S)
        for k in range(samples_per_chain):
            acc_total += run(spec.thin_sweeps)
            rows = [c * samples_per_chain + k for c in ids]
            out[rows] = P.reshape(S, N, dim)
        rates[b0:b0 + S] = acc_total / samples_per_chain
        steps_out[b0:b0 + S] = step
    mean_rate = float(rates.mean())
    # a flat target accepts everything once the step reaches its ceiling; nothing to tune then
    saturated = bool(np.all(steps_out >= _max_step(g)))
    if mean_rate <= 0.05 or (mean_rate >= 0.95 and not saturated):
        warnings.warn(f"Metropolis acceptance {mean_rate:.3f} outside (0.05, 0.95)",
                      GibbsDiagnosticWarning, stacklevel=3)
    diag = {"acceptance": mean_rate, "step_mean": float(steps_out.mean()),
            "burn_in_sweeps": spec.burn_in_sweeps, "thin_sweeps": spec.thin_sweeps,
            "samples_per_chain": samples_per_chain, "step_saturated": saturated}
    return Ensemble(out[:n], np.broadcast_to(xi, (n, N)).copy(), g, diag)


def sample_batch(spec: MeasureSpec, n: int, seed: int, start: int = 0,
                 samples_per_chain: int = 1) -> Ensemble:
    """n states from a fixed-N measure; sample i uses stream (seed, start + i)."""
    seed = check_seed(seed)
    if spec.kind == "uniform":
        return _uniform_batch(spec, n, seed, start)
    if spec.kind == "gaussian_plane":
        return _gaussian_batch(spec, n, seed, start)
    if spec.kind == "gibbs":
        return _gibbs_batch(spec, n, seed, start, samples_per_chain)
    raise ValueError("sample_batch: Poisson configurations have variable N; use sample_poisson")


def sample_poisson(spec: MeasureSpec, n: int, seed: int, start: int = 0) -> list[VortexState]:
    """n Poisson configurations; an empty configuration is represented by None."""
    seed = check_seed(seed)
    out = []
    for i in range(n):
        r = stream(seed, start + i)
        N = int(r.poisson(spec.lam))
        if N == 0:
            out.append(None)
            continue
        P = spec.geometry.uniform(r, N)
        out.append(VortexState(P, spec.nu.sample(r, N), spec.geometry))
    return out


def sample(spec: MeasureSpec, seed: int, index: int = 0) -> VortexState | None:
    """One state; equal to element ``index`` of the corresponding batch."""
    if spec.kind == "poisson":
        return sample_poisson(spec, 1, seed, index)[0]
    return sample_batch(spec, 1, seed, index).state(0)


# ---------------------------------------------------------------- collision tail

@dataclass
class CollisionStats:
    c_grid: np.ndarray
    counts: np.ndarray
    n_samples: int
    t_horizon: float
    epsilon: float
    fitted_A: float
    fit_residual: float
    near_collapse: int = 0
    abnormal: int = 0

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.n_samples

    @property
    def products(self) -> np.ndarray:
        """(-log c) * P(d_t < c) per grid point."""
        return -np.log(self.c_grid) * self.frequencies

    @property
    def product_ratio(self) -> float:
        p = self.products
        return float(p.max() / p.min()) if p.min() > 0 else np.inf

    @property
    def monotone(self) -> bool:
        order = np.argsort(self.c_grid)
        return bool(np.all(np.diff(self.counts[order]) >= 0))

    def to_dict(self) -> dict:
        return {"c_grid": self.c_grid.tolist(), "counts": self.counts.tolist(),
                "frequencies": self.frequencies.tolist(), "products": self.products.tolist(),
                "product_ratio": self.product_ratio, "monotone": self.monotone,
                "n_samples": self.n_samples, "t_horizon": self.t_horizon,
                "epsilon": self.epsilon, "fitted_A": self.fitted_A,
                "fit_residual": self.fit_residual, "near_collapse": self.near_collapse,
                "abnormal": self.abnormal}


def fit_inverse_log(x_grid, values) -> tuple[float, float]:
    """Least-squares A in values ~ A / (-log x); returns (A, rms residual)."""
    u = 1.0 / -np.log(np.asarray(x_grid, dtype=np.float64))
    v = np.asarray(values, dtype=np.float64)
    A = float(u @ v / (u @ u))
    return A, float(np.sqrt(np.mean((v - A * u) ** 2)))


def collision_tail_experiment(spec: MeasureSpec, t: float, epsilon: float, c_grid, n_samples: int,
                              seed: int, opts: FlowOptions | None = None) -> CollisionStats:
    """Empirical P(d^eps_t < c) over a grid of cutoffs.

    Each trajectory stops as soon as its minimum distance drops below
    min(c_grid), which is all the counts need.  At eps = 0 a collapsing
    step size counts as a collision below every c.
    """
    c_grid = np.asarray(c_grid, dtype=np.float64)
    if np.any(c_grid <= epsilon):
        raise ValueError("c_grid: cutoffs must exceed epsilon")
    base = opts or FlowOptions(rel_tol=1e-9, abs_tol=1e-11)
    o = FlowOptions(epsilon, base.rel_tol, base.abs_tol, base.max_step, False,
                    float(c_grid.min()), base.max_steps)
    ens = sample_batch(spec, n_samples, seed)
    mins = np.empty(n_samples)
    near = 0
    abnormal = 0
    for s in range(0, n_samples, 2048):
        res = flow_batch(spec.geometry, ens.positions[s:s + 2048], ens.intensities[s:s + 2048], t, o)
        m = res.min_distance.copy()
        collapsed = res.status == Outcome.NEAR_COLLAPSE
        m[collapsed] = 0.0
        near += int(collapsed.sum())
        abnormal += int(np.sum((res.status != Outcome.OK) & (res.status != Outcome.EVENT) & ~collapsed))
        mins[s:s + 2048] = m
    counts = np.array([int(np.sum(mins < c)) for c in c_grid])
    A, resid = fit_inverse_log(c_grid, counts / n_samples)
    return CollisionStats(c_grid, counts, n_samples, float(t), float(epsilon), A, resid, near,
                          abnormal)


# ---------------------------------------------------------------- measure preservation

def uniform_features(geom: Geometry, P: np.ndarray):
    """Scalar features that are U(0, 1) under the normalised surface measure.

    Returns (features (S, F), owning vortex per feature).
    """
    S, N, _ = P.shape
    cols, owner = [], []
    for i in range(N):
        x = P[:, i]
        if geom.kind == "torus":
            u = np.mod(x, 2.0 * np.pi) / (2.0 * np.pi)
            cols += [u[:, 0], u[:, 1]]
            owner += [i, i]
        elif geom.kind == "sphere":
            cols += [(x[:, c] + 1.0) / 2.0 for c in range(3)]
            owner += [i, i, i]
        elif geom.kind == "disk":
            cols += [np.sum(x * x, axis=1), np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * np.pi) / (2 * np.pi)]
            owner += [i, i]
        else:
            raise ValueError("uniform features: the plane has no uniform measure")
    return np.stack(cols, axis=1), np.asarray(owner)


def uniformity_report(name: str, geom: Geometry, P: np.ndarray, alpha: float = 0.01) -> TestReport:
    """Marginal KS tests plus pairwise-correlation bounds, Bonferroni-corrected."""
    U, owner = uniform_features(geom, P)
    F = U.shape[1]
    ks = [ks_uniform(U[:, f], alpha, F) for f in range(F)]
    pairs = [(a, b) for a in range(F) for b in range(a + 1, F)
             if owner[a] != owner[b] or geom.kind != "sphere"]
    R = np.corrcoef(U.T) if F > 1 else np.ones((1, 1))
    bound = correlation_bound(U.shape[0], alpha, max(len(pairs), 1))
    corr = [abs(R[a, b]) for a, b in pairs]
    passed = all(k.passed for k in ks) and all(c < bound for c in corr)
    stats_ = {"ks_statistics": [k.statistic for k in ks], "ks_critical": ks[0].critical,
              "max_abs_correlation": max(corr) if corr else 0.0, "correlation_bound": bound,
              "n": int(U.shape[0])}
    return TestReport(name, passed, stats_)


def measure_preservation_test(spec: MeasureSpec, t: float, epsilon: float, n_samples: int,
                              seed: int, use_arrested: bool = False,
                              opts: FlowOptions | None = None) -> TestReport:
    """Push uniform samples through T^eps_t (or R^eps_t) and test uniformity."""
    if spec.kind != "uniform":
        raise ValueError("measure_preservation_test: requires a uniform spec")
    base = opts or FlowOptions(rel_tol=1e-9, abs_tol=1e-11)
    ens = sample_batch(spec, n_samples, seed)
    if t == 0:
        P = ens.positions
        extra = {}
    elif use_arrested:
        P, arrested, _ = arrested_flow_batch(spec.geometry, ens.positions, ens.intensities, t,
                                             epsilon, base)
        extra = {"arrested_fraction": float(arrested.mean())}
    else:
        o = FlowOptions(epsilon, base.rel_tol, base.abs_tol, base.max_step, False, None,
                        base.max_steps)
        res = flow_batch(spec.geometry, ens.positions, ens.intensities, t, o)
        if np.any(res.status != Outcome.OK):
            raise RuntimeError("flow ended abnormally for some samples")
        P = spec.geometry.canonical(res.positions)
        extra = {}
    name = "arrested" if use_arrested else "regularized"
    report = uniformity_report(f"measure_preservation[{name}]", spec.geometry, P)
    report.statistics.update(extra, t=float(t), epsilon=float(epsilon))
    return report


def gibbs_invariance_test(spec: MeasureSpec, t: float, epsilon: float, n_samples: int, seed: int,
                          samples_per_chain: int = 10,
                          opts: FlowOptions | None = None) -> TestReport:
    """Push a Gibbs ensemble through T^eps_t and compare with an independent Gibbs ensemble.

    Compared laws (two-sample KS, Bonferroni over the set): H, the distance
    of the first pair, and every position coordinate.  The pre/post H
    comparison on the same samples is reported as well.
    """
    if spec.kind != "gibbs":
        raise ValueError("gibbs_invariance_test: requires a Gibbs spec")
    g = spec.geometry
    base = opts or FlowOptions(rel_tol=1e-9, abs_tol=1e-11)
    o = FlowOptions(epsilon, base.rel_tol, base.abs_tol, base.max_step, False, None,
                    base.max_steps)
    pre = sample_batch(spec, n_samples, derive(seed, "gibbs-pushed"), 0, samples_per_chain)
    fresh = sample_batch(spec, n_samples, derive(seed, "gibbs-fresh"), 0, samples_per_chain)
    res = flow_batch(g, pre.positions, pre.intensities, t, o)
    if np.any(res.status != Outcome.OK):
        raise RuntimeError("flow ended abnormally for some samples")
    post = g.canonical(res.positions)

    def features(P):
        feats = {"H": hamiltonian_batch(g, P, spec.xi)}
        if spec.n_vortices > 1:
            feats["d12"] = kn.distance(g.code, P[:, 0], P[:, 1])
        U, _ = uniform_features(g, P)
        for f in range(U.shape[1]):
            feats[f"u{f}"] = U[:, f]
        return feats

    fa, fb = features(post), features(fresh.positions)
    m = len(fa)
    tests = {k: ks_two_sample(fa[k], fb[k], n_tests=m) for k in fa}
    same = ks_two_sample(features(pre.positions)["H"], fa["H"])
    passed = all(r.passed for r in tests.values())
    stats_ = {k: {"statistic": r.statistic, "critical": r.critical} for k, r in tests.items()}
    stats_["H_pre_vs_post"] = {"statistic": same.statistic, "critical": same.critical}
    stats_["acceptance"] = pre.diagnostics.get("acceptance")
    return TestReport("gibbs_invariance", passed, stats_)


# ---------------------------------------------------------------- Monte Carlo quadrature

def inner_product_mc(obs1: CylinderObservable, obs2: CylinderObservable, spec: MeasureSpec,
                     n_samples: int, seed: int) -> Estimate:
    """<obs1, obs2> = E[conj(obs1) obs2] under a uniform spec."""
    if spec.kind != "uniform":
        raise ValueError("inner_product_mc: requires a uniform spec")
    ens = sample_batch(spec, n_samples, seed)
    f = evaluate_batch(obs1, spec.geometry, ens.positions, ens.intensities)
    g = evaluate_batch(obs2, spec.geometry, ens.positions, ens.intensities)
    return Estimate.of(np.conj(f) * g)


_GRAD_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _torus_kernel_grid(m: int):
    """Nodes z of the m x m periodic grid (origin removed) and exact K(z) there."""
    if m not in _GRAD_CACHE:
        h = 2.0 * np.pi / m
        x = -np.pi + h * np.arange(m)
        Z = np.stack(np.meshgrid(x, x, indexing="ij"), -1).reshape(-1, 2)
        Z = Z[np.any(Z != 0.0, axis=1)]
        G = ewald_gradient(Z)
        _GRAD_CACHE[m] = (Z, np.stack([G[:, 1], -G[:, 0]], axis=1))
    return _GRAD_CACHE[m]


def hphi_norm2(phi: TestFunction, resolution: int = 512) -> float:
    """||H_phi||^2 over the normalised torus squared.

    Integrating out the centre of mass leaves
    ``sum_k |c_k|^2 / 2 * int (1 - cos k.z) (k . K(z))^2 dz``; the remaining
    integral runs on a periodic grid with the origin excluded and is
    Richardson-extrapolated against half the resolution.
    """
    if phi.kind != "fourier":
        raise ValueError("hphi_norm2: torus trigonometric polynomials only")
    coeffs: dict[tuple, complex] = {}
    for k, c in zip(phi.powers.tolist(), phi.coefficients):
        coeffs[tuple(k)] = coeffs.get(tuple(k), 0.0) + c

    def grid_integral(m):
        Z, K = _torus_kernel_grid(m)
        total = 0.0
        for k, c in coeffs.items():
            kv = np.asarray(k, dtype=np.float64)
            if not np.any(kv):
                continue
            f = (1.0 - np.cos(Z @ kv)) * (K @ kv) ** 2
            total += 0.5 * abs(c) ** 2 * f.sum() / m**2
        return total

    fine = grid_integral(resolution)
    coarse = grid_integral(resolution // 2)
    return float((4.0 * fine - coarse) / 3.0)


@dataclass
class VarianceIdentity:
    mc: float
    closed_form: float
    sigma: float
    hphi_norm2: float

    @property
    def passed(self) -> bool:
        return abs(self.mc - self.closed_form) <= 3.0 * self.sigma

    def to_dict(self) -> dict:
        return asdict(self) | {"passed": self.passed}


def variance_identity_check(N: int, nu: IntensityLaw, phi: TestFunction, n_samples: int, seed: int,
                            geometry: Geometry | None = None) -> VarianceIdentity:
    """E|<H_phi, gamma x gamma>|^2 by Monte Carlo vs 2 N (N - 1) m2^2 ||H_phi||^2."""
    g = geometry or Geometry("torus")
    if g.kind != "torus":
        raise ValueError("variance_identity_check: torus only")
    seed = check_seed(seed)
    hn = hphi_norm2(phi) if N > 1 else 0.0
    closed = 2.0 * N * (N - 1) * nu.second_moment ** 2 * hn
    if N < 2:
        return VarianceIdentity(0.0, closed, 0.0, hn)
    P = np.empty((n_samples, N, 2))
    XI = np.empty((n_samples, N))
    for i in range(n_samples):
        r = stream(seed, i)
        P[i] = g.uniform(r, N)
        XI[i] = nu.sample(r, N)
    v = np.zeros(n_samples)
    for s in range(0, n_samples, 8192):
        e = pair_energy_batch(phi, g, P[s:s + 8192], XI[s:s + 8192])
        v[s:s + 8192] = np.abs(e) ** 2
    return VarianceIdentity(float(v.mean()), closed, float(v.std(ddof=1) / np.sqrt(n_samples)), hn)


# ---------------------------------------------------------------- arrested-flow convergence

@dataclass
class ConvergenceTable:
    epsilon_grid: np.ndarray
    distances: np.ndarray
    stderr: np.ndarray
    arrested_fraction: np.ndarray
    reference_epsilon: float
    slope: float
    fit_residual: float

    @property
    def monotone(self) -> bool:
        order = np.argsort(self.epsilon_grid)[::-1]
        return bool(np.all(np.diff(self.distances[order]) <= 0))

    def to_dict(self) -> dict:
        return {"epsilon_grid": self.epsilon_grid.tolist(), "distances": self.distances.tolist(),
                "stderr": self.stderr.tolist(), "arrested_fraction": self.arrested_fraction.tolist(),
                "reference_epsilon": self.reference_epsilon, "slope": self.slope,
                "fit_residual": self.fit_residual, "monotone": self.monotone}


def vepsilon_convergence_experiment(obs: CylinderObservable, spec: MeasureSpec, t: float,
                                    epsilon_grid, n_samples: int, seed: int,
                                    opts: FlowOptions | None = None) -> ConvergenceTable:
    """Monte Carlo ||U_t f - V^eps_t f||^2 for each eps.

    U_t is represented by the flow regularised at eps_ref = min(grid) / 10.
    Since the eps-flow agrees with the true flow until separation first
    drops to eps, R^eps_t arrests exactly where the reference running minimum
    is <= eps, and U_t f - V^eps_t f = f(T_t x) - f(x) there, 0 elsewhere.
    """
    eps = np.asarray(epsilon_grid, dtype=np.float64)
    eps_ref = float(eps.min()) / 10.0
    base = opts or FlowOptions(rel_tol=1e-9, abs_tol=1e-11)
    o = FlowOptions(eps_ref, base.rel_tol, base.abs_tol, base.max_step, False, None,
                    base.max_steps)
    ens = sample_batch(spec, n_samples, seed)
    res = flow_batch(spec.geometry, ens.positions, ens.intensities, t, o)
    if np.any(res.status != Outcome.OK):
        raise RuntimeError("reference flow ended abnormally for some samples")
    f0 = evaluate_batch(obs, spec.geometry, ens.positions, ens.intensities)
    ft = evaluate_batch(obs, spec.geometry, res.positions, ens.intensities)
    jump = np.abs(ft - f0) ** 2
    dist, se, frac = [], [], []
    for e in eps:
        mask = res.min_distance <= e + 1e-12
        est = Estimate.of(np.where(mask, jump, 0.0))
        dist.append(est.mean)
        se.append(est.stderr)
        frac.append(float(mask.mean()))
    dist = np.asarray(dist)
    slope, resid = fit_inverse_log(eps, dist)
    return ConvergenceTable(eps, dist, np.asarray(se), np.asarray(frac), eps_ref, slope, resid)


# ---------------------------------------------------------------- single-sign distance control

@dataclass(frozen=True)
class DistanceControl:
    """Bound d_t >= C exp(-C' |H(x_0)|) fitted on a calibration ensemble."""

    C: float
    C_prime: float

    def bound(self, H) -> np.ndarray:
        return self.C * np.exp(-self.C_prime * np.abs(H))

    @classmethod
    def fit(cls, H, running_min) -> "DistanceControl":
        """C' from the least-squares slope of log d against |H|; C leaves a factor-2 margin."""
        x = np.abs(np.asarray(H, dtype=np.float64))
        y = np.log(np.asarray(running_min, dtype=np.float64))
        slope = np.polyfit(x, y, 1)[0] if np.ptp(x) > 0 else 0.0
        c_prime = max(0.0, -float(slope))
        log_c = float(np.min(y + c_prime * x)) - np.log(2.0)
        return cls(float(np.exp(log_c)), c_prime)


def running_minima(spec: MeasureSpec, t: float, n_samples: int, seed: int,
                   opts: FlowOptions | None = None):
    """(H(x_0), d_t) for a sampled ensemble under the unregularised flow."""
    base = opts or FlowOptions(rel_tol=1e-10, abs_tol=1e-12)
    o = FlowOptions(0.0, base.rel_tol, base.abs_tol, base.max_step, False, None, base.max_steps)
    ens = sample_batch(spec, n_samples, seed)
    res = flow_batch(spec.geometry, ens.positions, ens.intensities, t, o)
    m = np.where(res.status == Outcome.OK, res.min_distance, 0.0)
    return hamiltonian_batch(spec.geometry, ens.positions, spec.xi), m, res.status


def distance_control_experiment(spec: MeasureSpec, t: float, n_calibration: int, n_fresh: int,
                                seed: int) -> TestReport:
    """Fit the bound on one ensemble, then check every trajectory of a disjoint one."""
    if any(v <= 0 for v in spec.intensities):
        raise ValueError("distance control: intensities must all be positive")
    H_cal, m_cal, _ = running_minima(spec, t, n_calibration, derive(seed, "calibration"))
    ctrl = DistanceControl.fit(H_cal, m_cal)
    H_new, m_new, status = running_minima(spec, t, n_fresh, derive(seed, "fresh"))
    ok = m_new >= ctrl.bound(H_new)
    stats_ = {"C": ctrl.C, "C_prime": ctrl.C_prime, "violations": int(np.sum(~ok)),
              "n_fresh": int(n_fresh), "min_ratio": float(np.min(m_new / ctrl.bound(H_new))),
              "abnormal": int(np.sum(status != Outcome.OK))}
    return TestReport("distance_control", bool(np.all(ok)), stats_)


# ---------------------------------------------------------------- symmetry and unitarity

def symmetry_check(f: CylinderObservable, g: CylinderObservable, spec: MeasureSpec, n_samples: int,
                   seed: int) -> TestReport:
    """<Lf, g> - <f, Lg> by Monte Carlo, with the paired per-sample standard error."""
    if spec.kind != "uniform":
        raise ValueError("symmetry_check: requires a uniform spec")
    geom = spec.geometry
    ens = sample_batch(spec, n_samples, seed)
    P, XI = ens.positions, ens.intensities
    fv, gv = evaluate_batch(f, geom, P, XI), evaluate_batch(g, geom, P, XI)
    Lf, Lg = liouville_batch(f, geom, P, XI), liouville_batch(g, geom, P, XI)
    est = Estimate.of(np.conj(Lf) * gv - np.conj(fv) * Lg)
    stats_ = {"difference": complex(est.mean), "stderr": est.stderr,
              "lhs": complex(np.mean(np.conj(Lf) * gv))}
    return TestReport("symmetry", est.within(0.0, 3.0), stats_)


def unitarity_check(f: CylinderObservable, spec: MeasureSpec, t: float, epsilon: float,
                    n_samples: int, seed: int, opts: FlowOptions | None = None) -> TestReport:
    """||f o T^eps_t||^2 - ||f||^2 by Monte Carlo on paired samples."""
    if spec.kind != "uniform":
        raise ValueError("unitarity_check: requires a uniform spec")
    geom = spec.geometry
    base = opts or FlowOptions(rel_tol=1e-9, abs_tol=1e-11)
    o = FlowOptions(epsilon, base.rel_tol, base.abs_tol, base.max_step, False, None,
                    base.max_steps)
    ens = sample_batch(spec, n_samples, seed)
    res = flow_batch(geom, ens.positions, ens.intensities, t, o)
    if np.any(res.status != Outcome.OK):
        raise RuntimeError("flow ended abnormally for some samples")
    f0 = evaluate_batch(f, geom, ens.positions, ens.intensities)
    ft = evaluate_batch(f, geom, res.positions, ens.intensities)
    est = Estimate.of(np.abs(ft) ** 2 - np.abs(f0) ** 2)
    stats_ = {"difference": float(np.real(est.mean)), "stderr": est.stderr,
              "norm2": float(np.mean(np.abs(f0) ** 2)), "epsilon": float(epsilon), "t": float(t)}
    return TestReport("unitarity", est.within(0.0, 3.0), stats_)
