"""Torus Green function table: Ewald construction, spline prefilter, disk cache.

The torus is [0, 2pi)^2 and G solves -Lap G = delta - 1/(4 pi^2) with zero mean.
What gets tabulated is the regular part on the fundamental square,

    g(z) = G(z) + log|z| / (2 pi),   z in [-pi, pi]^2,

which is real-analytic on a neighbourhood of the closed square, so a cubic
B-spline interpolant converges at full order.  A few ghost layers beyond the
square keep the spline boundary conditions away from the data.
"""

from __future__ import annotations

import os
import struct
import threading
from pathlib import Path

import numpy as np
from scipy import ndimage, special

MAGIC = b"VLGTBL01"
PAD = 24
_HEADER = struct.Struct("<8sIdIII")

_lock = threading.Lock()
_memo: dict[tuple[int, float], "TorusTable"] = {}


class TorusTable:
    """Prefiltered cubic B-spline coefficients for the torus regular part."""

    def __init__(self, resolution: int, ewald_split: float, values: np.ndarray):
        self.resolution = int(resolution)
        self.ewald_split = float(ewald_split)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        h = 2.0 * np.pi / self.resolution
        # tp = (coordinate of padded node 0, 1/h)
        self.tp = np.array([-np.pi - PAD * h, 1.0 / h])
        self.coef = np.ascontiguousarray(
            ndimage.spline_filter(self.values, order=3, mode="mirror")
        )

    @property
    def nodes(self) -> np.ndarray:
        n = self.values.shape[0]
        return self.tp[0] + np.arange(n) / self.tp[1]


def _ein(z: np.ndarray) -> np.ndarray:
    """Entire exponential integral Ein(z) = sum_{k>=1} (-1)^(k+1) z^k / (k k!)."""
    out = np.zeros_like(z)
    term = np.ones_like(z)
    for k in range(1, 30):
        term = term * (-z) / k
        out -= term / k
    return out


def ewald_regular_part(x1: np.ndarray, x2: np.ndarray, alpha: float) -> np.ndarray:
    """g(z) = G(z) + log|z|/(2 pi) on the tensor grid x1 (rows) x x2 (cols).

    Real-space screened image sum plus Gaussian-damped Fourier tail; the result
    does not depend on ``alpha`` beyond round-off.
    """
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    reach = np.sqrt(40.0 / alpha)
    span = max(np.abs(x1).max(), np.abs(x2).max())
    L = int(np.ceil((reach + span) / (2.0 * np.pi)))

    # central image, log singularity removed analytically
    r2 = X1 * X1 + X2 * X2
    z = alpha * r2
    central = np.empty_like(r2)
    small = z < 0.5
    central[small] = _ein(z[small]) - np.euler_gamma - np.log(alpha)
    big = ~small
    central[big] = special.exp1(z[big]) + np.log(r2[big])
    g = central / (4.0 * np.pi)

    for n1 in range(-L, L + 1):
        for n2 in range(-L, L + 1):
            if n1 == 0 and n2 == 0:
                continue
            rr = (X1 + 2 * np.pi * n1) ** 2 + (X2 + 2 * np.pi * n2) ** 2
            g += special.exp1(alpha * rr) / (4.0 * np.pi)

    g -= 1.0 / (16.0 * np.pi**2 * alpha)

    kmax = int(np.ceil(np.sqrt(160.0 * alpha)))
    ks = np.arange(-kmax, kmax + 1)
    K1, K2 = np.meshgrid(ks, ks, indexing="ij")
    kk = (K1 * K1 + K2 * K2).astype(float)
    kk[kmax, kmax] = np.inf
    C = np.exp(-kk / (4.0 * alpha)) / kk / (4.0 * np.pi**2)
    E1 = np.exp(1j * np.outer(ks, x1))
    E2 = np.exp(1j * np.outer(ks, x2))
    g += np.real(E1.T @ C @ E2)
    return g


def ewald_gradient(z: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """Exact grad G(z) for points z of shape (M, 2), z away from the lattice."""
    z = np.asarray(z, dtype=np.float64)
    reach = np.sqrt(40.0 / alpha)
    L = int(np.ceil((reach + np.pi * np.sqrt(2.0)) / (2.0 * np.pi)))
    out = np.zeros_like(z)
    for n1 in range(-L, L + 1):
        for n2 in range(-L, L + 1):
            w = z + 2.0 * np.pi * np.array([n1, n2])
            r2 = np.sum(w * w, axis=-1)
            out -= (np.exp(-alpha * r2) / r2)[:, None] * w / (2.0 * np.pi)
    kmax = int(np.ceil(np.sqrt(160.0 * alpha)))
    ks = np.arange(-kmax, kmax + 1)
    K = np.stack(np.meshgrid(ks, ks, indexing="ij"), -1).reshape(-1, 2).astype(float)
    kk = np.sum(K * K, axis=1)
    keep = kk > 0
    K, kk = K[keep], kk[keep]
    w = np.exp(-kk / (4.0 * alpha)) / kk / (4.0 * np.pi**2)
    for s in range(0, z.shape[0], 4096):
        zs = z[s:s + 4096]
        out[s:s + 4096] -= (np.sin(zs @ K.T) * w) @ K
    return out


def build_values(resolution: int, ewald_split: float) -> np.ndarray:
    h = 2.0 * np.pi / resolution
    nodes = -np.pi + (np.arange(resolution + 1 + 2 * PAD) - PAD) * h
    return ewald_regular_part(nodes, nodes, ewald_split)


def _cache_path(resolution: int, ewald_split: float) -> Path | None:
    root = os.environ.get("VL_CACHE_DIR")
    if not root:
        return None
    return Path(root) / f"torus_g_{resolution}_{float(ewald_split).hex()}.vlg"


def write_cache(path: Path, resolution: int, ewald_split: float, values: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(values, dtype="<f8")
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, resolution, float(ewald_split), PAD, *arr.shape))
        fh.write(arr.tobytes())
    os.replace(tmp, path)


def read_cache(path: Path, resolution: int, ewald_split: float) -> np.ndarray | None:
    """Return cached values, or None when the file is absent or does not match."""
    try:
        raw = path.read_bytes()
    except OSError:
        return None
    if len(raw) < _HEADER.size:
        return None
    magic, res, split, pad, nr, nc = _HEADER.unpack_from(raw)
    if magic != MAGIC or res != resolution or split != float(ewald_split) or pad != PAD:
        return None
    body = raw[_HEADER.size:]
    if len(body) != 8 * nr * nc:
        return None
    return np.frombuffer(body, dtype="<f8").reshape(nr, nc).astype(np.float64)


def get_table(resolution: int = 256, ewald_split: float = 1.0) -> TorusTable:
    """Build (once per process) or load the table for these parameters."""
    key = (int(resolution), float(ewald_split))
    with _lock:
        table = _memo.get(key)
        if table is not None:
            return table
        path = _cache_path(*key)
        values = read_cache(path, *key) if path is not None else None
        if values is None:
            values = build_values(*key)
            if path is not None:
                write_cache(path, key[0], key[1], values)
        table = TorusTable(key[0], key[1], values)
        _memo[key] = table
        return table
