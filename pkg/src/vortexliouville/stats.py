"""Kolmogorov-Smirnov harness and Monte Carlo summaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sp_stats

MIN_SAMPLES = 1000
LEVEL = 0.01


def ks_critical_coefficient(alpha: float = LEVEL, n_tests: int = 1) -> float:
    """Asymptotic Kolmogorov quantile sqrt(-ln(alpha / (2 m)) / 2), Bonferroni over m tests."""
    return float(np.sqrt(-0.5 * np.log(alpha / (2.0 * n_tests))))


def _require(n: int):
    if n < MIN_SAMPLES:
        raise ValueError(f"n_samples: statistical tests need at least {MIN_SAMPLES} samples")


@dataclass
class KSResult:
    statistic: float
    critical: float
    n: int

    @property
    def passed(self) -> bool:
        return self.statistic < self.critical


def ks_uniform(u: np.ndarray, alpha: float = LEVEL, n_tests: int = 1) -> KSResult:
    """One-sample KS test of values against U(0, 1)."""
    u = np.asarray(u, dtype=np.float64)
    _require(u.size)
    stat = sp_stats.kstest(u, "uniform").statistic
    return KSResult(float(stat), ks_critical_coefficient(alpha, n_tests) / np.sqrt(u.size), u.size)


def ks_two_sample(a: np.ndarray, b: np.ndarray, alpha: float = LEVEL, n_tests: int = 1) -> KSResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _require(min(a.size, b.size))
    stat = sp_stats.ks_2samp(a, b, method="asymp").statistic
    scale = np.sqrt((a.size + b.size) / (a.size * b.size))
    return KSResult(float(stat), ks_critical_coefficient(alpha, n_tests) * scale, min(a.size, b.size))


def correlation_bound(n: int, alpha: float = LEVEL, n_tests: int = 1) -> float:
    """Two-sided normal-approximation bound on |Pearson r| under independence."""
    return float(sp_stats.norm.ppf(1.0 - alpha / (2.0 * n_tests)) / np.sqrt(n))


@dataclass
class Estimate:
    """Sample mean with its standard error (complex values allowed)."""

    mean: complex
    stderr: float
    n: int

    @classmethod
    def of(cls, values) -> "Estimate":
        v = np.asarray(values)
        n = v.size
        m = v.mean()
        se = float(np.sqrt(np.sum(np.abs(v - m) ** 2) / (n * (n - 1)))) if n > 1 else np.inf
        return cls(m if np.iscomplexobj(v) else float(m), se, n)

    def within(self, target: complex = 0.0, sigmas: float = 3.0) -> bool:
        return bool(abs(self.mean - target) <= sigmas * self.stderr)


@dataclass
class TestReport:
    """Outcome of a statistical check."""

    __test__ = False

    name: str
    passed: bool
    statistics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "statistics": self.statistics}
