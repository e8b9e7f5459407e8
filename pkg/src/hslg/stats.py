"""Numerical and statistical helpers shared by the samplers and verifiers.

Everything here is a pure function of its inputs.  The Kolmogorov-Smirnov
routines return a :class:`KSReport` so that callers can serialise verdicts
without re-deriving them.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

EULER_GAMMA = 0.57721566490153286061

# Bernoulli-number coefficients of the asymptotic digamma / trigamma series.
_PSI_COEF = (1.0 / 12, -1.0 / 120, 1.0 / 252, -1.0 / 240, 1.0 / 132, -691.0 / 32760, 1.0 / 12)
_PSI1_COEF = (1.0 / 6, -1.0 / 30, 1.0 / 42, -1.0 / 30, 5.0 / 66, -691.0 / 2730, 7.0 / 6)
_SHIFT = 12.0


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


# --------------------------------------------------------------------------
# log-sum-exp and importance weights


def log_sum_exp(values) -> float:
    """log(sum(exp(values))) computed with a max shift.

    ``-inf`` entries are allowed; an all ``-inf`` input gives ``-inf``.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise DomainError("log_sum_exp of an empty sequence")
    vmax = v.max()
    if vmax == -np.inf:
        return -np.inf
    if vmax == np.inf:
        return np.inf
    return float(vmax + np.log(np.sum(np.exp(v - vmax))))


def log_sum_exp_rows(values: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp of a 2-d array."""
    v = np.asarray(values, dtype=float)
    vmax = v.max(axis=1)
    safe = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = safe + np.log(np.sum(np.exp(v - safe[:, None]), axis=1))
    return np.where(vmax == -np.inf, -np.inf, out)


def ess(log_weights) -> float:
    """Kish effective sample size (sum w)^2 / sum w^2, computed in log space."""
    lw = np.asarray(log_weights, dtype=float).ravel()
    if lw.size == 0:
        raise DomainError("ess of an empty sequence")
    if np.all(lw == -np.inf):
        raise DomainError("all importance weights are zero")
    return float(math.exp(2.0 * log_sum_exp(lw) - log_sum_exp(2.0 * lw)))


def normalized_weights(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    if np.all(lw == -np.inf):
        raise DomainError("all importance weights are zero")
    w = np.exp(lw - lw.max())
    return w / w.sum()


# --------------------------------------------------------------------------
# polygamma


def _digamma_scalar(x: float) -> float:
    if not x > 0:
        raise DomainError(f"digamma requires x > 0, got {x}")
    acc = 0.0
    while x < _SHIFT:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    p = inv2
    for c in _PSI_COEF:
        series += c * p
        p *= inv2
    return acc + math.log(x) - 0.5 / x - series


def _trigamma_scalar(x: float) -> float:
    if not x > 0:
        raise DomainError(f"trigamma requires x > 0, got {x}")
    acc = 0.0
    while x < _SHIFT:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    p = inv2 * inv
    for c in _PSI1_COEF:
        series += c * p
        p *= inv2
    return acc + inv + 0.5 * inv2 + series


def digamma(x):
    """psi(x) for x > 0 via upward recurrence and the asymptotic series."""
    if np.ndim(x) == 0:
        return _digamma_scalar(float(x))
    return np.vectorize(_digamma_scalar, otypes=[float])(np.asarray(x, dtype=float))


def trigamma(x):
    """psi'(x) for x > 0."""
    if np.ndim(x) == 0:
        return _trigamma_scalar(float(x))
    return np.vectorize(_trigamma_scalar, otypes=[float])(np.asarray(x, dtype=float))


# --------------------------------------------------------------------------
# Kolmogorov-Smirnov


@dataclass
class KSReport:
    statistic: float
    n1: int
    n2: Optional[int] = None
    p_approx: Optional[float] = None
    threshold: Optional[float] = None
    level: Optional[float] = None
    verdict: str = "inconclusive"

    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return asdict(self)


def kolmogorov_sf(lam: float, terms: int = 100) -> float:
    """P(K > lam) for the Kolmogorov distribution, alternating series."""
    if lam <= 0:
        return 1.0
    if lam < 0.2:
        # series converges slowly here; the value is 1 to double precision
        return 1.0
    total = 0.0
    for k in range(1, terms + 1):
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < 1e-17:
            break
    return min(1.0, max(0.0, 2.0 * total))


def _ks_pvalue(stat: float, n_eff: float) -> float:
    sq = math.sqrt(n_eff)
    return kolmogorov_sf((sq + 0.12 + 0.11 / sq) * stat)


def _verdict(stat, p, threshold, level) -> str:
    if level is not None and p is not None:
        ok = p >= level
        if threshold is not None:
            ok = ok and stat <= threshold
        return "pass" if ok else "fail"
    if threshold is not None:
        return "pass" if stat <= threshold else "fail"
    return "inconclusive"


def weighted_ecdf(sample, weights=None):
    """Sorted sample and the (weighted) ECDF evaluated at each sorted point."""
    x = np.asarray(sample, dtype=float).ravel()
    if weights is None:
        w = np.ones_like(x)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != x.shape:
            raise DomainError("weights and sample differ in length")
        if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
            raise DomainError("weights must be finite, nonnegative and not all zero")
    order = np.argsort(x, kind="mergesort")
    x, w = x[order], w[order]
    cw = np.cumsum(w)
    return x, cw / cw[-1]


def _ecdf_at(x_sorted, cdf_sorted, points):
    idx = np.searchsorted(x_sorted, points, side="right")
    padded = np.concatenate([[0.0], cdf_sorted])
    return padded[idx]


def ks_two_sample(xs, ys, weights_x=None, weights_y=None, *, level: Optional[float] = 0.01,
                  threshold: Optional[float] = None) -> KSReport:
    """Two-sample KS distance between (optionally weighted) empirical CDFs.

    Unweighted samples get an asymptotic p-value with the usual effective size
    n1*n2/(n1+n2); weighted samples only report the statistic and are judged
    against ``threshold``.
    """
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.size == 0 or ys.size == 0:
        raise DomainError("KS test needs two nonempty samples")
    x1, c1 = weighted_ecdf(xs, weights_x)
    x2, c2 = weighted_ecdf(ys, weights_y)
    grid = np.concatenate([x1, x2])
    stat = float(np.max(np.abs(_ecdf_at(x1, c1, grid) - _ecdf_at(x2, c2, grid))))
    weighted = weights_x is not None or weights_y is not None
    p = None
    if not weighted:
        n_eff = xs.size * ys.size / (xs.size + ys.size)
        p = _ks_pvalue(stat, n_eff)
    lvl = None if weighted else level
    return KSReport(stat, int(xs.size), int(ys.size), p, threshold, lvl, _verdict(stat, p, threshold, lvl))


def ks_one_sample(xs, cdf: Callable, *, level: Optional[float] = None,
                  threshold: Optional[float] = None) -> KSReport:
    """sup |ECDF - cdf| including left limits, so atoms in ``cdf`` are handled."""
    x = np.sort(np.asarray(xs, dtype=float).ravel())
    if x.size == 0:
        raise DomainError("KS test needs a nonempty sample")
    u, counts = np.unique(x, return_counts=True)
    n = x.size
    upper = np.cumsum(counts) / n
    lower = upper - counts / n
    f_at = np.asarray(cdf(u), dtype=float)
    f_left = np.asarray(cdf(np.nextafter(u, -np.inf)), dtype=float)
    if np.any((f_at < -1e-12) | (f_at > 1 + 1e-12)) or np.any((f_left < -1e-12) | (f_left > 1 + 1e-12)):
        raise DomainError("cdf left [0, 1] at a sample point")
    stat = float(max(np.max(np.abs(upper - f_at)), np.max(np.abs(lower - f_left))))
    p = _ks_pvalue(stat, n)
    return KSReport(stat, int(n), None, p, threshold, level, _verdict(stat, p, threshold, level))


def ks_dominance(lower_sample, upper_sample, *, level: float = 0.01) -> KSReport:
    """One-sided KS check that ``upper_sample`` stochastically dominates ``lower_sample``.

    The statistic is sup_x (F_upper(x) - F_lower(x)), which is ~0 under
    dominance.  p-value from the one-sided asymptotic exp(-2 n_eff D^2).
    """
    a = np.asarray(lower_sample, dtype=float).ravel()
    b = np.asarray(upper_sample, dtype=float).ravel()
    xa, ca = weighted_ecdf(a)
    xb, cb = weighted_ecdf(b)
    grid = np.concatenate([xa, xb])
    stat = float(max(0.0, np.max(_ecdf_at(xb, cb, grid) - _ecdf_at(xa, ca, grid))))
    n_eff = a.size * b.size / (a.size + b.size)
    p = math.exp(-2.0 * n_eff * stat * stat)
    return KSReport(stat, int(a.size), int(b.size), p, None, level, "pass" if p >= level else "fail")


# --------------------------------------------------------------------------
# path utilities


def modulus_of_continuity(curves, grid, delta: float) -> float:
    """max_i sup_{|x-y|<delta} |f_i(x) - f_i(y)| over grid points."""
    f = np.atleast_2d(np.asarray(curves, dtype=float))
    x = np.asarray(grid, dtype=float)
    best = 0.0
    for i in range(x.size):
        j = np.searchsorted(x, x[i] + delta, side="left")
        if j > i + 1:
            seg = f[:, i + 1:j]
            best = max(best, float(np.max(np.abs(seg - f[:, i:i + 1]))))
    return best
