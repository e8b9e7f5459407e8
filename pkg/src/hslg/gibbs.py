"""Samplers and Radon-Nikodym weights for the discrete and continuum Gibbs measures.

Discrete (scale N) measures live on the grid x = A1 + s/sqrt(N); continuum
(scale L) measures on a uniform grid of ``n_grid`` intervals.  A multi-curve
path is an array of shape (curves, grid points) holding curves k..l in order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Optional

import numpy as np
from numba import njit

from .environment import RngState, sample_log_gamma
from .polymer import build_scaled_ensemble
from .stats import DomainError, KSReport, ess, ks_two_sample, normalized_weights


class ContractError(ValueError):
    """Inputs are individually valid but inconsistent with each other."""


class DegenerateSampleError(RuntimeError):
    """Every importance weight vanished."""


class MixingWarning(RuntimeWarning):
    pass


ESS_FLOOR = 100.0


# --------------------------------------------------------------------------
# specs and containers


@dataclass
class GibbsSpec:
    """One- or two-sided Gibbs measure on curves k..l over [A1, A2].

    ``f`` (ceiling) and ``g`` (floor) accept None (meaning +inf / -inf), a
    scalar, a callable of x, or an array on the grid.  In the continuum
    critical regime pass ``mu``; the effective boundary parameter is then
    mu / sqrt(L).
    """

    kind: str
    side: str
    k: int
    l: int
    A1: float
    a: tuple
    A2: float = 0.0
    b: Optional[tuple] = None
    f: object = None
    g: object = None
    alpha: float = 0.0
    mu: Optional[float] = None
    N: Optional[int] = None
    L: Optional[float] = None
    n_grid: int = 512
    drift_mode: str = "folded"
    diffusion: float = 1.0

    def __post_init__(self):
        if self.kind not in ("discrete", "continuum"):
            raise DomainError(f"unknown kind {self.kind!r}")
        if self.side not in ("one-sided", "two-sided"):
            raise DomainError(f"unknown side {self.side!r}")
        if self.k < 1 or self.l < self.k:
            raise DomainError("need 1 <= k <= l")
        if self.side == "one-sided":
            if self.A2 != 0.0:
                raise DomainError("one-sided measures live on [A, 0]")
            if self.b is not None:
                raise DomainError("one-sided measures have a free right end")
        elif self.b is None or len(self.b) != self.n_curves:
            raise DomainError("two-sided measures need one right boundary value per curve")
        if not (self.A1 <= self.A2 <= 0.0):
            raise DomainError("need A1 <= A2 <= 0")
        if len(self.a) != self.n_curves:
            raise DomainError("need one left boundary value per curve")
        if self.kind == "discrete":
            if self.N is None or self.N < 1:
                raise DomainError("discrete measures need N >= 1")
            for x in (self.A1, self.A2):
                u = -x * math.sqrt(self.N)
                if abs(u - round(u)) > 1e-9:
                    raise DomainError(f"{x} is not on the 1/sqrt(N) grid")
        else:
            if self.L is None or self.L <= 0:
                raise DomainError("continuum measures need L > 0")
            if self.n_grid < 1:
                raise DomainError("n_grid must be >= 1")
        if self.drift_mode not in ("folded", "drifted"):
            raise DomainError(f"unknown drift mode {self.drift_mode!r}")

    @property
    def n_curves(self) -> int:
        return self.l - self.k + 1

    @property
    def alpha_eff(self) -> float:
        if self.mu is not None:
            return self.mu / math.sqrt(self.L)
        return self.alpha

    def grid(self) -> np.ndarray:
        if self.kind == "discrete":
            steps = int(round((self.A2 - self.A1) * math.sqrt(self.N)))
            return self.A1 + np.arange(steps + 1) / math.sqrt(self.N)
        return np.linspace(self.A1, self.A2, self.n_grid + 1)

    def ceiling(self) -> np.ndarray:
        return _boundary_array(self.f, self.grid(), np.inf)

    def floor(self) -> np.ndarray:
        return _boundary_array(self.g, self.grid(), -np.inf)

    def drifts(self) -> np.ndarray:
        """Drift (-1)^i alpha sqrt(L) of each curve i = k..l (continuum, one-sided)."""
        if self.side == "two-sided":
            return np.zeros(self.n_curves)
        s = math.sqrt(self.L)
        return np.array([(-1) ** i * self.alpha_eff * s for i in range(self.k, self.l + 1)])


def _boundary_array(val, grid, default):
    if val is None:
        return np.full(grid.size, default)
    if callable(val):
        return np.asarray(val(grid), dtype=float) * np.ones(grid.size)
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.size, float(arr))
    if arr.shape != grid.shape:
        raise ContractError(f"boundary array has {arr.size} points, grid has {grid.size}")
    return arr.copy()


@dataclass
class WeightedSampleSet:
    samples: np.ndarray
    log_weights: np.ndarray
    grid: np.ndarray
    ess: float = field(init=False)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ess = ess(self.log_weights)

    def weights(self) -> np.ndarray:
        return normalized_weights(self.log_weights)

    def mean(self, functional) -> float:
        vals = np.array([functional(p) for p in self.samples], dtype=float)
        return float(np.dot(self.weights(), vals))

    def to_csv(self, path, k: int = 1):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "curve", "x", "value", "log_weight"])
            for r, (path_r, lw) in enumerate(zip(self.samples, self.log_weights)):
                for c, row in enumerate(path_r):
                    for x, v in zip(self.grid, row):
                        w.writerow([r, c + k, repr(float(x)), repr(float(v)), repr(float(lw))])


@dataclass(frozen=True)
class SoftBarrierSpec:
    """Law of a Brownian motion on [A, 0] from ``a`` reweighted by
    exp(-beta ((B(0) + eps) v 0) - L int e^{-sqrt(L)(B + kappa)}).

    ``epsilon=None`` drops the truncation, leaving -beta B(0).
    """

    beta: float
    L: float
    a: float
    A: float = -1.0
    epsilon: Optional[float] = None
    kappa: float = 0.0
    diffusion: float = 1.0

    def __post_init__(self):
        if self.beta < 0 or self.L <= 0 or self.kappa < 0:
            raise DomainError("need beta >= 0, L > 0, kappa >= 0")
        if self.epsilon is not None and self.epsilon < 0:
            raise DomainError("epsilon must be >= 0")
        if not self.A < 0:
            raise DomainError("need A < 0")
        if self.diffusion <= 0:
            raise DomainError("diffusion must be positive")


# --------------------------------------------------------------------------
# log-gamma walks and bridges


def _lg_layout(N: int, A1: float, A2: float, alpha: float):
    """Sign, shape and log sqrt(N) offset for each increment on (A1, A2]."""
    sn = math.sqrt(N)
    s1, s2 = int(round(A1 * sn)), int(round(A2 * sn))
    if abs(A1 * sn - s1) > 1e-9 or abs(A2 * sn - s2) > 1e-9:
        raise DomainError("interval endpoints must lie on the 1/sqrt(N) grid")
    if s1 > s2 or s2 > 0:
        raise DomainError("need A1 <= A2 <= 0")
    u = np.arange(s1 + 1, s2 + 1)
    sign = np.where(u % 2 == 0, 1.0, -1.0)
    # X(u + 1) has shape 1/2 + (-1)^(u+1) alpha + sqrt(N)
    shape = 0.5 + np.where((u + 1) % 2 == 0, alpha, -alpha) + sn
    if np.any(shape <= 0):
        raise DomainError(f"alpha={alpha} gives a nonpositive gamma shape at N={N}")
    return sign, shape, 0.5 * math.log(N)


def lg_increment_means(N: int, interval, alpha: float) -> np.ndarray:
    """Exact mean of each walk increment, sign * (psi(shape) - log sqrt(N))."""
    from .stats import digamma

    sign, shape, off = _lg_layout(N, interval[0], interval[1], alpha)
    return sign * (digamma(shape) - off)


def sample_lg_walk(rng: RngState, N: int, interval, start: float, alpha: float,
                   size: Optional[int] = None) -> np.ndarray:
    """Scale-N log-gamma walk on the grid of ``interval``; grid values only.

    Returns shape (points,) or (size, points).
    """
    sign, shape, off = _lg_layout(N, interval[0], interval[1], alpha)
    n = 1 if size is None else size
    inc = np.empty((n, shape.size))
    for idx, beta in enumerate(shape):
        inc[:, idx] = sample_log_gamma(rng, float(beta), size=n)
    inc = sign * (inc - off)
    out = np.empty((n, shape.size + 1))
    out[:, 0] = start
    np.cumsum(inc, axis=1, out=out[:, 1:])
    out[:, 1:] += start
    return out[0] if size is None else out


@njit(cache=True)
def _lg_bridge_kernel(x, sign, shape, sweeps, scale, seed):
    """Pair moves d_p += e, d_q -= e on increments d = sign * (X - c).

    Keeps the increment sum fixed, hence both endpoints.  Target is the
    product of logGamma densities beta*X - e^X.
    """
    np.random.seed(seed)
    n = x.size
    acc = 0
    tot = 0
    for _ in range(sweeps):
        for _ in range(n):
            p = np.random.randint(n)
            q = np.random.randint(n - 1)
            if q >= p:
                q += 1
            e = scale * np.random.standard_normal()
            xp = x[p] + sign[p] * e
            xq = x[q] - sign[q] * e
            d = (shape[p] * (xp - x[p]) - (math.exp(xp) - math.exp(x[p]))
                 + shape[q] * (xq - x[q]) - (math.exp(xq) - math.exp(x[q])))
            tot += 1
            if math.log(np.random.random()) < d:
                x[p] = xp
                x[q] = xq
                acc += 1
    return acc / max(tot, 1)


def sample_lg_bridge(rng: RngState, N: int, interval, a: float, b: float, alpha: float,
                     sweeps: int = 200, return_rate: bool = False):
    """Scale-N log-gamma bridge from a to b by endpoint-preserving Metropolis.

    The chain starts from a free walk whose increments are shifted evenly to
    hit b, then runs ``sweeps`` sweeps of pair moves.
    """
    sign, shape, off = _lg_layout(N, interval[0], interval[1], alpha)
    n = shape.size
    if n == 0:
        if a != b:
            raise DomainError("a degenerate interval needs a == b")
        path = np.array([a])
        return (path, 1.0) if return_rate else path
    if n == 1:
        path = np.array([a, b])
        return (path, 1.0) if return_rate else path
    x = np.array([sample_log_gamma(rng, float(beta)) for beta in shape])
    d = sign * (x - off)
    d += (b - a - d.sum()) / n
    x = sign * d + off
    rate = _lg_bridge_kernel(x, sign, shape, int(sweeps), 1.0 / np.sqrt(np.mean(shape)),
                             rng.numba_seed())
    d = sign * (x - off)
    path = np.empty(n + 1)
    path[0] = a
    path[1:] = a + np.cumsum(d)
    path[-1] = b
    return (path, rate) if return_rate else path


# --------------------------------------------------------------------------
# Radon-Nikodym weights


def _exp_gap(upper, lower, scale):
    """exp(scale * (lower - upper)) with +inf ceilings / -inf floors giving 0."""
    upper = np.asarray(upper, dtype=float)
    lower = np.asarray(lower, dtype=float)
    dead = (upper == np.inf) | (lower == -np.inf)
    with np.errstate(invalid="ignore", over="ignore"):
        val = np.exp(scale * (lower - upper))
    return np.where(dead, 0.0, val)


def _stack(paths, spec: GibbsSpec):
    """Curves with ceiling and floor rows added; leading batch axes are kept."""
    p = np.asarray(paths, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    grid = spec.grid()
    if p.shape[-2:] != (spec.n_curves, grid.size):
        raise ContractError(f"paths have shape {p.shape}, spec expects {(spec.n_curves, grid.size)}")
    batch = p.shape[:-2]
    ceil = np.broadcast_to(spec.ceiling(), batch + (1, grid.size))
    floor = np.broadcast_to(spec.floor(), batch + (1, grid.size))
    return np.concatenate([ceil, p, floor], axis=-2)


def log_W_discrete(paths, spec: GibbsSpec):
    """-(1/sqrt N) sum_{i=k-1}^{l} sum_{j odd} sum_{r=+-1} exp(S_{i+1}(j) - S_i(j + r/sqrt N)).

    The lower curve enters at odd grid points (x sqrt(N) odd) and the upper
    one at the even neighbours; this is the pairing under which the scaled
    ensemble is exactly Gibbsian.  Curve values outside [A1, A2] count as
    +inf, so off-grid neighbours drop out.  A batch of paths
    (..., curves, points) gives an array of weights.
    """
    if spec.kind != "discrete":
        raise ContractError("log_W_discrete needs a discrete spec")
    s = _stack(paths, spec)
    sn = math.sqrt(spec.N)
    u0 = int(round(spec.A1 * sn))
    n_pts = s.shape[-1]
    odd = (u0 + np.arange(n_pts)) % 2 != 0
    upper, lower = s[..., :-1, :], s[..., 1:, :]
    pad = np.full(upper.shape[:-1] + (1,), np.inf)
    left = np.concatenate([pad, upper[..., :-1]], axis=-1)
    right = np.concatenate([upper[..., 1:], pad], axis=-1)
    terms = _exp_gap(left, lower, 1.0) + _exp_gap(right, lower, 1.0)
    total = -np.sum(terms[..., odd], axis=(-2, -1)) / sn
    return float(total) if np.ndim(paths) <= 2 else total


def _trapezoid_weights(n_pts: int, h: float) -> np.ndarray:
    w = np.full(n_pts, h)
    if n_pts > 1:
        w[0] = w[-1] = 0.5 * h
    else:
        w[0] = 0.0
    return w


def log_W_continuum(paths, spec: GibbsSpec, include_drift: Optional[bool] = None) -> float:
    """-L sum_i int exp(sqrt(L)(B_{i+1} - B_i)) by the trapezoid rule.

    For one-sided specs in folded drift mode the Cameron-Martin term
    sum_i (-1)^i alpha sqrt(L) B_i(0) is added.
    """
    if spec.kind != "continuum":
        raise ContractError("log_W_continuum needs a continuum spec")
    s = _stack(paths, spec)
    sl = math.sqrt(spec.L)
    tw = _trapezoid_weights(s.shape[1], (spec.A2 - spec.A1) / spec.n_grid)
    total = 0.0
    for i in range(s.shape[0] - 1):
        total -= spec.L * float(np.dot(tw, _exp_gap(s[i], s[i + 1], sl)))
    if include_drift is None:
        include_drift = spec.side == "one-sided" and spec.drift_mode == "folded"
    if include_drift:
        total += float(np.dot(spec.drifts(), s[1:-1, -1]))
    return total


def log_W_softbarrier(path, spec: SoftBarrierSpec, n_grid: int = 512) -> float:
    """Log weight of the soft-barrier law on a uniform grid over [A, 0]."""
    p = np.asarray(path, dtype=float)
    if p.size != n_grid + 1:
        raise ContractError("path length does not match the grid")
    tw = _trapezoid_weights(p.size, -spec.A / n_grid)
    sl = math.sqrt(spec.L)
    barrier = spec.L * float(np.dot(tw, np.exp(-sl * (p + spec.kappa))))
    end = p[-1] if spec.epsilon is None else max(p[-1] + spec.epsilon, 0.0)
    return -spec.beta * end - barrier


# --------------------------------------------------------------------------
# free proposals


def _free_continuum(rng: RngState, spec: GibbsSpec, M: int, drifted: bool) -> np.ndarray:
    grid = spec.grid()
    h = (spec.A2 - spec.A1) / spec.n_grid
    C = spec.n_curves
    out = np.empty((M, C, grid.size))
    D = spec.diffusion
    for c in range(C):
        inc = rng.gen.standard_normal((M, spec.n_grid)) * math.sqrt(D * h)
        if drifted:
            inc += spec.drifts()[c] * h
        out[:, c, 0] = spec.a[c]
        out[:, c, 1:] = spec.a[c] + np.cumsum(inc, axis=1)
        if spec.side == "two-sided":
            # Brownian bridge by linear correction of the free path
            t = (grid - grid[0]) / (grid[-1] - grid[0]) if grid[-1] > grid[0] else np.zeros_like(grid)
            out[:, c, :] -= t * (out[:, c, -1:] - spec.b[c])
    return out


def walk_parameter(i: int, alpha: float) -> float:
    """Walk parameter of curve i in a one-sided discrete measure.

    A walk with parameter p drifts by -p per unit x, so (-1)^(i+1) alpha gives
    curve i the drift (-1)^i alpha that the continuum measures use.
    """
    return (-1) ** (i + 1) * alpha


def _free_discrete(rng: RngState, spec: GibbsSpec, M: int) -> np.ndarray:
    grid = spec.grid()
    out = np.empty((M, spec.n_curves, grid.size))
    for c, i in enumerate(range(spec.k, spec.l + 1)):
        par = walk_parameter(i, spec.alpha)
        if spec.side == "one-sided":
            out[:, c, :] = sample_lg_walk(rng, spec.N, (spec.A1, spec.A2), spec.a[c], par, size=M)
        else:
            for r in range(M):
                out[r, c, :] = sample_lg_bridge(rng, spec.N, (spec.A1, spec.A2), spec.a[c],
                                                spec.b[c], par)
    return out


def importance_sample_gibbs(rng: RngState, spec: GibbsSpec, M: int) -> WeightedSampleSet:
    """M free proposals weighted by the spec's RN derivative.

    Continuum one-sided specs propose driftless paths when the drift is
    folded into the weight and drifted paths otherwise.
    """
    if M < 1:
        raise DomainError("M must be >= 1")
    if spec.kind == "discrete":
        samples = _free_discrete(rng, spec, M)
        lw = np.atleast_1d(log_W_discrete(samples, spec))
    else:
        drifted = spec.side == "one-sided" and spec.drift_mode == "drifted"
        samples = _free_continuum(rng, spec, M, drifted)
        lw = np.array([log_W_continuum(p, spec) for p in samples])
    if np.all(lw == -np.inf):
        raise DegenerateSampleError("all importance weights are zero")
    return WeightedSampleSet(samples, lw, spec.grid(), diagnostics={"proposals": M})


# --------------------------------------------------------------------------
# Metropolis for continuum measures


@njit(cache=True)
def _pair_term(upper, lower, w, L, sl):
    if upper == np.inf or lower == -np.inf:
        return 0.0
    return -L * w * math.exp(sl * (lower - upper))


@njit(cache=True)
def _end_term(v, coef, eps):
    if eps == np.inf:
        return coef * v
    return coef * max(v + eps, 0.0)


@njit(cache=True)
def _local_energy(B, c, j, val, ceil, floor, tw, L, sl):
    C = B.shape[0]
    up = ceil[j] if c == 0 else B[c - 1, j]
    lo = floor[j] if c == C - 1 else B[c + 1, j]
    return _pair_term(up, val, tw[j], L, sl) + _pair_term(val, lo, tw[j], L, sl)


@njit(cache=True)
def _draw_segment(y, l, r, tail, var, scratch):
    """Free redraw of y on (l, r): Brownian bridge, or free tail through r when ``tail``."""
    prev = y[l]
    for j in range(l + 1, r + 1):
        if tail:
            v = prev + math.sqrt(var) * np.random.standard_normal()
        elif j == r:
            v = y[r]
        else:
            rem = r - j + 1
            mean = prev + (y[r] - prev) / rem
            v = mean + math.sqrt(var * (rem - 1) / rem) * np.random.standard_normal()
        scratch[j] = v
        prev = v


@njit(cache=True)
def _mh_kernel(B, ceil, floor, tw, L, sl, end_coef, end_eps, D, h, two_sided,
               n_steps, burn, thin, p_local, p_pair, local_scale, record_cols, seed, out):
    np.random.seed(seed)
    C, P = B.shape
    K = P - 1
    last_free = K - 1 if two_sided else K
    n_rec = out.shape[0]
    rec = 0
    acc = np.zeros(3)
    tried = np.zeros(3)
    new1 = np.empty(P)
    new2 = np.empty(P)
    u_old = np.empty(P)
    v_old = np.empty(P)
    inv2v = 1.0 / (2.0 * D * h)
    sig = local_scale * math.sqrt(D * h)
    logK = math.log(K) if K > 1 else 0.0
    total = burn + n_rec * thin
    for step in range(total):
        if last_free < 1:
            break
        u = np.random.random()
        if u < p_local:
            mtype = 0
        elif C > 1 and u < p_local + p_pair:
            mtype = 2
        else:
            mtype = 1
        tried[mtype] += 1
        if mtype == 0:
            c = np.random.randint(C)
            j = 1 + np.random.randint(last_free)
            old = B[c, j]
            val = old + sig * np.random.standard_normal()
            d = _local_energy(B, c, j, val, ceil, floor, tw, L, sl) - \
                _local_energy(B, c, j, old, ceil, floor, tw, L, sl)
            d -= ((val - B[c, j - 1]) ** 2 - (old - B[c, j - 1]) ** 2) * inv2v
            if j < K:
                d -= ((B[c, j + 1] - val) ** 2 - (B[c, j + 1] - old) ** 2) * inv2v
            else:
                d += _end_term(val, end_coef[c], end_eps[c]) - _end_term(old, end_coef[c], end_eps[c])
            if math.log(np.random.random()) < d:
                B[c, j] = val
                acc[0] += 1
        else:
            # segment (l, r]; free tails only when the right end is free
            length = int(math.exp(np.random.random() * logK)) + 1
            if length > K:
                length = K
            tail = (not two_sided) and np.random.random() < 0.5
            if tail:
                r = K
                l = K - length
            else:
                if length < 2:
                    length = 2
                if length > K:
                    continue
                l = np.random.randint(K - length + 1)
                r = l + length
            hi = r if tail else r - 1
            if mtype == 1:
                c = np.random.randint(C)
                row = B[c]
                _draw_segment(row, l, r, tail, D * h, new1)
                d = 0.0
                for j in range(l + 1, hi + 1):
                    d += _local_energy(B, c, j, new1[j], ceil, floor, tw, L, sl) - \
                        _local_energy(B, c, j, row[j], ceil, floor, tw, L, sl)
                if tail:
                    d += _end_term(new1[K], end_coef[c], end_eps[c]) - _end_term(row[K], end_coef[c], end_eps[c])
                if math.log(np.random.random()) < d:
                    for j in range(l + 1, hi + 1):
                        row[j] = new1[j]
                    acc[1] += 1
            else:
                c = np.random.randint(C - 1)
                mode = np.random.randint(2)
                for j in range(P):
                    u_old[j] = B[c, j] + B[c + 1, j]
                    v_old[j] = B[c, j] - B[c + 1, j]
                if mode == 0:
                    _draw_segment(u_old, l, r, tail, 2.0 * D * h, new1)
                    for j in range(l + 1, hi + 1):
                        new2[j] = v_old[j]
                else:
                    _draw_segment(v_old, l, r, tail, 2.0 * D * h, new2)
                    for j in range(l + 1, hi + 1):
                        new1[j] = u_old[j]
                d = 0.0
                for j in range(l + 1, hi + 1):
                    x1 = 0.5 * (new1[j] + new2[j])
                    x2 = 0.5 * (new1[j] - new2[j])
                    up = ceil[j] if c == 0 else B[c - 1, j]
                    lo = floor[j] if c + 1 == C - 1 else B[c + 2, j]
                    d += _pair_term(up, x1, tw[j], L, sl) + _pair_term(x1, x2, tw[j], L, sl) + \
                        _pair_term(x2, lo, tw[j], L, sl)
                    d -= _pair_term(up, B[c, j], tw[j], L, sl) + _pair_term(B[c, j], B[c + 1, j], tw[j], L, sl) + \
                        _pair_term(B[c + 1, j], lo, tw[j], L, sl)
                if tail:
                    x1 = 0.5 * (new1[K] + new2[K])
                    x2 = 0.5 * (new1[K] - new2[K])
                    d += _end_term(x1, end_coef[c], end_eps[c]) - _end_term(B[c, K], end_coef[c], end_eps[c])
                    d += _end_term(x2, end_coef[c + 1], end_eps[c + 1]) - \
                        _end_term(B[c + 1, K], end_coef[c + 1], end_eps[c + 1])
                if math.log(np.random.random()) < d:
                    for j in range(l + 1, hi + 1):
                        B[c, j] = 0.5 * (new1[j] + new2[j])
                        B[c + 1, j] = 0.5 * (new1[j] - new2[j])
                    acc[2] += 1
        if step >= burn and (step - burn + 1) % thin == 0 and rec < n_rec:
            for c in range(C):
                for q in range(record_cols.size):
                    out[rec, c, q] = B[c, record_cols[q]]
            rec += 1
    return acc, tried


@dataclass
class ChainConfig:
    """Metropolis settings; step counts are single moves, not sweeps."""

    samples: int = 1000
    thin: int = 2000
    burn: int = 200_000
    p_local: float = 0.8
    p_pair: float = 0.1
    local_scale: float = 1.0


def _initial_paths(a, b, floor, n_pts, two_sided):
    C = len(a)
    B = np.empty((C, n_pts))
    for c in range(C):
        if two_sided:
            B[c] = np.linspace(a[c], b[c], n_pts)
        else:
            B[c] = a[c]
    fl = np.where(np.isfinite(floor), floor, -np.inf)
    if np.any(B[-1] <= fl):
        raise ContractError("initial path does not clear the floor; adjust the boundary data")
    return B


def _run_chain(rng, B0, ceil, floor, L, end_coef, end_eps, D, h, two_sided, cfg: ChainConfig,
               record_cols):
    B = np.ascontiguousarray(B0, dtype=float).copy()
    C, P = B.shape
    out = np.full((cfg.samples, C, len(record_cols)), np.nan)
    tw = _trapezoid_weights(P, h)
    acc, tried = _mh_kernel(B, np.ascontiguousarray(ceil, dtype=float), np.ascontiguousarray(floor, dtype=float),
                            tw, float(L), math.sqrt(L), np.asarray(end_coef, dtype=float),
                            np.asarray(end_eps, dtype=float), float(D), float(h), bool(two_sided),
                            int(cfg.burn + cfg.samples * cfg.thin), int(cfg.burn), int(cfg.thin),
                            float(cfg.p_local), float(cfg.p_pair), float(cfg.local_scale),
                            np.asarray(record_cols, dtype=np.int64), rng.numba_seed(), out)
    rates = {name: (float(acc[i] / tried[i]) if tried[i] else None)
             for i, name in enumerate(("local", "segment", "pair"))}
    if tried.sum() > 0 and acc.sum() == 0:
        warnings.warn("Metropolis chain accepted no moves", MixingWarning)
    return out, B, rates


def metropolis_chain(rng: RngState, spec: GibbsSpec, steps: Optional[int] = None,
                     proposal: Optional[ChainConfig] = None, record=None) -> WeightedSampleSet:
    """Metropolis sampler for a continuum Gibbs measure on its grid.

    Target density: free Gaussian path density times exp(log_W).  ``record``
    selects grid columns to store (default: all).  Samples have unit weight.
    """
    if spec.kind != "continuum":
        raise ContractError("metropolis_chain samples continuum measures")
    if spec.drift_mode != "folded" and spec.side == "one-sided":
        raise ContractError("the chain proposes driftless moves; use the folded drift mode")
    cfg = proposal or ChainConfig()
    if steps is not None:
        if steps < 1:
            raise DomainError("steps must be >= 1")
        cfg = replace(cfg, samples=max(1, (steps - cfg.burn) // cfg.thin) if steps > cfg.burn else 1,
                      burn=min(cfg.burn, steps - 1))
    grid = spec.grid()
    cols = np.arange(grid.size) if record is None else np.asarray(record, dtype=np.int64)
    two = spec.side == "two-sided"
    B0 = _initial_paths(spec.a, spec.b, spec.floor(), grid.size, two)
    end_coef = np.zeros(spec.n_curves) if two else spec.drifts()
    end_eps = np.full(spec.n_curves, np.inf)
    h = (spec.A2 - spec.A1) / spec.n_grid
    out, _, rates = _run_chain(rng, B0, spec.ceiling(), spec.floor(), spec.L, end_coef, end_eps,
                               spec.diffusion, h, two, cfg, cols)
    rate_all = [v for v in rates.values() if v is not None]
    diag = {"acceptance": rates, "acceptance_min": min(rate_all) if rate_all else None,
            "thin": cfg.thin, "burn": cfg.burn}
    return WeightedSampleSet(out, np.zeros(out.shape[0]), grid[cols], diagnostics=diag)


def sample_softbarrier_chain(rng: RngState, spec: SoftBarrierSpec, cfg: ChainConfig,
                             n_grid: int = 512, record=None):
    """Metropolis samples of the soft-barrier law on a uniform grid of [A, 0]."""
    grid = np.linspace(spec.A, 0.0, n_grid + 1)
    cols = np.arange(grid.size) if record is None else np.asarray(record, dtype=np.int64)
    B0 = np.full((1, grid.size), spec.a, dtype=float)
    if spec.a + spec.kappa <= 0:
        B0[0, 1:] = 1.0 - spec.kappa
    floor = np.full(grid.size, -spec.kappa)
    ceil = np.full(grid.size, np.inf)
    eps = np.inf if spec.epsilon is None else spec.epsilon
    out, _, rates = _run_chain(rng, B0, ceil, floor, spec.L, [-spec.beta], [eps], spec.diffusion,
                               -spec.A / n_grid, False, cfg, cols)
    return out[:, 0, :], grid[cols], rates


# --------------------------------------------------------------------------
# discrete Glauber coupling for the soft-barrier law


@njit(cache=True)
def _glauber_log_ratio(S, k, new, beta, eps, L, sl, kappa, N, sn):
    K = S.size - 1
    if k == K:
        if eps == np.inf:
            return -beta * (new - S[k]) / sn
        return -beta * (max(new / sn + eps, 0.0) - max(S[k] / sn + eps, 0.0))
    return -(L / N) * (math.exp(-sl * (new / sn + kappa)) - math.exp(-sl * (S[k] / sn + kappa)))


@njit(cache=True)
def _glauber_kernel(S1, S2, par1, par2, L, N, steps, shift, seed):
    """Shared (k, sigma, U) flips; returns the number of ordering violations.

    ``par`` = (beta, eps, kappa).  A violation is any (time, site) where
    S1 < S2, or with ``shift`` >= 0 where S2 < S1 - shift.
    """
    np.random.seed(seed)
    K = S1.size - 1
    sl = math.sqrt(L)
    sn = math.sqrt(N)
    viol = 0
    acc1 = 0
    acc2 = 0
    for _ in range(steps):
        k = 1 + np.random.randint(K)
        sigma = 1 if np.random.random() < 0.5 else -1
        logu = math.log(np.random.random())
        for which in range(2):
            S = S1 if which == 0 else S2
            par = par1 if which == 0 else par2
            new = S[k] + 2 * sigma
            if abs(new - S[k - 1]) != 1:
                continue
            if k < K and abs(S[k + 1] - new) != 1:
                continue
            if _glauber_log_ratio(S, k, new, par[0], par[1], L, sl, par[2], N, sn) >= logu:
                S[k] = new
                if which == 0:
                    acc1 += 1
                else:
                    acc2 += 1
        for j in range(K + 1):
            if S1[j] < S2[j]:
                viol += 1
            elif shift >= 0 and S2[j] < S1[j] - shift:
                viol += 1
    return viol, acc1, acc2


def glauber_case(spec1: SoftBarrierSpec, spec2: SoftBarrierSpec) -> str:
    """Which monotone coupling applies: 'identical', 'start', 'beta' or 'kappa'."""
    d = {name: (getattr(spec1, name), getattr(spec2, name))
         for name in ("beta", "L", "a", "A", "epsilon", "kappa", "diffusion")}
    differing = [n for n, (u, v) in d.items() if u != v]
    if not differing:
        return "identical"
    if len(differing) != 1:
        raise ContractError(f"specs differ in {differing}; exactly one of a, beta, kappa may differ")
    name = differing[0]
    u, v = d[name]
    if name == "a" and u >= v and spec1.epsilon is None:
        return "start"
    if name == "beta" and u <= v and spec1.epsilon is None:
        return "beta"
    if name == "kappa" and u <= v and spec1.epsilon is not None and spec1.epsilon > 0:
        return "kappa"
    raise ContractError(f"difference in {name} ({u} vs {v}) is not one of the monotone cases")


def _srw_start(a_n: int, K: int) -> np.ndarray:
    """Zigzag simple random walk path from a_n of K steps."""
    path = a_n + (np.arange(K + 1) % 2)
    return path.astype(np.int64)


def coupled_glauber_softbarrier(rng: RngState, spec1: SoftBarrierSpec, spec2: SoftBarrierSpec,
                                steps: int, N: int = 100, return_paths: bool = False):
    """Run the two coupled Glauber chains and count ordering violations.

    Walks live on [ceil(A N), 0] with unit steps; chain i uses spec i's weight.
    """
    case = glauber_case(spec1, spec2)
    A_N = math.ceil(spec1.A * N)
    K = -A_N
    if K < 1:
        raise DomainError("need at least one step; increase N")
    sn = math.sqrt(N)
    shift = -1
    if case == "start":
        a1 = math.floor(spec1.a * sn)
        lo = math.floor(spec2.a * sn)
        a2 = lo if (a1 - lo) % 2 == 0 else lo + 1
        S1 = _srw_start(a1, K)
        S2 = S1 - (a1 - a2)
        shift = a1 - a2
    else:
        a_n = math.floor(spec1.a * sn)
        S1 = _srw_start(a_n, K)
        S2 = S1.copy()

    def par(s):
        return np.array([s.beta, np.inf if s.epsilon is None else s.epsilon, s.kappa])

    viol, acc1, acc2 = _glauber_kernel(S1, S2, par(spec1), par(spec2), float(spec1.L), float(N),
                                       int(steps), int(shift), rng.numba_seed())
    res = {"case": case, "violations": int(viol), "steps": int(steps), "N": N,
           "acceptance": [acc1 / steps, acc2 / steps]}
    if return_paths:
        res["paths"] = (S1, S2)
    return res


# --------------------------------------------------------------------------
# resampling invariance of the scaled ensemble


@dataclass
class ResampleConfig:
    n: int = 5
    N: int = 4
    k: int = 1
    window: tuple = (-1.0, 0.0)
    replicas: int = 10_000
    proposals: int = 1000
    alpha: float = 0.5
    gibbs_steps: int = 1
    wrong_floor: bool = False
    level: float = 0.01
    ess_floor: float = ESS_FLOOR

    @property
    def t(self) -> float:
        # smallest t with floor(N t / 2) + 1 = n
        return 2.0 * (self.n - 1) / self.N


def _window_steps(N, window):
    sn = math.sqrt(N)
    s_left = int(round(-window[0] * sn))
    s_right = int(round(-window[1] * sn))
    if abs(-window[0] * sn - s_left) > 1e-9 or abs(-window[1] * sn - s_right) > 1e-9:
        raise DomainError("window endpoints must lie on the 1/sqrt(N) grid")
    if window[1] != 0.0:
        raise DomainError("the one-sided window must end at 0")
    return s_left, s_right


def _resample_replica(rng: RngState, cfg: ResampleConfig, rep: int):
    """(original, redrawn, ess) for one replica; depends only on ``rng.child(rep)``."""
    s_left, _ = _window_steps(cfg.N, cfg.window)
    mid = s_left // 2
    r_rng = rng.child(rep)
    H = build_scaled_ensemble(r_rng, cfg.N, cfg.t, cfg.alpha, n_curves=cfg.k + 1)
    for i in range(1, cfg.k + 2):
        if len(H.values[i - 1]) <= s_left:
            raise DomainError("window exceeds the ensemble's domain")
    # grid ordered left to right: s = s_left, ..., 0
    cur = np.array([[H.at_step(i, s) for s in range(s_left, -1, -1)] for i in range(1, cfg.k + 1)])
    original = cur[0, s_left - mid]
    if cfg.gibbs_steps == 0:
        return original, original, np.inf
    floor = None if cfg.wrong_floor else np.array([H.at_step(cfg.k + 1, s) for s in range(s_left, -1, -1)])
    spec = GibbsSpec("discrete", "one-sided", 1, cfg.k, cfg.window[0], tuple(cur[:, 0]),
                     g=floor, alpha=cfg.alpha, N=cfg.N)
    for _ in range(cfg.gibbs_steps):
        ws = importance_sample_gibbs(r_rng, spec, cfg.proposals)
        pick = r_rng.gen.choice(cfg.proposals, p=ws.weights())
        cur = ws.samples[pick]
    return original, cur[0, s_left - mid], ws.ess


def gibbs_resample_invariance(rng: RngState, config: ResampleConfig, return_samples: bool = False,
                              mapper=map):
    """Original vs Gibbs-redrawn value of curve 1 at the window midpoint.

    Each replica builds a fresh scaled ensemble, then redraws curves 1..k on
    the window by sampling-importance-resampling from log-gamma walk proposals
    weighted by the one-sided RN derivative (floor = curve k+1).  ``mapper``
    must preserve order (builtin ``map`` or an executor's ``map``).
    """
    cfg = config
    if cfg.k < 1 or cfg.k > 2:
        raise DomainError("k must be 1 or 2")
    if cfg.n < cfg.k + 1 or cfg.n > 6:
        raise DomainError("need k + 1 <= n <= 6")
    s_left, _ = _window_steps(cfg.N, cfg.window)
    if s_left % 2:
        raise DomainError("the window needs an even number of steps to have a grid midpoint")
    mid = s_left // 2
    rows = np.array(list(mapper(partial(_resample_replica, rng, cfg), range(cfg.replicas))), dtype=float)
    original, redrawn, ess_vals = rows[:, 0], rows[:, 1], rows[:, 2]
    med_ess = float(np.median(ess_vals))
    rep = ks_two_sample(original, redrawn, level=cfg.level)
    if med_ess < cfg.ess_floor:
        rep.verdict = "inconclusive"
    out = {"ks": rep, "median_ess": med_ess, "midpoint": -mid / math.sqrt(cfg.N)}
    if return_samples:
        out["original"] = original
        out["redrawn"] = redrawn
    return out
