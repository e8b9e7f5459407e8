"""Seeded random streams and the inverse-gamma polymer environments.

Weights are stored as natural logs from the moment they are drawn.  Indices
follow the lattice convention (i, j) with 1-based coordinates; the arrays are
0-based, so site (i, j) lives at ``log_w[i - 1, j - 1]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .stats import DomainError

LN2 = math.log(2.0)
_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass
class RngState:
    """A Philox counter-based stream keyed by ``(seed, stream_id)``.

    Each worker owns its state; do not share one instance across threads.
    """

    seed: int
    stream_id: int = 0
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        self.stream_id = int(self.stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self.gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RngState":
        """Independent stream for replica ``index`` derived from this one."""
        sid = _splitmix64(_splitmix64(self.stream_id) ^ (int(index) + 1))
        return RngState(self.seed, sid)

    def numba_seed(self) -> int:
        """A 32-bit seed for numba's internal generator, drawn from this stream."""
        return int(self.gen.integers(0, 2**32 - 1))


# --------------------------------------------------------------------------
# variates


def sample_log_gamma(rng: RngState, beta: float, size=None):
    """log of Gamma(beta) variates.

    For beta < 1 the boost G(beta) = G(beta + 1) * U^(1/beta) is applied in
    log space so tiny draws do not underflow.
    """
    if not beta > 0:
        raise DomainError(f"gamma shape must be positive, got {beta}")
    g = rng.gen
    if beta >= 1.0:
        return np.log(g.standard_gamma(beta, size=size))
    base = np.log(g.standard_gamma(beta + 1.0, size=size))
    return base + np.log(g.random(size=size)) / beta


def sample_log_inverse_gamma(rng: RngState, beta: float, size=None):
    return -sample_log_gamma(rng, beta, size)


def sample_inverse_gamma(rng: RngState, beta: float, size=None):
    """Draws with density x^(-beta-1) e^(-1/x) / Gamma(beta) on x > 0."""
    return np.exp(sample_log_inverse_gamma(rng, beta, size))


# --------------------------------------------------------------------------
# environments


@dataclass(frozen=True)
class EnvHalfSpace:
    """Octant environment {(i, j): 1 <= j <= i <= n_max}; entries above the diagonal are NaN."""

    n_max: int
    theta: float
    alpha: float
    log_w: np.ndarray
    seed: int | None = None
    stream_id: int | None = None

    def weight(self, i: int, j: int) -> float:
        if not (1 <= j <= i <= self.n_max):
            raise DomainError(f"site ({i}, {j}) is outside the octant of size {self.n_max}")
        return float(self.log_w[i - 1, j - 1])

    def sites(self):
        for i in range(1, self.n_max + 1):
            for j in range(1, i + 1):
                yield i, j


@dataclass(frozen=True)
class EnvFullPerturbed:
    """Quadrant environment whose first row i = 1 carries the boundary parameter."""

    m_max: int
    n_max: int
    theta: float
    alpha: float
    log_w: np.ndarray
    seed: int | None = None
    stream_id: int | None = None

    def weight(self, i: int, j: int) -> float:
        if not (1 <= i <= self.m_max and 1 <= j <= self.n_max):
            raise DomainError(f"site ({i}, {j}) is outside the {self.m_max}x{self.n_max} lattice")
        return float(self.log_w[i - 1, j - 1])

    def sites(self):
        for i in range(1, self.m_max + 1):
            for j in range(1, self.n_max + 1):
                yield i, j


def _check_params(theta, alpha):
    if not theta > 0:
        raise DomainError(f"theta must be positive, got {theta}")
    if not alpha + theta > 0:
        raise DomainError(f"need alpha + theta > 0, got alpha={alpha}, theta={theta}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def build_half_env(rng: RngState, n_max: int, theta: float, alpha: float) -> EnvHalfSpace:
    if n_max < 1:
        raise DomainError("n_max must be >= 1")
    _check_params(theta, alpha)
    log_w = np.full((n_max, n_max), np.nan)
    diag = sample_log_inverse_gamma(rng, alpha + theta, size=n_max)
    rows, cols = np.tril_indices(n_max, k=-1)
    off = sample_log_inverse_gamma(rng, 2.0 * theta, size=rows.size)
    log_w[np.arange(n_max), np.arange(n_max)] = diag
    log_w[rows, cols] = off
    return EnvHalfSpace(n_max, float(theta), float(alpha), _frozen(log_w), rng.seed, rng.stream_id)


def build_full_perturbed_env(rng: RngState, m_max: int, n_max: int, theta: float,
                             alpha: float) -> EnvFullPerturbed:
    if m_max < 1 or n_max < 1:
        raise DomainError("lattice dimensions must be >= 1")
    _check_params(theta, alpha)
    log_w = np.empty((m_max, n_max))
    log_w[0] = sample_log_inverse_gamma(rng, alpha + theta, size=n_max)
    if m_max > 1:
        log_w[1:] = sample_log_inverse_gamma(rng, 2.0 * theta, size=(m_max - 1, n_max))
    return EnvFullPerturbed(m_max, n_max, float(theta), float(alpha), _frozen(log_w),
                            rng.seed, rng.stream_id)


def env_from_log_weights(log_w, theta: float = 1.0, alpha: float = 0.0):
    """Wrap a hand-made weight array (square lower-triangular -> half space, else full)."""
    a = np.array(log_w, dtype=float)
    if a.ndim != 2:
        raise DomainError("log weights must be a 2-d array")
    return EnvFullPerturbed(a.shape[0], a.shape[1], theta, alpha, _frozen(a))


def half_env_from_log_weights(log_w, theta: float = 1.0, alpha: float = 0.0) -> EnvHalfSpace:
    a = np.array(log_w, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise DomainError("half-space weights must be square")
    a[np.triu_indices(n, k=1)] = np.nan
    return EnvHalfSpace(n, theta, alpha, _frozen(a))


class SymmetrizedWeights:
    """Full-quadrant lookup of the symmetrised weights, log scale.

    Diagonal sites carry log(w) - ln 2; off-diagonal sites reflect into the octant.
    """

    def __init__(self, env: EnvHalfSpace):
        n = env.n_max
        lw = np.array(env.log_w)
        low = np.tril(np.nan_to_num(lw, nan=0.0), k=-1)
        full = low + low.T
        full[np.arange(n), np.arange(n)] = np.diag(lw) - LN2
        self.n_max = n
        self.log_w = _frozen(full)

    def __call__(self, i: int, j: int) -> float:
        if not (1 <= i <= self.n_max and 1 <= j <= self.n_max):
            raise DomainError(f"site ({i}, {j}) is outside the {self.n_max}x{self.n_max} quadrant")
        return float(self.log_w[i - 1, j - 1])


def symmetrize(env: EnvHalfSpace) -> SymmetrizedWeights:
    return SymmetrizedWeights(env)


# --------------------------------------------------------------------------
# serialisation


def write_env_csv(env, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "log_w"])
        for i, j in env.sites():
            w.writerow([i, j, repr(float(env.log_w[i - 1, j - 1]))])
    return path


def read_env_csv(path, theta: float = 1.0, alpha: float = 0.0):
    """Inverse of :func:`write_env_csv`; octant files give an EnvHalfSpace."""
    rows = []
    with Path(path).open() as fh:
        r = csv.DictReader(fh)
        if r.fieldnames != ["i", "j", "log_w"]:
            raise ValueError(f"{path}: expected header i,j,log_w, got {r.fieldnames}")
        for row in r:
            rows.append((int(row["i"]), int(row["j"]), float(row["log_w"])))
    m = max(i for i, _, _ in rows)
    n = max(j for _, j, _ in rows)
    octant = all(j <= i for i, j, _ in rows)
    if octant and m == n and len(rows) == n * (n + 1) // 2:
        a = np.full((n, n), np.nan)
        for i, j, v in rows:
            a[i - 1, j - 1] = v
        return EnvHalfSpace(n, theta, alpha, _frozen(a))
    a = np.full((m, n), np.nan)
    for i, j, v in rows:
        a[i - 1, j - 1] = v
    return EnvFullPerturbed(m, n, theta, alpha, _frozen(a))


def _cache_name(kind, seed, stream_id, dims, theta, alpha):
    dims_s = "x".join(str(d) for d in dims)
    return f"{kind}_s{seed}_st{stream_id}_n{dims_s}_th{theta!r}_al{alpha!r}.npz"


def cached_half_env(cache_dir, seed: int, stream_id: int, n_max: int, theta: float,
                    alpha: float) -> EnvHalfSpace:
    """Load the environment for this key from ``cache_dir`` or build and store it."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    f = cache_dir / _cache_name("half", seed, stream_id, (n_max,), theta, alpha)
    if f.exists():
        with np.load(f) as z:
            return EnvHalfSpace(n_max, theta, alpha, _frozen(np.array(z["log_w"])), seed, stream_id)
    env = build_half_env(RngState(seed, stream_id), n_max, theta, alpha)
    np.savez(f, log_w=env.log_w)
    return env


def cached_full_env(cache_dir, seed: int, stream_id: int, m_max: int, n_max: int, theta: float,
                    alpha: float) -> EnvFullPerturbed:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    f = cache_dir / _cache_name("full", seed, stream_id, (m_max, n_max), theta, alpha)
    if f.exists():
        with np.load(f) as z:
            return EnvFullPerturbed(m_max, n_max, theta, alpha, _frozen(np.array(z["log_w"])),
                                    seed, stream_id)
    env = build_full_perturbed_env(RngState(seed, stream_id), m_max, n_max, theta, alpha)
    np.savez(f, log_w=env.log_w)
    return env
