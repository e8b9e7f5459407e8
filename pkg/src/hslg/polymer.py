"""Partition functions, the line ensemble built from them, and exact identity checks.

Every partition value stays in natural-log scale.  Lattice sites use 1-based
(i, j) coordinates; a path step increases i or j by one.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit

from .environment import (
    LN2,
    EnvFullPerturbed,
    EnvHalfSpace,
    RngState,
    build_full_perturbed_env,
    build_half_env,
    symmetrize,
)
from .stats import DomainError, log_sum_exp

MAX_SYM_PATHS = 3


class UnsupportedError(NotImplementedError):
    """Requested a configuration outside what the implementation covers."""


def _lae(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


# --------------------------------------------------------------------------
# single-path partition functions


def log_Z_half_table(env: EnvHalfSpace) -> np.ndarray:
    """log Z(i, j) for every octant site; -inf above the diagonal."""
    n = env.n_max
    lw = env.log_w
    z = np.full((n, n), -np.inf)
    for i in range(n):
        for j in range(i + 1):
            if i == 0 and j == 0:
                z[0, 0] = lw[0, 0]
                continue
            left = z[i - 1, j] if i > 0 else -math.inf
            down = z[i, j - 1] if j > 0 else -math.inf
            z[i, j] = lw[i, j] + _lae(left, down)
    return z


def log_Z_half(env: EnvHalfSpace, m: int, n: int) -> float:
    """log of the octant point-to-point partition function from (1, 1) to (m, n)."""
    if not (1 <= n <= m <= env.n_max):
        raise DomainError(f"({m}, {n}) is not an octant site of a lattice of size {env.n_max}")
    return float(log_Z_half_table(env)[m - 1, n - 1])


def _rect_table(lw: np.ndarray) -> np.ndarray:
    """Forward log partition table over a full rectangle starting at its corner."""
    mm, nn = lw.shape
    z = np.full((mm, nn), -np.inf)
    for i in range(mm):
        for j in range(nn):
            if i == 0 and j == 0:
                z[0, 0] = lw[0, 0]
                continue
            left = z[i - 1, j] if i > 0 else -math.inf
            down = z[i, j - 1] if j > 0 else -math.inf
            z[i, j] = lw[i, j] + _lae(left, down)
    return z


def log_Z_full_perturbed(env: EnvFullPerturbed, m: int, n: int) -> float:
    """log of the quadrant partition function (1, 1) -> (m, n)."""
    if not (1 <= m <= env.m_max and 1 <= n <= env.n_max):
        raise DomainError(f"({m}, {n}) is outside the {env.m_max}x{env.n_max} lattice")
    return float(_rect_table(np.asarray(env.log_w)[:m, :n])[m - 1, n - 1])


def log_Z_full_from(env: EnvFullPerturbed, start, end) -> float:
    """log partition function over up-right paths start -> end, both endpoint weights included."""
    (i0, j0), (i1, j1) = start, end
    if not (1 <= i0 <= i1 <= env.m_max and 1 <= j0 <= j1 <= env.n_max):
        raise DomainError(f"need start <= end inside the lattice, got {start} -> {end}")
    sub = np.asarray(env.log_w)[i0 - 1:i1, j0 - 1:j1]
    return float(_rect_table(sub)[-1, -1])


def verify_row_decomposition(env: EnvFullPerturbed, m: int, n: int) -> float:
    """|log Z_full(m,n) - log sum_k prod_{j<=k} W_{1,j} Z((2,k)->(m,n))|.

    Splits paths by the column k at which they leave the first row.  With m = 1
    there is no bulk part and the discrepancy is 0 by convention.
    """
    if not (1 <= m <= env.m_max and 1 <= n <= env.n_max):
        raise DomainError(f"({m}, {n}) is outside the {env.m_max}x{env.n_max} lattice")
    if m == 1:
        return 0.0
    row = np.cumsum(np.asarray(env.log_w)[0, :n])
    terms = [row[k - 1] + log_Z_full_from(env, (2, k), (m, n)) for k in range(1, n + 1)]
    return abs(log_Z_full_perturbed(env, m, n) - log_sum_exp(terms))


# --------------------------------------------------------------------------
# multi-path symmetrised partition functions


@lru_cache(maxsize=None)
def _height_states(r: int, h_max: int):
    """Strictly decreasing r-tuples in [1, h_max], plus the start and readout indices."""
    combos = [tuple(sorted(c, reverse=True)) for c in itertools.combinations(range(1, h_max + 1), r)]
    states = np.array(combos, dtype=np.int64).reshape(len(combos), r)
    lookup = {s: i for i, s in enumerate(combos)}
    start_index = lookup[tuple(range(r, 0, -1))]
    final_index = np.full(h_max, -1, dtype=np.int64)
    for q in range(r, h_max + 1):
        final_index[q - 1] = lookup[tuple(range(q, q - r, -1))]
    states.setflags(write=False)
    final_index.setflags(write=False)
    return states, start_index, final_index


@njit(cache=True)
def _sym_transfer(lw_sym, states, start_index, final_index):
    """Column transfer for r vertex-disjoint paths.

    lw_sym[c, h-1] is log W at column c+1, height h.  A state lists the exit
    heights e_1 > ... > e_r of the paths from a column.  Entering at e and
    leaving at e' the k-th path covers heights e_k..e'_k, so the move needs
    e'_k >= e_k, and e'_{k+1} < e_k keeps neighbouring paths off each other.
    Returns out[c, q-1]: the value of state (q, q-1, ..., q-r+1) after column c+1.
    """
    n_cols, h_max = lw_sym.shape
    n_states, r = states.shape
    v = np.full(n_states, -np.inf)
    v[start_index] = 0.0
    out = np.full((n_cols, h_max), -np.inf)
    prefix = np.zeros(h_max + 1)
    for c in range(n_cols):
        for h in range(h_max):
            prefix[h + 1] = prefix[h] + lw_sym[c, h]
        nv = np.full(n_states, -np.inf)
        for a in range(n_states):
            va = v[a]
            if va == -np.inf:
                continue
            for b in range(n_states):
                ok = True
                for k in range(r):
                    if states[b, k] < states[a, k]:
                        ok = False
                        break
                    if k + 1 < r and states[b, k + 1] >= states[a, k]:
                        ok = False
                        break
                if not ok:
                    continue
                w = 0.0
                for k in range(r):
                    w += prefix[states[b, k]] - prefix[states[a, k] - 1]
                x = va + w
                y = nv[b]
                if y == -np.inf:
                    nv[b] = x
                elif x > y:
                    nv[b] = x + np.log1p(np.exp(y - x))
                else:
                    nv[b] = y + np.log1p(np.exp(x - y))
        v = nv
        for q in range(h_max):
            idx = final_index[q]
            if idx >= 0:
                out[c, q] = v[idx]
    return out


def log_Z_sym_table(sym_log_w: np.ndarray, r: int, m_max: int | None = None,
                    h_max: int | None = None) -> np.ndarray:
    """log Z_sym^(r)(m, n) for all 1 <= m <= m_max, 1 <= n <= h_max (entries with n < r are -inf).

    ``sym_log_w`` is a full-quadrant table, ``sym_log_w[i-1, j-1]`` for site (i, j).
    """
    a = np.asarray(sym_log_w, dtype=float)
    m_max = a.shape[0] if m_max is None else m_max
    h_max = a.shape[1] if h_max is None else h_max
    if r == 0:
        return np.zeros((m_max, h_max))
    if r < 0:
        raise DomainError("number of paths must be nonnegative")
    if r > MAX_SYM_PATHS:
        raise UnsupportedError(f"at most {MAX_SYM_PATHS} paths are supported, got {r}")
    if r > h_max:
        return np.full((m_max, h_max), -np.inf)
    states, start_index, final_index = _height_states(r, h_max)
    lw = np.ascontiguousarray(a[:m_max, :h_max])
    return _sym_transfer(lw, states, start_index, final_index)


def log_Z_sym(env_sym, r: int, m: int, n: int) -> float:
    """log of the r-path symmetrised partition function to (m, n).

    ``env_sym`` is the accessor returned by :func:`hslg.environment.symmetrize`
    or a plain full-quadrant log-weight array.
    """
    lw = np.asarray(getattr(env_sym, "log_w", env_sym), dtype=float)
    if r == 0:
        return 0.0
    if r > n:
        raise DomainError(f"need r <= n, got r={r}, n={n}")
    if r > MAX_SYM_PATHS:
        raise UnsupportedError(f"at most {MAX_SYM_PATHS} paths are supported, got {r}")
    if not (1 <= m <= lw.shape[0] and 1 <= n <= lw.shape[1]):
        raise DomainError(f"({m}, {n}) is outside the {lw.shape[0]}x{lw.shape[1]} quadrant")
    return float(log_Z_sym_table(lw, r, m_max=m, h_max=n)[m - 1, n - 1])


def sym_identity_discrepancy(env: EnvHalfSpace) -> float:
    """max over the octant of |ln 2 + log Z_sym^(1) - log Z|."""
    z = log_Z_half_table(env)
    zs = log_Z_sym_table(symmetrize(env).log_w, 1)
    rows, cols = np.tril_indices(env.n_max)
    return float(np.max(np.abs(LN2 + zs[rows, cols] - z[rows, cols])))


def brute_force_agreement(rng: RngState, envs: int = 50, max_steps: int = 7, theta: float = 2.0,
                          alpha: float = 0.5) -> dict:
    """Largest gap between each DP and exhaustive enumeration over lattices of
    at most ``max_steps`` steps: octant, quadrant (from two starts) and the
    r = 1, 2, 3 symmetrised multi-path partition functions."""
    from .enumeration import brute_log_Z_full, brute_log_Z_half, brute_log_Z_multi

    size = max_steps + 1
    errs = {"half": 0.0, "full": 0.0, "sym1": 0.0, "sym2": 0.0, "sym3": 0.0}
    counts = dict.fromkeys(errs, 0)
    pts = [(m, n) for m in range(1, size + 1) for n in range(1, size + 1) if m + n - 2 <= max_steps]

    def note(key, a, b):
        # both -inf means no admissible path family on either side
        gap = 0.0 if (a == b == -math.inf) else abs(float(a) - float(b))
        errs[key] = max(errs[key], gap if gap == gap else math.inf)
        counts[key] += 1

    for e in range(envs):
        r_rng = rng.child(e)
        half = build_half_env(r_rng, size, theta, alpha)
        full = build_full_perturbed_env(r_rng, size, size, theta, alpha)
        zh = log_Z_half_table(half)
        lw_full = np.asarray(full.log_w)
        sw = symmetrize(half).log_w
        sym_tables = {r: log_Z_sym_table(sw, r) for r in (1, 2, 3)}
        for m, n in pts:
            if n <= m:
                note("half", zh[m - 1, n - 1], brute_log_Z_half(half.log_w, m, n))
            note("full", log_Z_full_perturbed(full, m, n), brute_log_Z_full(lw_full, (1, 1), (m, n)))
            if m >= 2:
                note("full", log_Z_full_from(full, (2, 1), (m, n)), brute_log_Z_full(lw_full, (2, 1), (m, n)))
            for r in (1, 2, 3):
                if n >= r:
                    note(f"sym{r}", sym_tables[r][m - 1, n - 1], brute_log_Z_multi(sw, r, m, n))
    return {"max_error": {k: float(v) for k, v in errs.items()}, "comparisons": counts,
            "max_error_all": float(max(errs.values()))}


# --------------------------------------------------------------------------
# line ensemble


@dataclass
class LineEnsemble:
    """Curves L_i(j) for i = 1..n_curves, j = 1..2n-2i+2; ``values[i-1]`` holds curve i."""

    n: int
    values: list
    theta: float | None = None
    alpha: float | None = None

    @property
    def n_curves(self) -> int:
        return len(self.values)

    def __call__(self, i: int, j: int) -> float:
        if not (1 <= i <= self.n_curves):
            raise DomainError(f"curve {i} not stored (have 1..{self.n_curves})")
        if not (1 <= j <= 2 * self.n - 2 * i + 2):
            raise DomainError(f"index {j} outside 1..{2 * self.n - 2 * i + 2} for curve {i}")
        return float(self.values[i - 1][j - 1])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "value"])
            for i, row in enumerate(self.values, start=1):
                for j, v in enumerate(row, start=1):
                    w.writerow([i, j, repr(float(v))])
        return path


def ensemble_index(n: int, j: int):
    """(p, q) lattice point behind entry j of a size-n ensemble."""
    return n + j // 2, n - (j + 1) // 2 + 1


def hslg_line_ensemble(env: EnvHalfSpace, n: int, n_curves: int | None = None) -> LineEnsemble:
    """L_i(j) = ln 2 + log Z_sym^(i)(p, q) - log Z_sym^(i-1)(p, q).

    Only the top ``min(n, 3)`` curves are available.  The largest p queried is
    2n, so the environment needs n_max >= 2n.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if env.n_max < 2 * n:
        raise DomainError(f"an ensemble of size {n} needs n_max >= {2 * n}, have {env.n_max}")
    if n_curves is None:
        n_curves = min(n, MAX_SYM_PATHS)
    if n_curves > min(n, MAX_SYM_PATHS):
        raise UnsupportedError(f"at most {min(n, MAX_SYM_PATHS)} curves available")
    sym = symmetrize(env).log_w
    tables = [log_Z_sym_table(sym, r, m_max=2 * n, h_max=n) for r in range(n_curves + 1)]
    values = []
    for i in range(1, n_curves + 1):
        row = np.empty(2 * n - 2 * i + 2)
        for j in range(1, 2 * n - 2 * i + 3):
            p, q = ensemble_index(n, j)
            row[j - 1] = LN2 + tables[i][p - 1, q - 1] - tables[i - 1][p - 1, q - 1]
        if not np.all(np.isfinite(row)):
            raise DomainError("line ensemble produced a non-finite entry")
        values.append(row)
    return LineEnsemble(n, values, env.theta, env.alpha)


# --------------------------------------------------------------------------
# scaling


def scaled_size(N: int, t: float) -> int:
    return int(math.floor(N * t / 2)) + 1


def scaled_theta(N: int) -> float:
    return 0.5 + math.sqrt(N)


@dataclass
class ScaledEnsemble:
    """Curves H_i on the grid x = -s/sqrt(N), s = 0, 1, ...; ``values[i-1][s]``."""

    N: int
    t: float
    values: list
    sqrt_n: float = field(init=False)

    def __post_init__(self):
        self.sqrt_n = math.sqrt(self.N)

    @property
    def n_curves(self) -> int:
        return len(self.values)

    def grid(self, i: int) -> np.ndarray:
        return -np.arange(len(self.values[i - 1])) / self.sqrt_n

    def left_end(self, i: int) -> float:
        return -(len(self.values[i - 1]) - 1) / self.sqrt_n

    def at_step(self, i: int, s: int) -> float:
        """Value of curve i at grid point x = -s/sqrt(N)."""
        return float(self.values[i - 1][s])

    def __call__(self, i: int, x):
        """Piecewise-linear evaluation at x in [left_end(i), 0]."""
        row = self.values[i - 1]
        x_arr = np.asarray(x, dtype=float)
        u = -x_arr * self.sqrt_n
        if np.any(u < -1e-12) or np.any(u > len(row) - 1 + 1e-12):
            raise DomainError(f"x outside [{self.left_end(i)}, 0] for curve {i}")
        out = np.interp(u, np.arange(len(row)), row)
        return float(out) if out.ndim == 0 else out

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "x", "value"])
            for i in range(1, self.n_curves + 1):
                for x, v in zip(self.grid(i), self.values[i - 1]):
                    w.writerow([i, repr(float(x)), repr(float(v))])
        return path


def scaled_ensemble(L: LineEnsemble, N: int, t: float) -> ScaledEnsemble:
    """H_i(x) = L_i(-x sqrt(N) + 1) + (2 floor(Nt/2) + 2 + [x sqrt(N) odd]) / 2 * log N.

    The centering is the same for every curve.  A curve-dependent shift
    would put a factor other than 1/sqrt(N) in front of the inter-curve
    interaction of the discrete Gibbs weight.
    """
    if N < 1 or t <= 0:
        raise DomainError("need N >= 1 and t > 0")
    half = int(math.floor(N * t / 2))
    if L.n != half + 1:
        raise DomainError(f"ensemble size {L.n} does not match floor(N t / 2) + 1 = {half + 1}")
    if L.theta is not None and abs(L.theta - scaled_theta(N)) > 1e-12:
        raise DomainError(f"theta {L.theta} does not match 1/2 + sqrt(N) = {scaled_theta(N)}")
    log_n = math.log(N)
    values = []
    for i in range(1, L.n_curves + 1):
        s = np.arange(len(L.values[i - 1]))
        centering = (2 * half + 2 + (s % 2)) / 2.0 * log_n
        values.append(np.asarray(L.values[i - 1]) + centering)
    return ScaledEnsemble(N, t, values)


def build_scaled_ensemble(rng: RngState, N: int, t: float, alpha: float,
                          n_curves: int | None = None) -> ScaledEnsemble:
    """Fresh environment at theta = 1/2 + sqrt(N) and its scaled ensemble."""
    n = scaled_size(N, t)
    env = build_half_env(rng, 2 * n, scaled_theta(N), alpha)
    return scaled_ensemble(hslg_line_ensemble(env, n, n_curves), N, t)


def rescale_123(curve, t: float):
    """x -> (curve(x t^(2/3)) + t/24) / t^(1/3)."""
    c13 = t ** (1.0 / 3.0)
    c23 = c13 * c13

    def rescaled(x):
        return (curve(np.asarray(x) * c23) + t / 24.0) / c13

    return rescaled


def unrescale_123(curve, t: float):
    """Inverse of :func:`rescale_123`."""
    c13 = t ** (1.0 / 3.0)
    c23 = c13 * c13

    def original(y):
        return curve(np.asarray(y) / c23) * c13 - t / 24.0

    return original


# --------------------------------------------------------------------------
# two-sided distributional identity


def bw_right_side(env: EnvHalfSpace, m: int, n: int) -> float:
    """log sum_{r=m}^{m+n-1} Z(r, m+n-r) on a half-space environment."""
    if m < n:
        raise DomainError(f"need m >= n, got m={m}, n={n}")
    if env.n_max < m + n - 1:
        raise DomainError(f"need n_max >= {m + n - 1}")
    z = log_Z_half_table(env)
    return log_sum_exp([z[r - 1, m + n - r - 1] for r in range(m, m + n)])


def sample_bw_identity_pair(rng: RngState, theta: float, alpha: float, m: int, n: int):
    """(log Z_full(m, n), log sum_r Z(r, m+n-r)) on independent environments.

    The two coordinates share a law but not a realisation.
    """
    if m < n:
        raise DomainError(f"need m >= n, got m={m}, n={n}")
    full = build_full_perturbed_env(rng, m, n, theta, alpha)
    half = build_half_env(rng, m + n - 1, theta, alpha)
    return log_Z_full_perturbed(full, m, n), bw_right_side(half, m, n)


def identity_record(check: str, params: dict, max_discrepancy: float, tol: float) -> dict:
    return {
        "check": check,
        "params": params,
        "max_discrepancy": float(max_discrepancy),
        "verdict": "pass" if max_discrepancy < tol else "fail",
    }


def write_json(record, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path
