"""Exhaustive up-right path enumeration.

Slow by design.  This is the reference that every partition-function recursion
is tested against, so it shares no code with :mod:`hslg.polymer`.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def up_right_paths(start, end, allowed=None):
    """All up-right lattice paths from ``start`` to ``end`` as tuples of sites.

    A step increases either coordinate by one.  ``allowed(i, j)`` restricts
    the sites a path may visit.
    """
    (i0, j0), (i1, j1) = start, end
    if i1 < i0 or j1 < j0:
        return []
    di, dj = i1 - i0, j1 - j0
    out = []
    for ups in itertools.combinations(range(di + dj), di):
        ups = set(ups)
        i, j = i0, j0
        path = [(i, j)]
        for step in range(di + dj):
            if step in ups:
                i += 1
            else:
                j += 1
            path.append((i, j))
        if allowed is None or all(allowed(a, b) for a, b in path):
            out.append(tuple(path))
    return out


def _lse(values):
    if not values:
        return -math.inf
    m = max(values)
    if m == -math.inf:
        return m
    return m + math.log(sum(math.exp(v - m) for v in values))


def _path_log_weight(path, log_w):
    return sum(float(log_w(i, j)) for i, j in path)


def brute_log_Z(log_w, start, end, allowed=None) -> float:
    """log of the sum over enumerated paths of the product of weights."""
    paths = up_right_paths(start, end, allowed)
    return _lse([_path_log_weight(p, log_w) for p in paths])


def brute_log_Z_half(log_w_array, m, n) -> float:
    """Octant polymer from (1, 1) to (m, n); ``log_w_array[i-1, j-1]`` for j <= i."""
    a = np.asarray(log_w_array)
    return brute_log_Z(lambda i, j: a[i - 1, j - 1], (1, 1), (m, n), allowed=lambda i, j: j <= i)


def brute_log_Z_full(log_w_array, start, end) -> float:
    a = np.asarray(log_w_array)
    return brute_log_Z(lambda i, j: a[i - 1, j - 1], start, end)


def count_paths(start, end, allowed=None) -> int:
    return len(up_right_paths(start, end, allowed))


def brute_log_Z_multi(log_w_array, r, m, n) -> float:
    """r vertex-disjoint paths from (1,r),...,(1,1) to (m,n),...,(m,n-r+1).

    ``log_w_array`` is a full-quadrant table; each site on the union of paths
    contributes its weight once.
    """
    a = np.asarray(log_w_array)
    if r == 0:
        return 0.0
    families = [up_right_paths((1, r - k), (m, n - k)) for k in range(r)]
    terms = []
    for combo in itertools.product(*families):
        sites = [s for p in combo for s in p]
        if len(set(sites)) != len(sites):
            continue
        terms.append(sum(float(a[i - 1, j - 1]) for i, j in sites))
    return _lse(terms)
