"""Discrete optimal transport between equal-size point sets.

The linear assignment solver is a shortest-augmenting-path method with
row and column potentials (the Jonker-Volgenant family).  The potentials
certify optimality: every reduced cost is nonnegative and the chosen
entries have zero reduced cost.  Among all optimal permutations the
lexicographically smallest one is returned.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .geometry import LatticeCloud


class CertificateError(ArithmeticError):
    """Dual potentials failed the complementary slackness check."""


@dataclass(frozen=True)
class AssignmentResult:
    """Optimal permutation with its total and normalized cost.

    ``sigma[i]`` is the zero-based column assigned to row ``i``.
    """

    sigma: np.ndarray
    total: float
    row_potential: np.ndarray
    col_potential: np.ndarray

    @property
    def normalized(self) -> float:
        return self.total / len(self.sigma)

    @property
    def sigma_one_based(self) -> tuple[int, ...]:
        return tuple(int(s) + 1 for s in self.sigma)


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform probability measure on ``N`` points (repetitions allowed)."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, float)
        if pts.ndim == 1:
            pts = pts[:, None]
        object.__setattr__(self, "points", pts)

    @property
    def N(self) -> int:
        return self.points.shape[0]

    def atoms(self, tol: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """Distinct support points and their masses."""
        pts, inv = np.unique(self.points, axis=0, return_inverse=True)
        mass = np.bincount(inv.ravel(), minlength=len(pts)) / self.N
        return pts, mass


def _shortest_augmenting_path(c: np.ndarray):
    n = c.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row (1-based) holding column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    sigma = np.empty(n, dtype=np.int64)
    sigma[p[1:] - 1] = np.arange(n)
    return sigma, u[1:], v[1:]


def _has_perfect_matching(adj: np.ndarray) -> bool:
    if adj.shape[0] == 0:
        return True
    m = maximum_bipartite_matching(csr_matrix(adj.astype(np.int8)), perm_type="column")
    return bool(np.all(m >= 0))


def _lexicographic_optimum(eq: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Smallest perfect matching of the equality graph in lexicographic order."""
    n = eq.shape[0]
    if eq.sum() == n:
        return sigma
    out = np.empty(n, dtype=np.int64)
    free_cols = np.ones(n, dtype=bool)
    for i in range(n):
        for j in np.flatnonzero(eq[i] & free_cols):
            free_cols[j] = False
            rest = eq[i + 1:][:, free_cols]
            if _has_perfect_matching(rest):
                out[i] = j
                break
            free_cols[j] = True
        else:  # pragma: no cover - the solver's matching always survives
            raise CertificateError("equality graph lost its perfect matching")
    return out


def min_cost_assignment(c, tol: float | None = None) -> AssignmentResult:
    """Globally optimal assignment with lexicographic tie-break.

    Parameters
    ----------
    c : array_like, shape (N, N)
        Finite costs.
    tol : float, optional
        Reduced-cost tolerance defining ties and the certificate check.
        Defaults to ``1e-10 * max(1, max|c|)``.
    """
    c = np.atleast_2d(np.asarray(c, float))
    if c.shape[0] != c.shape[1]:
        raise ValueError("cost matrix must be square")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost entries must be finite")
    scale = max(1.0, float(np.max(np.abs(c))))
    tol = 1e-10 * scale if tol is None else tol
    sigma, u, v = _shortest_augmenting_path(c)
    red = c - u[:, None] - v[None, :]
    n = c.shape[0]
    if red.min() < -tol or np.max(np.abs(red[np.arange(n), sigma])) > tol:
        raise CertificateError("complementary slackness violated")
    sigma = _lexicographic_optimum(red <= tol, sigma)
    total = float(np.sum(c[np.arange(n), sigma]))
    return AssignmentResult(sigma, total, u, v)


def brute_force_assignment(c) -> AssignmentResult:
    """Exhaustive search over permutations (``N <= 8``); first optimum in
    lexicographic order wins ties."""
    import itertools

    c = np.asarray(c, float)
    n = c.shape[0]
    best, best_s = np.inf, None
    rows = np.arange(n)
    for s in itertools.permutations(range(n)):
        t = float(np.sum(c[rows, list(s)]))
        if t < best - 1e-12 * max(1.0, abs(best) if np.isfinite(best) else 1.0):
            best, best_s = t, s
    return AssignmentResult(np.array(best_s), best, np.zeros(n), np.zeros(n))


def kantorovich_lp(c) -> tuple[float, np.ndarray]:
    """Minimize ``sum c_ij G_ij`` over couplings with uniform ``1/N`` marginals."""
    c = np.atleast_2d(np.asarray(c, float))
    n = c.shape[0]
    A_eq = np.zeros((2 * n, n * n))
    for i in range(n):
        A_eq[i, i * n:(i + 1) * n] = 1.0
        A_eq[n + i, i::n] = 1.0
    b_eq = np.full(2 * n, 1.0 / n)
    res = linprog(c.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise ArithmeticError(f"LP failed: {res.message}")
    G = res.x.reshape(n, n)
    return float(np.sum(c * G)), G


def _points(a) -> np.ndarray:
    if isinstance(a, EmpiricalMeasure):
        return a.points
    pts = np.asarray(a, float)
    return pts[:, None] if pts.ndim == 1 else pts


def wasserstein1(a, b) -> float:
    """``min_sigma (1/N) sum |x_i - y_sigma(i)|`` between equal-size point sets."""
    x, y = _points(a), _points(b)
    if x.shape[0] != y.shape[0]:
        raise ValueError("empirical measures must have the same number of points")
    d = np.sqrt(np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1))
    return min_cost_assignment(d).normalized


def semidiscrete_cost(samples, cloud: LatticeCloud, weight: Callable | None = None) -> float:
    """Normalized optimal cost of ``-x_i . p_j / k + weight(x_i)``.

    The lattice cloud stands in for the uniform measure on ``P``, which
    leaves a bias of order ``1/k``.
    """
    x = _points(samples)
    if x.shape[0] != cloud.N:
        raise ValueError(f"need {cloud.N} samples, got {x.shape[0]}")
    c = -(x @ cloud.scaled.T)
    if weight is not None:
        c = c + np.asarray(weight(x), float)[:, None]
    return min_cost_assignment(c).normalized
