"""Convex target bodies and their scaled integer lattice points.

A :class:`ConvexBody` is a bounded convex set in dimension 1, 2 or 3 with
nonempty interior.  Most bodies of interest contain the origin in their
interior; bodies such as ``[0, 1]`` that only touch it are accepted too.
It can be built from vertices, from halfspaces ``a . p <= b`` or from both;
the missing description is derived with scipy's qhull wrappers.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, Delaunay, HalfspaceIntersection

CONTAINS_TOL = 1e-12


class GeometryError(ValueError):
    """Invalid or unsupported body description."""


class EmptyCloudError(GeometryError):
    """The scaled body contains no integer point."""


def _dedupe(points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    keep: list[np.ndarray] = []
    for p in points:
        if not any(np.max(np.abs(p - q)) <= tol for q in keep):
            keep.append(p)
    return np.array(keep)


@dataclass(frozen=True)
class ConvexBody:
    """Bounded convex body with nonempty interior.

    Parameters
    ----------
    dim : int
        Ambient dimension, 1 to 3.
    vertices : array_like, optional
        Points whose convex hull is the body.
    halfspaces : array_like, optional
        Rows ``(a_1, ..., a_n, b)`` describing ``a . p <= b``.
    """

    dim: int
    vertices: np.ndarray | None = None
    halfspaces: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        n = int(self.dim)
        if n not in (1, 2, 3):
            raise GeometryError(f"dimension must be 1, 2 or 3, got {self.dim}")
        V = None if self.vertices is None else np.atleast_2d(np.asarray(self.vertices, float))
        H = None if self.halfspaces is None else np.atleast_2d(np.asarray(self.halfspaces, float))
        if V is None and H is None:
            raise GeometryError("a body needs vertices or halfspaces")
        if V is not None and V.shape[1] != n:
            raise GeometryError("vertex dimension does not match dim")
        if H is not None and H.shape[1] != n + 1:
            raise GeometryError("halfspace rows must have dim + 1 entries")
        if V is None:
            V = self._vertices_from_halfspaces(H, n)
        if H is None:
            H = self._halfspaces_from_vertices(V, n)
        else:
            Vh = self._vertices_from_halfspaces(H, n)
            if not self._same_set(V, Vh, H):
                raise GeometryError("vertex and halfspace descriptions disagree")
        object.__setattr__(self, "dim", n)
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "halfspaces", H)

    @staticmethod
    def _vertices_from_halfspaces(H: np.ndarray, n: int) -> np.ndarray:
        A, b = H[:, :-1], H[:, -1]
        if n == 1:
            a = A[:, 0]
            if not (np.any(a > 0) and np.any(a < 0)):
                raise GeometryError("unbounded body")
            hi = np.min(b[a > 0] / a[a > 0])
            lo = np.max(b[a < 0] / a[a < 0])
            return np.array([[lo], [hi]])
        # scipy convention: A x + c <= 0
        hs = np.hstack([A, -b[:, None]])
        res = linprog(np.r_[np.zeros(n), -1.0],
                      A_ub=np.hstack([A, np.linalg.norm(A, axis=1)[:, None]]), b_ub=b,
                      bounds=[(None, None)] * n + [(0, 1)], method="highs")
        if res.status != 0 or res.x[-1] <= 1e-12:
            raise GeometryError("halfspaces do not bound a body with interior")
        try:
            hi = HalfspaceIntersection(hs, res.x[:n])
        except Exception as exc:  # qhull raises its own error type
            raise GeometryError(f"invalid halfspace description: {exc}") from exc
        pts = hi.intersections
        if not np.all(np.isfinite(pts)) or np.max(np.abs(pts)) > 1e12:
            raise GeometryError("unbounded body")
        pts = _dedupe(pts)
        hull = ConvexHull(pts)
        return pts[np.sort(hull.vertices)]

    @staticmethod
    def _halfspaces_from_vertices(V: np.ndarray, n: int) -> np.ndarray:
        if n == 1:
            lo, hi = float(V.min()), float(V.max())
            if not hi > lo:
                raise GeometryError("body has empty interior")
            return np.array([[1.0, hi], [-1.0, -lo]])
        try:
            hull = ConvexHull(V)
        except Exception as exc:
            raise GeometryError(f"degenerate vertex set: {exc}") from exc
        eq = hull.equations  # normal . x + offset <= 0
        rows = np.hstack([eq[:, :-1], -eq[:, -1:]])
        return _dedupe(rows, 1e-10)

    @staticmethod
    def _same_set(V: np.ndarray, Vh: np.ndarray, H: np.ndarray, tol: float = 1e-9) -> bool:
        A, b = H[:, :-1], H[:, -1]
        inside = np.all(V @ A.T <= b + tol)
        covered = all(np.min(np.max(np.abs(V - w), axis=1)) <= tol for w in Vh)
        return bool(inside and covered)

    # constructors -----------------------------------------------------
    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "ConvexBody":
        lower = np.atleast_1d(np.asarray(lower, float))
        upper = np.atleast_1d(np.asarray(upper, float))
        n = lower.size
        verts = np.array(list(itertools.product(*zip(lower, upper))), float)
        H = []
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            H.append(np.append(e, upper[i]))
            H.append(np.append(-e, -lower[i]))
        return cls(n, verts, np.array(H))

    @classmethod
    def interval(cls, lo: float, hi: float) -> "ConvexBody":
        return cls.box([lo], [hi])

    @classmethod
    def from_dict(cls, data: dict) -> "ConvexBody":
        if "dim" not in data:
            raise GeometryError("body description lacks field 'dim'")
        return cls(int(data["dim"]), data.get("vertices"), data.get("halfspaces"))

    @classmethod
    def from_file(cls, path: str | Path) -> "ConvexBody":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "vertices": self.vertices.tolist(),
            "halfspaces": self.halfspaces.tolist(),
        }

    # queries -----------------------------------------------------------
    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def origin_in_interior(self) -> bool:
        return bool(np.all(self.halfspaces[:, -1] > 1e-12))

    @property
    def diameter(self) -> float:
        V = self.vertices
        d = V[:, None, :] - V[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())


def support_function(P: ConvexBody, x) -> float:
    """Return ``sup_{p in P} x . p``."""
    x = np.atleast_1d(np.asarray(x, float))
    if x.shape != (P.dim,):
        raise GeometryError("point dimension does not match the body")
    if P.vertices is not None:
        return float(np.max(P.vertices @ x))
    res = linprog(-x, A_ub=P.halfspaces[:, :-1], b_ub=P.halfspaces[:, -1],
                  bounds=[(None, None)] * P.dim, method="highs")
    if res.status == 3:
        raise GeometryError("unbounded body")
    return float(-res.fun)


def support_function_many(P: ConvexBody, X: np.ndarray) -> np.ndarray:
    """Vectorized support function over rows of ``X``."""
    X = np.asarray(X, float).reshape(-1, P.dim)
    return np.max(X @ P.vertices.T, axis=1)


def contains(P: ConvexBody, p, tol: float = CONTAINS_TOL) -> bool:
    p = np.atleast_1d(np.asarray(p, float))
    A, b = P.halfspaces[:, :-1], P.halfspaces[:, -1]
    return bool(np.all(A @ p <= b + tol))


def contains_many(P: ConvexBody, pts: np.ndarray, tol: float = CONTAINS_TOL) -> np.ndarray:
    pts = np.asarray(pts, float).reshape(-1, P.dim)
    A, b = P.halfspaces[:, :-1], P.halfspaces[:, -1]
    return np.all(pts @ A.T <= b + tol, axis=1)


def volume(P: ConvexBody) -> float:
    if "volume" not in P._cache:
        if P.dim == 1:
            v = float(P.vertices.max() - P.vertices.min())
        else:
            v = float(ConvexHull(P.vertices).volume)
        P._cache["volume"] = v
    return P._cache["volume"]


def barycenter(P: ConvexBody) -> np.ndarray:
    """Centroid by exact simplex decomposition."""
    if P.dim == 1:
        return np.array([0.5 * (P.vertices.min() + P.vertices.max())])
    tri = Delaunay(P.vertices)
    simp = P.vertices[tri.simplices]  # (s, n+1, n)
    edges = simp[:, 1:, :] - simp[:, :1, :]
    vols = np.abs(np.linalg.det(edges))
    cents = simp.mean(axis=1)
    return (vols[:, None] * cents).sum(0) / vols.sum()


def invariant_R(P: ConvexBody, tol: float = 1e-12) -> float:
    """Ratio ``|q| / |q - b|`` with ``b`` the barycenter and ``q`` the
    boundary point hit by the ray from ``b`` through the origin."""
    if not P.origin_in_interior:
        raise GeometryError("invariant R needs the origin in the interior of P")
    b = barycenter(P)
    if np.linalg.norm(b) <= tol:
        return 1.0
    d = -b
    A, c = P.halfspaces[:, :-1], P.halfspaces[:, -1]
    ad = A @ d
    lam = np.min(c[ad > 0] / ad[ad > 0])
    q = lam * d
    return float(np.linalg.norm(q) / np.linalg.norm(q - b))


@dataclass(frozen=True)
class LatticeCloud:
    """Integer points of ``k P`` in lexicographic order."""

    k: int
    points: np.ndarray
    body: ConvexBody | None = None

    @property
    def N(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    @property
    def scaled(self) -> np.ndarray:
        """Points divided by ``k``, i.e. rational points of ``P``."""
        return self.points / self.k


def lattice_points(P: ConvexBody, k: int) -> LatticeCloud:
    """Enumerate ``kP`` intersected with the integer lattice."""
    k = int(k)
    if k < 1:
        raise GeometryError("scale k must be a positive integer")
    lo, hi = P.bounds
    ranges = [np.arange(int(np.floor(k * l - 1e-9)), int(np.ceil(k * h + 1e-9)) + 1)
              for l, h in zip(lo, hi)]
    grid = np.array(list(itertools.product(*ranges)), dtype=np.int64).reshape(-1, P.dim)
    A, b = P.halfspaces[:, :-1], P.halfspaces[:, -1]
    scale = np.maximum(1.0, np.abs(k * b))
    ok = np.all(grid @ A.T <= k * b + 1e-9 * scale, axis=1)
    pts = grid[ok]
    if pts.shape[0] == 0:
        raise EmptyCloudError(f"kP contains no integer point for k={k}")
    order = np.lexsort(pts.T[::-1])
    return LatticeCloud(k, pts[order], P)


def lattice_csv_rows(cloud: LatticeCloud) -> tuple[list[str], list[list]]:
    header = ["index"] + [f"p_{i + 1}" for i in range(cloud.dim)]
    rows = [[i] + [int(v) for v in p] for i, p in enumerate(cloud.points)]
    return header, rows
