"""Convex analysis on regular grids in one and two dimensions.

Functions are sampled on axis-aligned grids.  Legendre transforms are exact
maxima over grid nodes, the constrained envelope is a double transform whose
dual variable is restricted to the target body, and Monge-Ampere measures
follow the Alexandrov definition: in 1D from one-sided slopes, in 2D by
locating, for each point of a fine grid on the body, the node where the
supporting hyperplane with that slope touches.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .geometry import ConvexBody, contains_many, volume

CONVEXITY_TOL = 1e-9


class NotConvexError(ValueError):
    """A grid function failed the discrete convexity test."""


class MassDeficitError(ValueError):
    """A comparison precondition on total Monge-Ampere mass failed."""


@dataclass(frozen=True)
class Grid:
    """Regular grid with nodes ``linspace(lower_d, upper_d, counts_d)`` per axis."""

    lower: tuple
    upper: tuple
    counts: tuple

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        cnt = tuple(int(v) for v in np.atleast_1d(self.counts))
        if not (len(lo) == len(hi) == len(cnt)) or len(lo) not in (1, 2):
            raise ValueError("grids are one or two dimensional")
        if any(c < 2 for c in cnt) or any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("grid spacing must be positive")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "counts", cnt)

    @classmethod
    def cell_centered(cls, lower, upper, cells) -> "Grid":
        """Nodes at the centres of ``cells`` equal cells covering the window."""
        lo = np.atleast_1d(np.asarray(lower, float))
        hi = np.atleast_1d(np.asarray(upper, float))
        c = np.atleast_1d(np.asarray(cells, int))
        h = (hi - lo) / c
        return cls(tuple(lo + h / 2), tuple(hi - h / 2), tuple(c))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple:
        return self.counts

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, h, c) for l, h, c in zip(self.lower, self.upper, self.counts)]

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(h - l) / (c - 1) for l, h, c in zip(self.lower, self.upper, self.counts)])

    def points(self) -> np.ndarray:
        """Nodes in C order, which is lexicographic order, shape ``(size, dim)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))


@dataclass
class GridFunction:
    """Values of a function at the nodes of a grid.

    ``extension`` describes the function beyond the window: ``"affine"``
    continues with the boundary slopes (given in ``boundary_slopes`` for 1D,
    otherwise the one-sided difference quotients), ``"inf"`` sets it to
    ``+inf``.
    """

    grid: Grid
    values: np.ndarray
    extension: str = "affine"
    boundary_slopes: tuple | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, float).reshape(self.grid.shape)
        if self.extension not in ("affine", "inf"):
            raise ValueError("extension must be 'affine' or 'inf'")
        if self.boundary_slopes is not None and self.grid.dim != 1:
            raise ValueError("explicit boundary slopes are supported in 1D only")

    @classmethod
    def sample(cls, f: Callable, grid: Grid, **kw) -> "GridFunction":
        pts = grid.points()
        return cls(grid, np.asarray(f(pts), float).reshape(grid.shape), **kw)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def points(self) -> np.ndarray:
        return self.grid.points()

    def slopes_1d(self) -> np.ndarray:
        """Slopes ``s_0..s_M``: left extension, the segments, right extension."""
        x = self.grid.axes[0]
        seg = np.diff(self.values) / np.diff(x)
        if self.boundary_slopes is not None:
            left, right = self.boundary_slopes
        else:
            left, right = seg[0], seg[-1]
        return np.concatenate([[left], seg, [right]])

    def to_rows(self) -> tuple[list[str], np.ndarray]:
        n = self.grid.dim
        header = [f"x_{i + 1}" for i in range(n)] + ["value"]
        return header, np.column_stack([self.points(), self.flat])


@dataclass
class ConvexGridFunction(GridFunction):
    """Grid function carrying a discrete convexity certificate."""

    certificate: dict = field(default_factory=dict)


@dataclass
class DiscreteMeasure:
    """Finitely supported nonnegative measure."""

    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.masses = np.asarray(self.masses, float).ravel()
        if self.masses.shape[0] != self.points.shape[0]:
            raise ValueError("one mass per support point")
        if np.any(self.masses < -1e-12):
            raise ValueError("masses must be nonnegative")

    @property
    def total(self) -> float:
        return float(np.sum(self.masses))

    def normalized(self) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.masses / self.total)

    def support(self, tol: float = 1e-12) -> np.ndarray:
        return self.masses > tol * max(1.0, self.total)


def second_differences(f: GridFunction) -> list[np.ndarray]:
    out = []
    for ax in range(f.grid.dim):
        h = f.grid.spacing[ax]
        out.append(np.diff(f.values, n=2, axis=ax) / h)
    return out


def certify_convex(f: GridFunction, body: ConvexBody | None = None,
                   tol: float = CONVEXITY_TOL) -> ConvexGridFunction:
    """Check discrete convexity along grid lines and, when a body is given,
    that one-sided slopes stay in it (1D) or in its bounding box (2D)."""
    d2 = second_differences(f)
    worst = min((float(d.min()) for d in d2 if d.size), default=0.0)
    if worst < -tol:
        raise NotConvexError(f"second difference {worst:.3e} below {-tol:.1e}")
    cert = {"min_second_difference": worst}
    if body is not None:
        lo, hi = body.bounds
        if f.grid.dim == 1:
            s = f.slopes_1d()[1:-1]
        else:
            s = np.concatenate([np.diff(f.values, axis=ax).ravel() / f.grid.spacing[ax]
                                for ax in range(f.grid.dim)])
        slack = 1e-7 * max(1.0, float(np.max(np.abs([lo, hi]))))
        cert["slopes_in_body"] = bool(s.min() >= lo.min() - slack and s.max() <= hi.max() + slack)
    return ConvexGridFunction(f.grid, f.values, f.extension, f.boundary_slopes, cert)


# -- dual grids ---------------------------------------------------------------

def body_grid(body: ConvexBody, counts: int | Sequence[int]) -> tuple[Grid, np.ndarray]:
    """Grid on the bounding box of ``body`` (endpoints included) and the mask
    of nodes inside the body."""
    lo, hi = body.bounds
    counts = np.broadcast_to(np.atleast_1d(counts), (body.dim,))
    g = Grid(tuple(lo), tuple(hi), tuple(counts))
    return g, contains_many(body, g.points(), tol=1e-12)


def _body_cells(body: ConvexBody, counts: int | Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Cell centres inside ``body`` of a cell-centred grid, and cell volumes."""
    lo, hi = body.bounds
    counts = np.broadcast_to(np.atleast_1d(counts), (body.dim,))
    g = Grid.cell_centered(lo, hi, counts)
    pts = g.points()
    inside = contains_many(body, pts, tol=1e-12)
    area = float(np.prod((hi - lo) / counts))
    return pts[inside], np.full(int(inside.sum()), area)


def _dual_max(X: np.ndarray, fx: np.ndarray, Pts: np.ndarray,
              chunk_elems: int = 1 << 22) -> tuple[np.ndarray, np.ndarray]:
    """``max_x (x . p - f(x))`` and its first maximizing node for each ``p``."""
    fx = np.asarray(fx, float)
    finite = np.isfinite(fx)
    Xf, ff = X[finite], fx[finite]
    idx = np.flatnonzero(finite)
    if Xf.shape[0] == 0:
        raise ValueError("empty grid")
    step = max(1, chunk_elems // Xf.shape[0])
    best = np.empty(Pts.shape[0])
    arg = np.empty(Pts.shape[0], dtype=np.int64)
    for s in range(0, Pts.shape[0], step):
        sc = Pts[s:s + step] @ Xf.T - ff[None, :]
        a = np.argmax(sc, axis=1)
        arg[s:s + step] = idx[a]
        best[s:s + step] = sc[np.arange(a.size), a]
    return best, arg


def legendre(f: GridFunction, p_grid: Grid, mask: np.ndarray | None = None) -> GridFunction:
    """Legendre transform ``max_x (x . p - f(x))`` over the nodes of ``f``.

    Parameters
    ----------
    f : GridFunction
        Function on the primal grid; nodes outside ``mask`` are ignored.
    p_grid : Grid
        Dual grid on which the transform is evaluated.
    mask : ndarray of bool, optional
        Primal nodes taking part in the maximum.
    """
    fx = f.flat.copy()
    if mask is not None:
        fx[~np.asarray(mask, bool).ravel()] = np.inf
    vals, _ = _dual_max(f.points(), fx, p_grid.points())
    return GridFunction(p_grid, vals.reshape(p_grid.shape))


def default_dual_counts(f: GridFunction, body: ConvexBody) -> int:
    if body.dim == 1:
        h = float(f.grid.spacing[0])
        lo, hi = body.bounds
        return int(min(4001, max(201, round((hi[0] - lo[0]) / h) + 1)))
    return 81


def envelope(phi0: GridFunction, body: ConvexBody, mask: np.ndarray | None = None,
             dual_counts: int | None = None) -> ConvexGridFunction:
    """Largest convex minorant of ``phi0`` on the masked nodes whose slopes lie in ``body``.

    Computed as the transform of ``v = (phi0 restricted to the mask)^*``
    with the dual variable restricted to ``body``.
    """
    if mask is not None and not np.any(mask):
        raise ValueError("mask selects no node")
    counts = dual_counts or default_dual_counts(phi0, body)
    pg, pin = body_grid(body, counts)
    v = legendre(phi0, pg, mask)
    vv = v.flat.copy()
    vv[~pin] = np.inf
    vals, _ = _dual_max(pg.points(), vv, phi0.points())
    env = GridFunction(phi0.grid, vals.reshape(phi0.grid.shape))
    return certify_convex(env, body, tol=1e-8)


# -- Monge-Ampere measures ----------------------------------------------------

def ma_node_masses(f: GridFunction, body: ConvexBody | None = None,
                   dual_counts: int | None = None) -> DiscreteMeasure:
    """Alexandrov measure as masses on the nodes of ``f``.

    In 1D the mass of node ``i`` is the length of its subdifferential of the
    piecewise-linear interpolant, using the extension slopes at the two
    ends.  In 2D every cell of a fine cell-centred grid on ``body`` is
    assigned to the node maximizing ``x . p - f(x)`` (first node on ties).
    """
    if f.grid.dim == 1:
        s = f.slopes_1d()
        if f.extension == "inf":
            if body is None:
                raise ValueError("an infinite extension needs the body to clamp slopes")
            lo, hi = body.bounds
            s = s.copy()
            s[0], s[-1] = lo[0], hi[0]
        m = np.diff(s)
        if np.any(m < -1e-9 * max(1.0, float(np.max(np.abs(s))))):
            raise NotConvexError("slopes decrease: function is not convex")
        return DiscreteMeasure(f.points(), np.clip(m, 0.0, None))
    if body is None:
        raise ValueError("2D Monge-Ampere measures need the body")
    cells, area = _body_cells(body, dual_counts or 401)
    _, arg = _dual_max(f.points(), f.flat, cells)
    masses = np.bincount(arg, weights=area, minlength=f.grid.size)
    return DiscreteMeasure(f.points(), masses)


def ma_measure(f: GridFunction, cells=None, body: ConvexBody | None = None,
               dual_counts: int | None = None) -> DiscreteMeasure:
    """Monge-Ampere measure aggregated over cells.

    ``cells`` is either a 1D array of increasing edges (half-open cells
    ``[e_i, e_{i+1})``, last one closed) or a callable mapping node
    coordinates to integer labels.  Without cells the node masses are
    returned.
    """
    nodes = ma_node_masses(f, body, dual_counts)
    if cells is None:
        return nodes
    pts = nodes.points
    if callable(cells):
        lab = np.asarray(cells(pts), int).ravel()
        labels = np.unique(lab)
        masses = np.array([nodes.masses[lab == l].sum() for l in labels])
        return DiscreteMeasure(labels.astype(float), masses)
    edges = np.asarray(cells, float)
    x = pts[:, 0]
    j = np.searchsorted(edges, x, side="right") - 1
    j[x == edges[-1]] = edges.size - 2
    ok = (j >= 0) & (j < edges.size - 1)
    masses = np.bincount(j[ok], weights=nodes.masses[ok], minlength=edges.size - 1)
    centres = 0.5 * (edges[1:] + edges[:-1])
    return DiscreteMeasure(centres, masses)


def ma_total_mass(f: GridFunction, body: ConvexBody | None = None) -> float:
    return ma_node_masses(f, body).total


def energy(f: GridFunction, body: ConvexBody, dual_counts: int | None = None) -> float:
    """``-int_P f^* dlambda_P`` with ``lambda_P`` the uniform probability on ``body``."""
    if body.dim == 1:
        counts = dual_counts or default_dual_counts(f, body)
        pg, _ = body_grid(body, counts)
        fs = legendre(f, pg).flat
        p = pg.axes[0]
        return -float(trapezoid(fs, p) / (p[-1] - p[0]))
    cells, area = _body_cells(body, dual_counts or 201)
    fs, _ = _dual_max(f.points(), f.flat, cells)
    return -float(np.sum(fs * area) / np.sum(area))


# -- appendix principles ------------------------------------------------------

@dataclass(frozen=True)
class ComparisonResult:
    lhs: float
    rhs: float
    holds: bool


@dataclass(frozen=True)
class DominationResult:
    hypothesis: bool
    conclusion: bool
    first_violation: int | None

    @property
    def holds(self) -> bool:
        return (not self.hypothesis) or self.conclusion

    def __bool__(self) -> bool:
        return self.holds


def _full_mass(m: DiscreteMeasure, body: ConvexBody | None, name: str) -> None:
    if body is None:
        return
    vol = volume(body)
    if abs(m.total - vol) > 0.01 * vol:
        raise MassDeficitError(f"{name} has Monge-Ampere mass {m.total:.4f}, expected {vol:.4f}")


def check_comparison(u: GridFunction, v: GridFunction, body: ConvexBody | None = None,
                     tol: float = 1e-8) -> ComparisonResult:
    """Integrals of ``MA(v)`` and ``MA(u)`` over the node set ``{u < v}``."""
    if u.grid != v.grid:
        raise ValueError("u and v must share a grid")
    mu, mv = ma_node_masses(u, body), ma_node_masses(v, body)
    _full_mass(mu, body, "u")
    _full_mass(mv, body, "v")
    S = u.flat < v.flat
    lhs, rhs = float(mv.masses[S].sum()), float(mu.masses[S].sum())
    return ComparisonResult(lhs, rhs, lhs <= rhs + tol)


def check_domination(u: GridFunction, v: GridFunction, body: ConvexBody | None = None,
                     tol: float = 1e-9) -> DominationResult:
    """If ``u >= v`` wherever ``MA(u)`` charges a node, test ``u >= v`` everywhere."""
    mu = ma_node_masses(u, body)
    charged = mu.support()
    hyp = bool(np.all(u.flat[charged] >= v.flat[charged] - tol))
    bad = np.flatnonzero(u.flat < v.flat - tol)
    return DominationResult(hyp, bad.size == 0, int(bad[0]) if bad.size else None)


def incidence_set(phi0: GridFunction, env: GridFunction, mask: np.ndarray | None = None,
                  tol: float = 1e-6) -> np.ndarray:
    """Boolean node mask where the envelope touches ``phi0``."""
    hit = np.abs(env.flat - phi0.flat) <= tol
    if mask is not None:
        hit &= np.asarray(mask, bool).ravel()
    return hit


# -- window adequacy ------------------------------------------------------------

@dataclass(frozen=True)
class GrowthReport:
    """Rise of ``phi0 - phi_P`` from its window minimum to the window boundary."""

    margin: float
    required: float

    @property
    def ok(self) -> bool:
        return self.margin >= self.required


def growth_margin(phi0: GridFunction, body: ConvexBody, required: float = 0.0) -> GrowthReport:
    """Measure how far ``phi0 - phi_P`` has risen at the edge of the window.

    ``phi_P`` is the support function of ``body``.  No growth rate is
    assumed: the caller declares the margin it needs and the report records
    the measured one, the smallest boundary value of ``phi0 - phi_P`` minus
    its minimum over all nodes.  A positive margin means every touching
    point of the envelope lies strictly inside the window.
    """
    from .geometry import support_function_many

    g = phi0.flat - support_function_many(body, phi0.points())
    shape = phi0.grid.shape
    edge = np.zeros(shape, bool)
    for d in range(len(shape)):
        idx = [slice(None)] * len(shape)
        idx[d] = [0, -1]
        edge[tuple(idx)] = True
    return GrowthReport(float(g[edge.ravel()].min() - g.min()), float(required))
