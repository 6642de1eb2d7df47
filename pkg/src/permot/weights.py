"""Background measures and weight functions.

A :class:`WeightedMeasure` bundles a reference density on a box window, a
weight function, a sampler and quadrature nodes.  Weights may be given as
Python callables or as short formulas such as ``"x**2"``, ``"|x| + 0.1*x"``
or ``"exp(x1) + x2**2"``; formulas are parsed with sympy, which also
supplies their exact gradient.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

_ALLOWED = {
    "exp": sp.exp, "log": sp.log, "sqrt": sp.sqrt, "Abs": sp.Abs, "abs": sp.Abs,
    "sin": sp.sin, "cos": sp.cos, "Max": sp.Max, "Min": sp.Min, "pi": sp.pi,
}


class ExpressionError(ValueError):
    """A weight formula could not be parsed."""


def _bars_to_abs(text: str) -> str:
    """Rewrite ``|expr|`` as ``Abs(expr)``."""
    out, depth = [], 0
    for ch in text:
        if ch == "|":
            prev = "".join(out).rstrip()
            if not prev or prev[-1] in "+-*/(,^":
                out.append("Abs(")
                depth += 1
            else:
                out.append(")")
                depth -= 1
        else:
            out.append(ch)
        if depth < 0:
            break
    if depth != 0:
        raise ExpressionError(f"unbalanced |...| in {text!r}")
    return "".join(out)


@dataclass(frozen=True)
class Expression:
    """Scalar formula in ``x`` (1D) or ``x1, x2, x3``."""

    text: str
    dim: int = 1
    _fn: Callable = field(init=False, repr=False, compare=False)
    _grad: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        syms = ([sp.Symbol("x", real=True)] if self.dim == 1
                else [sp.Symbol(f"x{i + 1}", real=True) for i in range(self.dim)])
        local = dict(_ALLOWED)
        local.update({str(s): s for s in syms})
        if self.dim == 1:
            local["x1"] = syms[0]
        src = _bars_to_abs(self.text.replace("^", "**"))
        if re.search(r"__|import|lambda", src):
            raise ExpressionError(f"forbidden token in {self.text!r}")
        try:
            expr = parse_expr(src, local_dict=local, transformations=standard_transformations,
                              evaluate=True)
        except Exception as exc:
            raise ExpressionError(f"cannot parse weight {self.text!r}: {exc}") from exc
        extra = expr.free_symbols - set(syms)
        if extra:
            raise ExpressionError(f"unknown symbols {sorted(map(str, extra))} in {self.text!r}")
        fn = sp.lambdify(syms, expr, "numpy")
        grads = tuple(sp.lambdify(syms, sp.diff(expr, s), "numpy") for s in syms)
        object.__setattr__(self, "_fn", fn)
        object.__setattr__(self, "_grad", grads)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        X = X.reshape(-1, self.dim)
        v = self._fn(*X.T)
        return np.broadcast_to(np.asarray(v, float), (X.shape[0],)).copy()

    def gradient(self, X) -> np.ndarray:
        X = np.asarray(X, float).reshape(-1, self.dim)
        cols = [np.broadcast_to(np.asarray(g(*X.T), float), (X.shape[0],)) for g in self._grad]
        return np.stack(cols, axis=1)


def central_gradient(f: Callable, X: np.ndarray, h: float = 1e-5) -> np.ndarray:
    X = np.asarray(X, float)
    G = np.empty_like(X)
    for d in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[d] = h
        G[:, d] = (f(X + e) - f(X - e)) / (2 * h)
    return G


def as_weight(w, dim: int) -> Callable | None:
    if w is None or callable(w):
        return w
    return Expression(str(w), dim)


@dataclass
class WeightedMeasure:
    """Reference measure ``rho0 dx`` on a box window together with a weight.

    Parameters
    ----------
    lower, upper : array_like
        Corners of the support window.
    density : callable, optional
        Unnormalized density on the window; uniform when omitted.
    weight : callable or str, optional
        The weight function; zero when omitted.
    weight_lipschitz : float, optional
        Declared Lipschitz constant of the weight; estimated on a grid when
        omitted.
    """

    lower: np.ndarray
    upper: np.ndarray
    density: Callable | None = None
    weight: Callable | str | None = None
    weight_lipschitz: float | None = None
    resolution: int = 4097
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.lower = np.atleast_1d(np.asarray(self.lower, float))
        self.upper = np.atleast_1d(np.asarray(self.upper, float))
        if self.lower.shape != self.upper.shape or np.any(self.upper <= self.lower):
            raise ValueError("window must have positive extent")
        if self.dim > 2:
            raise ValueError("weighted measures are limited to dimension 1 or 2")
        self.weight = as_weight(self.weight, self.dim)
        if self.weight_lipschitz is None:
            g = self.weight_gradient(self.quadrature()[0])
            self.weight_lipschitz = float(np.max(np.linalg.norm(g, axis=1))) if g.size else 0.0

    @classmethod
    def uniform(cls, lower, upper, weight=None, **kw) -> "WeightedMeasure":
        return cls(lower, upper, None, weight, **kw)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def window_volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    # evaluation ---------------------------------------------------------
    def rho(self, X) -> np.ndarray:
        """Normalized density (integrates to one over the window)."""
        X = np.asarray(X, float).reshape(-1, self.dim)
        inside = np.all((X >= self.lower) & (X <= self.upper), axis=1)
        if self.density is None:
            base = np.full(X.shape[0], 1.0 / self.window_volume)
        else:
            base = np.asarray(self.density(X), float) / self.total_mass()
        return np.where(inside, base, 0.0)

    def log_rho(self, X) -> np.ndarray:
        r = self.rho(X)
        with np.errstate(divide="ignore"):
            return np.log(r)

    def phi0(self, X) -> np.ndarray:
        X = np.asarray(X, float).reshape(-1, self.dim)
        if self.weight is None:
            return np.zeros(X.shape[0])
        return np.asarray(self.weight(X), float).reshape(X.shape[0])

    def weight_gradient(self, X) -> np.ndarray:
        X = np.asarray(X, float).reshape(-1, self.dim)
        if self.weight is None:
            return np.zeros_like(X)
        if isinstance(self.weight, Expression):
            return self.weight.gradient(X)
        return central_gradient(self.phi0, X)

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X, float).reshape(-1, self.dim)
        return np.all((X >= self.lower) & (X <= self.upper), axis=1)

    # quadrature ---------------------------------------------------------
    def quadrature(self, order: int = 48, panels: int = 64) -> tuple[np.ndarray, np.ndarray]:
        """Composite Gauss-Legendre nodes and weights on the window."""
        key = ("quad", order, panels)
        if key not in self._cache:
            g, w = np.polynomial.legendre.leggauss(order if self.dim == 1 else 12)
            axes = []
            for lo, hi in zip(self.lower, self.upper):
                np_ = panels if self.dim == 1 else 24
                edges = np.linspace(lo, hi, np_ + 1)
                mid = 0.5 * (edges[1:] + edges[:-1])
                half = 0.5 * (edges[1:] - edges[:-1])
                nodes = (mid[:, None] + half[:, None] * g[None, :]).ravel()
                wts = (half[:, None] * w[None, :]).ravel()
                axes.append((nodes, wts))
            if self.dim == 1:
                X, W = axes[0][0][:, None], axes[0][1]
            else:
                (n1, w1), (n2, w2) = axes
                X = np.stack(np.meshgrid(n1, n2, indexing="ij"), -1).reshape(-1, 2)
                W = np.outer(w1, w2).ravel()
            self._cache[key] = (X, W)
        return self._cache[key]

    def total_mass(self) -> float:
        """Mass of the unnormalized density (window volume when uniform)."""
        if self.density is None:
            return self.window_volume
        if "mass" not in self._cache:
            X, W = self.quadrature()
            self._cache["mass"] = float(np.sum(W * np.asarray(self.density(X), float)))
        return self._cache["mass"]

    def integrate(self, f: Callable) -> float:
        """``int f rho0 dx`` by quadrature."""
        X, W = self.quadrature()
        return float(np.sum(W * self.rho(X) * f(X)))

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        X, W = self.quadrature()
        r = W * self.rho(X)
        mean = r @ X
        var = r @ (X - mean) ** 2
        return mean, var

    # sampling -----------------------------------------------------------
    def _grid(self) -> tuple[np.ndarray, np.ndarray]:
        key = "grid"
        if key not in self._cache:
            t = np.linspace(self.lower[0], self.upper[0], self.resolution)
            r = self.rho(t[:, None])
            self._cache[key] = (t, r, _cumulative(t, r))
        return self._cache[key]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` points; returns shape ``(size, dim)``."""
        if self.density is None:
            u = rng.random((size, self.dim))
            return self.lower + u * (self.upper - self.lower)
        if self.dim == 1:
            t, r, cum = self._grid()
            return _inverse_cdf(t, r, cum, rng.random(size))[:, None]
        return self._rejection(rng, size, self.rho)

    def _rejection(self, rng, size, dens) -> np.ndarray:
        X, _ = self.quadrature()
        bound = 1.2 * float(np.max(dens(X)))
        out = np.empty((0, self.dim))
        while out.shape[0] < size:
            n = 2 * (size - out.shape[0]) + 16
            cand = self.lower + rng.random((n, self.dim)) * (self.upper - self.lower)
            keep = rng.random(n) * bound < dens(cand)
            out = np.vstack([out, cand[keep]])
        return out[:size]

    # tilting ------------------------------------------------------------
    def tilted(self, beta: float) -> "TiltedMeasure":
        """Probability measure proportional to ``exp(-beta * phi0) rho0``."""
        return TiltedMeasure(self, float(beta))


def _cumulative(t: np.ndarray, r: np.ndarray) -> np.ndarray:
    cum = np.zeros_like(t)
    cum[1:] = np.cumsum(0.5 * (r[1:] + r[:-1]) * np.diff(t))
    return cum


def _inverse_cdf(t, r, cum, u) -> np.ndarray:
    """Invert the CDF of the piecewise-linear density through ``(t, r)``.

    ``cum`` is the unnormalized cumulative trapezoid integral of ``r``.
    """
    target = u * cum[-1]
    j = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, t.size - 2)
    h = t[j + 1] - t[j]
    r0, r1 = r[j], r[j + 1]
    mass = target - cum[j]
    slope = (r1 - r0) / h
    lin = np.abs(slope) * h <= 1e-12 * np.maximum(r0 + r1, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        quad = 2 * mass / (r0 + np.sqrt(np.maximum(r0 ** 2 + 2 * slope * mass, 0.0)))
        flat = np.where(r0 > 0, mass / r0, 0.5 * h)
    s = np.where(lin, flat, quad)
    s = np.where(np.isfinite(s), s, 0.5 * h)
    return t[j] + np.clip(s, 0.0, h)


@dataclass
class TiltedMeasure:
    """``exp(-beta phi0) rho0`` normalized, with its log-mass kept."""

    base: WeightedMeasure
    beta: float
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.base.dim

    def unnormalized(self, X) -> np.ndarray:
        return np.exp(-self.beta * self.base.phi0(X)) * self.base.rho(X)

    @property
    def log_mass(self) -> float:
        """``log int exp(-beta phi0) rho0 dx``."""
        if "lm" not in self._cache:
            X, W = self.base.quadrature()
            e = -self.beta * self.base.phi0(X)
            m = e.max()
            self._cache["lm"] = float(m + np.log(np.sum(W * self.base.rho(X) * np.exp(e - m))))
        return self._cache["lm"]

    def density(self, X) -> np.ndarray:
        return self.unnormalized(X) / np.exp(self.log_mass)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        b = self.base
        if b.dim == 1:
            if "grid" not in self._cache:
                t = np.linspace(b.lower[0], b.upper[0], b.resolution)
                r = self.density(t[:, None])
                self._cache["grid"] = (t, r, _cumulative(t, r))
            t, r, cum = self._cache["grid"]
            return _inverse_cdf(t, r, cum, rng.random(size))[:, None]
        return b._rejection(rng, size, self.density)


def exponential_family_sampler(base: WeightedMeasure, beta: float, slopes: np.ndarray,
                               coef: float) -> Callable:
    """Sampler for densities ``exp(coef * x.p - beta phi0) rho0`` indexed by ``p``.

    Returns ``draw(rng, j)`` giving one point for slope row ``j``.
    """
    if base.dim != 1:
        raise NotImplementedError("exact per-slope sampling is implemented in 1D")
    t = np.linspace(base.lower[0], base.upper[0], base.resolution)
    logr = -beta * base.phi0(t[:, None]) + base.log_rho(t[:, None])
    tables = []
    for p in np.asarray(slopes, float).reshape(len(slopes), -1):
        e = logr + coef * t * p[0]
        r = np.exp(e - e.max())
        tables.append((r, _cumulative(t, r)))

    def draw(rng: np.random.Generator, j: int, size: int = 1) -> np.ndarray:
        r, cum = tables[j]
        return _inverse_cdf(t, r, cum, rng.random(size))

    return draw
