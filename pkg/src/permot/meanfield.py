"""Finite-N mean-field operators, free energies and the 1D Monge-Ampere solver.

On a finite state space the averaging operator ``pi_N`` is evaluated exactly
by contracting the tensor of Gibbs weights over all ``(N-1)``-tuples.  The
potential ``u`` enters the Gibbs weights multiplied by ``beta_N``, so that
``pi_N(u + c) = pi_N(u) + c`` and ``exp(beta_N (pi_N(u) - u)) mu0`` is the
one-point correlation measure of the ``u``-tilted Gibbs measure.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import logsumexp

from .assignment import semidiscrete_cost
from .convexcalc import (ConvexGridFunction, DiscreteMeasure, Grid, GridFunction,
                         certify_convex, envelope)
from .geometry import ConvexBody, volume
from .gibbs import DiscreteSpace, GibbsSpec, logper_many
from .weights import WeightedMeasure

TENSOR_MAX = 10 ** 6


class ConvergenceError(RuntimeError):
    """An iteration stopped before reaching its tolerance."""

    def __init__(self, message: str, history: Sequence[float]):
        super().__init__(message)
        self.history = list(history)


# -- entropy ------------------------------------------------------------------

def relative_entropy(mu, mu0) -> float:
    """``sum mu_i log(mu_i / mu0_i)`` with ``0 log 0 = 0``; ``inf`` off the support of ``mu0``."""
    a = np.asarray(mu.masses if isinstance(mu, DiscreteMeasure) else mu, float).ravel()
    b = np.asarray(mu0.masses if isinstance(mu0, DiscreteMeasure) else mu0, float).ravel()
    if a.shape != b.shape:
        raise ValueError("measures must share their support points")
    pos = a > 0
    if np.any(b[pos] <= 0):
        return math.inf
    return float(np.sum(a[pos] * np.log(a[pos] / b[pos])))


# -- exact tensors --------------------------------------------------------------

@dataclass
class GibbsTensor:
    """``-beta_N H`` on ``space^N`` as a dense tensor of shape ``(m,) * N``."""

    space: DiscreteSpace
    spec: GibbsSpec
    values: np.ndarray

    @classmethod
    def build(cls, space: DiscreteSpace, spec: GibbsSpec) -> "GibbsTensor":
        N, m = spec.N, space.m
        if m ** N > TENSOR_MAX:
            raise ValueError(f"m^N = {m ** N} exceeds the tensor cap {TENSOR_MAX}")
        idx = np.array(list(itertools.product(range(m), repeat=N)), dtype=np.int64).reshape(-1, N)
        v = -spec.beta_N * space.phi0[idx].sum(1)
        if spec.exponent != 0:
            v = v + spec.exponent * logper_many(spec.log_kernels(space.points[idx]))
        return cls(space, spec, v.reshape((m,) * N))

    @property
    def N(self) -> int:
        return self.values.ndim

    def contract(self, v: np.ndarray) -> np.ndarray:
        """``log sum_y exp(T[x, y] + sum_j v(y_j))`` for every first index ``x``."""
        S = self.values
        for _ in range(self.N - 1):
            S = logsumexp(S + v, axis=-1)
        return S


def _log_weights(w) -> np.ndarray:
    w = np.asarray(w, float)
    with np.errstate(divide="ignore"):
        return np.log(w)


def _pi_core(T: GibbsTensor, u: np.ndarray, log_ref: np.ndarray) -> np.ndarray:
    bN = T.spec.beta_N
    v = -bN * u + log_ref
    A = T.contract(v)
    logZ = logsumexp(A + v)
    return (A - logZ) / bN


def pi_N(space: DiscreteSpace, spec: GibbsSpec, u, mu=None,
         tensor: GibbsTensor | None = None) -> np.ndarray:
    """Averaging operator with reference ``mu0`` and optional target ``mu``.

    Without a target it is ``(1/beta_N) log`` of the ratio between
    ``int exp(-beta_N (H(x, y) + sum u(y_j))) mu0(dy)`` and the full
    partition function ``Z_N[u]``.  A target subtracts
    ``(1/beta_N) log(mu / mu0)``, so fixed points make the one-point
    correlation equal to ``mu``.
    """
    T = tensor or GibbsTensor.build(space, spec)
    u = np.asarray(u, float)
    out = _pi_core(T, u, np.log(space.weights))
    if mu is not None:
        out = out - _log_weights(np.asarray(mu) / space.weights) / spec.beta_N
    return out


def one_point_correlation(space: DiscreteSpace, spec: GibbsSpec, u=None,
                          tensor: GibbsTensor | None = None) -> np.ndarray:
    """First marginal of the Gibbs measure tilted by ``exp(-beta_N sum u)``."""
    u = np.zeros(space.m) if u is None else np.asarray(u, float)
    p = pi_N(space, spec, u, tensor=tensor)
    return np.exp(spec.beta_N * (p - u)) * space.weights


@dataclass
class MeanFieldState:
    """Iterate of a fixed-point scheme, anchored at the first support point."""

    u: np.ndarray
    iteration: int
    residual: float
    anchor: int = 0
    history: list = field(default_factory=list)


def _anchor_index(space: DiscreteSpace) -> int:
    return int(np.lexsort(space.points.T[::-1])[0])


def balanced_fixed_point(space: DiscreteSpace, spec: GibbsSpec, mu=None, tol: float = 1e-10,
                         max_iter: int = 500, u0=None) -> MeanFieldState:
    """Iterate ``u <- pi_N(u)`` with ``u(x0) = 0`` until ``max|pi_N(u) - u| <= tol``."""
    T = GibbsTensor.build(space, spec)
    a = _anchor_index(space)
    u = np.zeros(space.m) if u0 is None else np.asarray(u0, float).copy()
    u -= u[a]
    hist = []
    for it in range(max_iter + 1):
        p = pi_N(space, spec, u, mu, tensor=T)
        res = float(np.max(np.abs(p - u)))
        hist.append(res)
        if res <= tol:
            return MeanFieldState(u, it, res, a, hist)
        u = p - p[a]
    raise ConvergenceError(f"no balance after {max_iter} iterations, residual {res:.3e}", hist)


def pi_N_beta(space: DiscreteSpace, spec: GibbsSpec, beta: float, u,
              tensor: GibbsTensor | None = None) -> np.ndarray:
    """Contraction variant with reference ``mu_u = exp(beta u) mu0`` and the
    factor ``(1 - beta/beta_N)`` inside the logarithm."""
    bN = spec.beta_N
    if not 0 < beta < bN:
        raise ValueError("need 0 < beta < beta_N")
    T = tensor or GibbsTensor.build(space, spec)
    u = np.asarray(u, float)
    log_ref = np.log(space.weights) + beta * u
    return _pi_core(T, u, log_ref) + math.log1p(-beta / bN) / bN


def mean_field_fixed_point(space: DiscreteSpace, spec: GibbsSpec, beta: float,
                           tol: float = 1e-12, max_iter: int = 10_000, u0=None) -> MeanFieldState:
    """Banach iteration of :func:`pi_N_beta`.

    At the fixed point the one-point correlation of the ``u``-tilted Gibbs
    measure with reference ``mu_u`` equals ``mu_u / (1 - beta/beta_N)``.
    """
    T = GibbsTensor.build(space, spec)
    u = np.zeros(space.m) if u0 is None else np.asarray(u0, float).copy()
    hist = []
    for it in range(max_iter + 1):
        p = pi_N_beta(space, spec, beta, u, tensor=T)
        res = float(np.max(np.abs(p - u)))
        hist.append(res)
        if res <= tol:
            return MeanFieldState(p, it + 1, res, _anchor_index(space), hist)
        u = p
    raise ConvergenceError(f"no fixed point after {max_iter} iterations", hist)


def mean_field_equation_residual(space: DiscreteSpace, spec: GibbsSpec, beta: float,
                                 u) -> tuple[float, float]:
    """Sup distance between the correlation measure and normalized ``exp(beta u) mu0``,
    together with the mass of ``exp(beta u) mu0``."""
    u = np.asarray(u, float)
    bN = spec.beta_N
    T = GibbsTensor.build(space, spec)
    log_ref = np.log(space.weights) + beta * u
    p = _pi_core(T, u, log_ref)
    corr = np.exp(bN * (p - u) + log_ref)
    mu_u = np.exp(log_ref)
    return float(np.max(np.abs(corr - mu_u / mu_u.sum()))), float(mu_u.sum())


# -- Gibbs variational principle ------------------------------------------------

@dataclass(frozen=True)
class VariationalReport:
    gibbs_value: float
    identity_residual: float
    competitor_values: tuple
    log_Z: float

    @property
    def competitors_ok(self) -> bool:
        return all(v >= self.gibbs_value - 1e-12 for v in self.competitor_values)


def gibbs_variational_check(space: DiscreteSpace, spec: GibbsSpec,
                            competitors: Sequence[np.ndarray] = ()) -> VariationalReport:
    """Free energy ``F(mu_N) = (1/N)[int H dmu_N + D(mu_N | mu0^N) / beta_N]``.

    Checks ``beta_N F(Gibbs) = -(1/N) log Z_N`` and evaluates competitors.
    """
    T = GibbsTensor.build(space, spec)
    N, bN = spec.N, spec.beta_N
    H = -T.values.ravel() / bN
    lw = np.log(space.weights)
    logref = np.zeros(())
    for _ in range(N):
        logref = np.add.outer(logref, lw)
    logref = logref.ravel()
    logZ = float(logsumexp(-bN * H + logref))
    gibbs = np.exp(-bN * H + logref - logZ)

    def F(p):
        p = np.asarray(p, float).ravel()
        if p.shape != gibbs.shape or abs(p.sum() - 1) > 1e-9:
            raise ValueError("competitor must be a probability table over space^N")
        return (float(p @ H) + relative_entropy(p, np.exp(logref)) / bN) / N

    g = F(gibbs)
    return VariationalReport(g, abs(bN * g + logZ / N), tuple(F(c) for c in competitors), logZ)


# -- free energy ---------------------------------------------------------------

@dataclass(frozen=True)
class FreeEnergyReport:
    energy: float
    entropy: float
    beta: float
    cloud_surrogate: bool = True

    @property
    def total(self) -> float:
        if math.isinf(self.beta):
            return self.energy
        return self.energy + self.entropy / self.beta


def stratified_points(mu: DiscreteMeasure, N: int) -> np.ndarray:
    """``N`` atoms at the quantile levels ``(i + 1/2)/N`` of ``mu`` (sorted support)."""
    order = np.lexsort(mu.points.T[::-1])
    cum = np.cumsum(mu.masses[order]) / mu.total
    levels = (np.arange(N) + 0.5) / N
    j = np.minimum(np.searchsorted(cum, levels, side="left"), len(cum) - 1)
    return mu.points[order][j]


def bin_reference(mu: DiscreteMeasure, measure: WeightedMeasure) -> np.ndarray:
    """Mass of ``mu0`` in the nearest-point cells of the support of ``mu``."""
    X, W = measure.quadrature()
    w = W * measure.rho(X)
    d = ((X[:, None, :] - mu.points[None, :, :]) ** 2).sum(-1)
    cell = np.argmin(d, axis=1)
    return np.bincount(cell, weights=w, minlength=mu.points.shape[0])


def free_energy(mu: DiscreteMeasure, spec: GibbsSpec, beta: float) -> FreeEnergyReport:
    """Cloud-surrogate energy plus entropy against binned ``mu0``.

    The energy is the optimal assignment cost of ``N`` stratified atoms of
    ``mu`` to the scaled cloud with the weight added; it carries an
    ``O(1/k)`` bias.
    """
    meas = spec.measure
    pts = stratified_points(mu, spec.N)
    E = semidiscrete_cost(pts, spec.cloud, meas.phi0 if meas.weight is not None else None)
    D = relative_entropy(mu.normalized(), bin_reference(mu, meas))
    return FreeEnergyReport(E, D, float(beta))


def quantile_energy_1d(mu: DiscreteMeasure, body: ConvexBody,
                       weight: Callable | None = None) -> float:
    """Exact ``inf`` over couplings with uniform ``P`` of ``int (-x p + weight(x))`` in 1D."""
    order = np.argsort(mu.points[:, 0])
    x = mu.points[order, 0]
    m = mu.masses[order] / mu.total
    lo, hi = body.bounds
    a, b = float(lo[0]), float(hi[0])
    c = np.concatenate([[0.0], np.cumsum(m)])
    # int over s in [c_i, c_{i+1}] of the uniform quantile a + (b - a) s
    qint = a * m + 0.5 * (b - a) * (c[1:] ** 2 - c[:-1] ** 2)
    E = -float(np.sum(x * qint))
    if weight is not None:
        E += float(np.sum(m * np.asarray(weight(x[:, None]), float).ravel()))
    return E


# -- 1D Monge-Ampere second boundary value problem ------------------------------

@dataclass
class MASolution:
    """Solution on the node grid of the window, with solver diagnostics."""

    phi: ConvexGridFunction
    beta: float
    residual: float
    iterations: int
    history: list
    iterates: list = field(default_factory=list, repr=False)

    @property
    def x(self) -> np.ndarray:
        return self.phi.grid.axes[0]

    @property
    def values(self) -> np.ndarray:
        return self.phi.values

    def gradient(self) -> np.ndarray:
        return np.gradient(self.values, self.x)


def _cell_widths(x: np.ndarray) -> np.ndarray:
    h = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def _ma_residual(phi, x, w, beta, phi0, rho0, a, b, plen):
    s = np.concatenate([[a], np.diff(phi) / np.diff(x), [b]])
    D = np.diff(s)
    r = plen * w * np.exp(beta * (phi - phi0)) * rho0
    return D - r, r


def solve_ma_1d(beta: float, measure: WeightedMeasure, body: ConvexBody, nodes: int = 2001,
                tol: float = 1e-8, max_iter: int = 200, init: np.ndarray | None = None,
                keep_iterates: bool = False) -> MASolution:
    """Convex ``phi`` with ``MA(phi) / |P| = exp(beta (phi - phi0)) rho0`` and slopes in ``P``.

    The window of ``measure`` is the computational domain with slopes
    ``a`` and ``b`` imposed at its ends, ``P = [a, b]``.  Each node carries
    the cell between the midpoints to its neighbours, and the equation
    equates the slope jump of the piecewise-linear interpolant with the
    right-hand side integrated over the cell by the nodal rule.  For
    ``beta > 0`` damped Newton is used: the Jacobian is negative definite
    and steps are halved until the residual decreases.  The reported
    residual is the largest cell residual divided by the cell width.  For
    ``beta = 0`` the gradient is the monotone rearrangement
    ``a + (b - a) F(x)`` and the solution is normalized by ``int phi mu0 = 0``.
    """
    if measure.dim != 1 or body.dim != 1:
        raise ValueError("the Monge-Ampere solver is one dimensional")
    lo, hi = body.bounds
    a, b = float(lo[0]), float(hi[0])
    plen = b - a
    grid = Grid(measure.lower, measure.upper, nodes)
    x = grid.axes[0]
    X = x[:, None]
    rho0 = measure.rho(X)
    w = _cell_widths(x)
    if beta == 0:
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (rho0[1:] + rho0[:-1]) * np.diff(x))])
        cdf /= cdf[-1]
        slope = a + plen * cdf
        phi = np.concatenate([[0.0], np.cumsum(0.5 * (slope[1:] + slope[:-1]) * np.diff(x))])
        phi -= np.sum(w * rho0 * phi) / np.sum(w * rho0)
        f = certify_convex(GridFunction(grid, phi, boundary_slopes=(a, b)), body)
        return MASolution(f, 0.0, 0.0, 0, [])
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    phi0 = measure.phi0(X)
    if init is None:
        g0 = GridFunction(grid, phi0)
        phi = envelope(g0, body).values.copy()
    else:
        phi = np.asarray(init, float).copy()
    F, r = _ma_residual(phi, x, w, beta, phi0, rho0, a, b, plen)
    norm = float(np.max(np.abs(F / w)))
    hist = [norm]
    its = [phi.copy()] if keep_iterates else []
    h = np.diff(x)
    for it in range(1, max_iter + 1):
        if norm <= tol:
            break
        # tridiagonal Jacobian in banded storage
        ab = np.zeros((3, nodes))
        inv = 1.0 / h
        ab[0, 1:] = inv
        ab[2, :-1] = inv
        diag = np.zeros(nodes)
        diag[:-1] -= inv
        diag[1:] -= inv
        ab[1] = diag - beta * r
        step = solve_banded((1, 1), ab, -F)
        t = 1.0
        while True:
            trial = phi + t * step
            Ft, rt = _ma_residual(trial, x, w, beta, phi0, rho0, a, b, plen)
            nt = float(np.max(np.abs(Ft / w)))
            if nt < norm or t < 1e-10:
                break
            t *= 0.5
        if not nt < norm:
            raise ConvergenceError(f"Newton stagnated at residual {norm:.3e}", hist)
        phi, F, r, norm = trial, Ft, rt, nt
        hist.append(norm)
        if keep_iterates:
            its.append(phi.copy())
    else:
        if norm > tol:
            raise ConvergenceError(f"Newton did not reach {tol:.1e}", hist)
    f = certify_convex(GridFunction(grid, phi, boundary_slopes=(a, b)), body, tol=1e-7)
    return MASolution(f, float(beta), norm, len(hist) - 1, hist, its)


def solution_measure(sol: MASolution, body: ConvexBody) -> DiscreteMeasure:
    """Normalized Alexandrov measure of a solution on its nodes."""
    from .convexcalc import ma_node_masses

    m = ma_node_masses(sol.phi)
    return DiscreteMeasure(m.points, m.masses / volume(body))


@dataclass(frozen=True)
class LadderRow:
    beta: float
    gap: float
    residual: float


def beta_limit_check(measure: WeightedMeasure, body: ConvexBody,
                     betas: Sequence[float] = (4, 8, 16, 32, 64), nodes: int = 2001,
                     inner: float = 0.8) -> list[LadderRow]:
    """Sup-norm gaps between solutions and the envelope on the central
    fraction ``inner`` of the window."""
    grid = Grid(measure.lower, measure.upper, nodes)
    x = grid.axes[0]
    env = envelope(GridFunction(grid, measure.phi0(x[:, None])), body)
    c, half = 0.5 * (x[0] + x[-1]), 0.5 * inner * (x[-1] - x[0])
    sub = np.abs(x - c) <= half + 1e-12
    rows = []
    for beta in betas:
        sol = solve_ma_1d(beta, measure, body, nodes)
        rows.append(LadderRow(float(beta), float(np.max(np.abs(sol.values - env.values)[sub])),
                              sol.residual))
    return rows


# -- mean energy ---------------------------------------------------------------

@dataclass(frozen=True)
class MeanEnergyReport:
    mc_mean: float
    mc_stderr: float
    surrogate: float
    trial_values: np.ndarray
    trial_costs: np.ndarray
    log_factorial_term: float

    @property
    def gap(self) -> float:
        return abs(self.mc_mean - self.surrogate)

    @property
    def lower_bound_ok(self) -> bool:
        return self.mc_mean >= self.surrogate - self.log_factorial_term - 3 * self.mc_stderr

    @property
    def trialwise_bound_ok(self) -> bool:
        """Per trial ``H/N >= C_min - log N!/(N beta_star)`` (exact sandwich)."""
        return bool(np.all(self.trial_values >= self.trial_costs - self.log_factorial_term - 1e-9))


def mean_energy_check(spec: GibbsSpec, trials: int = 200, seed: int = 0,
                      sampler: Callable | None = None) -> MeanEnergyReport:
    """Monte-Carlo mean of ``H/N`` over i.i.d. configurations against the assignment surrogate.

    ``H = -(1/beta_star) log Per + sum phi0``.  The surrogate is the
    assignment cost of ``N`` stratified quantile points of the sampling law
    (1D) or of a fresh i.i.d. draw (2D).
    """
    from .gibbs import rng_for

    rng = rng_for(seed, 7)
    meas = spec.measure
    draw = sampler or (lambda g, n: meas.sample(g, n))
    N = spec.N
    X = np.stack([np.asarray(draw(rng, N), float).reshape(N, spec.dim) for _ in range(trials)])
    lp = logper_many(spec.log_kernels(X))
    phi = meas.phi0(X.reshape(-1, spec.dim)).reshape(trials, N).sum(1)
    vals = (-lp / spec.beta_star_value + phi) / N
    weight = meas.phi0 if meas.weight is not None else None
    costs = np.array([semidiscrete_cost(x, spec.cloud, weight) for x in X])
    if spec.dim == 1 and sampler is None:
        u = (np.arange(N) + 0.5) / N
        if meas.density is None:
            pts = meas.lower + u[:, None] * (meas.upper - meas.lower)
        else:
            from .weights import _inverse_cdf

            t, r, cum = meas._grid()
            pts = _inverse_cdf(t, r, cum, u)[:, None]
    else:
        pts = np.asarray(draw(rng, N), float).reshape(N, spec.dim)
    surrogate = semidiscrete_cost(pts, spec.cloud, weight)
    lf = math.lgamma(N + 1) / (N * spec.beta_star_value)
    return MeanEnergyReport(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials)),
                            surrogate, vals, costs, lf)


def partition_function_check(spec: GibbsSpec, dual_counts: int = 2001,
                             nodes: int = 4001) -> tuple[float, float]:
    """``(1/(beta_star N)) log Z`` from the product factorization and
    ``int_P (envelope)^* dlambda_P`` from the convex-analysis module."""
    from .convexcalc import energy
    from .gibbs import log_partition_factorized

    lz = log_partition_factorized(spec) / (spec.beta_star_value * spec.N)
    meas = spec.measure
    grid = Grid(meas.lower, meas.upper, nodes)
    env = envelope(GridFunction(grid, meas.phi0(grid.points())), spec.body,
                   dual_counts=dual_counts)
    return lz, -energy(env, spec.body, dual_counts)
