"""Langevin dynamics for permanental Gibbs measures.

Particles follow ``dx_i = -grad_i H dt + sigma dB_i`` with
``H = -(coupling / beta_star) log Per + sum phi0(x_i)``.  With
``sigma = sqrt(2 / beta_N)`` the Gibbs measure ``exp(-beta_N H) rho0^N``
is stationary; a non-uniform reference density contributes the extra drift
``grad log rho0 / beta_N``.  Replicas are integrated together as one array.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .gibbs import GibbsSpec, logper_many, rng_for
from .permanent import linear_cost


class StepSizeError(RuntimeError):
    """The drift exceeded ``1/dt`` somewhere along the trajectory."""


@dataclass
class SdeParams:
    """Euler-Maruyama settings.

    ``sigma=None`` selects ``sqrt(2/beta_N)``, which leaves the Gibbs
    measure invariant.  ``inflated_noise`` switches to ``2/sqrt(beta_N)``,
    larger by ``sqrt 2``, whose invariant law is the one at ``beta_N / 2``.
    """

    spec: GibbsSpec
    dt: float
    T: float
    seed: int = 0
    replicas: int = 1
    sigma: float | None = None
    inflated_noise: bool = False
    reflect: bool = True
    record_every: int = 1
    init: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("dt and T must be positive")

    @property
    def noise(self) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        b = self.spec.beta_N
        return 2.0 / math.sqrt(b) if self.inflated_noise else math.sqrt(2.0 / b)

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))


def _kernel_gradient(spec: GibbsSpec, x: np.ndarray) -> np.ndarray:
    """``d a(x_i, t_j) / d x_i`` with shape ``(B, N, N, n)``."""
    if spec.pure_lattice:
        p = spec.cloud.points.astype(float)
        return np.broadcast_to(p[None, None], x.shape[:2] + p.shape)
    t = spec.target_points
    bs = spec.beta_star_value
    if spec.cost is None or spec.cost is linear_cost:
        return np.broadcast_to(bs * t[None, None], x.shape[:2] + t.shape)
    h = 1e-6
    g = np.empty(x.shape[:2] + t.shape)
    for d in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[d] = h
        xp = (x + e)[:, :, None, :]
        xm = (x - e)[:, :, None, :]
        g[..., d] = -bs * (spec.cost(xp, t[None, None]) - spec.cost(xm, t[None, None])) / (2 * h)
    return g


def drift_many(spec: GibbsSpec, X: np.ndarray) -> np.ndarray:
    """``-grad H`` (plus the reference-density term) for a stack ``(B, N, n)``."""
    X = np.asarray(X, float)
    B, N, n = X.shape
    meas = spec.measure
    flat = X.reshape(-1, n)
    out = -meas.weight_gradient(flat).reshape(B, N, n)
    if spec.coupling != 0:
        _, M = logper_many(spec.log_kernels(X), marginals=True)
        G = _kernel_gradient(spec, X)
        out = out + spec.hamiltonian_scale() * np.einsum("bij,bijd->bid", M, G)
    if meas.density is not None:
        h = 1e-5
        g = np.empty_like(flat)
        for d in range(n):
            e = np.zeros(n)
            e[d] = h
            g[:, d] = (meas.log_rho(flat + e) - meas.log_rho(flat - e)) / (2 * h)
        out = out + np.nan_to_num(g).reshape(B, N, n) / spec.beta_N
    return out


def drift(spec: GibbsSpec, conf) -> np.ndarray:
    """Drift of a single configuration, shape ``(N, n)``."""
    x = np.asarray(conf, float).reshape(spec.N, spec.dim)
    return drift_many(spec, x[None])[0]


def hamiltonian_many(spec: GibbsSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, float)
    B, N, n = X.shape
    phi = spec.measure.phi0(X.reshape(-1, n)).reshape(B, N).sum(1)
    if spec.coupling == 0:
        return phi
    return -spec.hamiltonian_scale() * logper_many(spec.log_kernels(X)) + phi


def _fold(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Reflect coordinates into ``[lo, hi]`` (repeated folding)."""
    w = hi - lo
    y = np.mod(x - lo, 2 * w)
    return lo + np.where(y > w, 2 * w - y, y)


@dataclass
class Trajectory:
    times: np.ndarray
    paths: np.ndarray  # (replicas, records, N, n)

    @property
    def final(self) -> np.ndarray:
        return self.paths[:, -1]


def integrate(params: SdeParams) -> Trajectory:
    """Euler-Maruyama with per-step noise ``sigma sqrt(dt)`` per coordinate."""
    spec = params.spec
    meas = spec.measure
    rng = rng_for(params.seed, 8)
    R, N, n = params.replicas, spec.N, spec.dim
    if params.init is not None:
        x = np.broadcast_to(np.asarray(params.init, float).reshape(-1, N, n), (R, N, n)).copy()
    else:
        x = meas.sample(rng, R * N).reshape(R, N, n)
    dt, s = params.dt, params.noise * math.sqrt(params.dt)
    times, recs = [0.0], [x.copy()]
    for step in range(1, params.steps + 1):
        b = drift_many(spec, x)
        if np.max(np.abs(b)) * dt > 1.0:
            raise StepSizeError(f"drift {np.max(np.abs(b)):.3g} exceeds 1/dt at step {step}")
        x = x + dt * b
        if s > 0:
            x = x + s * rng.standard_normal(x.shape)
        if params.reflect:
            x = _fold(x, meas.lower, meas.upper)
        if step % params.record_every == 0 or step == params.steps:
            times.append(step * dt)
            recs.append(x.copy())
    return Trajectory(np.array(times), np.stack(recs, axis=1))


def reference_marginal(spec: GibbsSpec, edges: np.ndarray, nodes: int = 401) -> np.ndarray:
    """Bin masses of the one-point marginal of ``exp(-beta_N H) rho0^N`` (1D, N <= 3)."""
    if spec.dim != 1 or spec.N > 3:
        raise ValueError("quadrature reference needs 1D and N <= 3")
    meas = spec.measure
    nodes = nodes if spec.N < 3 else 121
    x = np.linspace(meas.lower[0], meas.upper[0], nodes)
    w = np.full(nodes, x[1] - x[0])
    w[[0, -1]] *= 0.5
    logw1 = np.log(w) + meas.log_rho(x[:, None])
    mesh = np.stack(np.meshgrid(*([x] * spec.N), indexing="ij"), -1).reshape(-1, spec.N, 1)
    logd = -spec.beta_N * hamiltonian_many(spec, mesh)
    for i in range(spec.N):
        idx = np.unravel_index(np.arange(mesh.shape[0]), (nodes,) * spec.N)[i]
        logd = logd + logw1[idx]
    logd = logd.reshape((nodes,) * spec.N)
    marg = logsumexp(logd.reshape(nodes, -1), axis=1)
    p = np.exp(marg - logsumexp(marg))
    # spread node masses to bins by linear interpolation of the cumulative
    cum = np.concatenate([[0.0], np.cumsum(p)])
    xe = np.concatenate([[x[0]], 0.5 * (x[1:] + x[:-1]), [x[-1]]])
    c = np.interp(edges, xe, cum)
    return np.diff(c)


@dataclass(frozen=True)
class StationarityReport:
    tv: float | None
    histogram: np.ndarray
    reference: np.ndarray
    skipped: bool = False


def stationarity_check(params: SdeParams, burn_in: float, bins: np.ndarray) -> StationarityReport:
    """Total variation between the long-run one-point histogram and the exact marginal."""
    if params.noise == 0:
        return StationarityReport(None, np.array([]), np.array([]), skipped=True)
    traj = integrate(params)
    keep = traj.times >= burn_in
    pts = traj.paths[:, keep].reshape(-1)
    edges = np.asarray(bins, float)
    h, _ = np.histogram(pts, edges)
    h = h / pts.size
    ref = reference_marginal(params.spec, edges)
    return StationarityReport(0.5 * float(np.abs(h - ref).sum()), h, ref)
