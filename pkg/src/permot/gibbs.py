"""Permanental point processes: densities, samplers and Monte-Carlo estimators.

A configuration ``x_1..x_N`` has unnormalized log-density

    e * log Per(exp(a)) - beta_N * sum phi0(x_i) + sum log rho0(x_i)

where ``a_ij = -beta_star * c(x_i, t_j)`` with targets ``t_j`` (the scaled
lattice cloud unless quenched targets are given) and the exponent is
``e = coupling * beta_N / beta_star``.  With the default linear cost and
``beta_star = k`` the kernel entries are ``x_i . p_j`` for the integer
points ``p_j`` of ``kP``.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .assignment import EmpiricalMeasure, min_cost_assignment
from .convexcalc import DiscreteMeasure
from .geometry import ConvexBody, LatticeCloud, lattice_points
from .permanent import (PrecisionLossError, _as_conf, batched_log_permanent_small,
                        linear_cost, log_permanent, log_permanent_and_marginals_batch,
                        log_permanent_batch, MARGINAL_MAX_N)
from .weights import WeightedMeasure, exponential_family_sampler

EXACT_TABLE_MAX = 10 ** 6
AUDIT_EVERY = 10_000
_SMALL_N = 6


class ChainAbort(RuntimeError):
    """A Markov chain stopped on a numerical error; carries diagnostics."""

    def __init__(self, message: str, step: int, conf: np.ndarray):
        super().__init__(f"{message} (step {step})")
        self.step = step
        self.conf = conf


class LowEffectiveSampleWarning(UserWarning):
    """Importance weights degenerated: fewer than M/10 effective samples."""


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Generator for the stream ``(seed, *stream)``; independent across streams."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream)))


# -- model description ----------------------------------------------------------

@dataclass
class DiscreteSpace:
    """Finite state space: support points, probability weights and weight values."""

    points: np.ndarray
    weights: np.ndarray
    phi0: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, float)
        self.points = pts[:, None] if pts.ndim == 1 else pts
        self.weights = np.asarray(self.weights, float).ravel()
        if self.weights.shape[0] != self.points.shape[0]:
            raise ValueError("one weight per support point")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1) > 1e-12:
            raise ValueError("weights must be positive and sum to one")
        self.phi0 = np.zeros(self.m) if self.phi0 is None else np.asarray(self.phi0, float).ravel()

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class GibbsSpec:
    """Parameters of a permanental Gibbs measure.

    Parameters
    ----------
    body : ConvexBody
        Target body ``P``.
    k : int
        Lattice scale; the cloud is the integer points of ``kP``.
    measure : WeightedMeasure
        Reference density and weight on the window.
    beta : {"k"} or float or callable
        Inverse temperature ``beta_N``.  ``"k"`` is the pure permanental
        case; a callable ``N -> beta_N`` is accepted but marked unvalidated.
    coupling : float
        Factor in front of the log-permanent; ``0`` gives the product law.
    cost : callable, optional
        Cost ``c(x, t)``; linear ``-x . t`` when omitted.
    beta_star : float or callable, optional
        Kernel scale; ``k`` when omitted.
    targets : ndarray, optional
        Quenched target points replacing the scaled cloud.
    """

    body: ConvexBody
    k: int
    measure: WeightedMeasure
    beta: float | str | Callable = "k"
    coupling: float = 1.0
    cost: Callable | None = None
    beta_star: float | Callable | None = None
    targets: np.ndarray | None = None
    cloud: LatticeCloud = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.cloud = lattice_points(self.body, self.k)
        if self.measure.dim != self.body.dim:
            raise ValueError("measure and body dimensions differ")
        if self.targets is not None:
            t = np.asarray(self.targets, float)
            self.targets = t[:, None] if t.ndim == 1 else t
            if self.targets.shape != (self.N, self.dim):
                raise ValueError(f"expected {self.N} targets of dimension {self.dim}")
        if not self.beta_N > 0:
            raise ValueError("beta_N must be positive")

    @property
    def N(self) -> int:
        return self.cloud.N

    @property
    def dim(self) -> int:
        return self.cloud.dim

    @property
    def beta_N(self) -> float:
        if isinstance(self.beta, str):
            if self.beta != "k":
                raise ValueError(f"unknown beta rule {self.beta!r}")
            return float(self.k)
        if callable(self.beta):
            return float(self.beta(self.N))
        return float(self.beta)

    @property
    def schedule_validated(self) -> bool:
        """Built-in rules are constant beta and ``beta_N = k``."""
        return not callable(self.beta)

    @property
    def beta_star_value(self) -> float:
        if self.beta_star is None:
            return float(self.k)
        if callable(self.beta_star):
            return float(self.beta_star(self.N))
        return float(self.beta_star)

    @property
    def exponent(self) -> float:
        return self.coupling * self.beta_N / self.beta_star_value

    @property
    def pure_lattice(self) -> bool:
        return self.cost is None and self.beta_star is None and self.targets is None

    @property
    def target_points(self) -> np.ndarray:
        return self.cloud.scaled if self.targets is None else self.targets

    def with_targets(self, targets: np.ndarray) -> "GibbsSpec":
        return replace(self, targets=targets)

    def log_kernels(self, confs: np.ndarray) -> np.ndarray:
        """Log-kernels for a stack of configurations ``(B, N, n)``."""
        x = np.asarray(confs, float)
        if self.pure_lattice:
            return x @ self.cloud.points.T.astype(float)
        c = linear_cost if self.cost is None else self.cost
        t = self.target_points
        return -self.beta_star_value * c(x[:, :, None, :], t[None, None, :, :])

    def log_kernel(self, conf) -> np.ndarray:
        return self.log_kernels(_as_conf(conf, self.dim)[None])[0]

    def hamiltonian_scale(self) -> float:
        """Factor ``coupling / beta_star`` multiplying ``-log Per`` in ``H``."""
        return self.coupling / self.beta_star_value


def logper_many(a: np.ndarray, marginals: bool = False):
    """Log-permanents (and optionally marginals) of a stack ``(B, N, N)``."""
    a = np.asarray(a, float)
    B, N, _ = a.shape
    if N == 1:
        lp = a[:, 0, 0].copy()
        return (lp, np.ones((B, 1, 1))) if marginals else lp
    if N <= _SMALL_N:
        step = max(1, (1 << 21) // math.factorial(N))
        lps, Ms = [], []
        for s in range(0, B, step):
            lp, M = batched_log_permanent_small(a[s:s + step])
            lps.append(lp)
            Ms.append(M)
        lp = np.concatenate(lps)
        return (lp, np.concatenate(Ms)) if marginals else lp
    if marginals:
        return log_permanent_and_marginals_batch(a)
    return log_permanent_batch(a)


# -- densities ------------------------------------------------------------------

def _log_density_many(spec: GibbsSpec, confs: np.ndarray) -> np.ndarray:
    x = np.asarray(confs, float)
    B, N, n = x.shape
    flat = x.reshape(-1, n)
    out = (-spec.beta_N * spec.measure.phi0(flat) + spec.measure.log_rho(flat)).reshape(B, N).sum(1)
    ok = np.isfinite(out)
    if spec.exponent != 0 and np.any(ok):
        out[ok] += spec.exponent * logper_many(spec.log_kernels(x[ok]))
    return np.where(ok, out, -np.inf)


def log_density_unnormalized(spec: GibbsSpec, conf) -> float:
    """Unnormalized log-density; ``-inf`` outside the support window."""
    x = _as_conf(conf, spec.dim)
    if x.shape[0] != spec.N:
        raise ValueError(f"configuration needs {spec.N} points")
    return float(_log_density_many(spec, x[None])[0])


def _discrete_log_weights(spec: GibbsSpec, space: DiscreteSpace, idx: np.ndarray) -> np.ndarray:
    """Log-weights of configurations given as state indices ``(B, N)``."""
    x = space.points[idx]
    out = (np.log(space.weights)[idx] - spec.beta_N * space.phi0[idx]).sum(1)
    if spec.exponent != 0:
        out = out + spec.exponent * logper_many(spec.log_kernels(x))
    return out


@dataclass(frozen=True)
class ExactDistribution:
    """Normalized table over ``m^N`` configurations (C order of state indices)."""

    table: np.ndarray
    log_Z: float

    def marginal(self, axis: int = 0) -> np.ndarray:
        other = tuple(i for i in range(self.table.ndim) if i != axis)
        return self.table.sum(axis=other)

    def log_prob(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.table)


def exact_distribution(spec: GibbsSpec, space: DiscreteSpace) -> ExactDistribution:
    """Enumerate the Gibbs measure on ``space^N`` with ``N`` the cloud size.

    Reference weights are the probabilities of ``space`` and the weight
    values replace ``phi0``, so the zero Hamiltonian gives ``log Z = 0``.
    """
    N, m = spec.N, space.m
    if space.dim != spec.dim:
        raise ValueError("space and body dimensions differ")
    if m ** N > EXACT_TABLE_MAX:
        raise ValueError(f"m^N = {m ** N} exceeds {EXACT_TABLE_MAX}")
    idx = np.array(list(itertools.product(range(m), repeat=N)), dtype=np.int64).reshape(-1, N)
    lw = _discrete_log_weights(spec, space, idx)
    logZ = float(logsumexp(lw))
    return ExactDistribution(np.exp(lw - logZ).reshape((m,) * N), logZ)


def log_partition_factorized(spec: GibbsSpec) -> float:
    """Exact ``log Z`` when the exponent is one and the kernel is linear.

    Expanding the permanent, ``Z = N! prod_j int exp(a(x, t_j) - beta_N phi0) rho0``.
    """
    if abs(spec.exponent - 1) > 1e-12 or spec.cost not in (None, linear_cost):
        raise ValueError("factorization needs exponent 1 and a linear kernel")
    X, W = spec.measure.quadrature()
    base = -spec.beta_N * spec.measure.phi0(X) + spec.measure.log_rho(X)
    coef = spec.beta_star_value
    t = spec.target_points
    e = coef * (X @ t.T) + base[:, None]
    with np.errstate(divide="ignore"):
        logs = logsumexp(e + np.log(W)[:, None], axis=0)
    return float(logs.sum() + math.lgamma(spec.N + 1))


def sample_permanental_exact(spec: GibbsSpec, size: int, seed: int = 0) -> np.ndarray:
    """Exact draws when the exponent is one and the kernel linear (1D).

    The Gibbs measure is then the symmetrization of a product: draw ``x_j``
    from ``exp(beta_star x t_j - beta_N phi0) rho0`` and permute uniformly.
    """
    if abs(spec.exponent - 1) > 1e-12 or spec.cost not in (None, linear_cost):
        raise ValueError("exact sampling needs exponent 1 and a linear kernel")
    draw = exponential_family_sampler(spec.measure, spec.beta_N, spec.target_points,
                                      spec.beta_star_value)
    rng = rng_for(seed, 1)
    out = np.empty((size, spec.N, 1))
    for j in range(spec.N):
        out[:, j, 0] = draw(rng, j, size)
    for s in range(size):
        out[s] = out[s, rng.permutation(spec.N)]
    return out


# -- Markov chains --------------------------------------------------------------

@dataclass
class ChainState:
    """Current configuration with its cached log-density."""

    conf: np.ndarray
    log_density: float
    step: int = 0
    stream: tuple = ()


@dataclass
class McmcResult:
    samples: np.ndarray
    acceptance: float
    scale: float | None
    state: ChainState


def _mcmc_discrete(spec, space, T, burn_in, seed, thin, init):
    rng = rng_for(seed, 0)
    N, m = spec.N, space.m
    state = np.array(init if init is not None else rng.integers(0, m, N), dtype=np.int64)
    memo: dict[tuple, float] = {}

    def logw(s: np.ndarray) -> float:
        key = tuple(sorted(s.tolist()))
        if key not in memo:
            memo[key] = float(_discrete_log_weights(spec, space, s[None])[0])
        return memo[key]

    cur = logw(state)
    total = burn_in + T
    who = rng.integers(0, N, total)
    shift = rng.integers(1, m, total)
    logu = np.log(rng.random(total))
    kept = []
    acc = 0
    for t in range(total):
        i = who[t]
        old = state[i]
        state[i] = (old + shift[t]) % m
        new = logw(state)
        if logu[t] < new - cur:
            cur = new
            acc += t >= burn_in
        else:
            state[i] = old
        if t >= burn_in and (t - burn_in) % thin == 0:
            kept.append(state.copy())
    return McmcResult(np.array(kept), acc / max(T, 1), None,
                      ChainState(state.copy(), cur, total, (seed, 0)))


def mcmc_sample(spec: GibbsSpec, T: int, burn_in: int = 1000, seed: int = 0,
                space: DiscreteSpace | None = None, thin: int = 1,
                init: np.ndarray | None = None, scale: float | None = None) -> McmcResult:
    """Single-particle random-walk Metropolis chain.

    On a discrete space the proposal moves one particle to a uniformly chosen
    different state.  Otherwise it adds a Gaussian step to one particle; the
    step size is adapted during burn-in towards acceptance 0.35 and then
    frozen.  Every proposal recomputes the full log-permanent, and the
    cached log-density is audited every ``AUDIT_EVERY`` steps.

    Returns
    -------
    McmcResult
        ``samples`` holds state indices ``(T // thin, N)`` on a discrete
        space and points ``(T // thin, N, n)`` otherwise.
    """
    if space is not None:
        return _mcmc_discrete(spec, space, T, burn_in, seed, thin, init)
    rng = rng_for(seed, 0)
    meas = spec.measure
    x = meas.sample(rng, spec.N) if init is None else np.array(_as_conf(init, spec.dim))
    h = float(scale if scale is not None else 0.2 * np.min(meas.upper - meas.lower))
    cur = log_density_unnormalized(spec, x)
    if not np.isfinite(cur):
        raise ValueError("initial configuration has zero density")
    kept, acc, window_acc = [], 0, 0
    total = burn_in + T
    for t in range(total):
        i = int(rng.integers(spec.N))
        old = x[i].copy()
        x[i] = old + h * rng.standard_normal(spec.dim)
        try:
            new = log_density_unnormalized(spec, x)
        except PrecisionLossError as exc:
            raise ChainAbort(f"permanent precision loss: {exc}", t, x.copy()) from exc
        if np.log(rng.random()) < new - cur:
            cur = new
            window_acc += 1
            acc += t >= burn_in
        else:
            x[i] = old
        if t < burn_in and (t + 1) % 100 == 0:
            rate = window_acc / 100
            if not 0.2 <= rate <= 0.5:
                h *= math.exp(rate - 0.35)
            window_acc = 0
        if (t + 1) % AUDIT_EVERY == 0:
            check = log_density_unnormalized(spec, x)
            if abs(check - cur) > 1e-9 * max(1.0, abs(cur)):
                raise ChainAbort("cached log-density drifted", t, x.copy())
        if t >= burn_in and (t - burn_in) % thin == 0:
            kept.append(x.copy())
    return McmcResult(np.array(kept), acc / max(T, 1), h,
                      ChainState(x.copy(), cur, total, (seed, 0)))


# -- Monte-Carlo estimators -----------------------------------------------------

@dataclass
class Estimate:
    """Point estimates with standard errors; ``low_ess`` flags weight degeneracy."""

    x: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    low_ess: np.ndarray | None = None

    def rows(self) -> np.ndarray:
        v = self.value.reshape(self.x.shape[0], -1)
        s = self.stderr.reshape(self.x.shape[0], -1)
        return np.column_stack([self.x, v, s])


def _stack_first_row(queries: np.ndarray, companions: np.ndarray) -> np.ndarray:
    """All configurations ``(q, y_m)``: shape ``(Q * M, N, n)``, query-major."""
    Q, M = queries.shape[0], companions.shape[0]
    first = np.broadcast_to(queries[:, None, None, :], (Q, M, 1, queries.shape[1]))
    rest = np.broadcast_to(companions[None], (Q,) + companions.shape)
    return np.concatenate([first, rest], axis=2).reshape(Q * M, -1, queries.shape[1])


def _logpers_first_row(spec: GibbsSpec, queries: np.ndarray, companions: np.ndarray,
                       chunk: int = 4096) -> np.ndarray:
    """``log Per`` with first row each query and the rest each companion tuple; ``(Q, M)``."""
    Q, M = queries.shape[0], companions.shape[0]
    out = np.empty((Q, M))
    for q in range(Q):
        for s in range(0, M, chunk):
            conf = _stack_first_row(queries[q:q + 1], companions[s:s + chunk])
            out[q, s:s + chunk] = logper_many(spec.log_kernels(conf))
    return out


def _jackknife_lme(L: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log-mean-exp over the last axis, its jackknife replicates and ESS."""
    M = L.shape[-1]
    mx = L.max(axis=-1, keepdims=True)
    w = np.exp(L - mx)
    S = w.sum(-1, keepdims=True)
    full = np.log(S[..., 0] / M) + mx[..., 0]
    loo = np.log(np.maximum(S - w, 1e-300 * S) / (M - 1)) + mx
    ess = S[..., 0] ** 2 / np.sum(w ** 2, axis=-1)
    return full, loo, ess


def estimate_phi_beta(spec: GibbsSpec, queries, M: int = 1000, seed: int = 0) -> Estimate:
    """Finite-N potential whose tilt of ``exp(-beta phi0) mu0`` is the one-point correlation.

    With ``e = spec.exponent``, ``nu`` the normalized
    ``exp(-beta phi0) mu0`` and ``m_nu`` its mass, the estimate at ``x`` is
    ``(1/beta) [lme_m e L(x, y_m) - lme_m e L(x'_m, y_m) - log m_nu]`` where
    ``L`` is the log-permanent, ``y_m`` are i.i.d. ``(N-1)``-tuples from
    ``nu``, ``x'_m`` are independent draws from ``nu`` and ``lme`` is the
    log of the sample mean of exponentials.  Standard errors are jackknife
    estimates over the ``M`` draws.
    """
    beta = spec.beta_N
    q = _as_conf(queries, spec.dim)
    nu = spec.measure.tilted(beta)
    e = spec.exponent
    if spec.N == 1:
        # no companions: the normalizing integral is a quadrature
        X, W = spec.measure.quadrature()
        Lz = e * spec.log_kernels(X[:, None, :])[:, 0, 0]
        dens = nu.density(X)
        with np.errstate(divide="ignore"):
            logZ = float(logsumexp(Lz + np.log(W * dens)))
        L = e * spec.log_kernels(q[:, None, :])[:, 0, 0]
        val = (L - logZ - nu.log_mass) / beta
        return Estimate(q, val, np.zeros_like(val), np.zeros(q.shape[0], bool))
    rng = rng_for(seed, 2)
    y = nu.sample(rng, M * (spec.N - 1)).reshape(M, spec.N - 1, spec.dim)
    xz = nu.sample(rng, M)
    L = e * _logpers_first_row(spec, q, y)
    Lz = e * logper_many(spec.log_kernels(np.concatenate([xz[:, None, :], y], axis=1)))
    fq, loo_q, ess_q = _jackknife_lme(L)
    fz, loo_z, ess_z = _jackknife_lme(Lz[None])
    val = (fq - fz[0] - nu.log_mass) / beta
    reps = (loo_q - loo_z) / beta
    se = np.sqrt((M - 1) / M * np.sum((reps - reps.mean(-1, keepdims=True)) ** 2, axis=-1))
    low = (ess_q < M / 10) | (ess_z[0] < M / 10)
    if np.any(low):
        warnings.warn("effective sample size below M/10", LowEffectiveSampleWarning, stacklevel=2)
    return Estimate(q, val, se, low)


def _anchor_nodes(spec: GibbsSpec, rng: np.random.Generator, M: int):
    """Quadrature nodes for the normalizing average: Gauss nodes in 1D, one
    fresh draw per sample in 2D."""
    meas = spec.measure
    if spec.dim == 1:
        X, W = meas.quadrature(order=8, panels=2)
        w = W * meas.rho(X)
        return X, w / w.sum(), None
    return None, None, meas.sample(rng, M)


def estimate_phi_zero(spec: GibbsSpec, queries, M: int = 1000, seed: int = 0) -> Estimate:
    """``(1/beta_star) E log Per(x, y)`` minus its ``rho0``-average, ``y ~ rho0^{N-1}``.

    The weight plays no role.  The average is taken with the same companion
    draws, so the standard error comes from per-draw differences.
    """
    q = _as_conf(queries, spec.dim)
    rng = rng_for(seed, 3)
    scale = spec.beta_star_value
    if spec.N == 1:
        X, W = spec.measure.quadrature()
        w = W * spec.measure.rho(X)
        L = spec.log_kernels(q[:, None, :])[:, 0, 0] / scale
        c = float(np.sum(w * spec.log_kernels(X[:, None, :])[:, 0, 0]) / w.sum()) / scale
        return Estimate(q, L - c, np.zeros(q.shape[0]))
    y = spec.measure.sample(rng, M * (spec.N - 1)).reshape(M, spec.N - 1, spec.dim)
    L = _logpers_first_row(spec, q, y) / scale
    X, w, fresh = _anchor_nodes(spec, rng, M)
    if X is not None:
        c = w @ (_logpers_first_row(spec, X, y) / scale)
    else:
        c = logper_many(spec.log_kernels(np.concatenate([fresh[:, None, :], y], axis=1))) / scale
    d = L - c[None, :]
    return Estimate(q, d.mean(1), d.std(1, ddof=1) / np.sqrt(M))


def _initial_matching(a: np.ndarray) -> np.ndarray:
    B, N, _ = a.shape
    return np.stack([min_cost_assignment(-a[b]).sigma for b in range(B)])


def _sorted_matching(conf: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Monotone matching of points to targets in 1D, a cheap chain start."""
    ranks = np.argsort(np.argsort(conf[:, :, 0], axis=1, kind="stable"), axis=1)
    return np.argsort(t[:, 0], kind="stable")[ranks]


def _row0_targets_mcmc(a: np.ndarray, t: np.ndarray, rng: np.random.Generator,
                       burn: int, steps: int, record_every: int = 4,
                       sigma0: np.ndarray | None = None) -> np.ndarray:
    """Rao-Blackwellized estimate of ``sum_j M_0j t_j`` for each matrix in ``a``.

    Runs one Metropolis chain per matrix on permutations with weight
    ``exp(sum_i a[i, sigma(i)])``.  Proposals swap the columns of two rows,
    the second row chosen either uniformly or as the holder of an adjacent
    column; row 0 is picked half of the time.  Both proposals are symmetric.
    Each recorded state contributes the exact conditional mean of
    ``t[sigma(0)]`` over a swap of row 0 with every other row.
    """
    B, N, _ = a.shape
    sigma = _initial_matching(a) if sigma0 is None else sigma0.copy()
    inv = np.empty_like(sigma)
    rows = np.arange(B)
    inv[rows[:, None], sigma] = np.arange(N)[None, :]
    acc = np.zeros((B, t.shape[1]))
    count = 0
    others = np.arange(1, N)
    for it in range(burn + steps):
        i = np.where(rng.random(B) < 0.5, 0, rng.integers(0, N, B))
        local = rng.random(B) < 0.5
        d = np.where(rng.random(B) < 0.5, -1, 1)
        col = sigma[rows, i] + d
        valid = ~local | ((col >= 0) & (col < N))
        l_local = inv[rows, np.clip(col, 0, N - 1)]
        l_rand = (i + rng.integers(1, N, B)) % N
        l = np.where(local, l_local, l_rand)
        si, sl = sigma[rows, i], sigma[rows, l]
        delta = a[rows, i, sl] + a[rows, l, si] - a[rows, i, si] - a[rows, l, sl]
        ok = valid & (np.log(rng.random(B)) < delta)
        b = rows[ok]
        sigma[b, i[ok]], sigma[b, l[ok]] = sl[ok], si[ok]
        inv[b, sl[ok]], inv[b, si[ok]] = i[ok], l[ok]
        if it >= burn and (it - burn) % record_every == 0:
            s0 = sigma[:, :1]
            so = sigma[:, 1:]
            dl = (np.take_along_axis(a[:, 0, :], so, 1) + a[rows[:, None], others[None, :], s0]
                  - np.take_along_axis(a[:, 0, :], s0, 1)
                  - np.take_along_axis(a[:, 1:, :], so[:, :, None], 2)[:, :, 0])
            w = 0.5 * (1 + np.tanh(0.5 * dl))  # swap probability, overflow-free sigmoid
            est = ((1 - w)[:, :, None] * t[s0[:, 0]][:, None, :] + w[:, :, None] * t[so]).mean(1)
            acc += est
            count += 1
    return acc / count


def estimate_transport_map(spec: GibbsSpec, queries, M: int = 1000, seed: int = 0,
                           exact_max_n: int = MARGINAL_MAX_N, burn: int | None = None,
                           steps: int | None = None) -> Estimate:
    """Finite-N transport map ``E_y sum_j M_0j(x, y) t_j`` with ``y ~ rho0^{N-1}``.

    ``M`` is the marginal matrix of the kernel whose first row is the query.
    Up to ``exact_max_n`` points it is computed exactly; beyond that its first
    row is estimated by a Markov chain on permutations, one chain per draw.
    Each per-draw value is a convex combination of targets, so the estimate
    lies in ``P``.
    """
    q = _as_conf(queries, spec.dim)
    t = spec.target_points
    N = spec.N
    if N == 1:
        v = np.broadcast_to(t[0], q.shape).copy()
        return Estimate(q, v, np.zeros_like(v))
    rng = rng_for(seed, 4)
    y = spec.measure.sample(rng, M * (N - 1)).reshape(M, N - 1, spec.dim)
    vals = np.empty((q.shape[0], M, spec.dim))
    for qi in range(q.shape[0]):
        conf = _stack_first_row(q[qi:qi + 1], y)
        a = spec.log_kernels(conf)
        if N <= exact_max_n:
            for s in range(0, M, 2048):
                _, Mm = logper_many(a[s:s + 2048], marginals=True)
                vals[qi, s:s + 2048] = Mm[:, 0, :] @ t
        else:
            b_ = burn if burn is not None else 60 * N
            st = steps if steps is not None else 120 * N
            start = _sorted_matching(conf, t) if spec.dim == 1 else None
            vals[qi] = _row0_targets_mcmc(a, t, rng_for(seed, 5, qi), b_, st, sigma0=start)
    est = vals.mean(1)
    se = vals.std(1, ddof=1) / np.sqrt(M)
    return Estimate(q, est, se)


@dataclass
class QuenchedEstimate:
    """Potential, one-point log-density and map under random targets."""

    x: np.ndarray
    potential: np.ndarray
    potential_se: np.ndarray
    log_density: np.ndarray
    log_density_se: np.ndarray
    map: np.ndarray
    map_se: np.ndarray


def quenched_estimate(spec: GibbsSpec, target_measure: WeightedMeasure, queries,
                      M_x: int = 200, M_p: int = 20, seed: int = 0) -> QuenchedEstimate:
    """Estimators with target points drawn i.i.d. from ``target_measure``.

    For each of ``M_p`` target draws the inner estimators of
    :func:`estimate_phi_zero` and :func:`estimate_transport_map` run with
    ``M_x`` companion tuples and the kernel ``-beta_star c(x, t)``.  The
    one-point log-density is ``log rho0(x) + lme_m L(x, y_m) - lme_m L(x'_m, y_m)``
    with ``L = log Per``.  Standard errors come from the spread across the
    ``M_p`` outer draws.
    """
    q = _as_conf(queries, spec.dim)
    Qn = q.shape[0]
    rng = rng_for(seed, 6)
    pot = np.empty((M_p, Qn))
    logd = np.empty((M_p, Qn))
    mp = np.empty((M_p, Qn, spec.dim))
    for r in range(M_p):
        t = target_measure.sample(rng, spec.N)
        sp_r = spec.with_targets(t)
        phi = estimate_phi_zero(sp_r, q, M_x, seed=int(rng.integers(2 ** 31)))
        pot[r] = phi.value
        tm = estimate_transport_map(sp_r, q, M_x, seed=int(rng.integers(2 ** 31)))
        mp[r] = tm.value
        if spec.N == 1:
            X, W = spec.measure.quadrature()
            L = sp_r.log_kernels(q[:, None, :])[:, 0, 0]
            Lz = logsumexp(sp_r.log_kernels(X[:, None, :])[:, 0, 0], b=W * spec.measure.rho(X))
            logd[r] = spec.measure.log_rho(q) + L - Lz
            continue
        y = spec.measure.sample(rng, M_x * (spec.N - 1)).reshape(M_x, spec.N - 1, spec.dim)
        xz = spec.measure.sample(rng, M_x)
        L = _logpers_first_row(sp_r, q, y)
        Lz = logper_many(sp_r.log_kernels(np.concatenate([xz[:, None, :], y], axis=1)))
        logd[r] = spec.measure.log_rho(q) + _jackknife_lme(L)[0] - _jackknife_lme(Lz[None])[0][0]
    sq = np.sqrt(M_p)
    ddof = 1 if M_p > 1 else 0
    return QuenchedEstimate(q, pot.mean(0), pot.std(0, ddof=ddof) / sq,
                            logd.mean(0), logd.std(0, ddof=ddof) / sq,
                            mp.mean(0), mp.std(0, ddof=ddof) / sq)


# -- empirical measures -----------------------------------------------------------

def empirical_measure(conf) -> EmpiricalMeasure:
    return EmpiricalMeasure(np.asarray(conf, float))


def one_point_histogram(stream, bins) -> DiscreteMeasure:
    """Histogram of all particle positions in a sample stream.

    ``bins`` are bin edges (1D) or a pair of edge arrays (2D); masses are
    counts divided by the total number of particle positions.
    """
    pts = np.asarray(stream, float)
    dim = 1 if pts.ndim <= 2 else pts.shape[-1]
    pts = pts.reshape(-1, dim)
    if pts.shape[0] == 0:
        raise ValueError("empty stream")
    if dim == 1:
        edges = np.asarray(bins, float)
        counts, _ = np.histogram(pts[:, 0], edges)
        centres = 0.5 * (edges[1:] + edges[:-1])
        return DiscreteMeasure(centres, counts / pts.shape[0])
    ex, ey = (np.asarray(b, float) for b in bins)
    counts, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], [ex, ey])
    cx, cy = 0.5 * (ex[1:] + ex[:-1]), 0.5 * (ey[1:] + ey[:-1])
    centres = np.stack(np.meshgrid(cx, cy, indexing="ij"), -1).reshape(-1, 2)
    return DiscreteMeasure(centres, counts.ravel() / pts.shape[0])
