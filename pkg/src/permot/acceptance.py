"""Acceptance checks, one function per criterion.

Each check returns a :class:`CriterionResult` with the measured quantities
and a pass flag computed at the stated tolerance.  The pytest suite and the
``verify`` subcommand both call these functions.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import assignment as asg
from . import convexcalc as cc
from . import gibbs as gb
from . import langevin as lv
from . import meanfield as mf
from . import permanent as pm
from .geometry import ConvexBody, lattice_points, volume
from .weights import WeightedMeasure


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        return f"[{tag}] {self.number:02d} {self.title}: {shown} ({self.seconds:.1f}s)"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


CRITERIA: dict[int, Callable[[], CriterionResult]] = {}


def criterion(number: int, title: str):
    def wrap(fn):
        def run() -> CriterionResult:
            t0 = time.perf_counter()
            passed, metrics = fn()
            return CriterionResult(number, title, bool(passed), metrics, time.perf_counter() - t0)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        CRITERIA[number] = run
        return run
    return wrap


@criterion(1, "permanent oracle")
def permanent_oracle():
    rng = np.random.default_rng(101)
    mats = [rng.uniform(-30, 30, (n, n)) for n in rng.integers(1, 9, 100)]
    t0 = time.perf_counter()
    errs = {"glynn": 0.0, "ryser": 0.0}
    for a in mats:
        ref = pm.log_permanent_exact(a)
        for method in errs:
            v = pm.log_permanent(a, method=method)
            errs[method] = max(errs[method], abs(v - ref) / max(1.0, abs(ref)))
    elapsed = time.perf_counter() - t0
    ok = max(errs.values()) <= 1e-10 and elapsed < 5.0
    return ok, {"max_rel_err_glynn": errs["glynn"], "max_rel_err_ryser": errs["ryser"],
                "runtime_s": elapsed}


@criterion(2, "marginals doubly stochastic, gradient")
def marginals_and_gradient():
    rng = np.random.default_rng(102)
    worst_sum = 0.0
    for n in rng.integers(2, 11, 50):
        a = rng.uniform(-5, 5, (n, n))
        M = pm.marginal_matrix(a)
        worst_sum = max(worst_sum, np.abs(M.sum(0) - 1).max(), np.abs(M.sum(1) - 1).max())
    worst_grad = 0.0
    body = ConvexBody.interval(-1, 1)
    for k in (1, 2, 3, 4):
        cloud = lattice_points(body, k)
        for _ in range(5):
            x = rng.uniform(-1, 1, cloud.N)
            g = pm.grad_log_permanent(x, cloud)[:, 0]
            h = 1e-5
            fd = np.empty(cloud.N)
            for i in range(cloud.N):
                e = np.zeros(cloud.N)
                e[i] = h
                fd[i] = (pm.log_permanent(pm.kernel(x + e, cloud))
                         - pm.log_permanent(pm.kernel(x - e, cloud))) / (2 * h)
            worst_grad = max(worst_grad, float(np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd)))))
    return worst_sum <= 1e-8 and worst_grad <= 1e-6, {"max_sum_err": worst_sum,
                                                     "max_grad_rel_err": worst_grad}


def _sandwich_bodies():
    out = [(ConvexBody.interval(-1, 1), k) for k in (1, 2, 3, 4)]
    out.append((ConvexBody.interval(-0.5, 1.5), 3))
    out.append((ConvexBody.box([-1, -1], [1, 1]), 1))
    out.append((ConvexBody.box([-0.5, -0.5], [0.5, 0.5]), 2))
    out.append((ConvexBody(2, [[-1, -1], [2, -1], [-1, 2]]), 1))
    return [(b, k) for b, k in out if lattice_points(b, k).N <= 9]


@criterion(3, "sandwich bound")
def sandwich():
    rng = np.random.default_rng(103)
    cases = _sandwich_bodies()
    worst = -math.inf
    for trial in range(50):
        body, k = cases[trial % len(cases)]
        cloud = lattice_points(body, k)
        x = rng.uniform(-3, 3, (cloud.N, cloud.dim))
        lo, val, hi = pm.sandwich_bounds(x, cloud)
        worst = max(worst, lo - val, val - hi)
    return worst <= 1e-9, {"max_violation": worst, "instances": 50}


@criterion(4, "Birkhoff: assignment equals LP")
def birkhoff():
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(20):
        c = rng.normal(size=(6, 6))
        lp, _ = asg.kantorovich_lp(c)
        worst = max(worst, abs(asg.min_cost_assignment(c).normalized - lp))
    return worst <= 1e-9, {"max_abs_diff": worst}


def _w1_lp(x: np.ndarray, y: np.ndarray) -> float:
    """Wasserstein-1 between empirical measures by the transport LP on merged atoms."""
    from scipy.optimize import linprog

    ax, mx = asg.EmpiricalMeasure(x).atoms()
    ay, my = asg.EmpiricalMeasure(y).atoms()
    d = np.sqrt(((ax[:, None, :] - ay[None, :, :]) ** 2).sum(-1))
    a, b = len(mx), len(my)
    A = np.zeros((a + b, a * b))
    for i in range(a):
        A[i, i * b:(i + 1) * b] = 1
    for j in range(b):
        A[a + j, j::b] = 1
    res = linprog(d.ravel(), A_eq=A, b_eq=np.concatenate([mx, my]), bounds=(0, None),
                  method="highs-ds")
    return float(res.fun)


@criterion(5, "Wasserstein isometry")
def wasserstein_isometry():
    rng = np.random.default_rng(105)
    worst = 0.0
    for t in range(20):
        N, n = int(rng.integers(2, 8)), int(rng.integers(1, 3))
        x = rng.integers(-2, 3, (N, n)).astype(float)  # repeated atoms are common
        y = rng.integers(-2, 3, (N, n)).astype(float)
        worst = max(worst, abs(_w1_lp(x, y) - asg.wasserstein1(x, y)))
    return worst <= 1e-9, {"max_abs_diff": worst}


def _random_weight(rng):
    a, b, c, d, e = rng.uniform(-1, 1, 5)
    return lambda X: (1 + a) * X[:, 0] ** 2 + b * np.abs(X[:, 0] - c) + 0.3 * d * np.cos(3 * X[:, 0]) + e


@criterion(6, "envelope biconjugacy")
def envelope_biconjugacy():
    rng = np.random.default_rng(106)
    body = ConvexBody.interval(-1, 1)
    grid = cc.Grid(-3, 3, 6001)
    h = float(grid.spacing[0])
    pg, _ = cc.body_grid(body, 2001)
    bound = 2 * h * body.diameter
    weights = [lambda X: X[:, 0] ** 2] + [_random_weight(rng) for _ in range(10)]
    worst, value_at_1 = 0.0, None
    for i, w in enumerate(weights):
        f = cc.GridFunction.sample(w, grid)
        env = cc.envelope(f, body)
        gap = np.max(np.abs(cc.legendre(env, pg).values - cc.legendre(f, pg).values))
        worst = max(worst, float(gap))
        if i == 0:
            value_at_1 = float(np.interp(1.0, grid.axes[0], env.values))
    ok = worst <= bound and abs(value_at_1 - 0.75) <= 2 * h
    return ok, {"max_conjugate_gap": worst, "bound": bound, "phi_e(1)": value_at_1}


def _random_p_plus(rng, grid, slopes):
    """Envelope of a random weight with affine extension at the body's slopes."""
    body = ConvexBody.interval(*slopes)
    f = cc.GridFunction.sample(_random_weight(rng), grid)
    env = cc.envelope(f, body, dual_counts=801)
    return cc.GridFunction(grid, env.values, boundary_slopes=slopes)


@criterion(7, "Monge-Ampere mass and comparison")
def ma_mass_and_comparison():
    rng = np.random.default_rng(107)
    body = ConvexBody.interval(-1, 1)
    grid = cc.Grid(-2, 2, 801)
    worst_mass = 0.0
    worst_cmp = -math.inf
    for _ in range(100):
        u = _random_p_plus(rng, grid, (-1.0, 1.0))
        v = _random_p_plus(rng, grid, (-1.0, 1.0))
        r = cc.check_comparison(u, v, body)
        worst_cmp = max(worst_cmp, r.lhs - r.rhs)
        worst_mass = max(worst_mass, abs(cc.ma_total_mass(u) - volume(body)) / volume(body))
    # 2D: quadratic and a random-tilted cone on the unit box with P = [-1, 1]^2
    box = ConvexBody.box([-1, -1], [1, 1])
    g2 = cc.Grid((-1, -1), (1, 1), (61, 61))
    for f in (lambda X: 0.5 * (X ** 2).sum(1),
              lambda X: np.abs(X[:, 0]) + np.abs(X[:, 1]) + 0.2 * X[:, 0]):
        m = cc.ma_total_mass(cc.GridFunction.sample(f, g2), box)
        worst_mass = max(worst_mass, abs(m - volume(box)) / volume(box))
    gc = cc.Grid.cell_centered(-1, 1, 100)
    x = gc.axes[0]
    ex = cc.check_comparison(cc.GridFunction(gc, x ** 2 / 2, boundary_slopes=(-1, 1)),
                             cc.GridFunction(gc, 0.3 * np.abs(x), boundary_slopes=(-1, 1)), body)
    exact = abs(ex.lhs - 0.6) <= 1e-12 and abs(ex.rhs - 1.2) <= 1e-12
    ok = worst_mass <= 0.01 and worst_cmp <= 1e-9 and exact
    return ok, {"max_rel_mass_err": worst_mass, "max_lhs_minus_rhs": worst_cmp,
                "worked_pair": (ex.lhs, ex.rhs)}


def _discrete_instances():
    rng = np.random.default_rng(108)
    out = []
    for m, (a, b, k) in [(2, (0, 1, 1)), (3, (-1, 1, 1)), (4, (0, 1, 1)), (5, (-1, 1, 1)),
                         (6, (0, 1, 1)), (3, (0, 2, 1))]:
        body = ConvexBody.interval(a, b)
        meas = WeightedMeasure.uniform([-1], [1])
        pts = np.sort(rng.uniform(-1, 1, m))
        w = rng.uniform(0.5, 1.5, m)
        space = gb.DiscreteSpace(pts, w / w.sum(), rng.uniform(-0.5, 0.5, m))
        out.append((space, gb.GibbsSpec(body, k, meas, beta=float(rng.uniform(0.5, 3)))))
    return out


@criterion(8, "Gibbs variational identity")
def gibbs_variational():
    rng = np.random.default_rng(109)
    worst, gaps_ok = 0.0, True
    for space, spec in _discrete_instances():
        m, N = space.m, spec.N
        comps = [np.full(m ** N, 1.0 / m ** N)]
        prod = space.weights
        for _ in range(N - 1):
            prod = np.multiply.outer(prod, space.weights)
        comps.append(prod.ravel())
        for _ in range(5):
            c = rng.dirichlet(np.ones(m ** N))
            comps.append(c)
        rep = mf.gibbs_variational_check(space, spec, comps)
        worst = max(worst, rep.identity_residual)
        gaps_ok &= rep.competitors_ok
    return worst <= 1e-10 and gaps_ok, {"max_identity_residual": worst, "competitors_larger": gaps_ok}


def mcmc_instance():
    space = gb.DiscreteSpace(np.linspace(-1, 1, 5), np.full(5, 0.2), np.linspace(-1, 1, 5) ** 2)
    spec = gb.GibbsSpec(ConvexBody.interval(0, 1), 1, WeightedMeasure.uniform([-1], [1]), beta=1.5)
    return space, spec


@criterion(9, "MCMC exactness")
def mcmc_exactness():
    space, spec = mcmc_instance()
    t0 = time.perf_counter()
    ex = gb.exact_distribution(spec, space)
    res = gb.mcmc_sample(spec, 10 ** 6, burn_in=1000, seed=9, space=space)
    elapsed = time.perf_counter() - t0
    idx = np.ravel_multi_index(res.samples.T, (space.m,) * spec.N)
    h = np.bincount(idx, minlength=space.m ** spec.N) / idx.size
    tv = 0.5 * float(np.abs(h - ex.table.ravel()).sum())
    return tv <= 0.02 and elapsed < 60, {"tv": tv, "runtime_s": elapsed}


def partition_spec(k: int) -> gb.GibbsSpec:
    meas = WeightedMeasure.uniform([-2], [2], weight="x**2")
    return gb.GibbsSpec(ConvexBody.interval(-1, 1), k, meas)


@criterion(10, "partition-function asymptotics")
def partition_asymptotics():
    gaps = []
    for k in (8, 16, 32):
        lz, ref = mf.partition_function_check(partition_spec(k))
        gaps.append(abs(lz - ref))
    monotone = all(b < a for a, b in zip(gaps, gaps[1:]))
    return gaps[-1] <= 0.05 and monotone, {"gaps_k8_16_32": gaps, "monotone": monotone}


@criterion(11, "transport map at desk scale")
def transport_map():
    spec = gb.GibbsSpec(ConvexBody.interval(0, 1), 32, WeightedMeasure.uniform([0], [1]))
    q = np.array([[0.25], [0.5], [0.75]])
    t0 = time.perf_counter()
    est = gb.estimate_transport_map(spec, q, M=2000, seed=11)
    elapsed = time.perf_counter() - t0
    err = np.abs(est.value[:, 0] - q[:, 0])
    inside = bool(np.all((est.value >= 0) & (est.value <= 1)))
    return err.max() <= 0.05 and elapsed < 600 and inside, {
        "T_N": est.value[:, 0], "stderr": est.stderr[:, 0], "max_err": err.max(),
        "in_P": inside, "runtime_s": elapsed}


def phi_beta_instance(k: int = 4):
    meas = WeightedMeasure.uniform([-1], [1], weight="x**2")
    body = ConvexBody.interval(-1, 1)
    return gb.GibbsSpec(body, k, meas, beta=4.0)


@criterion(12, "permanental potential against the 1D solver")
def phi_beta_vs_solver():
    spec = phi_beta_instance()
    sol = mf.solve_ma_1d(4.0, spec.measure, spec.body, tol=1e-8)
    sol2 = mf.solve_ma_1d(4.0, spec.measure, spec.body, tol=1e-8,
                          init=0.5 * sol.x ** 2 + 0.3)
    d = sol.values - sol2.values
    q = np.linspace(-0.5, 0.5, 11)[:, None]
    est = gb.estimate_phi_beta(spec, q, M=2000, seed=12)
    diff = est.value - np.interp(q[:, 0], sol.x, sol.values)
    sup = float(np.max(np.abs(diff - diff.mean())))
    ok = sup <= 0.05 and sol.residual <= 1e-8 and (d.max() - d.min()) <= 1e-6
    return ok, {"sup_gap_anchored": sup, "max_stderr": est.stderr.max(),
                "solver_residual": sol.residual, "init_spread": d.max() - d.min(), "N": spec.N}


@criterion(13, "beta ladder to the envelope")
def beta_ladder():
    meas = WeightedMeasure.uniform([-1], [1], weight="x**2")
    rows = mf.beta_limit_check(meas, ConvexBody.interval(-1, 1))
    gaps = [r.gap for r in rows]
    mono = all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))
    return mono and gaps[-1] <= 0.05, {"gaps": gaps}


def balanced_instance():
    space = gb.DiscreteSpace(np.linspace(-1, 1, 4), np.full(4, 0.25), np.linspace(-1, 1, 4) ** 2)
    spec = gb.GibbsSpec(ConvexBody.interval(0, 1), 1, WeightedMeasure.uniform([-1], [1]))
    return space, spec


@criterion(14, "balanced functions and contraction")
def balanced_contraction():
    space, spec = balanced_instance()
    beta = 0.5 * spec.beta_N
    factor = 1 - beta / spec.beta_N
    T = mf.GibbsTensor.build(space, spec)
    rng = np.random.default_rng(114)
    shift_err, worst_ratio = 0.0, 0.0
    for _ in range(50):
        u, v = rng.normal(0, 2, (2, space.m))
        c = float(rng.normal())
        pu = mf.pi_N_beta(space, spec, beta, u, tensor=T)
        shift_err = max(shift_err, float(np.max(np.abs(
            mf.pi_N_beta(space, spec, beta, u + c, tensor=T) - pu - factor * c))))
        pv = mf.pi_N_beta(space, spec, beta, v, tensor=T)
        worst_ratio = max(worst_ratio, float(np.max(np.abs(pu - pv)) / np.max(np.abs(u - v))))
    st = mf.balanced_fixed_point(space, spec, tol=1e-10, max_iter=200)
    ok = shift_err <= 1e-12 and worst_ratio <= factor + 1e-9 and st.residual <= 1e-8
    return ok, {"shift_err": shift_err, "max_ratio": worst_ratio, "factor": factor,
                "balance_residual": st.residual, "iterations": st.iteration}


def mean_energy_spec():
    return gb.GibbsSpec(ConvexBody.interval(0, 1), 16, WeightedMeasure.uniform([0], [1]))


@criterion(15, "mean-energy limit")
def mean_energy():
    rep = mf.mean_energy_check(mean_energy_spec(), trials=400, seed=15)
    ok = rep.gap <= 0.05 and rep.lower_bound_ok and rep.trialwise_bound_ok
    return ok, {"mc_mean": rep.mc_mean, "stderr": rep.mc_stderr, "surrogate": rep.surrogate,
                "gap": rep.gap, "lower_bound_ok": rep.lower_bound_ok}


@criterion(16, "quenched self-consistency")
def quenched_consistency():
    body = ConvexBody.interval(0, 1)
    spec = gb.GibbsSpec(body, 8, WeightedMeasure.uniform([0], [1]))
    nu = WeightedMeasure.uniform([0], [1])
    q = np.array([[0.25], [0.5], [0.75]])
    z = gb.estimate_phi_zero(spec, q, M=2000, seed=16)
    qe = gb.quenched_estimate(spec, nu, q, M_x=100, M_p=40, seed=17)
    comb = np.sqrt(z.stderr ** 2 + qe.potential_se ** 2)
    zs = np.abs(qe.potential - z.value) / comb
    return bool(np.all(zs <= 2)), {"phi_zero": z.value, "phi_quenched": qe.potential,
                                   "z_scores": zs}


def ou_spec(beta: float = 1.0):
    meas = WeightedMeasure.uniform([-6], [6], weight="x**2/2")
    return gb.GibbsSpec(ConvexBody.interval(-0.4, 0.4), 1, meas, beta=beta)


@criterion(17, "Langevin dynamics")
def langevin_checks():
    spec = ou_spec()
    rep = lv.stationarity_check(lv.SdeParams(spec, 1e-3, 200, seed=17, replicas=200,
                                             record_every=100), 20, np.linspace(-4, 4, 41))
    # noiseless descent on an interacting instance
    s2 = gb.GibbsSpec(ConvexBody.interval(-1, 1), 1,
                      WeightedMeasure.uniform([-2], [2], weight="x**2"), beta=2.0)
    dt = 1e-3
    tr = lv.integrate(lv.SdeParams(s2, dt, 2.0, seed=3, replicas=8, sigma=0.0))
    H = np.stack([lv.hamiltonian_many(s2, tr.paths[:, i]) for i in range(tr.paths.shape[1])], 1)
    worst_rise = float(np.max(np.diff(H, axis=1)))
    # weak consistency under step halving
    stats = []
    for dt_ in (2e-3, 1e-3):
        tr = lv.integrate(lv.SdeParams(spec, dt_, 1.0, seed=5, replicas=4000, record_every=10 ** 9,
                                       init=np.array([[2.0]])))
        stats.append(tr.final[:, 0, 0])
    diff = abs(np.mean(stats[0] ** 2) - np.mean(stats[1] ** 2))
    mc = math.sqrt(np.var(stats[0] ** 2) / 4000 + np.var(stats[1] ** 2) / 4000)
    ok = rep.tv <= 0.05 and worst_rise <= dt ** 2 * 10 and diff <= 2 * mc
    return ok, {"ou_tv": rep.tv, "max_energy_rise": worst_rise, "halving_diff": diff,
                "mc_error": mc}


SUITES = {
    "permanent": (1, 2, 3),
    "assignment": (4, 5),
    "convexcalc": (6, 7),
    "gibbs": (9, 11, 12, 16),
    "meanfield": (8, 10, 13, 14, 15),
    "langevin": (17,),
    "fast": (1, 2, 3, 4, 5, 6, 7, 8, 13, 14),
    "all": tuple(range(1, 18)),
}


def select(suite: str) -> list[int]:
    out: list[int] = []
    for part in suite.split(","):
        part = part.strip()
        if part in SUITES:
            out.extend(SUITES[part])
        elif part.isdigit() and int(part) in CRITERIA:
            out.append(int(part))
        else:
            raise KeyError(f"unknown suite or criterion {part!r}")
    return sorted(set(out))


def run(numbers) -> list[CriterionResult]:
    return [CRITERIA[n]() for n in numbers]
