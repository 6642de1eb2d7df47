"""Command-line front end.

Every subcommand resolves its configuration from an optional JSON file
(``--config``) merged with flags, writes its outputs to ``--out-dir`` and
records a ``manifest.json`` with the resolved configuration, the seed and
SHA-256 digests of the outputs.  Exit codes: 2 for configuration errors, 1
for numerical aborts or failed verification, 0 otherwise.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid or incomplete configuration; the message names the field."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep exit code 2 but no traceback noise
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: configuration error: {message}\n")


# -- configuration ------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _require(cfg: dict, key: str):
    if cfg.get(key) is None:
        raise ConfigError(f"field '{key}' is required")
    return cfg[key]


def build_body(cfg: dict):
    from .geometry import ConvexBody, GeometryError

    spec = _require(cfg, "body")
    try:
        if isinstance(spec, str):
            return ConvexBody.from_file(spec)
        if isinstance(spec, list):
            if len(spec) != 2:
                raise ConfigError("field 'body': an interval is a pair [a, b]")
            return ConvexBody.interval(float(spec[0]), float(spec[1]))
        return ConvexBody.from_dict(spec)
    except (GeometryError, OSError, json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"field 'body': {exc}") from exc


def _window(cfg: dict, dim: int):
    w = _require(cfg, "window")
    arr = np.asarray(w, float)
    if arr.shape == (2,) and dim == 1:
        return arr[:1], arr[1:]
    if arr.shape == (2, dim):
        return arr[0], arr[1]
    raise ConfigError(f"field 'window': expected [lo, hi] or [[lo...], [hi...]] for dimension {dim}")


def _density(value, dim: int):
    if value is None:
        return None
    if isinstance(value, str) and value.endswith(".csv"):
        try:
            tab = np.loadtxt(value, delimiter=",", skiprows=1, ndmin=2)
        except OSError as exc:
            raise ConfigError(f"field 'density': {exc}") from exc
        if dim != 1 or tab.shape[1] < 2:
            raise ConfigError("field 'density': a density table needs columns x, rho in 1D")
        xs, rs = tab[:, 0], tab[:, 1]
        return lambda X: np.interp(np.asarray(X)[:, 0], xs, rs, left=0.0, right=0.0)
    from .weights import Expression, ExpressionError

    try:
        return Expression(str(value), dim)
    except ExpressionError as exc:
        raise ConfigError(f"field 'density': {exc}") from exc


def build_measure(cfg: dict, dim: int):
    from .weights import ExpressionError, WeightedMeasure

    lo, hi = _window(cfg, dim)
    try:
        return WeightedMeasure(lo, hi, _density(cfg.get("density"), dim), cfg.get("weight"),
                               cfg.get("weight_lipschitz"))
    except ExpressionError as exc:
        raise ConfigError(f"field 'weight': {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"field 'window': {exc}") from exc


def build_spec(cfg: dict):
    from .gibbs import GibbsSpec
    from .geometry import EmptyCloudError
    from .permanent import linear_cost, quadratic_cost

    body = build_body(cfg)
    meas = build_measure(cfg, body.dim)
    beta = cfg.get("beta", "k")
    if not (beta == "k" or isinstance(beta, (int, float))):
        raise ConfigError("field 'beta': use \"k\" or a number")
    cost = {"linear": None, "quadratic": quadratic_cost, None: None}.get(cfg.get("cost"), "bad")
    if cost == "bad":
        raise ConfigError("field 'cost': use \"linear\" or \"quadratic\"")
    try:
        return GibbsSpec(body, int(_require(cfg, "k")), meas, beta,
                         float(cfg.get("coupling", 1.0)), cost, cfg.get("beta_star"))
    except EmptyCloudError as exc:
        raise ConfigError(f"field 'k': {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _queries(cfg: dict, dim: int) -> np.ndarray:
    q = np.asarray(_require(cfg, "queries"), float)
    return q.reshape(-1, dim)


# -- output --------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def emit_plot_data(series: dict, out_dir: Path, stem: str, xlabel: str, ylabel: str,
                   scatter: bool = False) -> list[Path]:
    """Write ``<stem>.dat`` (two whitespace-separated columns per series
    block) and a static SVG rendering."""
    if not series or any(len(np.asarray(x)) == 0 for x, _ in series.values()):
        raise ValueError("cannot plot an empty series")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "permot"
    dat = out_dir / f"{stem}.dat"
    lines = []
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, (x, y) in series.items():
        x, y = np.asarray(x, float).ravel(), np.asarray(y, float).ravel()
        lines.append(f"# {name}: {xlabel} {ylabel}")
        lines.extend(f"{a!r} {b!r}" for a, b in zip(x.tolist(), y.tolist()))
        lines.append("")
        if scatter:
            ax.scatter(x, y, s=8, label=name)
        else:
            ax.plot(x, y, marker="o" if x.size < 30 else None, label=name)
    dat.write_text("\n".join(lines))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    svg = out_dir / f"{stem}.svg"
    fig.savefig(svg, format="svg", metadata={"Date": None})
    plt.close(fig)
    return [dat, svg]


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, cfg: dict, seed: int, outputs: list[Path]) -> Path:
    man = {
        "command": command,
        "config": cfg,
        "seed": seed,
        "version": __version__,
        "outputs": {p.name: _digest(p) for p in sorted(outputs)},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _xcols(dim: int) -> list[str]:
    return ["x"] if dim == 1 else [f"x_{i + 1}" for i in range(dim)]


# -- subcommands ----------------------------------------------------------------

def cmd_lattice(cfg, out, ctx):
    from .geometry import lattice_csv_rows, lattice_points

    cloud = lattice_points(build_body(cfg), int(_require(cfg, "k")))
    header, rows = lattice_csv_rows(cloud)
    p = out / "lattice.csv"
    write_csv(p, header, rows)
    print(f"N = {cloud.N}")
    return [p]


def _grid_from(cfg, dim):
    from .convexcalc import Grid

    lo, hi = _window(cfg, dim)
    nodes = cfg.get("nodes", 2001 if dim == 1 else 81)
    return Grid(tuple(lo), tuple(hi), tuple(np.broadcast_to(nodes, (dim,))))


def read_grid_function(path, **kw):
    """Grid function from a CSV ``x_1,...,x_n,value`` on a regular grid (any row order)."""
    from .convexcalc import Grid, GridFunction

    try:
        with open(path) as fh:
            header = next(csv.reader(fh))
        tab = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, StopIteration, ValueError) as exc:
        raise ConfigError(f"grid function {path}: {exc}") from exc
    n = tab.shape[1] - 1
    if header != [f"x_{i + 1}" for i in range(n)] + ["value"] or n not in (1, 2):
        raise ConfigError(f"grid function {path}: header must be x_1,...,x_n,value with n <= 2")
    axes = [np.unique(tab[:, d]) for d in range(n)]
    if tab.shape[0] != math.prod(a.size for a in axes):
        raise ConfigError(f"grid function {path}: nodes do not form a tensor grid")
    for d, a in enumerate(axes):
        if a.size < 2 or not np.allclose(np.diff(a), a[1] - a[0], rtol=1e-8, atol=0):
            raise ConfigError(f"grid function {path}: axis {d + 1} is not evenly spaced")
    order = np.lexsort(tab[:, :n].T[::-1])
    grid = Grid(tuple(a[0] for a in axes), tuple(a[-1] for a in axes), tuple(a.size for a in axes))
    return GridFunction(grid, tab[order, n], **kw)


def _grid_function_arg(cfg, key, dim):
    from .convexcalc import GridFunction
    from .weights import as_weight

    spec = _require(cfg, key)
    kw = {}
    if cfg.get("boundary_slopes"):
        kw["boundary_slopes"] = tuple(float(v) for v in cfg["boundary_slopes"])
    if isinstance(spec, str) and spec.endswith(".csv"):
        f = read_grid_function(spec, **kw)
        if f.grid.dim != dim:
            raise ConfigError(f"field '{key}': grid dimension differs from the body")
        return f
    try:
        return GridFunction.sample(as_weight(spec, dim), _grid_from(cfg, dim), **kw)
    except ValueError as exc:
        raise ConfigError(f"field '{key}': {exc}") from exc


def cmd_envelope(cfg, out, ctx):
    from .convexcalc import envelope, growth_margin, incidence_set

    body = build_body(cfg)
    f = _grid_function_arg(cfg, "weight", body.dim)
    growth = growth_margin(f, body, float(cfg.get("margin", 0.0)))
    ctx["record"] = {"window_margin": growth.margin, "required_margin": growth.required}
    if not growth.ok:
        raise ConfigError(f"field 'window': phi0 - phi_P rises only {growth.margin:.3g} at the "
                          f"window edge, below the declared margin {growth.required:.3g}")
    env = envelope(f, body)
    inc = incidence_set(f, env)
    p = out / "envelope.csv"
    header, rows = env.to_rows()
    write_csv(p, header, rows)
    q = out / "contact.csv"
    write_csv(q, header[:-1] + ["phi0", "contact"],
              np.column_stack([f.points(), f.flat, inc.astype(int)]))
    outs = [p, q]
    if body.dim == 1:
        x = f.grid.axes[0]
        outs += emit_plot_data({"phi0": (x, f.flat), "phi_e": (x, env.flat)}, out,
                               "envelope", "x", "phi_e")
    return outs


def _cells(spec, f):
    """``--cells``: a count of equal cells per axis or explicit 1D edges."""
    if spec is None:
        return None
    vals = spec if isinstance(spec, list) else [spec]
    vals = [float(v) for v in vals]
    lo, hi = np.array(f.grid.lower), np.array(f.grid.upper)
    if len(vals) == 1:
        c = int(vals[0])
        if c < 1:
            raise ConfigError("field 'cells': need at least one cell")
        if f.grid.dim == 1:
            return np.linspace(lo[0], hi[0], c + 1)
        h = (hi - lo) / c

        def label(X):
            j = np.clip(np.floor((X - lo) / h).astype(int), 0, c - 1)
            return j[:, 0] * c + j[:, 1]
        return label
    if f.grid.dim != 1 or np.any(np.diff(vals) <= 0):
        raise ConfigError("field 'cells': explicit edges must be increasing and 1D")
    return np.array(vals)


def cmd_ma(cfg, out, ctx):
    from .convexcalc import ma_measure

    body = build_body(cfg)
    f = _grid_function_arg(cfg, "potential", body.dim)
    cells = _cells(cfg.get("cells"), f)
    m = ma_measure(f, cells, body)
    p = out / "ma.csv"
    if cells is None:
        write_csv(p, _xcols(body.dim) + ["MA_mass"], np.column_stack([m.points, m.masses]))
    else:
        label = "cell_centre" if body.dim == 1 else "cell"
        write_csv(p, [label, "MA_mass"], np.column_stack([m.points[:, 0], m.masses]))
    print(f"total MA mass = {m.total!r}")
    return [p]


def _read_matrix(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"matrix file {path}: {exc}") from exc


def cmd_permanent(cfg, out, ctx):
    from .assignment import min_cost_assignment
    from .permanent import log_permanent_and_marginals

    a = _read_matrix(_require(cfg, "kernel"))
    if cfg.get("scale", "log") == "linear":
        if np.any(a <= 0):
            raise ConfigError("field 'kernel': linear-scale entries must be positive")
        a = np.log(a)
    if a.shape[0] != a.shape[1]:
        raise ConfigError("field 'kernel': matrix must be square")
    lp, M = log_permanent_and_marginals(a, method=cfg.get("method", "glynn"),
                                        tol=ctx["precision_tol"])
    # the best single permutation bounds the permanent within a factor N!
    lower = -min_cost_assignment(-a).total
    upper = lower + math.lgamma(a.shape[0] + 1)
    p = out / "permanent.csv"
    write_csv(p, ["log_per", "sandwich_lower", "sandwich_upper"], [[lp, lower, upper]])
    q = out / "marginals.csv"
    write_csv(q, [f"col_{j + 1}" for j in range(M.shape[1])], M)
    print(f"log Per = {lp!r}")
    print(f"sandwich: {lower!r} <= log Per <= {upper!r}")
    print("marginals:")
    print(q.read_text(), end="")
    return [p, q]


def cmd_assign(cfg, out, ctx):
    from .assignment import min_cost_assignment

    c = _read_matrix(_require(cfg, "cost_matrix"))
    if c.shape[0] != c.shape[1]:
        raise ConfigError("field 'cost_matrix': matrix must be square")
    r = min_cost_assignment(c)
    p = out / "assignment.csv"
    write_csv(p, ["row", "sigma"], [[i + 1, s] for i, s in enumerate(r.sigma_one_based)])
    print(f"sigma = {r.sigma_one_based}")
    print(f"total = {r.total!r}")
    print(f"C(sigma)={r.normalized!r}")
    return [p]


def cmd_w1(cfg, out, ctx):
    from .assignment import wasserstein1

    a, b = _read_matrix(_require(cfg, "a")), _read_matrix(_require(cfg, "b"))
    d = wasserstein1(a, b)
    p = out / "w1.csv"
    write_csv(p, ["d_W"], [[d]])
    print(f"d_W = {d!r}")
    return [p]


def cmd_sample(cfg, out, ctx):
    from .gibbs import mcmc_sample

    spec = build_spec(cfg)
    res = mcmc_sample(spec, int(_require(cfg, "steps")), int(cfg.get("burn_in", 1000)),
                      ctx["seed"], thin=int(cfg.get("thin", 1)))
    n = spec.dim
    cols = [f"x_{i + 1}" if n == 1 else f"x_{i + 1}_{d + 1}"
            for i in range(spec.N) for d in range(n)]
    p = out / "samples.csv"
    rows = np.column_stack([np.arange(len(res.samples)), res.samples.reshape(len(res.samples), -1)])
    write_csv(p, ["step"] + cols, ([int(r[0])] + list(r[1:]) for r in rows))
    print(f"acceptance = {res.acceptance:.3f}")
    return [p]


def _estimate_rows(est, dim):
    return np.column_stack([est.x, est.value.reshape(len(est.x), -1),
                            est.stderr.reshape(len(est.x), -1)])


def cmd_estimate_potential(cfg, out, ctx):
    from .gibbs import estimate_phi_beta, estimate_phi_zero

    spec = build_spec(cfg)
    q = _queries(cfg, spec.dim)
    M = int(cfg.get("M", 1000))
    if cfg.get("mode", "beta") == "zero":
        est, name = estimate_phi_zero(spec, q, M, ctx["seed"]), "phi_N"
    else:
        est, name = estimate_phi_beta(spec, q, M, ctx["seed"]), "phi_beta_N"
    p = out / "potential.csv"
    write_csv(p, _xcols(spec.dim) + [name, "stderr"], _estimate_rows(est, spec.dim))
    return [p]


def cmd_transport_map(cfg, out, ctx):
    from .gibbs import estimate_transport_map

    spec = build_spec(cfg)
    q = _queries(cfg, spec.dim)
    est = estimate_transport_map(spec, q, int(cfg.get("M", 1000)), ctx["seed"])
    n = spec.dim
    names = ["T_N"] if n == 1 else [f"T_N_{d + 1}" for d in range(n)]
    ses = ["stderr"] if n == 1 else [f"stderr_{d + 1}" for d in range(n)]
    p = out / "transport_map.csv"
    write_csv(p, _xcols(n) + names + ses, _estimate_rows(est, n))
    outs = [p]
    if n == 1:
        outs += emit_plot_data({"T_N": (q[:, 0], est.value[:, 0])}, out, "transport_map",
                               "x", "T_N")
    return outs


def cmd_quenched(cfg, out, ctx):
    from .gibbs import quenched_estimate
    from .geometry import contains_many
    from .weights import WeightedMeasure

    spec = build_spec(cfg)
    lo, hi = spec.body.bounds
    body = spec.body
    dens = None if body.dim == 1 else (lambda X: contains_many(body, X).astype(float))
    nu = WeightedMeasure(lo, hi, dens)
    q = _queries(cfg, spec.dim)
    r = quenched_estimate(spec, nu, q, int(cfg.get("M_x", 200)), int(cfg.get("M_p", 20)),
                          ctx["seed"])
    n = spec.dim
    p = out / "quenched.csv"
    header = _xcols(n) + ["phi_N_quenched", "stderr"] + \
        [f"T_N_quenched_{d + 1}" for d in range(n)] + [f"T_stderr_{d + 1}" for d in range(n)] + \
        ["log_rho1_N", "log_rho1_stderr"]
    write_csv(p, header, np.column_stack([q, r.potential, r.potential_se, r.map, r.map_se,
                                          r.log_density, r.log_density_se]))
    return [p]


def cmd_balanced(cfg, out, ctx):
    from .geometry import ConvexBody
    from .gibbs import DiscreteSpace, GibbsSpec
    from .meanfield import balanced_fixed_point, mean_field_fixed_point
    from .weights import WeightedMeasure

    sp = _require(cfg, "space")
    if isinstance(sp, str):
        sp = load_config(sp)
    try:
        space = DiscreteSpace(sp["points"], sp["weights"], sp.get("phi0"))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"field 'space': {exc}") from exc
    body = build_body(cfg)
    lo, hi = space.points.min(0), space.points.max(0)
    meas = WeightedMeasure(lo - 1e-9, hi + 1e-9)
    betaN = cfg.get("betaN", "k")
    spec = GibbsSpec(body, int(_require(cfg, "k")), meas, betaN)
    beta = cfg.get("beta")
    tol = ctx["solver_tol"]
    st = (balanced_fixed_point(space, spec, tol=tol) if beta is None
          else mean_field_fixed_point(space, spec, float(beta), tol=tol))
    p = out / "balanced.csv"
    write_csv(p, _xcols(space.dim) + ["u_N"], np.column_stack([space.points, st.u]))
    print(f"iterations = {st.iteration}, residual = {st.residual:.3e}")
    return [p]


def cmd_solve_ma(cfg, out, ctx):
    from .meanfield import beta_limit_check, solve_ma_1d

    body = build_body(cfg)
    meas = build_measure(cfg, body.dim)
    beta = float(_require(cfg, "beta"))
    sol = solve_ma_1d(beta, meas, body, int(cfg.get("nodes", 2001)), tol=ctx["solver_tol"])
    p = out / "solve_ma.csv"
    write_csv(p, ["x", "phi_beta", "T_beta"], np.column_stack([sol.x, sol.values, sol.gradient()]))
    outs = [p] + emit_plot_data({"phi_beta": (sol.x, sol.values)}, out, "solve_ma", "x", "phi_beta")
    if cfg.get("ladder"):
        rows = beta_limit_check(meas, body, [float(b) for b in cfg["ladder"]])
        q = out / "ladder.csv"
        write_csv(q, ["beta", "gap_sup"], [[r.beta, r.gap] for r in rows])
        outs += [q] + emit_plot_data({"gap": ([r.beta for r in rows], [r.gap for r in rows])},
                                     out, "ladder", "beta", "sup gap to envelope")
    print(f"residual = {sol.residual:.3e} after {sol.iterations} Newton steps")
    return outs


def cmd_langevin(cfg, out, ctx):
    from .langevin import SdeParams, integrate

    spec = build_spec(cfg)
    params = SdeParams(spec, float(_require(cfg, "dt")), float(_require(cfg, "T")), ctx["seed"],
                       inflated_noise=bool(cfg.get("inflated_noise", False)),
                       reflect=bool(cfg.get("reflect", True)),
                       record_every=int(cfg.get("record_every", 1)))
    tr = integrate(params)
    n = spec.dim
    cols = [f"x_{i + 1}" if n == 1 else f"x_{i + 1}_{d + 1}"
            for i in range(spec.N) for d in range(n)]
    p = out / "langevin.csv"
    path = tr.paths[0].reshape(len(tr.times), -1)
    write_csv(p, ["t"] + cols, np.column_stack([tr.times, path]))
    return [p]


def cmd_verify(cfg, out, ctx):
    from . import acceptance

    try:
        numbers = acceptance.select(cfg.get("suite", "fast"))
    except KeyError as exc:
        raise ConfigError(f"field 'suite': {exc.args[0]}") from exc
    results = []
    for n in numbers:
        r = acceptance.CRITERIA[n]()
        print(r.line(), flush=True)
        results.append(r)
    p = out / "verify.csv"
    write_csv(p, ["criterion", "passed", "seconds"],
              [[r.number, int(r.passed), r.seconds] for r in results])
    ctx["failed"] = sum(not r.passed for r in results)
    return [p]


COMMANDS: dict[str, tuple[Callable, str]] = {
    "lattice": (cmd_lattice, "integer points of kP"),
    "envelope": (cmd_envelope, "constrained convex envelope of a weight"),
    "ma": (cmd_ma, "Monge-Ampere node masses of a convex function"),
    "permanent": (cmd_permanent, "log-permanent of a log-matrix CSV"),
    "assign": (cmd_assign, "optimal assignment of a cost-matrix CSV"),
    "w1": (cmd_w1, "Wasserstein-1 distance between two point sets"),
    "sample": (cmd_sample, "Metropolis samples of the Gibbs measure"),
    "estimate-potential": (cmd_estimate_potential, "Monte-Carlo potential estimate"),
    "transport-map": (cmd_transport_map, "Monte-Carlo transport map estimate"),
    "quenched": (cmd_quenched, "estimators with random uniform targets"),
    "balanced": (cmd_balanced, "balanced or mean-field fixed point on a finite space"),
    "solve-ma": (cmd_solve_ma, "1D Monge-Ampere second boundary value problem"),
    "langevin": (cmd_langevin, "Euler-Maruyama trajectory"),
    "verify": (cmd_verify, "run acceptance criteria"),
}

# flag -> (config key, type, help)
FLAGS: dict[str, list[tuple]] = {
    "lattice": [("--body", "body", "body JSON file"), ("--interval", "body", "a b"),
                ("--k", "k", "scale")],
    "envelope": [("--body", "body", ""), ("--interval", "body", ""),
                 ("--weight", "weight", "grid-function CSV or expression"),
                 ("--window", "window", "lo hi"), ("--nodes", "nodes", ""),
                 ("--margin", "margin", "required rise of phi0 - phi_P at the window edge")],
    "ma": [("--body", "body", ""), ("--interval", "body", ""),
           ("--potential", "potential", "grid-function CSV or expression"),
           ("--cells", "cells", "cell count per axis or 1D edges"),
           ("--window", "window", ""), ("--nodes", "nodes", ""),
           ("--boundary-slopes", "boundary_slopes", "")],
    "permanent": [("--kernel", "kernel", "square CSV without header"),
                  ("--scale", "scale", "log (default) or linear entries"),
                  ("--method", "method", "glynn or ryser")],
    "assign": [("--cost", "cost_matrix", "")],
    "w1": [("--a", "a", ""), ("--b", "b", "")],
    "sample": [("--spec", None, ""), ("--steps", "steps", ""), ("--burn-in", "burn_in", ""),
               ("--thin", "thin", "")],
    "estimate-potential": [("--spec", None, ""), ("--queries", "queries", ""), ("--M", "M", ""),
                           ("--mode", "mode", "beta or zero")],
    "transport-map": [("--spec", None, ""), ("--queries", "queries", ""), ("--M", "M", "")],
    "quenched": [("--spec", None, ""), ("--queries", "queries", ""), ("--M-x", "M_x", ""),
                 ("--M-p", "M_p", "")],
    "balanced": [("--space", "space", ""), ("--body", "body", ""), ("--interval", "body", ""),
                 ("--k", "k", ""), ("--beta", "beta", ""), ("--betaN", "betaN", "")],
    "solve-ma": [("--beta", "beta", ""), ("--density", "density", ""), ("--weight", "weight", ""),
                 ("--body", "body", ""), ("--interval", "body", ""), ("--window", "window", ""),
                 ("--nodes", "nodes", ""), ("--ladder", "ladder", "")],
    "langevin": [("--spec", None, ""), ("--dt", "dt", ""), ("--T", "T", ""),
                 ("--inflated-noise", "inflated_noise", ""), ("--record-every", "record_every", "")],
    "verify": [("--suite", "suite", "")],
}
_MULTI = {"--interval", "--window", "--queries", "--boundary-slopes", "--ladder", "--cells"}
_FLAGS_BOOL = {"--inflated-noise"}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="permot", description="permanental point processes and transport")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1,
                        help="recorded in the manifest; outputs do not depend on it")
        sp.add_argument("--out-dir", default=".")
        sp.add_argument("--out", help="explicit path of the main CSV output")
        sp.add_argument("--tolerance-profile", choices=["strict", "default"], default="default")
        if name == "verify":
            sp.add_argument("suite_pos", nargs="?", metavar="SUITE",
                            help="suite name, criterion numbers, or a comma list")
        for flag, key, h in FLAGS.get(name, []):
            dest = "spec_file" if key is None else flag.lstrip("-").replace("-", "_")
            if flag in _FLAGS_BOOL:
                sp.add_argument(flag, dest=dest, action="store_true", default=None, help=h)
            elif flag in _MULTI:
                sp.add_argument(flag, dest=dest, nargs="+", type=float, help=h)
            else:
                sp.add_argument(flag, dest=dest, help=h)
    return parser


def _coerce(v: str):
    for t in (int, float):
        try:
            return t(v)
        except (TypeError, ValueError):
            pass
    return v


def resolve(args) -> dict:
    """Merge the config file (and a ``--spec`` file) with flags; flags win."""
    cfg = load_config(args.config)
    if getattr(args, "spec_file", None):
        cfg.update(load_config(args.spec_file))
    for flag, key, _ in FLAGS.get(args.command, []):
        if key is None:
            continue
        dest = flag.lstrip("-").replace("-", "_")
        val = getattr(args, dest, None)
        if val is None:
            continue
        if flag == "--queries":
            val = [[v] for v in val]
        elif flag not in _MULTI and flag not in _FLAGS_BOOL:
            val = _coerce(val)
        cfg[key] = val
    if getattr(args, "suite_pos", None):
        cfg["suite"] = args.suite_pos
    return cfg


def main(argv: list[str] | None = None) -> int:
    from .assignment import CertificateError
    from .convexcalc import MassDeficitError, NotConvexError
    from .gibbs import ChainAbort
    from .langevin import StepSizeError
    from .meanfield import ConvergenceError
    from .permanent import PermanentError, SizeError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    strict = args.tolerance_profile == "strict"
    ctx = {"seed": args.seed, "precision_tol": 1e-10 if strict else 1e-7,
           "solver_tol": 1e-10 if strict else 1e-8}
    out = Path(args.out_dir)
    try:
        cfg = resolve(args)
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command][0](cfg, out, ctx)
        if args.out and outputs:
            target = Path(args.out)
            target.parent.mkdir(parents=True, exist_ok=True)
            outputs[0].replace(target)
            outputs[0] = target
        full = dict(cfg, tolerance_profile=args.tolerance_profile, threads=args.threads,
                    **ctx.get("record", {}))
        write_manifest(out, args.command, full, args.seed, outputs)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PermanentError, SizeError, ChainAbort, ConvergenceError, StepSizeError,
            CertificateError, NotConvexError, MassDeficitError, FloatingPointError) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if ctx.get("failed"):
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
