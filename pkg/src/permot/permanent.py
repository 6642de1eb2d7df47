"""Log-domain permanents of transport kernels.

The kernel attached to a configuration ``x_1..x_N`` and a lattice cloud
``p_1..p_N`` has log-entries ``a_ij = x_i . p_j``.  Its permanent is evaluated
by inclusion-exclusion on a rescaled copy of the matrix: rows are divided by
their maxima and the result is balanced towards a doubly stochastic matrix
by a few log-domain Sinkhorn sweeps.  The scaling factors are exact and are
added back on the log scale, so balancing only improves conditioning.

Two inclusion-exclusion formulas are available.  Glynn's formula (default)
has a much smaller ratio between the sum of absolute terms and the result
on balanced matrices than Ryser's, which matters for ``N`` beyond 12.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .geometry import LatticeCloud

EXACT_MAX_N = 10
FAST_MAX_N = 25
MARGINAL_MAX_N = 14
PRECISION_TOL = 1e-7
_CHUNK = 1 << 16
_EPS = np.finfo(float).eps


class PermanentError(ArithmeticError):
    """Base class for permanent evaluation failures."""


class PrecisionLossError(PermanentError):
    """Cancellation in the inclusion-exclusion sum exhausted precision."""


class SizeError(ValueError):
    pass


@dataclass(frozen=True)
class LogMatrix:
    """Log-entries of a positive matrix together with their row maxima."""

    entries: np.ndarray
    row_max: np.ndarray

    @classmethod
    def from_array(cls, a) -> "LogMatrix":
        a = np.atleast_2d(np.asarray(a, float))
        if a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise SizeError("log-matrix must be square and nonempty")
        if not np.all(np.isfinite(a)):
            raise ValueError("log-matrix entries must be finite")
        return cls(a, a.max(axis=1))

    @property
    def N(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class SignedLogValue:
    """A real number stored as ``sign * exp(log_abs)``."""

    sign: int
    log_abs: float

    @classmethod
    def from_float(cls, v: float) -> "SignedLogValue":
        if v == 0:
            return cls(0, -math.inf)
        return cls(1 if v > 0 else -1, math.log(abs(v)))

    def __float__(self) -> float:
        return 0.0 if self.sign == 0 else self.sign * math.exp(self.log_abs)


def _as_log(A) -> np.ndarray:
    if isinstance(A, LogMatrix):
        return A.entries
    return LogMatrix.from_array(A).entries


# -- kernels ------------------------------------------------------------------

def linear_cost(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``c(x, p) = -x . p`` for broadcastable point arrays."""
    return -np.sum(x * p, axis=-1)


def quadratic_cost(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``c(x, p) = |x - p|^2``."""
    return np.sum((x - p) ** 2, axis=-1)


def _as_conf(conf, dim: int) -> np.ndarray:
    x = np.asarray(conf, float)
    if x.ndim == 1:
        x = x.reshape(-1, dim) if dim > 1 else x[:, None]
    return x


def kernel_targets(conf, targets: np.ndarray, cost: Callable | None = None,
                   beta_star: float = 1.0) -> LogMatrix:
    """Log-kernel ``-beta_star * c(x_i, t_j)`` against explicit target points."""
    t = np.asarray(targets, float)
    t = t[:, None] if t.ndim == 1 else t
    x = _as_conf(conf, t.shape[1])
    if x.shape[0] != t.shape[0]:
        raise SizeError(f"configuration has {x.shape[0]} points, targets {t.shape[0]}")
    c = linear_cost if cost is None else cost
    return LogMatrix.from_array(-beta_star * c(x[:, None, :], t[None, :, :]))


def kernel(conf, cloud: LatticeCloud, cost: Callable | None = None,
           beta_star: float | None = None) -> LogMatrix:
    """Log-kernel of a configuration against a lattice cloud.

    Without a cost the entries are ``x_i . p_j`` with integer ``p_j``.  With a
    cost they are ``-beta_star * c(x_i, p_j / k)``.
    """
    x = _as_conf(conf, cloud.dim)
    if x.shape[0] != cloud.N:
        raise SizeError(f"configuration has {x.shape[0]} points, cloud {cloud.N}")
    if cost is None:
        return LogMatrix.from_array(x @ cloud.points.T.astype(float))
    bs = float(cloud.k if beta_star is None else beta_star)
    return kernel_targets(x, cloud.scaled, cost, bs)


# -- brute force oracle -------------------------------------------------------

@lru_cache(maxsize=None)
def _perm_table(N: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(N))), dtype=np.int8)


def log_permanent_exact(A) -> float:
    """Log-sum-exp over all ``N!`` permutation products (``N <= 10``)."""
    a = _as_log(A)
    N = a.shape[0]
    if N > EXACT_MAX_N:
        raise SizeError(f"brute force limited to N <= {EXACT_MAX_N}")
    perms = _perm_table(N)
    rows = np.arange(N)
    out = []
    for s in range(0, perms.shape[0], 1 << 18):
        blk = perms[s:s + (1 << 18)]
        out.append(logsumexp(a[rows, blk].sum(axis=1)))
    return float(logsumexp(out))


def marginal_matrix_exact(A) -> np.ndarray:
    """Brute-force marginal matrix ``P(sigma(i) = j)`` (``N <= 9``)."""
    a = _as_log(A)
    N = a.shape[0]
    perms = _perm_table(N).astype(np.int64)
    w = a[np.arange(N), perms].sum(axis=1)
    w = np.exp(w - logsumexp(w))
    M = np.zeros((N, N))
    for i in range(N):
        M[i] = np.bincount(perms[:, i], weights=w, minlength=N)
    return M


# -- balancing ----------------------------------------------------------------

def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def balance(a: np.ndarray, sweeps: int = 60, tol: float = 1e-2
            ) -> tuple[np.ndarray, float]:
    """Scale a log-matrix towards doubly stochastic form.

    Returns the scaled matrix ``b = exp(a + r_i + c_j)`` and the log factor
    ``-(sum r + sum c)`` with ``log Per(a) = log Per(b) + factor``.  Any
    scaling is exact, so the sweeps stop as soon as column sums are within
    ``tol`` of one on the log scale.
    """
    r = -a.max(axis=1)
    c = np.zeros(a.shape[1])
    for _ in range(sweeps):
        c = -_lse(a + r[:, None], 0)
        r = -_lse(a + c[None, :], 1)
        if np.max(np.abs(_lse(a + r[:, None] + c[None, :], 0))) < tol:
            break
    b = np.exp(a + r[:, None] + c[None, :])
    return b, float(-(r.sum() + c.sum()))


# -- inclusion-exclusion kernels ---------------------------------------------

_ROWS = 1 << 14
_BLOCK_ELEMS = 1 << 22


def _gray(lo: int, hi: int) -> np.ndarray:
    i = np.arange(lo, hi, dtype=np.int64)
    return i ^ (i >> 1)


@lru_cache(maxsize=96)
def _sign_block(method: str, N: int, start: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows of the inclusion-exclusion design for one chunk, in Gray order.

    Glynn: sign vectors ``d`` with ``d_0 = +1``; Ryser: 0/1 subset indicators.
    Returns the design matrix and the sign of each term.
    """
    if method == "glynn":
        g = _gray(start, min(2 ** (N - 1), start + _ROWS))
        d = np.empty((g.size, N))
        d[:, 0] = 1.0
        d[:, 1:] = 1.0 - 2.0 * ((g[:, None] >> np.arange(N - 1)) & 1)
        d.setflags(write=False)
        sgn = np.prod(d, axis=1)
        return d, sgn
    g = _gray(start, min(2 ** N, start + _ROWS))
    g = g[g != 0]
    bits = ((g[:, None] >> np.arange(N)) & 1).astype(float)
    bits.setflags(write=False)
    sgn = np.where((N - bits.sum(axis=1)) % 2 == 0, 1.0, -1.0)
    return bits, sgn


def _prod_except(S: np.ndarray) -> np.ndarray:
    """Products along the last axis leaving out one entry, without division."""
    pre = np.ones_like(S)
    suf = np.ones_like(S)
    if S.shape[-1] > 1:
        pre[..., 1:] = np.cumprod(S[..., :-1], axis=-1)
        suf[..., :-1] = np.cumprod(S[..., :0:-1], axis=-1)[..., ::-1]
    return pre * suf


def _terms(b: np.ndarray, method: str, want_minors: bool):
    """Inclusion-exclusion sums for a batch ``b`` of shape ``(B, N, N)``.

    Returns the permanents, the sums of absolute terms and, when asked, the
    minor permanents ``G[b, i, j] = Per(b without row i, column j)``.
    """
    B, N, _ = b.shape
    if method == "glynn":
        total = 2 ** (N - 1)
        stacked = b.transpose(1, 0, 2).reshape(N, B * N)  # rows i, (batch, col j)
    elif method == "ryser":
        total = 2 ** N
        stacked = b.transpose(2, 0, 1).reshape(N, B * N)  # cols j, (batch, row i)
    else:
        raise ValueError(f"unknown method {method!r}")
    acc = [[] for _ in range(B)]
    absacc = [[] for _ in range(B)]
    G = np.zeros((B, N, N)) if want_minors else None
    for s in range(0, total, _ROWS):
        D, sgn = _sign_block(method, N, s)
        S = (D @ stacked).reshape(D.shape[0], B, N)
        t = sgn[:, None] * np.prod(S, axis=2)
        tot = t.sum(axis=0)
        mag = np.abs(t).sum(axis=0)
        for q in range(B):
            acc[q].append(tot[q])
            absacc[q].append(mag[q])
        if want_minors:
            W = sgn[:, None, None] * _prod_except(S)
            if method == "glynn":
                G += np.tensordot(D, W, axes=([0], [0])).transpose(1, 0, 2)
            else:
                G += np.tensordot(W, D, axes=([0], [0]))
    per = np.array([math.fsum(v) for v in acc])
    mag = np.array([math.fsum(v) for v in absacc])
    if method == "glynn":
        scale = 2.0 ** (1 - N)
        per *= scale
        mag *= scale
        if want_minors:
            G *= scale
    return per, mag, G


def _checked(per: float, mag: float, N: int, tol: float) -> None:
    if not per > 0:
        raise PrecisionLossError(
            f"inclusion-exclusion returned {per:.3e} (absolute mass {mag:.3e})")
    bound = _EPS * (3 * N + 2) * mag / per
    if bound > tol:
        raise PrecisionLossError(
            f"relative error bound {bound:.2e} exceeds {tol:.1e} "
            f"(term mass / permanent = {mag / per:.2e})")


def _stack(As) -> np.ndarray:
    if isinstance(As, LogMatrix):
        return As.entries[None]
    if isinstance(As, np.ndarray) and As.ndim == 3:
        a = np.asarray(As, float)
    else:
        a = np.stack([_as_log(A) for A in As])
    if a.shape[1] != a.shape[2]:
        raise SizeError("log-matrices must be square")
    if not np.all(np.isfinite(a)):
        raise ValueError("log-matrix entries must be finite")
    return a


def _run_batch(a: np.ndarray, method: str, tol: float, want_minors: bool):
    B, N, _ = a.shape
    if N > FAST_MAX_N:
        raise SizeError(f"inclusion-exclusion limited to N <= {FAST_MAX_N}")
    logs = np.empty(B)
    Ms = np.ones((B, N, N)) if want_minors else None
    if N == 1:
        return a[:, 0, 0].copy(), Ms
    bs, shifts = zip(*(balance(x) for x in a))
    bs = np.stack(bs)
    group = max(1, _BLOCK_ELEMS // (_ROWS * N))
    for g0 in range(0, B, group):
        blk = bs[g0:g0 + group]
        per, mag, G = _terms(blk, method, want_minors)
        for q in range(blk.shape[0]):
            _checked(per[q], mag[q], N, tol)
            logs[g0 + q] = math.log(per[q]) + shifts[g0 + q]
            if want_minors:
                M = blk[q] * G[q] / per[q]
                if np.any(M < -1e-9):
                    raise PrecisionLossError("negative marginal from cancellation")
                Ms[g0 + q] = np.clip(M, 0.0, None)
    return logs, Ms


def log_permanent(A, method: str = "glynn", tol: float = PRECISION_TOL) -> float:
    """Log-permanent of a positive matrix given by its log-entries.

    Parameters
    ----------
    A : LogMatrix or array_like
        Log-entries ``a_ij``.
    method : {"glynn", "ryser"}
        Inclusion-exclusion formula used after balancing.
    tol : float
        Largest accepted a-priori relative error of the permanent.

    Raises
    ------
    PrecisionLossError
        When cancellation makes the result untrustworthy.
    """
    return float(_run_batch(_as_log(A)[None], method, tol, False)[0][0])


def log_permanent_batch(As, method: str = "glynn", tol: float = PRECISION_TOL) -> np.ndarray:
    """Log-permanents of a stack of equal-size log-matrices."""
    return _run_batch(_stack(As), method, tol, False)[0]


def log_permanent_and_marginals(A, method: str = "glynn", tol: float = PRECISION_TOL
                                ) -> tuple[float, np.ndarray]:
    """Log-permanent and marginal matrix from a single inclusion-exclusion pass.

    The derivative of the permanent in entry ``(i, j)`` is the permanent of
    the ``(i, j)`` minor, so every minor is accumulated alongside the sum.
    """
    logs, Ms = _run_batch(_as_log(A)[None], method, tol, True)
    return float(logs[0]), Ms[0]


def log_permanent_and_marginals_batch(As, method: str = "glynn", tol: float = PRECISION_TOL
                                      ) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`log_permanent_and_marginals`."""
    return _run_batch(_stack(As), method, tol, True)


def marginal_matrix(A, method: str = "glynn", max_n: int = MARGINAL_MAX_N) -> np.ndarray:
    """Doubly stochastic matrix ``exp(a_ij + logPer(minor_ij) - logPer(A))``."""
    a = _as_log(A)
    if a.shape[0] > max_n:
        raise SizeError(f"marginal_matrix limited to N <= {max_n}")
    return log_permanent_and_marginals(a, method)[1]


def grad_log_permanent(conf, cloud: LatticeCloud, max_n: int = FAST_MAX_N) -> np.ndarray:
    """Gradient of ``log Per`` in each particle: row ``i`` is ``sum_j M_ij p_j``."""
    K = kernel(conf, cloud)
    if K.N > max_n:
        raise SizeError(f"gradient limited to N <= {max_n}")
    _, M = log_permanent_and_marginals(K)
    return M @ cloud.points.astype(float)


def hamiltonian(conf, cloud: LatticeCloud, weight: Callable | None = None) -> float:
    """``H = -(1/k) log Per + sum_i weight(x_i)``."""
    x = _as_conf(conf, cloud.dim)
    H = -log_permanent(kernel(x, cloud)) / cloud.k
    if weight is not None:
        H += float(np.sum(weight(x)))
    return H


def sandwich_bounds(conf, cloud: LatticeCloud) -> tuple[float, float, float]:
    """Return ``(N C_min - log N!/k, -(1/k) log Per, N C_min)``.

    ``C_min`` is the optimal normalized assignment cost for
    ``c_ij = -x_i . p_j / k``.
    """
    from .assignment import min_cost_assignment

    x = _as_conf(conf, cloud.dim)
    c = -(x @ cloud.scaled.T)
    res = min_cost_assignment(c)
    N = cloud.N
    upper = N * res.normalized
    value = -log_permanent(kernel(x, cloud)) / cloud.k
    lower = upper - math.lgamma(N + 1) / cloud.k
    return lower, value, upper


def lipschitz_constant(cloud: LatticeCloud, weight_lipschitz: float = 0.0) -> float:
    """``max_p |p| + Lip(weight)`` for the per-particle Hamiltonian."""
    return float(np.max(np.linalg.norm(cloud.scaled, axis=1))) + weight_lipschitz


def batched_log_permanent_small(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Log-permanents and marginals for a batch of small log-matrices.

    Enumerates permutations, so it is meant for ``N <= 6`` where it beats
    per-matrix inclusion-exclusion by vectorizing across the batch.
    """
    B, N, _ = a.shape
    perms = _perm_table(N).astype(np.int64)
    w = a[:, np.arange(N), perms].sum(axis=2)  # (B, N!)
    lp = logsumexp(w, axis=1)
    prob = np.exp(w - lp[:, None])
    M = np.zeros((B, N, N))
    for i in range(N):
        onehot = np.eye(N)[perms[:, i]]  # (N!, N)
        M[:, i, :] = prob @ onehot
    return lp, M
