"""Runge--Kutta convolution quadrature.

Signals are plain arrays of shape ``(N + 1, m, *space)``: entry ``n`` holds
the stage values at ``t_n + c_i tau``.  Weight sequences have shape
``(N + 1, m, m, *op)``.

Two evaluation routes are provided.  The frequency route (``apply_symbol``,
``solve_convolution_equation``) transforms the signal on a circle of radius
``rho``, diagonalises ``Delta(zeta_l)/tau`` at every node and works with
scalar frequencies only; nodes are independent and may be dispatched to a
thread pool.  The weight route (``cq_weights`` + ``discrete_convolution``,
``march_convolution_equation``) is the O(N^2) reference used to cross-check
small cases.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DomainError, NumericalError

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class RKTableau:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    name: str = ""

    @property
    def m(self) -> int:
        return len(self.b)

    @property
    def r_infinity(self) -> float:
        return float(1.0 - self.b @ np.linalg.solve(self.A, np.ones(self.m)))

    @property
    def stiffly_accurate(self) -> bool:
        return bool(np.allclose(self.A[-1], self.b) and np.isclose(self.c[-1], 1.0))


def _frac(rows):
    return np.array([[float(Fraction(x)) for x in row] for row in rows])


def radau_tableau(m: int) -> RKTableau:
    """Radau IIA with ``m`` stages (order 2m - 1); m = 1 is backward Euler."""
    if m == 1:
        A = np.array([[1.0]])
        c = np.array([1.0])
    elif m == 2:
        A = _frac([["5/12", "-1/12"], ["3/4", "1/4"]])
        c = np.array([1.0 / 3.0, 1.0])
    elif m == 3:
        r6 = math.sqrt(6.0)
        A = np.array(
            [
                [(88 - 7 * r6) / 360, (296 - 169 * r6) / 1800, (-2 + 3 * r6) / 225],
                [(296 + 169 * r6) / 1800, (88 + 7 * r6) / 360, (-2 - 3 * r6) / 225],
                [(16 - r6) / 36, (16 + r6) / 36, 1.0 / 9.0],
            ]
        )
        c = np.array([(4 - r6) / 10, (4 + r6) / 10, 1.0])
    else:
        raise ValueError(f"Radau IIA is available for m in (1, 2, 3), got {m}")
    return RKTableau(A, A[-1].copy(), c, name=f"radau_iia_{m}")


def delta_symbol(tab: RKTableau, zeta: complex) -> np.ndarray:
    """Delta(zeta) = (A + zeta/(1 - zeta) 1 b^T)^{-1}."""
    zeta = complex(zeta)
    if abs(zeta) >= 1:
        raise DomainError(f"Delta(zeta) needs |zeta| < 1, got {zeta}")
    M = tab.A + zeta / (1.0 - zeta) * np.outer(np.ones(tab.m), tab.b)
    try:
        return np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular Runge-Kutta symbol at zeta={zeta}") from exc


def default_rho(L: int) -> float:
    return EPS ** (1.0 / (2 * L))


@dataclass(frozen=True)
class CQGrid:
    """Uniform time grid t_n = n tau, n = 0..N, and the transform contour."""

    T: float
    N: int
    rho: float | None = None

    def __post_init__(self):
        if not (self.T > 0 and self.N >= 1):
            raise DomainError(f"need T > 0 and N >= 1, got T={self.T}, N={self.N}")
        if self.rho is None:
            object.__setattr__(self, "rho", default_rho(self.N + 1))
        if not 0 < self.rho < 1:
            raise DomainError(f"contour radius must lie in (0, 1), got {self.rho}")

    @property
    def tau(self) -> float:
        return self.T / self.N

    @property
    def L(self) -> int:
        return self.N + 1

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.N + 1)

    def nodes(self) -> np.ndarray:
        return self.rho * np.exp(2j * np.pi * np.arange(self.L) / self.L)

    def stage_times(self, tab: RKTableau) -> np.ndarray:
        return self.times[:, None] + self.tau * tab.c[None, :]

    def with_rho(self, rho) -> "CQGrid":
        return CQGrid(self.T, self.N, rho)


def sample_stages(func, tab: RKTableau, grid: CQGrid) -> np.ndarray:
    """Evaluate ``func(t)`` at every stage time; result has shape (N+1, m, ...)."""
    ts = grid.stage_times(tab)
    first = np.asarray(func(ts[0, 0]))
    out = np.empty(ts.shape + first.shape, dtype=np.result_type(first, float))
    for n in range(ts.shape[0]):
        for i in range(ts.shape[1]):
            out[n, i] = func(ts[n, i])
    return out


def point_values(signal: np.ndarray) -> np.ndarray:
    """Approximations at t_0..t_N: zero at t_0, last stage of entry n-1 at t_n."""
    signal = np.asarray(signal)
    out = np.zeros((signal.shape[0],) + signal.shape[2:], dtype=signal.dtype)
    out[1:] = signal[:-1, -1]
    return out


def symbol_at_matrix(K, M: np.ndarray) -> np.ndarray:
    """K(M) for a diagonalisable m x m matrix; returns shape (m, m, *op)."""
    lam, Q = np.linalg.eig(M)
    Qinv = np.linalg.inv(Q)
    vals = [np.asarray(K(l), dtype=complex) for l in lam]
    return np.einsum("ij,j...,jk->ik...", Q, np.stack(vals), Qinv)


def _node_diagonalisation(tab, grid, cond_max):
    out = []
    for l, z in enumerate(grid.nodes()):
        D = delta_symbol(tab, z) / grid.tau
        lam, Q = np.linalg.eig(D)
        cond = np.linalg.cond(Q)
        if not np.isfinite(cond) or cond > cond_max:
            return None, l
        if np.any(lam.real <= 0):
            raise NumericalError(f"Delta(zeta_{l})/tau has an eigenvalue with Re <= 0: {lam}")
        out.append((lam, Q, np.linalg.inv(Q)))
    return out, None


def diagonalise_nodes(tab: RKTableau, grid: CQGrid, cond_max=1e8, retries=3):
    """Eigen-decompositions at every contour node.

    If some node is (nearly) defective the contour radius is shrunk by 1%
    and the sweep repeated; returns (decompositions, grid actually used).
    """
    g = grid
    for attempt in range(retries + 1):
        dec, bad = _node_diagonalisation(tab, g, cond_max)
        if dec is not None:
            return dec, g
        log.warning("ill-conditioned eigenvectors at node %d (rho=%.6g); retrying", bad, g.rho)
        g = g.with_rho(g.rho * 0.99)
    raise NumericalError(f"eigenvector condition above {cond_max:g} at node {bad} after {retries} retries")


def _forward_transform(g: np.ndarray, grid: CQGrid) -> np.ndarray:
    n = np.arange(g.shape[0]).reshape((-1,) + (1,) * (g.ndim - 1))
    return grid.L * np.fft.ifft(grid.rho**n * g, axis=0)


def _inverse_transform(ghat: np.ndarray, grid: CQGrid) -> np.ndarray:
    n = np.arange(ghat.shape[0]).reshape((-1,) + (1,) * (ghat.ndim - 1))
    return np.fft.fft(ghat, axis=0) / grid.L * grid.rho ** (-n.astype(float))


def _check_compatibility(g):
    gmax = np.max(np.abs(g)) if g.size else 0.0
    if gmax > 0 and np.max(np.abs(g[0])) > 1e-8 * gmax:
        warnings.warn(
            "signal does not vanish at t=0; convolution quadrature loses its full order",
            stacklevel=3,
        )


def _padded(g, grid: CQGrid, oversample: int):
    """Zero-pad the signal to ``oversample * (N+1)`` entries on a longer grid.

    The wrap-around error of the transform drops from rho^L to rho^(qL);
    the radius is rebalanced to eps^(1/(qL + N)) unless it was overridden.
    """
    L = oversample * grid.L
    N = grid.N
    rho = grid.rho if not np.isclose(grid.rho, default_rho(grid.L), rtol=1e-14) else EPS ** (1.0 / (L + N))
    out = np.zeros((L,) + g.shape[1:], dtype=g.dtype)
    out[: N + 1] = g
    return out, CQGrid(grid.tau * (L - 1), L - 1, rho)


def frequency_sweep(g, tab, grid, node_op, conjugate_symmetric=False, workers=1, stats=None, oversample=1):
    """Core of the frequency route.

    ``node_op(lam, rhs, node)`` maps a scalar frequency and a transformed
    right-hand side (shape ``space``) to an output array.  Returns the
    time-domain signal of outputs, shape (N+1, m, *out).  ``oversample > 1``
    zero-pads the signal so that fewer wrap-around terms alias into the
    result, at the price of proportionally more nodes.
    """
    g = np.asarray(g)
    if g.shape[0] != grid.N + 1 or g.shape[1] != tab.m:
        raise ValueError(f"signal shape {g.shape} does not match N+1={grid.N + 1}, m={tab.m}")
    _check_compatibility(g)
    n_out = grid.N + 1
    if oversample > 1:
        g, grid = _padded(g, grid, int(oversample))
    dec, grid_used = diagonalise_nodes(tab, grid)
    ghat = _forward_transform(g.astype(complex), grid_used)
    L = grid_used.L
    todo = list(range(L // 2 + 1)) if conjugate_symmetric else list(range(L))

    def work(l):
        lam, Q, Qinv = dec[l]
        r = np.tensordot(Qinv, ghat[l], axes=(1, 0))
        try:
            ys = [np.asarray(node_op(lam[j], r[j], (l, j)), dtype=complex) for j in range(tab.m)]
        except NumericalError as exc:
            raise NumericalError(f"frequency node {l} (s={lam}): {exc}") from exc
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"frequency node {l} (s={lam}): {exc}") from exc
        return np.tensordot(Q, np.stack(ys), axes=(1, 0))

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, todo))
    else:
        results = [work(l) for l in todo]
    yhat = np.empty((L,) + results[0].shape, dtype=complex)
    for l, y in zip(todo, results):
        yhat[l] = y
    if conjugate_symmetric:
        for l in range(L // 2 + 1, L):
            yhat[l] = np.conj(yhat[L - l])
    if stats is not None:
        stats["nodes_evaluated"] = len(todo)
        stats["rho"] = grid_used.rho
        stats["frequencies"] = [complex(v) for l in todo for v in dec[l][0]]
    y = _inverse_transform(yhat, grid_used)[:n_out]
    if conjugate_symmetric:
        y = y.real
    return y


def apply_symbol(K, g, tab: RKTableau, grid: CQGrid, conjugate_symmetric=None, workers=1, oversample=2):
    """Forward convolution K(d_t^tau) g through the frequency route.

    ``K(s)`` may return a scalar (acting on every space component) or a
    matrix applied to the space vector.
    """
    g = np.asarray(g)
    if conjugate_symmetric is None:
        conjugate_symmetric = bool(np.isrealobj(g))

    def op(lam, r, node):
        k = np.asarray(K(lam))
        if k.ndim == 0:
            return k * r
        return k @ r

    return frequency_sweep(g, tab, grid, op, conjugate_symmetric, workers, oversample=oversample)


def solve_convolution_equation(
    A_factory, g, tab: RKTableau, grid: CQGrid, conjugate_symmetric=None, workers=1, stats=None, oversample=1
):
    """Solve A(d_t^tau) phi = g.

    ``A_factory(s)`` returns a scalar, a square matrix, or a callable that
    solves ``A(s) x = rhs``.
    """
    g = np.asarray(g)
    if conjugate_symmetric is None:
        conjugate_symmetric = bool(np.isrealobj(g))

    def op(lam, r, node):
        a = A_factory(lam)
        if callable(a):
            return a(r)
        a = np.asarray(a)
        if a.ndim == 0:
            return r / a
        return np.linalg.solve(a, r)

    return frequency_sweep(g, tab, grid, op, conjugate_symmetric, workers, stats, oversample)


def cq_weights(K, tab: RKTableau, grid: CQGrid, oversample: int = 4, rho: float | None = None):
    """Weights W_0..W_N of the expansion K(Delta(zeta)/tau) = sum W_n zeta^n.

    Computed by the trapezoidal rule on a circle with ``oversample * (N+1)``
    nodes; the default radius balances aliasing against round-off
    amplification, rho^(L_w + N) = eps.
    """
    N = grid.N
    Lw = max(int(oversample), 1) * (N + 1)
    if rho is None:
        rho = EPS ** (1.0 / (Lw + N))
    zetas = rho * np.exp(2j * np.pi * np.arange(Lw) / Lw)
    vals = []
    for l, z in enumerate(zetas):
        try:
            vals.append(symbol_at_matrix(K, delta_symbol(tab, z) / grid.tau))
        except Exception as exc:
            raise NumericalError(f"symbol evaluation failed at node {l} (zeta={z}): {exc}") from exc
    vals = np.stack(vals)
    W = np.fft.fft(vals, axis=0)[: N + 1] / Lw
    n = np.arange(N + 1).reshape((-1,) + (1,) * (W.ndim - 1))
    return W * rho ** (-n.astype(float))


def discrete_convolution(K_or_weights, g, tab: RKTableau | None = None, grid: CQGrid | None = None):
    """(K(d_t^tau) g)^n = sum_{j<=n} W_{n-j} g^j.

    Accepts precomputed weights (N+1, m, m[, p, q]) or a symbol, in which
    case ``tab`` and ``grid`` are required.
    """
    g = np.asarray(g)
    if callable(K_or_weights):
        if tab is None or grid is None:
            raise ValueError("a symbol needs tab and grid")
        W = cq_weights(K_or_weights, tab, grid)
    else:
        W = np.asarray(K_or_weights)
    if W.shape[0] < g.shape[0] or W.shape[1] != g.shape[1]:
        raise ValueError(f"weights {W.shape} and signal {g.shape} do not match")
    operator_valued = W.ndim == 5
    if operator_valued and W.shape[-1] != g.shape[-1]:
        raise ValueError(f"operator weights {W.shape} do not act on signal {g.shape}")
    out = None
    for n in range(g.shape[0]):
        Wr = W[n::-1]
        if operator_valued:
            v = np.einsum("jikpq,jkq->ip", Wr, g[: n + 1])
        else:
            v = np.einsum("jik,jk...->i...", Wr, g[: n + 1])
        if out is None:
            out = np.empty((g.shape[0],) + v.shape, dtype=np.result_type(W, g))
        out[n] = v
    return out


def march_convolution_equation(W, g):
    """Reference solver by weight marching: W_0 phi^n = g^n - sum_{j<n} W_{n-j} phi^j.

    Scalar-kernel weights only (W of shape (N+1, m, m)).
    """
    W = np.asarray(W)
    g = np.asarray(g)
    phi = np.zeros(g.shape, dtype=np.result_type(W, g))
    W0inv = np.linalg.inv(W[0])
    for n in range(g.shape[0]):
        acc = g[n].astype(phi.dtype)
        if n:
            acc = acc - np.einsum("jik,jk...->i...", W[n:0:-1], phi[:n])
        phi[n] = np.tensordot(W0inv, acc, axes=(1, 0))
    return phi
