"""Discrete optimal transport between empirical measures.

Two solvers share one result type:

* :func:`solve_exact` -- a transportation (network) simplex on the bipartite
  graph, with a Hungarian-algorithm fast path for the uniform square case
  (an optimal Birkhoff vertex is then a permutation);
* :func:`solve_sinkhorn` -- log-domain entropic regularization.

:func:`solve` picks between them from a :class:`SolverConfig`.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError, MarginalMismatchError, ShapeError

MASS_TOL = 1e-9
MARGINAL_TOL = 1e-6
EXACT_MAX_ENTRIES = 250_000


@dataclass
class TransportPlan:
    gamma: np.ndarray
    cost: float
    solver: str
    converged: bool = True
    n_iter: int = 0

    @property
    def solver_tag(self) -> str:
        if self.solver == "exact":
            return "exact"
        return self.solver if self.converged else f"{self.solver}[converged=false]"


@dataclass(frozen=True)
class SolverConfig:
    """How batch-level OT problems are solved.

    ``method="auto"`` uses the exact solver when ``n * m <= exact_max_size``
    and Sinkhorn otherwise. When ``epsilon`` is None the entropic strength
    is ``epsilon_scale * mean(C)``.
    """

    method: str = "auto"
    epsilon: float | None = None
    epsilon_scale: float = 0.05
    max_iter: int = 1000
    tol: float = 1e-6
    exact_max_size: int = 4096

    def __post_init__(self):
        if self.method not in ("auto", "exact", "sinkhorn"):
            raise InputError(f"unknown OT method {self.method!r}")


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def as_measure(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ShapeError("weights must be a non-empty vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InputError("weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > MASS_TOL:
        raise InputError(f"weights sum to {w.sum():.12g}, expected 1")
    return w


def cost_matrix(ZS, ZT) -> np.ndarray:
    """Squared Euclidean ground cost ``C[i, j] = ||ZS[i] - ZT[j]||^2``."""
    ZS = np.atleast_2d(np.asarray(ZS, dtype=np.float64))
    ZT = np.atleast_2d(np.asarray(ZT, dtype=np.float64))
    if ZS.shape[1] != ZT.shape[1]:
        raise ShapeError(f"feature dimension mismatch: {ZS.shape[1]} vs {ZT.shape[1]}")
    # explicit differences rather than the |a|^2+|b|^2-2ab expansion: exact zeros, no cancellation
    diff = ZS[:, None, :] - ZT[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _check_problem(a, b, C):
    a, b = as_measure(a), as_measure(b)
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (a.size, b.size):
        raise ShapeError(f"cost matrix shape {C.shape} does not match weights ({a.size}, {b.size})")
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise InputError("cost entries must be finite and non-negative")
    return a, b, C


def _is_uniform_square(a, b) -> bool:
    return a.size == b.size and np.all(a == a[0]) and np.all(b == b[0])


def solve_exact(a, b, C, algorithm: str = "auto") -> TransportPlan:
    """Optimal vertex of the transportation LP.

    ``algorithm`` is ``"auto"`` (assignment for uniform square problems,
    simplex otherwise), ``"simplex"`` or ``"assignment"``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1 and b.ndim == 1 and abs(a.sum() - b.sum()) > MARGINAL_TOL:
        raise MarginalMismatchError(f"total masses differ: {a.sum():.12g} vs {b.sum():.12g}")
    a, b, C = _check_problem(a, b, C)
    if a.size * b.size > EXACT_MAX_ENTRIES:
        raise InputError(f"exact solver limited to {EXACT_MAX_ENTRIES} cells, got {a.size * b.size}")
    if algorithm == "auto":
        algorithm = "assignment" if _is_uniform_square(a, b) else "simplex"
    if algorithm == "assignment":
        if not _is_uniform_square(a, b):
            raise InputError("assignment path needs uniform weights on equal-size supports")
        rows, cols = linear_sum_assignment(C)
        gamma = np.zeros_like(C)
        gamma[rows, cols] = a[0]
        n_iter = 0
    elif algorithm == "simplex":
        gamma, n_iter = _network_simplex(a, b, C)
    else:
        raise InputError(f"unknown exact algorithm {algorithm!r}")
    return TransportPlan(gamma, float(np.sum(gamma * C)), "exact", True, n_iter)


def _northwest_corner(a, b):
    n, m = a.size, b.size
    x = np.zeros((n, m))
    ra, rb = a.copy(), b.copy()
    basis = []
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        x[i, j] = q
        ra[i] -= q
        rb[j] -= q
        basis.append((i, j))
        if i == n - 1 and j == m - 1:
            break
        # exactly one index advances per cell: n + m - 1 cells forming a staircase tree
        if j == m - 1 or (i < n - 1 and ra[i] < rb[j]):
            i += 1
        else:
            j += 1
    return x, basis


def _tree_duals(C, basis, n, m):
    adj = [[] for _ in range(n + m)]
    for i, j in basis:
        adj[i].append(n + j)
        adj[n + j].append(i)
    pot = np.full(n + m, np.nan)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if np.isnan(pot[nb]):
                # u_i + v_j = C_ij on basic cells
                if node < n:
                    pot[nb] = C[node, nb - n] - pot[node]
                else:
                    pot[nb] = C[nb, node - n] - pot[node]
                queue.append(nb)
    return pot[:n], pot[n:], adj


def _tree_path(adj, start, goal):
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nb in adj[node]:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def _network_simplex(a, b, C, max_iter: int = 100_000, bland_after: int = 50):
    """Transportation simplex with MODI duals.

    Entering cells follow Dantzig's rule until ``bland_after`` consecutive
    degenerate pivots, then Bland's rule (first negative reduced cost in
    row-major order) until a non-degenerate pivot; this cannot cycle.
    """
    n, m = C.shape
    b = b * (a.sum() / b.sum())
    x, basis = _northwest_corner(a, b)
    opt_tol = 1e-12 * max(1.0, float(C.max()))
    mass_tol = 1e-14
    degenerate_run = 0
    for it in range(max_iter):
        u, v, adj = _tree_duals(C, basis, n, m)
        reduced = C - u[:, None] - v[None, :]
        for i, j in basis:
            reduced[i, j] = 0.0
        if reduced.min() >= -opt_tol:
            return np.clip(x, 0.0, None), it
        if degenerate_run >= bland_after:
            flat = np.flatnonzero(reduced.ravel() < -opt_tol)[0]
        else:
            flat = int(np.argmin(reduced))
        ie, je = divmod(int(flat), m)
        # cycle: entering (+), then the tree path from column je back to row ie alternating -, +, ...
        path = _tree_path(adj, n + je, ie)
        cells = []
        for p, q in zip(path[:-1], path[1:]):
            cells.append((q, p - n) if p >= n else (p, q - n))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(x[c] for c in minus)
        leaving = min((c for c in minus if x[c] <= theta + mass_tol), key=lambda c: c[0] * m + c[1])
        for c in minus:
            x[c] -= theta
        for c in plus:
            x[c] += theta
        x[ie, je] += theta
        x[leaving] = 0.0
        basis.remove(leaving)
        basis.append((ie, je))
        degenerate_run = degenerate_run + 1 if theta <= mass_tol else 0
    raise RuntimeError("network simplex did not terminate")


def _logsumexp(A, axis):
    M = np.max(A, axis=axis, keepdims=True)
    M = np.where(np.isfinite(M), M, 0.0)
    return np.squeeze(M, axis=axis) + np.log(np.sum(np.exp(A - M), axis=axis))


def solve_sinkhorn(a, b, C, epsilon: float, max_iter: int = 1000, tol: float = 1e-6) -> TransportPlan:
    """Entropic OT plan ``diag(e^f) exp(-C/eps) diag(e^g)`` via log-domain Sinkhorn.

    Stops once the L1 marginal violation drops below ``tol``; otherwise the
    returned plan is flagged ``converged=False``.
    """
    if epsilon <= 0 or tol <= 0:
        raise InputError("epsilon and tol must be positive")
    a, b, C = _check_problem(a, b, C)
    logK = -C / epsilon
    with np.errstate(divide="ignore"):
        loga, logb = np.log(a), np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        f = loga - _logsumexp(logK + g[None, :], axis=1)
        g = logb - _logsumexp(logK + f[:, None], axis=0)
        gamma = np.exp(logK + f[:, None] + g[None, :])
        # columns are exact after the g-update; rows carry the violation
        err = np.abs(gamma.sum(axis=1) - a).sum() + np.abs(gamma.sum(axis=0) - b).sum()
        if err <= tol:
            converged = True
            break
    gamma = np.exp(logK + f[:, None] + g[None, :])
    return TransportPlan(gamma, float(np.sum(gamma * C)), f"sinkhorn(eps={epsilon:.6g})", converged, it)


def solve(a, b, C, config: SolverConfig | None = None) -> TransportPlan:
    config = config or SolverConfig()
    C = np.asarray(C, dtype=np.float64)
    method = config.method
    if method == "auto":
        method = "exact" if C.size <= config.exact_max_size else "sinkhorn"
    if method == "exact":
        return solve_exact(a, b, C)
    eps = config.epsilon
    if eps is None:
        mean_cost = float(C.mean())
        eps = config.epsilon_scale * mean_cost if mean_cost > 0 else 1.0
    return solve_sinkhorn(a, b, C, eps, config.max_iter, config.tol)
