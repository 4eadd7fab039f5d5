"""Consensus ADMM for the decomposed MAP problem over two-arc slaves.

Each iteration solves every slave's quadratic subproblem against the current
consensus ``u`` (Jacobi order), averages the slave copies into a new ``u``
and takes a diminishing-step Lagrange update. The multipliers start at zero
and each update removes its own per-arc mean, so sum_s lambda_s(r) stays 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hodep import _accel, _kernels

ALL_PATTERNS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])


class AdmmConfigError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass
class AdmmConfig:
    rho: float = 1.0
    eta0: float | None = None  # defaults to rho
    eps_primal: float = 1e-4
    eps_dual: float = 1e-4
    max_iters: int = 300
    rounding_threshold: float = 0.5
    integrality_tol: float = 1e-3
    mode: str = "box"
    patterns: np.ndarray = field(default_factory=lambda: ALL_PATTERNS.copy())

    def __post_init__(self):
        if self.eta0 is None:
            self.eta0 = self.rho
        if self.rho <= 0 or self.eta0 <= 0:
            raise AdmmConfigError("rho and eta0 must be positive")
        if self.eps_primal <= 0 or self.eps_dual <= 0:
            raise AdmmConfigError("residual thresholds must be positive")
        if self.max_iters < 1:
            raise AdmmConfigError("max_iters must be >= 1")
        if not 0.0 < self.rounding_threshold < 1.0:
            raise AdmmConfigError("rounding_threshold must lie in (0, 1)")
        if self.mode not in ("box", "pattern"):
            raise AdmmConfigError(f"unknown slave mode {self.mode!r}")
        self.patterns = np.asarray(self.patterns, dtype=float).reshape(-1, 2)
        if self.mode == "pattern" and not 1 <= len(self.patterns) <= 4:
            raise AdmmConfigError("pattern mode needs between 1 and 4 admissible binary pairs")

    def eta(self, t: int) -> float:
        return self.eta0 / np.sqrt(t + 1.0)


@dataclass
class AdmmState:
    z: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    iter: int = 0
    primal_residual: float = float("inf")
    dual_residual: float = float("inf")


@dataclass
class MapResult:
    arcs: tuple
    u_relaxed: np.ndarray
    u_rounded: np.ndarray
    integral: bool
    objective: float
    iterations: int
    converged: bool
    z: np.ndarray
    lam: np.ndarray
    primal_residual: float
    dual_residual: float
    trace: np.ndarray

    def consensus(self) -> dict:
        return dict(zip(self.arcs, self.u_relaxed))


# -- single steps ------------------------------------------------------------

def solve_slave(theta_s, lambda_s, u_prev, rho, mode="box", patterns=ALL_PATTERNS):
    """Maximiser of sum_r (theta+lambda+rho*u) z - rho/2 sum_r z^2 over Z_s."""
    if rho <= 0:
        raise AdmmConfigError("rho must be positive")
    target = (np.asarray(theta_s, float) + np.asarray(lambda_s, float) + rho * np.asarray(u_prev, float)) / rho
    if mode == "box":
        return np.clip(target, 0.0, 1.0)
    if target.shape != (2,):
        raise AdmmConfigError("pattern mode is defined for two-arc slaves")
    pats = np.asarray(patterns, dtype=float).reshape(-1, 2)
    return np.array(_kernels._project_hull.py_func(target[0], target[1], pats))


def update_u(z, graph) -> np.ndarray:
    """Average of the slave copies of every arc."""
    sums = np.bincount(graph.slave_arcs.ravel(), weights=np.asarray(z).ravel(),
                       minlength=len(graph.arcs))
    return sums / graph.delta_array


def update_lambda(lam, z, u, graph, eta_t) -> np.ndarray:
    return lam - eta_t * (z - u[graph.slave_arcs])


def residuals(prev: AdmmState, curr: AdmmState, graph, rho) -> tuple:
    norm = np.sqrt(max(curr.z.size, 1))
    primal = np.sqrt(np.sum((curr.z - curr.u[graph.slave_arcs]) ** 2)) / norm
    dual = rho * np.sqrt(np.sum(graph.delta_array * (curr.u - prev.u) ** 2)) / norm
    return float(primal), float(dual)


def lambda_sums(lam, graph) -> np.ndarray:
    return np.bincount(graph.slave_arcs.ravel(), weights=np.asarray(lam).ravel(),
                       minlength=len(graph.arcs))


def objective(graph, z) -> float:
    return float(np.sum(graph.theta * z))


def initial_u(graph) -> np.ndarray:
    """Logistic warm start from the first-order arc scores."""
    return 1.0 / (1.0 + np.exp(-np.clip(graph.arc_scores, -500, 500)))


# -- full solve --------------------------------------------------------------

def run(graph, config: AdmmConfig | None = None, trace_file=None) -> MapResult:
    """Iterate slave solves, consensus averaging and multiplier updates to convergence."""
    config = config or AdmmConfig()
    if len(graph.slaves) == 0:
        empty = np.zeros(0)
        return MapResult((), empty, empty.astype(np.int64), True, 0.0, 0, True,
                         np.zeros((0, 2)), np.zeros((0, 2)), 0.0, 0.0, np.zeros((0, 4)))
    for k, a in enumerate(graph.arcs):
        if not np.isfinite(graph.arc_scores[k]):
            raise NumericError(f"non-finite score on arc {a}")
    bad = ~np.isfinite(graph.theta)
    if bad.any():
        s, k = np.argwhere(bad)[0]
        raise NumericError(f"non-finite score on arc {graph.slaves[s].arcs[k]}")

    trace = np.zeros((config.max_iters, 4))
    kernel = _kernels.admm_loop if _accel.use_numba() else _kernels.admm_numpy
    z, u, lam, iters, primal, dual, converged = kernel(
        np.ascontiguousarray(graph.theta), np.ascontiguousarray(graph.slave_arcs),
        graph.delta_array, initial_u(graph), float(config.rho), float(config.eta0),
        float(config.eps_primal), float(config.eps_dual), int(config.max_iters),
        config.patterns, config.mode == "pattern", trace)
    trace = trace[:iters]
    if trace_file is not None:
        for t, row in enumerate(trace):
            trace_file.write(f"{t + 1},{row[0]:.10g},{row[1]:.10g},{row[2]:.10g}\n")
    rounded = (u >= config.rounding_threshold).astype(np.int64)
    integral = bool(np.all(np.minimum(u, 1.0 - u) <= config.integrality_tol))
    return MapResult(graph.arcs, u, rounded, integral, objective(graph, z), int(iters),
                     bool(converged), z, lam, float(primal), float(dual), trace)
