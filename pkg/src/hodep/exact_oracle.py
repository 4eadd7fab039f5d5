"""Ground truth for small binary factor graphs.

Exhaustive enumeration gives the exact log-partition function, marginals and
MAP state; sum-product loopy belief propagation is the approximate cross-check.
Only unary and pairwise factors are supported, which covers every graph the
parser builds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from hodep import _accel, _kernels

MAX_BRUTE_VARS = 20


@dataclass
class DiscreteFactorGraph:
    """Binary variables with log-potentials.

    ``unary_log[v, y]`` is log psi_v(y); pairwise factor f couples
    ``pair_vars[f] = (a, b)`` through ``pair_log[f, y_a, y_b]``.
    """

    unary_log: np.ndarray
    pair_vars: np.ndarray
    pair_log: np.ndarray

    def __post_init__(self):
        self.unary_log = np.asarray(self.unary_log, dtype=float).reshape(-1, 2)
        self.pair_vars = np.asarray(self.pair_vars, dtype=np.int64).reshape(-1, 2)
        self.pair_log = np.asarray(self.pair_log, dtype=float).reshape(-1, 2, 2)
        if len(self.pair_vars) != len(self.pair_log):
            raise ValueError("pair_vars and pair_log disagree on the factor count")
        if self.pair_vars.size and (self.pair_vars.min() < 0 or self.pair_vars.max() >= self.n_vars):
            raise ValueError("factor scope outside the variable set")
        if np.any(self.pair_vars[:, 0] == self.pair_vars[:, 1]):
            raise ValueError("pairwise factor must join two distinct variables")
        if not (np.all(np.isfinite(self.unary_log)) and np.all(np.isfinite(self.pair_log))):
            raise ValueError("potentials must be strictly positive and finite")

    @property
    def n_vars(self):
        return self.unary_log.shape[0]

    @property
    def n_factors(self):
        return self.pair_vars.shape[0]

    def log_score(self, y) -> float:
        y = np.asarray(y, dtype=np.int64)
        total = self.unary_log[np.arange(self.n_vars), y].sum()
        return float(total + self.pair_log[np.arange(self.n_factors), y[self.pair_vars[:, 0]],
                                           y[self.pair_vars[:, 1]]].sum())


def additive_pair_table(psi_a, psi_b) -> np.ndarray:
    """Joint-state table psi_a*[y_a=1] + psi_b*[y_b=1] + 1."""
    return np.array([[1.0, psi_b + 1.0], [psi_a + 1.0, psi_a + psi_b + 1.0]])


def parser_model(potentials, graph) -> DiscreteFactorGraph:
    """Unary factor per arc and one additive pairwise factor per slave."""
    psi = np.array([potentials.unary(a) for a in graph.arcs])
    unary = np.stack([np.zeros_like(psi), np.log(psi)], axis=1)
    pair_log = np.array([np.log(additive_pair_table(psi[a], psi[b])) for a, b in graph.slave_arcs])
    return DiscreteFactorGraph(unary, graph.slave_arcs.copy(), pair_log.reshape(-1, 2, 2))


def with_unary_theta(model: DiscreteFactorGraph, theta) -> DiscreteFactorGraph:
    """Copy of ``model`` whose unary log-potentials are (0, theta_v)."""
    theta = np.asarray(theta, dtype=float)
    unary = np.stack([np.zeros_like(theta), theta], axis=1)
    return DiscreteFactorGraph(unary, model.pair_vars, model.pair_log)


# -- exhaustive enumeration ----------------------------------------------------

@dataclass
class ExactResult:
    log_z: float
    marginals: np.ndarray  # p(y_v = 1)
    map_assignment: np.ndarray
    map_value: float  # log-score of the MAP state
    log_scores: np.ndarray


def assignment_log_scores(model: DiscreteFactorGraph) -> np.ndarray:
    if model.n_vars > MAX_BRUTE_VARS:
        raise ValueError(f"brute force is capped at {MAX_BRUTE_VARS} variables, got {model.n_vars}")
    args = (model.unary_log, model.pair_vars, model.pair_log)
    if _accel.use_numba():
        return _kernels.enumerate_loop(*args)
    return _kernels.enumerate_numpy(*args)


def brute_force(model: DiscreteFactorGraph) -> ExactResult:
    scores = assignment_log_scores(model)
    log_z = float(logsumexp(scores))
    probs = np.exp(scores - log_z)
    idx = np.arange(scores.size)
    marg = np.array([probs[(idx >> v) & 1 == 1].sum() for v in range(model.n_vars)])
    best = int(np.argmax(scores))
    y = (best >> np.arange(model.n_vars)) & 1
    return ExactResult(log_z, marg, y, float(scores[best]), scores)


def consistent_map(graph, patterns=None) -> np.ndarray:
    """Binary arc vector maximising sum_s f_s with shared arcs forced equal.

    ``patterns`` optionally restricts each slave's pair of arc values.
    """
    n_arcs = len(graph.arcs)
    if n_arcs > MAX_BRUTE_VARS:
        raise ValueError(f"brute force is capped at {MAX_BRUTE_VARS} arcs, got {n_arcs}")
    bits = (np.arange(1 << n_arcs)[:, None] >> np.arange(n_arcs)) & 1
    a, b = graph.slave_arcs[:, 0], graph.slave_arcs[:, 1]
    vals = (graph.theta[:, 0] * bits[:, a] + graph.theta[:, 1] * bits[:, b]).sum(axis=1)
    if patterns is not None:
        pats = {tuple(int(v) for v in p) for p in np.asarray(patterns)}
        ok = np.ones(len(bits), dtype=bool)
        for s in range(len(graph.slaves)):
            pair = bits[:, a[s]] * 2 + bits[:, b[s]]
            ok &= np.isin(pair, [x * 2 + y for x, y in pats])
        vals = np.where(ok, vals, -np.inf)
    return bits[int(np.argmax(vals))]


# -- loopy belief propagation -------------------------------------------------

@dataclass
class LbpResult:
    var_beliefs: np.ndarray  # (V, 2)
    factor_beliefs: np.ndarray  # (F, 2, 2)
    rounds: int
    converged: bool

    @property
    def marginals(self):
        return self.var_beliefs[:, 1]


def _normalize_log(m, axis=-1):
    return m - logsumexp(m, axis=axis, keepdims=True)


def lbp(model: DiscreteFactorGraph, max_rounds: int = 1000, damping: float = 0.5,
        tol: float = 1e-12) -> LbpResult:
    """Synchronous sum-product with damping, in the log domain.

    Messages ``f2v[f, e]`` go from pairwise factor f to its endpoint e and
    ``v2f[f, e]`` the other way; unary factors are leaves, so their messages
    equal their potentials and are folded into the variable side.
    """
    n_fac = model.n_factors
    if n_fac == 0:
        return LbpResult(np.exp(_normalize_log(model.unary_log)), np.zeros((0, 2, 2)), 0, True)
    ends = model.pair_vars
    f2v = np.full((n_fac, 2, 2), -np.log(2.0))
    v2f = np.full((n_fac, 2, 2), -np.log(2.0))

    def incoming(msgs):
        total = model.unary_log.copy()
        np.add.at(total, ends[:, 0], msgs[:, 0])
        np.add.at(total, ends[:, 1], msgs[:, 1])
        return total

    rounds, converged = 0, False
    for rounds in range(1, max_rounds + 1):
        # both message types are computed from the previous round
        tot = incoming(f2v)
        new_v2f = _normalize_log(np.stack([tot[ends[:, 0]] - f2v[:, 0],
                                           tot[ends[:, 1]] - f2v[:, 1]], axis=1))
        to0 = logsumexp(model.pair_log + v2f[:, 1][:, None, :], axis=2)
        to1 = logsumexp(model.pair_log + v2f[:, 0][:, :, None], axis=1)
        new_f2v = _normalize_log(np.stack([to0, to1], axis=1))
        if damping:
            new_f2v = _normalize_log(np.logaddexp(np.log1p(-damping) + new_f2v, np.log(damping) + f2v))
            new_v2f = _normalize_log(np.logaddexp(np.log1p(-damping) + new_v2f, np.log(damping) + v2f))
        change = max(np.max(np.abs(np.exp(new_f2v) - np.exp(f2v)), initial=0.0),
                     np.max(np.abs(np.exp(new_v2f) - np.exp(v2f)), initial=0.0))
        f2v, v2f = new_f2v, new_v2f
        if change < tol:
            converged = True
            break
    var_b = np.exp(_normalize_log(incoming(f2v)))
    fac = model.pair_log + v2f[:, 0][:, :, None] + v2f[:, 1][:, None, :]
    fac_b = np.exp(fac - logsumexp(fac, axis=(1, 2), keepdims=True))
    return LbpResult(var_b, fac_b, rounds, converged)


# -- gradient identity -------------------------------------------------------

def check_logZ_gradient(builder, theta, step: float = 1e-4) -> float:
    """Max |central-difference d logZ / d theta_r - p(y_r = 1)| at ``theta``.

    ``builder(theta)`` must return a model in which theta_r enters only as the
    log-potential of y_r = 1.
    """
    theta = np.asarray(theta, dtype=float)
    exact = brute_force(builder(theta)).marginals
    worst = 0.0
    for r in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[r] += step
        down[r] -= step
        slope = (brute_force(builder(up)).log_z - brute_force(builder(down)).log_z) / (2 * step)
        worst = max(worst, abs(slope - exact[r]))
    return worst
