"""Head distributions, MBR decoding, tree checks and the Chu-Liu/Edmonds fallback."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hodep import _accel, _kernels


@dataclass
class HeadDistribution:
    """``p[i, j-1]`` is the probability that token j attaches to head i."""

    p: np.ndarray

    @property
    def n(self):
        return self.p.shape[1]


@dataclass
class ParseTree:
    heads: tuple

    def __post_init__(self):
        if not is_tree(self.heads):
            raise ValueError(f"heads {self.heads} do not form a tree rooted at 0")


def _score_matrix(scores):
    return np.asarray(getattr(scores, "s", scores), dtype=float)


def adjusted_scores(scores, consensus=None, beta: float = 1.0) -> np.ndarray:
    """First-order scores plus ``beta * u`` on every arc the factor graph covers."""
    s = _score_matrix(scores).copy()
    if consensus is not None and beta != 0.0 and len(consensus.arcs):
        heads = np.array([a.head for a in consensus.arcs])
        deps = np.array([a.dep for a in consensus.arcs])
        s[heads, deps - 1] += beta * np.asarray(consensus.u_relaxed)
    return s


def softmax_columns(s: np.ndarray) -> np.ndarray:
    m = np.max(s, axis=0, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=0, keepdims=True)


def head_distribution(scores, consensus=None, beta: float = 1.0) -> HeadDistribution:
    """Per-dependent softmax over candidate heads of the consensus-adjusted scores.

    Self-arcs carry ``-inf`` in the score table and so get probability 0.
    """
    return HeadDistribution(softmax_columns(adjusted_scores(scores, consensus, beta)))


def mbr_decode(dist: HeadDistribution) -> tuple:
    # np.argmax returns the first maximum, i.e. the smallest head index on ties
    return tuple(int(h) for h in np.argmax(dist.p, axis=0))


def is_tree(heads) -> bool:
    """True iff ``heads`` (head of tokens 1..n) is an arborescence rooted at 0."""
    n = len(heads)
    state = [0] * (n + 1)  # 0 unseen, 1 on current walk, 2 reaches root
    state[0] = 2
    for start in range(1, n + 1):
        walk = []
        node = start
        while state[node] == 0:
            state[node] = 1
            walk.append(node)
            h = heads[node - 1]
            if not 0 <= h <= n or h == node:
                return False
            node = h
        if state[node] == 1:
            return False
        for w in walk:
            state[w] = 2
    return True


def mst_decode(weights) -> ParseTree:
    """Maximum-weight arborescence rooted at 0 for a ``(n+1) x n`` weight table."""
    w = np.asarray(weights, dtype=float)
    n = w.shape[1]
    full = np.full((n + 1, n + 1), -np.inf)
    full[:, 1:] = w
    # -inf entries (masked self-arcs) stay excluded; finite weights only elsewhere
    kernel = _kernels.chu_liu_edmonds if _accel.use_numba() else _kernels.chu_liu_edmonds.py_func
    heads = kernel(full)
    return ParseTree(tuple(int(h) for h in heads[1:]))


def decode(dist: HeadDistribution) -> tuple:
    """MBR heads, replaced by the log-probability MST whenever they are not a tree.

    Returns ``(heads, used_mst)``.
    """
    heads = mbr_decode(dist)
    if is_tree(heads):
        return heads, False
    with np.errstate(divide="ignore"):
        logp = np.log(dist.p)
    return mst_decode(logp).heads, True


def uas(predicted, gold) -> float:
    pred = getattr(predicted, "heads", predicted)
    ref = getattr(gold, "gold_heads", gold)
    if len(pred) != len(ref):
        raise ValueError(f"length mismatch: {len(pred)} predicted vs {len(ref)} gold heads")
    if not ref:
        raise ValueError("empty sentence")
    return sum(int(p == g) for p, g in zip(pred, ref)) / len(ref)
