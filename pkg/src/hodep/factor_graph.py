"""Second-order slaves (grandparent, consecutive sibling) over token-token arcs."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

GP_FORWARD = "grandparent-forward"
SIB_FORWARD = "sibling-forward"
GP_BACKWARD = "grandparent-backward"
SIB_BACKWARD = "sibling-backward"

_SHORT = {GP_FORWARD: "GPf", SIB_FORWARD: "SBf", GP_BACKWARD: "GPb", SIB_BACKWARD: "SBb"}


class ArcId(NamedTuple):
    head: int
    dep: int

    def __str__(self):
        return f"y{self.head},{self.dep}"


@dataclass(frozen=True)
class Slave:
    kind: str
    anchor: int
    arcs: tuple
    theta: np.ndarray

    @property
    def name(self):
        return f"{_SHORT[self.kind]}_{self.anchor}"


def slave_score(slave: Slave, z) -> float:
    """Linear slave score: sum over covered arcs of theta_s(r) * z_s(r)."""
    return float(np.dot(slave.theta, np.asarray(z, dtype=float)))


def slave_arc_pairs(anchor: int, include_backward: bool):
    i = anchor
    pairs = [
        (GP_FORWARD, (ArcId(i, i + 1), ArcId(i + 1, i + 2))),
        (SIB_FORWARD, (ArcId(i, i + 1), ArcId(i, i + 2))),
    ]
    if include_backward:
        pairs += [
            (GP_BACKWARD, (ArcId(i + 2, i + 1), ArcId(i + 1, i))),
            (SIB_BACKWARD, (ArcId(i + 2, i + 1), ArcId(i + 2, i))),
        ]
    return pairs


class FactorGraph:
    """Slaves, their deduplicated arcs and the cover counts delta(r).

    ``slave_arcs`` (S x 2) indexes into ``arcs``; ``theta`` (S x 2) holds the
    per-slave arc scores and ``arc_scores`` the first-order score of each arc.
    """

    def __init__(self, n, slaves, arc_scores=None):
        self.n = n
        self.slaves = tuple(slaves)
        arcs, index = [], {}
        for s in self.slaves:
            for a in s.arcs:
                if a not in index:
                    index[a] = len(arcs)
                    arcs.append(a)
        self.arcs = tuple(arcs)
        self.index = index
        self.slave_arcs = np.array([[index[a] for a in s.arcs] for s in self.slaves],
                                   dtype=np.int64).reshape(len(self.slaves), 2)
        counts = np.bincount(self.slave_arcs.ravel(), minlength=len(arcs))
        self.delta_array = counts.astype(float)
        self.delta = {a: int(c) for a, c in zip(arcs, counts)}
        self.theta = np.array([s.theta for s in self.slaves], dtype=float).reshape(len(self.slaves), 2)
        self.arc_scores = (np.zeros(len(arcs)) if arc_scores is None
                           else np.asarray(arc_scores, dtype=float))

    def __len__(self):
        return len(self.slaves)

    def dump(self) -> str:
        """Plain-text listing of slaves, arcs and cover counts."""
        lines = [f"factor-graph n={self.n} slaves={len(self.slaves)} arcs={len(self.arcs)}"]
        for s in self.slaves:
            arcs = " ".join(str(a) for a in s.arcs)
            theta = " ".join(f"{t:.6g}" for t in s.theta)
            lines.append(f"slave {s.name} {s.kind} arcs={arcs} theta={theta}")
        for a in self.arcs:
            lines.append(f"arc {a} delta={self.delta[a]}")
        return "\n".join(lines) + "\n"


def build(n: int, scores=None, include_backward: bool = False, split_scores: bool = False) -> FactorGraph:
    """Slaves for every anchor i in [1, n-2].

    ``scores`` is an (n+1) x n table (``None`` means all zeros). With
    ``split_scores`` each slave receives theta(r)/delta(r) instead of theta(r).
    """
    if n < 1:
        raise ValueError("sentence length must be >= 1")
    s = None if scores is None else np.asarray(getattr(scores, "s", scores), dtype=float)
    specs = []
    for i in range(1, n - 1):
        specs += [(kind, i, arcs) for kind, arcs in slave_arc_pairs(i, include_backward)]
    counts = Counter(a for _, _, arcs in specs for a in arcs)

    def lookup(a):
        return 0.0 if s is None else float(s[a.head, a.dep - 1])

    slaves = []
    for kind, i, arcs in specs:
        theta = np.array([lookup(a) for a in arcs])
        if split_scores:
            theta = theta / np.array([counts[a] for a in arcs])
        slaves.append(Slave(kind, i, arcs, theta))
    graph = FactorGraph(n, slaves)
    graph.arc_scores = np.array([lookup(a) for a in graph.arcs])
    return graph


def delta_of(graph: FactorGraph, arc) -> int:
    try:
        return graph.delta[ArcId(*arc)]
    except KeyError:
        raise KeyError(f"arc {tuple(arc)} is not in the factor graph") from None
