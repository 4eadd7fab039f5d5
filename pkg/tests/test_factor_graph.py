import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hodep.factor_graph import (GP_BACKWARD, SIB_BACKWARD, ArcId, Slave, build, delta_of, slave_score)


def A(h, d):
    return ArcId(h, d)


def names(graph):
    return {s.name: s.arcs for s in graph.slaves}


def enumerate_arcs(n, backward=False):
    """Independent construction straight from the window definition."""
    arcs = set()
    for i in range(1, n - 1):
        arcs |= {(i, i + 1), (i + 1, i + 2), (i, i + 2)}
        if backward:
            arcs |= {(i + 2, i + 1), (i + 1, i), (i + 2, i)}
    return arcs


class TestBuild:
    def test_n5_forward(self):
        g = build(5)
        assert len(g.slaves) == 6
        assert set(g.arcs) == {A(1, 2), A(2, 3), A(3, 4), A(4, 5), A(1, 3), A(2, 4), A(3, 5)}
        assert sorted(names(g)) == ["GPf_1", "GPf_2", "GPf_3", "SBf_1", "SBf_2", "SBf_3"]

    def test_gp3(self):
        assert names(build(5))["GPf_3"] == (A(3, 4), A(4, 5))

    @pytest.mark.parametrize("n", [1, 2])
    def test_short_sentences_empty(self, n):
        g = build(n)
        assert len(g.slaves) == 0 and len(g.arcs) == 0

    def test_n3(self):
        g = build(3)
        assert len(g.slaves) == 2
        assert g.delta == {A(1, 2): 2, A(2, 3): 1, A(1, 3): 1}

    def test_backward_mirrors(self):
        g = build(3, include_backward=True)
        got = names(g)
        assert got["GPb_1"] == (A(3, 2), A(2, 1))
        assert got["SBb_1"] == (A(3, 2), A(3, 1))
        assert {s.kind for s in g.slaves} >= {GP_BACKWARD, SIB_BACKWARD}

    def test_theta_copied_from_scores(self, rng):
        s = rng.normal(size=(6, 5))
        g = build(5, s)
        for slave in g.slaves:
            assert list(slave.theta) == [s[a.head, a.dep - 1] for a in slave.arcs]
        assert list(g.arc_scores) == [s[a.head, a.dep - 1] for a in g.arcs]

    def test_split_scores(self, rng):
        s = rng.normal(size=(6, 5))
        g = build(5, s, split_scores=True)
        # each arc's split copies add back to the first-order score
        total = np.zeros(len(g.arcs))
        np.add.at(total, g.slave_arcs.ravel(), g.theta.ravel())
        np.testing.assert_allclose(total, g.arc_scores)

    def test_no_self_or_root_arcs(self):
        for a in build(9, include_backward=True).arcs:
            assert a.head != a.dep and a.head >= 1

    def test_dump_lists_slaves(self):
        text = build(5).dump()
        assert text.splitlines()[0] == "factor-graph n=5 slaves=6 arcs=7"
        assert sum(line.startswith("slave ") for line in text.splitlines()) == 6
        assert "slave GPf_3 grandparent-forward arcs=y3,4 y4,5" in text


class TestCounts:
    @pytest.mark.parametrize("n", range(1, 13))
    def test_against_enumeration(self, n):
        g = build(n)
        assert len(g.slaves) == 2 * max(0, n - 2)
        want = enumerate_arcs(n)
        assert {tuple(a) for a in g.arcs} == want
        # distinct forward arcs: n-1 adjacent plus n-2 skip-one arcs
        assert len(g.arcs) == (0 if n <= 2 else 2 * n - 3)
        assert {tuple(a) for a in g.arcs} == {tuple(a) for a in set(g.arcs)}

    @pytest.mark.parametrize("n", range(3, 13))
    def test_backward_against_enumeration(self, n):
        g = build(n, include_backward=True)
        assert len(g.slaves) == 4 * (n - 2)
        assert {tuple(a) for a in g.arcs} == enumerate_arcs(n, backward=True)

    def test_delta_examples(self):
        g = build(5)
        assert delta_of(g, (2, 3)) == 3
        assert delta_of(g, (4, 5)) == 1
        assert delta_of(g, A(1, 3)) == 1

    def test_unknown_arc(self):
        with pytest.raises(KeyError):
            delta_of(build(5), (1, 5))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 30), st.booleans())
    def test_delta_consistency(self, n, backward):
        g = build(n, include_backward=backward)
        counts = {}
        for s in g.slaves:
            for a in s.arcs:
                counts[a] = counts.get(a, 0) + 1
        assert counts == g.delta
        assert sum(g.delta.values()) == 2 * len(g.slaves)
        assert all(v >= 1 for v in g.delta.values())


class TestSlaveScore:
    def slave(self, theta):
        return Slave("grandparent-forward", 1, (A(1, 2), A(2, 3)), np.array(theta, float))

    def test_zero(self):
        assert slave_score(self.slave([3.0, -1.0]), (0, 0)) == 0.0

    def test_sum(self):
        assert slave_score(self.slave([1.5, -0.5]), (1, 1)) == pytest.approx(1.0)

    def test_linear(self):
        assert slave_score(self.slave([2.0, 3.0]), (0.5, 0.5)) == pytest.approx(2.5)
