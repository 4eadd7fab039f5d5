"""Oracle suites behind ``hodep verify``.

Each suite compares a production path against an independent exact or
brute-force computation and yields :class:`Check` rows.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np

from hodep import admm_inference, decoder, exact_oracle, factor_graph, neural_scorer, trainer
from hodep.corpus import Sentence, build_vocab

SUITES = ("factor-graph", "slave", "admm", "lbp", "gradient", "mst")


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str


@functools.lru_cache(maxsize=None)
def arborescences(n: int) -> np.ndarray:
    """Every head vector of length n that forms a tree rooted at 0 (rows)."""
    cands = np.array(list(itertools.product(range(n + 1), repeat=n)), dtype=np.int64).reshape(-1, n)
    heads = np.concatenate([np.zeros((len(cands), 1), dtype=np.int64), cands], axis=1)
    node = np.tile(np.arange(n + 1), (len(cands), 1))
    rows = np.arange(len(cands))[:, None]
    for _ in range(n):
        node = heads[rows, node]
    ok = np.all(node == 0, axis=1) & np.all(cands != np.arange(1, n + 1), axis=1)
    return cands[ok]


def brute_force_mst(weights) -> tuple:
    w = np.asarray(weights)
    n = w.shape[1]
    trees = arborescences(n)
    totals = w[trees, np.arange(n)].sum(axis=1)
    return tuple(int(h) for h in trees[int(np.argmax(totals))])


def enumerate_delta(graph) -> dict:
    counts = {}
    for s in graph.slaves:
        for a in s.arcs:
            counts[a] = counts.get(a, 0) + 1
    return counts


def suite_factor_graph(seeds):
    g = factor_graph.build(5)
    yield Check("factor-graph", "n=5 forward: 6 slaves, 7 arcs",
                len(g.slaves) == 6 and len(g.arcs) == 7, f"{len(g.slaves)} slaves, {len(g.arcs)} arcs")
    gp3 = [s for s in g.slaves if s.name == "GPf_3"][0]
    want = (factor_graph.ArcId(3, 4), factor_graph.ArcId(4, 5))
    yield Check("factor-graph", "GPf_3 = {y34, y45}", gp3.arcs == want, str([str(a) for a in gp3.arcs]))
    bad = [n for n in range(1, 13) if enumerate_delta(factor_graph.build(n)) != factor_graph.build(n).delta]
    yield Check("factor-graph", "delta matches enumeration, n<=12", not bad, f"mismatch at n={bad}" if bad else "ok")


def suite_slave(seeds):
    rng = np.random.default_rng(0)
    grid = np.linspace(0.0, 1.0, 1001)
    worst = far = 0.0
    for _ in range(10 * seeds):
        rho = rng.uniform(0.1, 4.0)
        theta, lam, u = rng.uniform(-3, 3, 2), rng.uniform(-2, 2, 2), rng.uniform(0, 1, 2)
        z = admm_inference.solve_slave(theta, lam, u, rho)
        a = theta + lam + rho * u
        # separable objective: one 1-d grid search per coordinate
        best = grid[np.argmax(a[:, None] * grid - 0.5 * rho * grid ** 2, axis=1)]
        closed_obj = np.sum(a * z - 0.5 * rho * z ** 2)
        grid_obj = np.sum(a * best - 0.5 * rho * best ** 2)
        # grid spacing 1e-3 caps the gap at rho/2 * (5e-4)^2 per coordinate
        worst = max(worst, abs(float(closed_obj - grid_obj)))
        far = max(far, float(np.max(np.abs(z - best))))
    yield Check("slave", f"closed form vs 1001-point grid, {10 * seeds} draws",
                worst <= 1e-6 and far <= 5e-4 + 1e-12, f"max objective gap {worst:.1e}, max |dz| {far:.1e}")


def suite_admm(seeds):
    total = conv = integral = agree = 0
    dev = 0.0
    for n in (3, 4, 5, 6):
        for seed in range(seeds):
            rng = np.random.default_rng(1000 * n + seed)
            g = factor_graph.build(n, rng.uniform(-2, 2, size=(n + 1, n)))
            res = admm_inference.run(g)
            total += 1
            conv += res.converged
            dev = max(dev, float(res.trace[:, 3].max()))
            if res.integral:
                integral += 1
                agree += np.array_equal(res.u_rounded, exact_oracle.consistent_map(g))
    yield Check("admm", "integral results equal brute-force maximiser", agree == integral,
                f"{agree}/{integral} integral of {total}")
    yield Check("admm", "lambda-sum invariant <= 1e-9", dev <= 1e-9, f"max |sum lambda| {dev:.1e}")
    yield Check("admm", "residuals < 1e-4 within 300 iterations on >= 90%", conv >= 0.9 * total,
                f"{conv}/{total} converged")


def _loopy_variant(model, rng):
    extra_vars = np.array([[2, 6], [4, 6]])
    extra = np.log(rng.uniform(0.2, 5.0, size=(2, 2, 2)))
    return exact_oracle.DiscreteFactorGraph(model.unary_log, np.vstack([model.pair_vars, extra_vars]),
                                            np.concatenate([model.pair_log, extra]))


def suite_lbp(seeds):
    tree_err = loopy_err = grad_err = 0.0
    for seed in range(max(seeds // 2, 1)):
        rng = np.random.default_rng(seed)
        s = rng.uniform(-1, 1, size=(6, 5))
        g = factor_graph.build(5, s)
        model = exact_oracle.parser_model(neural_scorer.potentials(s, g), g)
        exact = exact_oracle.brute_force(model)
        tree_err = max(tree_err, float(np.abs(exact_oracle.lbp(model).marginals - exact.marginals).max()))
        loopy = _loopy_variant(model, rng)
        loopy_err = max(loopy_err, float(np.abs(exact_oracle.lbp(loopy).marginals
                                                - exact_oracle.brute_force(loopy).marginals).max()))
        s4 = rng.uniform(-1, 1, size=(5, 4))
        g4 = factor_graph.build(4, s4)
        base = exact_oracle.parser_model(neural_scorer.potentials(s4, g4), g4)
        theta = rng.normal(size=len(g4.arcs))
        grad_err = max(grad_err, exact_oracle.check_logZ_gradient(
            lambda t: exact_oracle.with_unary_theta(base, t), theta))
    yield Check("lbp", "acyclic parser graphs: LBP == exact <= 1e-9", tree_err <= 1e-9, f"max err {tree_err:.1e}")
    yield Check("lbp", "d logZ / d theta == marginals <= 1e-6", grad_err <= 1e-6, f"max dev {grad_err:.1e}")
    yield Check("lbp", "loop-closed n=5 graphs: LBP error <= 0.05", loopy_err <= 0.05, f"max err {loopy_err:.1e}")


def suite_mst(seeds):
    bad = not_tree = 0
    count = 2 * seeds
    for seed in range(count):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 7))
        w = rng.normal(size=(n + 1, n))
        w[np.arange(1, n + 1), np.arange(n)] = -np.inf
        got = decoder.mst_decode(w).heads
        not_tree += not decoder.is_tree(got)
        bad += got != brute_force_mst(w)
    yield Check("mst", f"Chu-Liu/Edmonds == exhaustive, {count} seeds", bad == 0, f"{bad} mismatches")
    yield Check("mst", "output is always a tree", not_tree == 0, f"{not_tree} non-trees")


def toy_sentences():
    return [
        Sentence(("The", "dog", "barks"), ("DET", "NOUN", "VERB"), (2, 3, 0)),
        Sentence(("Cats", "sleep"), ("NOUN", "VERB"), (2, 0)),
        Sentence(("A", "bird", "sings", "loudly"), ("DET", "NOUN", "VERB", "ADV"), (2, 3, 0, 3)),
    ]


def batch_loss(sentences, vocab, params):
    total = 0.0
    for sent in sentences:
        scores, _ = neural_scorer.score_sentence(sent, vocab, params)
        total += trainer.nll_from_scores(scores.s, sent)[0]
    return total


def batch_gradient(sentences, vocab, params):
    grads = params.zeros_like()
    for sent in sentences:
        scores, tape = neural_scorer.score_sentence(sent, vocab, params)
        _, g = trainer.nll_from_scores(scores.s, sent)
        for k, v in neural_scorer.backward(g, tape).items():
            grads[k] += v
    return grads


def gradient_check(params, sentences, vocab, n_samples=200, step=1e-5, seed=0):
    """Worst relative error between analytic and central-difference gradients on sampled entries."""
    grads = batch_gradient(sentences, vocab, params)
    rng = np.random.default_rng(seed)
    names = sorted(params.arrays)
    sizes = np.array([params[k].size for k in names])
    worst = 0.0
    for _ in range(n_samples):
        k = names[rng.choice(len(names), p=sizes / sizes.sum())]
        arr = params[k]
        idx = np.unravel_index(rng.integers(arr.size), arr.shape)
        old = arr[idx]
        arr[idx] = old + step
        up = batch_loss(sentences, vocab, params)
        arr[idx] = old - step
        down = batch_loss(sentences, vocab, params)
        arr[idx] = old
        fd = (up - down) / (2 * step)
        an = grads[k][idx]
        scale = max(abs(fd), abs(an))
        if scale > 1e-7:
            worst = max(worst, abs(fd - an) / scale)
    return worst


def suite_gradient(seeds):
    sents = toy_sentences()
    vocab = build_vocab(sents)
    cfg = neural_scorer.ScorerConfig(d_emb=8, d_pos=4, d_hidden=6, d_arc=8, init_scale=0.5)
    params = neural_scorer.ScorerParams(cfg, vocab.n_words, vocab.n_tags, seed=1)
    worst = gradient_check(params, sents, vocab, n_samples=2 * seeds)
    yield Check("gradient", "first-order loss: analytic vs finite differences <= 1e-3", worst <= 1e-3,
                f"max rel err {worst:.1e}")


_RUNNERS = {
    "factor-graph": suite_factor_graph,
    "slave": suite_slave,
    "admm": suite_admm,
    "lbp": suite_lbp,
    "gradient": suite_gradient,
    "mst": suite_mst,
}


def run_suites(names=SUITES, seeds: int = 100) -> list:
    checks = []
    for name in names:
        checks.extend(_RUNNERS[name](seeds))
    return checks


def format_table(checks) -> str:
    width = max(len(c.name) for c in checks) if checks else 10
    lines = [f"{'suite':<13} {'check':<{width}}  result  detail"]
    for c in checks:
        lines.append(f"{c.suite:<13} {c.name:<{width}}  {'PASS' if c.passed else 'FAIL':<6}  {c.detail}")
    return "\n".join(lines)
