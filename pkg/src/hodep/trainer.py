"""End-to-end training loop: score, transfer to the factor graph, infer, backpropagate."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from hodep import admm_inference, decoder, factor_graph, neural_scorer
from hodep.corpus import batches, build_vocab

log = logging.getLogger(__name__)

DEFAULT_LR = {"adam": 1e-3, "sgd": 1e-2}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float | None = None
    epochs: int = 10
    batch_size: int = 5
    max_len: int = 20
    high_order: bool = False
    beta: float = 1.0
    admm: admm_inference.AdmmConfig = field(default_factory=admm_inference.AdmmConfig)
    seed: int = 0
    warm_start_epochs: int = 0
    include_backward: bool = False
    split_scores: bool = False
    min_count: int = 2
    clip_norm: float | None = 5.0
    scorer: neural_scorer.ScorerConfig = field(default_factory=neural_scorer.ScorerConfig)

    def __post_init__(self):
        if self.optimizer not in DEFAULT_LR:
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.lr is None:
            self.lr = DEFAULT_LR[self.optimizer]
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or self.max_len < 1:
            raise ValueError("batch_size and max_len must be >= 1")

    def high_order_at(self, epoch: int) -> bool:
        """Whether ADMM runs in (1-based) ``epoch``; warm-start epochs are first-order."""
        return self.high_order and epoch > self.warm_start_epochs


# -- loss ---------------------------------------------------------------------

def loss(dist: decoder.HeadDistribution, gold) -> tuple:
    """Mean head-wise negative log-likelihood and its gradient w.r.t. the adjusted scores."""
    heads = np.asarray(getattr(gold, "gold_heads", gold))
    n = dist.n
    cols = np.arange(n)
    with np.errstate(divide="ignore"):
        value = -np.sum(np.log(dist.p[heads, cols])) / n
    grad = dist.p.copy()
    grad[heads, cols] -= 1.0
    return float(value), grad / n


def nll_from_scores(adjusted: np.ndarray, gold) -> tuple:
    """Same quantity as :func:`loss`, via log-sum-exp so a vanishing gold probability stays finite."""
    heads = np.asarray(getattr(gold, "gold_heads", gold))
    n = adjusted.shape[1]
    cols = np.arange(n)
    lse = logsumexp(adjusted, axis=0)
    value = -np.sum(adjusted[heads, cols] - lse) / n
    grad = np.exp(adjusted - lse)
    grad[heads, cols] -= 1.0
    return float(value), grad / n


# -- optimisers ---------------------------------------------------------------

class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params: dict, grads: dict):
        for k, g in grads.items():
            params[k] -= self.lr * g


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(config: TrainConfig):
    return Adam(config.lr) if config.optimizer == "adam" else SGD(config.lr)


# -- per-sentence pipeline ----------------------------------------------------

@dataclass
class Inference:
    scores: neural_scorer.ArcScoreTable
    tape: neural_scorer.Tape
    graph: factor_graph.FactorGraph | None
    map_result: admm_inference.MapResult | None
    adjusted: np.ndarray


def infer(sentence, vocab, params, config: TrainConfig, high_order: bool, trace_file=None) -> Inference:
    """Score a sentence and, in high-order mode, run ADMM on its factor graph."""
    scores, tape = neural_scorer.score_sentence(sentence, vocab, params)
    graph = result = None
    if high_order:
        graph = factor_graph.build(sentence.n, scores, config.include_backward, config.split_scores)
        result = admm_inference.run(graph, config.admm, trace_file)
    adjusted = decoder.adjusted_scores(scores, result, config.beta)
    return Inference(scores, tape, graph, result, adjusted)


def parse_sentence(sentence, vocab, params, config: TrainConfig, high_order: bool, trace_file=None):
    """Predicted heads (always a tree) plus the inference record."""
    inf = infer(sentence, vocab, params, config, high_order, trace_file)
    heads, _ = decoder.decode(decoder.HeadDistribution(decoder.softmax_columns(inf.adjusted)))
    return heads, inf


def sentence_gradient(sentence, vocab, params, config, high_order):
    """Loss and parameter gradients; ADMM output enters as a constant (straight-through)."""
    inf = infer(sentence, vocab, params, config, high_order)
    value, g = nll_from_scores(inf.adjusted, sentence)
    if not np.isfinite(value):
        preview = " ".join(sentence.tokens[:8])
        raise TrainingError(f"non-finite loss on sentence '{preview}...' (n={sentence.n})")
    return value, neural_scorer.backward(g, inf.tape), inf


def _clip(grads, max_norm):
    if not max_norm:
        return
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def train_epoch(data, params, optimizer, config: TrainConfig, epoch: int, vocab) -> dict:
    """One pass over ``data`` (a list of batches); returns loss and ADMM statistics."""
    high = config.high_order_at(epoch)
    total, count, converged, solved = 0.0, 0, 0, 0
    for batch in data:
        grads = params.zeros_like()
        for sent in batch:
            value, g, inf = sentence_gradient(sent, vocab, params, config, high)
            for k, v in g.items():
                grads[k] += v
            total += value
            count += 1
            if inf.map_result is not None:
                solved += 1
                converged += inf.map_result.converged
        _clip(grads, config.clip_norm)
        optimizer.step(params.arrays, grads)
    return {"loss": total / max(count, 1), "admm_converged": converged, "admm_runs": solved,
            "high_order": high}


def evaluate(sentences, vocab, params, config: TrainConfig, high_order: bool) -> dict:
    correct = total = trees = converged = runs = 0
    predictions = []
    for sent in sentences:
        heads, inf = parse_sentence(sent, vocab, params, config, high_order)
        predictions.append(heads)
        trees += decoder.is_tree(heads)
        correct += sum(int(p == g) for p, g in zip(heads, sent.gold_heads))
        total += sent.n
        if inf.map_result is not None:
            runs += 1
            converged += inf.map_result.converged
    return {"uas": correct / total if total else float("nan"), "predictions": predictions,
            "trees": trees, "admm_converged": converged, "admm_runs": runs}


# -- report -------------------------------------------------------------------

@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)

    # wall time stays out of the CSV so equal seeds give byte-identical files
    COLUMNS = ("epoch", "loss", "dev_uas", "high_order", "admm_converged_rate")

    def add(self, **row):
        self.epochs.append(row)

    @property
    def losses(self):
        return [r["loss"] for r in self.epochs]

    @property
    def dev_uas(self):
        return [r["dev_uas"] for r in self.epochs]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.epochs:
            w.writerow([r["epoch"], f"{r['loss']:.6f}", f"{r['dev_uas']:.4f}", int(r["high_order"]),
                        f"{r['admm_converged_rate']:.4f}"])
        return buf.getvalue()

    def summary(self) -> str:
        lines = []
        for r in self.epochs:
            mode = "high-order" if r["high_order"] else "first-order"
            lines.append(f"epoch {r['epoch']:3d}  loss {r['loss']:.4f}  dev-uas {r['dev_uas']:.4f}  "
                         f"{mode}  admm-converged {r['admm_converged_rate']:.3f}  {r['seconds']:.1f}s")
        return "\n".join(lines)


def inference_settings(config: TrainConfig) -> dict:
    """Decoding-relevant part of a config, stored in checkpoints."""
    a = config.admm
    return {"high_order": config.high_order, "beta": config.beta,
            "include_backward": config.include_backward, "split_scores": config.split_scores,
            "admm": {"rho": a.rho, "eta0": a.eta0, "eps_primal": a.eps_primal, "eps_dual": a.eps_dual,
                     "max_iters": a.max_iters, "rounding_threshold": a.rounding_threshold,
                     "mode": a.mode, "patterns": a.patterns.tolist()}}


def train(train_sents, dev_sents, config: TrainConfig, vocab=None, out_dir=None, callback=None):
    """Train a scorer; returns ``(params, vocab, report)``.

    With ``out_dir`` a checkpoint is written after every epoch.
    """
    vocab = vocab or build_vocab([s for s in train_sents if s.n <= config.max_len] or train_sents,
                                 config.min_count)
    params = neural_scorer.ScorerParams(config.scorer, vocab.n_words, vocab.n_tags, seed=config.seed)
    params.meta = inference_settings(config)
    optimizer = make_optimizer(config)
    report = TrainReport()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    dev = [s for s in dev_sents if s.n <= config.max_len] if dev_sents else []
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        data = batches(train_sents, config.batch_size, config.max_len, shuffle_seed=config.seed + epoch)
        stats = train_epoch(data, params, optimizer, config, epoch, vocab)
        high = stats["high_order"]
        dev_stats = evaluate(dev, vocab, params, config, high) if dev else {"uas": float("nan")}
        runs = stats["admm_runs"]
        rate = stats["admm_converged"] / runs if runs else float("nan")
        report.add(epoch=epoch, loss=stats["loss"], dev_uas=dev_stats["uas"],
                   seconds=time.perf_counter() - start, high_order=high, admm_converged_rate=rate)
        log.info(report.summary().splitlines()[-1])
        if out is not None:
            params.save(out / f"epoch_{epoch:02d}.hodep", vocab)
        if callback is not None:
            callback(epoch, params, report)
    return params, vocab, report
