"""Contextual encoder, biaffine arc scores and exponentiated neural potentials.

All parameters live in plain numpy arrays; :func:`backward` is a hand-written
reverse pass over the tape recorded by :func:`score_sentence`.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from hodep import _accel, _kernels

MODEL_FORMAT = "hodep-model v1"
ENCODERS = ("bilstm", "window", "identity")
PSI_CLAMP = 30.0


@dataclass
class ScorerConfig:
    d_emb: int = 64
    d_pos: int = 16
    d_hidden: int = 64  # per LSTM direction
    d_arc: int = 64
    encoder: str = "bilstm"
    init_scale: float = 0.1

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        for name in ("d_emb", "d_pos", "d_hidden", "d_arc"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def d_in(self):
        return self.d_emb + self.d_pos

    @property
    def d_repr(self):
        return {"bilstm": 2 * self.d_hidden, "window": 3 * self.d_in, "identity": self.d_in}[self.encoder]


class ScorerParams:
    """Named parameter tensors for one scorer configuration."""

    def __init__(self, config: ScorerConfig, n_words: int, n_tags: int, arrays=None, seed: int = 0):
        self.config = config
        self.n_words = n_words
        self.n_tags = n_tags
        shapes = self.expected_shapes()
        if arrays is None:
            rng = np.random.default_rng(seed)
            k = config.init_scale
            arrays = {name: rng.uniform(-k, k, size=shape) for name, shape in shapes.items()}
        self.arrays = {name: np.asarray(a, dtype=np.float64) for name, a in arrays.items()}
        self.meta = {}
        self.validate()

    def expected_shapes(self) -> dict:
        c = self.config
        shapes = {
            "word_emb": (self.n_words, c.d_emb),
            "pos_emb": (self.n_tags, c.d_pos),
        }
        if c.encoder == "bilstm":
            h = c.d_hidden
            for side in ("fw", "bw"):
                shapes[f"lstm_{side}_w"] = (4 * h, c.d_in + h)
                shapes[f"lstm_{side}_b"] = (4 * h,)
        shapes.update({
            "dep_w": (c.d_arc, c.d_repr),
            "dep_b": (c.d_arc,),
            "head_w": (c.d_arc, c.d_repr),
            "head_b": (c.d_arc,),
            "U1": (c.d_arc, c.d_arc),
            "u2": (c.d_arc,),
        })
        return shapes

    def validate(self):
        shapes = self.expected_shapes()
        if set(shapes) != set(self.arrays):
            missing = sorted(set(shapes) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(shapes))
            raise ValueError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, shape in shapes.items():
            if self.arrays[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {self.arrays[name].shape}")
            if not np.all(np.isfinite(self.arrays[name])):
                raise ValueError(f"{name}: non-finite entries")

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self) -> "ScorerParams":
        twin = ScorerParams(self.config, self.n_words, self.n_tags,
                            {k: v.copy() for k, v in self.arrays.items()})
        twin.meta = dict(self.meta)
        return twin

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def save(self, path, vocab=None):
        meta = {"config": asdict(self.config), "n_words": self.n_words, "n_tags": self.n_tags,
                "extra": self.meta}
        payload = {"format": np.array(MODEL_FORMAT), "meta": np.array(json.dumps(meta))}
        if vocab is not None:
            payload["vocab"] = np.array(vocab.dumps())
        payload.update({f"param/{k}": v for k, v in self.arrays.items()})
        with open(path, "wb") as fh:
            np.savez(fh, **payload)

    @classmethod
    def load(cls, path):
        """Return ``(params, vocab_or_None)`` from a checkpoint written by :meth:`save`."""
        from hodep.corpus import Vocabulary

        with np.load(Path(path), allow_pickle=False) as data:
            if "format" not in data or str(data["format"]) != MODEL_FORMAT:
                raise ValueError(f"{path}: not a {MODEL_FORMAT!r} checkpoint")
            meta = json.loads(str(data["meta"]))
            arrays = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
            vocab = Vocabulary.loads(str(data["vocab"])) if "vocab" in data.files else None
        params = cls(ScorerConfig(**meta["config"]), meta["n_words"], meta["n_tags"], arrays)
        params.meta = meta.get("extra", {})
        if vocab is not None and (vocab.n_words, vocab.n_tags) != (params.n_words, params.n_tags):
            raise ValueError("checkpoint vocabulary does not match embedding tables")
        return params, vocab


@dataclass
class ArcScoreTable:
    """``s[i, j-1]`` scores the arc head i -> dependent j; self-arcs hold ``-inf``."""

    s: np.ndarray

    @property
    def n(self):
        return self.s.shape[1]

    def score(self, head, dep):
        return self.s[head, dep - 1]


@dataclass
class Tape:
    params: ScorerParams
    words: np.ndarray
    tags: np.ndarray
    x: np.ndarray
    enc: dict
    r: np.ndarray
    h_dep: np.ndarray
    h_head: np.ndarray
    extra: dict = field(default_factory=dict)


def _lstm(name):
    return getattr(_kernels, name) if _accel.use_numba() else getattr(_kernels, name).py_func


def embed(words, tags, params: ScorerParams) -> np.ndarray:
    return np.concatenate([params["word_emb"][words], params["pos_emb"][tags]], axis=1)


def encode(words, tags, params: ScorerParams):
    """Representations r_0..r_n (row 0 is the root) plus the encoder tape."""
    x = embed(words, tags, params)
    kind = params.config.encoder
    enc = {"x": x}
    if kind == "identity":
        r = x
    elif kind == "window":
        pad = np.zeros((1, x.shape[1]))
        xp = np.concatenate([pad, x, pad])
        r = np.concatenate([xp[:-2], xp[1:-1], xp[2:]], axis=1)
    else:
        fwd = _lstm("lstm_forward")
        hf, cf, gf = fwd(x, params["lstm_fw_w"], params["lstm_fw_b"], False)
        hb, cb, gb = fwd(x, params["lstm_bw_w"], params["lstm_bw_b"], True)
        enc.update(fw=(hf, cf, gf), bw=(hb, cb, gb))
        r = np.concatenate([hf, hb], axis=1)
    return r, enc


def biaffine(h_head, h_dep, U1, u2) -> np.ndarray:
    """Dense ``(N, N)`` matrix with entry [i, j] = h_head[i]·U1·h_dep[j] + h_head[i]·u2."""
    return h_head @ U1 @ h_dep.T + (h_head @ u2)[:, None]


def mask_self_arcs(full: np.ndarray) -> np.ndarray:
    """Drop the root column of a dense (N, N) matrix and put -inf on self-arcs."""
    s = full[:, 1:].copy()
    n = s.shape[1]
    s[np.arange(1, n + 1), np.arange(n)] = -np.inf
    return s


def arc_scores(r: np.ndarray, params: ScorerParams):
    """Biaffine scores from representations; returns ``(ArcScoreTable, h_dep, h_head)``."""
    h_dep = np.tanh(r @ params["dep_w"].T + params["dep_b"])
    h_head = np.tanh(r @ params["head_w"].T + params["head_b"])
    full = biaffine(h_head, h_dep, params["U1"], params["u2"])
    return ArcScoreTable(mask_self_arcs(full)), h_dep, h_head


def score_ids(words, tags, params: ScorerParams):
    r, enc = encode(words, tags, params)
    table, h_dep, h_head = arc_scores(r, params)
    return table, Tape(params, words, tags, enc["x"], enc, r, h_dep, h_head)


def score_sentence(sentence, vocab, params: ScorerParams):
    """Forward pass for one sentence; returns ``(ArcScoreTable, Tape)``."""
    words, tags = vocab.encode(sentence)
    return score_ids(words, tags, params)


def backward(grad_s: np.ndarray, tape: Tape) -> dict:
    """Exact gradients of a scalar loss w.r.t. every parameter, given dL/ds."""
    params = tape.params
    g = np.asarray(grad_s, dtype=float)
    n_full = tape.r.shape[0]
    if g.shape != (n_full, n_full - 1):
        raise ValueError(f"gradient shape {g.shape} does not match score table {(n_full, n_full - 1)}")
    G = np.zeros((n_full, n_full))
    G[:, 1:] = np.where(np.isfinite(g), g, 0.0)
    G[:, 1:][np.arange(1, n_full), np.arange(n_full - 1)] = 0.0

    A, B = tape.h_head, tape.h_dep
    U1, u2 = params["U1"], params["u2"]
    row = G.sum(axis=1)
    grads = params.zeros_like()
    grads["U1"] = A.T @ G @ B
    grads["u2"] = A.T @ row
    dA = G @ B @ U1.T + np.outer(row, u2)
    dB = G.T @ A @ U1

    d_head = dA * (1.0 - A * A)
    d_dep = dB * (1.0 - B * B)
    grads["head_w"] = d_head.T @ tape.r
    grads["head_b"] = d_head.sum(axis=0)
    grads["dep_w"] = d_dep.T @ tape.r
    grads["dep_b"] = d_dep.sum(axis=0)
    dr = d_head @ params["head_w"] + d_dep @ params["dep_w"]

    kind = params.config.encoder
    x = tape.x
    if kind == "identity":
        dx = dr
    elif kind == "window":
        d = x.shape[1]
        dx = dr[:, d:2 * d].copy()
        dx[:-1] += dr[1:, :d]
        dx[1:] += dr[:-1, 2 * d:]
    else:
        back = _lstm("lstm_backward")
        h = params.config.d_hidden
        dx = np.zeros_like(x)
        for side, cols, rev in (("fw", slice(0, h), False), ("bw", slice(h, 2 * h), True)):
            hs, cs, gates = tape.enc[side]
            dxs, dw, db = back(x, params[f"lstm_{side}_w"], hs, cs, gates,
                               np.ascontiguousarray(dr[:, cols]), rev)
            dx += dxs
            grads[f"lstm_{side}_w"] = dw
            grads[f"lstm_{side}_b"] = db

    d_emb = params.config.d_emb
    np.add.at(grads["word_emb"], tape.words, dx[:, :d_emb])
    np.add.at(grads["pos_emb"], tape.tags, dx[:, d_emb:])
    return grads


class PotentialTable:
    """Unary potentials psi_k = exp(s_{i(k) j(k)}) over the factor graph's arcs.

    The pairwise potential of two arcs is the sum of their unaries; the
    mutual-interaction correction is not modelled.
    """

    def __init__(self, arcs, psi):
        self.arcs = list(arcs)
        self.psi = np.asarray(psi, dtype=float)
        self.index = {a: k for k, a in enumerate(self.arcs)}

    def unary(self, arc) -> float:
        return float(self.psi[self.index[arc]])

    def pair(self, arc_a, arc_b) -> float:
        return self.unary(arc_a) + self.unary(arc_b)

    def as_dict(self):
        return {a: float(p) for a, p in zip(self.arcs, self.psi)}


def psi_from_scores(s) -> np.ndarray:
    return np.exp(np.clip(s, -PSI_CLAMP, PSI_CLAMP))


def potentials(scores, graph) -> PotentialTable:
    """Exponentiated scores for every arc of ``graph`` (lookup k -> (i(k), j(k)))."""
    s = np.asarray(getattr(scores, "s", scores))
    vals = []
    for arc in graph.arcs:
        v = s[arc.head, arc.dep - 1]
        if arc.head == arc.dep or not np.isfinite(v):
            raise RuntimeError(f"factor graph references masked arc {arc}")
        vals.append(v)
    return PotentialTable(graph.arcs, psi_from_scores(np.array(vals)))
