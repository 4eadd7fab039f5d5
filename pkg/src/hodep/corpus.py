"""CoNLL-U ingestion, vocabularies and length-filtered batching."""
from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

ROOT = "<root>"
UNK = "<unk>"
ROOT_ID = 0
UNK_ID = 1
VOCAB_HEADER = "hodep-vocab v1"


class ConllParseError(ValueError):
    """Malformed CoNLL-U line."""

    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class TreeValidationError(ValueError):
    """Gold heads out of range or not a rooted tree."""


@dataclass(frozen=True)
class Sentence:
    tokens: tuple
    pos_tags: tuple
    gold_heads: tuple

    def __post_init__(self):
        n = len(self.tokens)
        if n < 1:
            raise TreeValidationError("sentence has no tokens")
        if len(self.pos_tags) != n or len(self.gold_heads) != n:
            raise TreeValidationError("tokens, pos_tags and gold_heads differ in length")
        for j, h in enumerate(self.gold_heads, start=1):
            if not 0 <= h <= n:
                raise TreeValidationError(f"token {j}: head {h} out of range [0, {n}]")
            if h == j:
                raise TreeValidationError(f"token {j}: self-loop")
        from hodep.decoder import is_tree

        if not is_tree(self.gold_heads):
            raise TreeValidationError("gold heads contain a cycle")

    @property
    def n(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Batch:
    sentences: tuple
    max_len: int

    def __post_init__(self):
        if any(s.n > self.max_len for s in self.sentences):
            raise ValueError("batch member longer than max_len")

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)


def _finish(rows, start_line):
    tokens, tags, heads = zip(*rows)
    try:
        return Sentence(tuple(tokens), tuple(tags), tuple(heads))
    except TreeValidationError as exc:
        raise TreeValidationError(f"sentence starting at line {start_line}: {exc}") from None


def iter_conllu(lines: Iterable[str]) -> Iterator[Sentence]:
    """Yield sentences from CoNLL-U lines (LF or CRLF)."""
    rows = []
    start = None
    lineno = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            if rows:
                yield _finish(rows, start)
            rows, start = [], None
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConllParseError(lineno, f"expected 10 tab-separated columns, got {len(cols)}")
        idx = cols[0]
        if "-" in idx or "." in idx:
            continue
        try:
            position = int(idx)
        except ValueError:
            raise ConllParseError(lineno, f"non-integer ID {idx!r}") from None
        if position != len(rows) + 1:
            raise ConllParseError(lineno, f"ID {position} out of sequence")
        try:
            head = int(cols[6])
        except ValueError:
            raise ConllParseError(lineno, f"non-integer head {cols[6]!r}") from None
        if start is None:
            start = lineno
        rows.append((cols[1], cols[3], head))
    if rows:
        yield _finish(rows, start)


def load_conllu(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(iter_conllu(fh))


def parse_conllu(text: str) -> list:
    return list(iter_conllu(io.StringIO(text, newline="")))


def format_conllu(sentences: Sequence[Sentence], heads: Sequence[Sequence[int]] | None = None) -> str:
    """Render sentences; ``heads`` overrides column 7 (labels become ``_``)."""
    out = []
    for k, sent in enumerate(sentences):
        col7 = sent.gold_heads if heads is None else heads[k]
        for j in range(sent.n):
            out.append("\t".join([str(j + 1), sent.tokens[j], "_", sent.pos_tags[j], "_", "_",
                                  str(col7[j]), "_", "_", "_"]))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def write_conllu(path, sentences, heads=None):
    Path(path).write_text(format_conllu(sentences, heads), encoding="utf-8")


class Vocabulary:
    """Word and POS id maps; ids 0 and 1 are reserved for ROOT and UNK in both."""

    def __init__(self, words: Sequence[str], tags: Sequence[str]):
        self.id_to_word = [ROOT, UNK] + [w for w in words if w not in (ROOT, UNK)]
        self.id_to_pos = [ROOT, UNK] + [t for t in tags if t not in (ROOT, UNK)]
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        self.pos_to_id = {t: i for i, t in enumerate(self.id_to_pos)}

    def __eq__(self, other):
        return (isinstance(other, Vocabulary) and self.id_to_word == other.id_to_word
                and self.id_to_pos == other.id_to_pos)

    @property
    def n_words(self):
        return len(self.id_to_word)

    @property
    def n_tags(self):
        return len(self.id_to_pos)

    def word_id(self, word: str) -> int:
        return self.word_to_id.get(word.lower(), UNK_ID)

    def encode(self, sentence: Sentence):
        """Word and POS id arrays of length n+1, position 0 being ROOT."""
        words = np.array([ROOT_ID] + [self.word_id(w) for w in sentence.tokens], dtype=np.int64)
        tags = np.array([ROOT_ID] + [self.pos_to_id.get(t, UNK_ID) for t in sentence.pos_tags],
                        dtype=np.int64)
        return words, tags

    def dumps(self) -> str:
        lines = [VOCAB_HEADER, "[words]"]
        lines += [f"{i}\t{w}" for i, w in enumerate(self.id_to_word)]
        lines.append("[pos]")
        lines += [f"{i}\t{t}" for i, t in enumerate(self.id_to_pos)]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.splitlines()
        if not lines or lines[0].strip() != VOCAB_HEADER:
            raise ValueError(f"not a vocabulary file (expected header {VOCAB_HEADER!r})")
        sections = {"[words]": [], "[pos]": []}
        current = None
        for lineno, line in enumerate(lines[1:], start=2):
            if line in sections:
                current = sections[line]
                continue
            if current is None or not line:
                raise ValueError(f"vocabulary line {lineno}: unexpected {line!r}")
            idx, _, entry = line.partition("\t")
            if int(idx) != len(current):
                raise ValueError(f"vocabulary line {lineno}: ids must be contiguous")
            current.append(entry)
        words, tags = sections["[words]"], sections["[pos]"]
        if words[:2] != [ROOT, UNK] or tags[:2] != [ROOT, UNK]:
            raise ValueError("reserved ids 0/1 must be ROOT/UNK")
        return cls(words[2:], tags[2:])

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _ranked(counter):
    return [k for k, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))]


def build_vocab(sentences: Sequence[Sentence], min_count: int = 1) -> Vocabulary:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if not sentences:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    words = Counter(w.lower() for s in sentences for w in s.tokens)
    tags = Counter(t for s in sentences for t in s.pos_tags)
    kept = Counter({w: c for w, c in words.items() if c >= min_count})
    return Vocabulary(_ranked(kept), _ranked(tags))


def batches(sentences: Sequence[Sentence], batch_size: int, max_len: int,
            shuffle_seed: int | None = None) -> list:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    kept = [s for s in sentences if s.n <= max_len]
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(kept))
        kept = [kept[i] for i in order]
    return [Batch(tuple(kept[i:i + batch_size]), max_len) for i in range(0, len(kept), batch_size)]
