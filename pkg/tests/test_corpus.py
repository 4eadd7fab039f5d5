import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hodep.corpus import (ROOT_ID, UNK_ID, VOCAB_HEADER, ConllParseError, Sentence, TreeValidationError,
                          Vocabulary, batches, build_vocab, format_conllu, load_conllu, parse_conllu)
from tests.conftest import DATA


def row(i, form, upos, head):
    return "\t".join([str(i), form, "_", upos, "_", "_", str(head), "dep", "_", "_"])


DOGS = row(1, "Dogs", "NOUN", 2) + "\n" + row(2, "bark", "VERB", 0) + "\n\n"


class TestLoad:
    def test_two_token_block(self):
        [s] = parse_conllu(DOGS)
        assert s.tokens == ("Dogs", "bark")
        assert s.pos_tags == ("NOUN", "VERB")
        assert s.gold_heads == (2, 0)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.conllu"
        p.write_text("")
        assert load_conllu(p) == []

    def test_comments_and_crlf(self):
        text = "# sent_id = 1\r\n" + DOGS.replace("\n", "\r\n")
        assert parse_conllu(text)[0].gold_heads == (2, 0)

    def test_multiword_and_empty_nodes_skipped(self):
        text = ("1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n" + row(1, "do", "AUX", 3) + "\n"
                + row(2, "n't", "PART", 3) + "\n" + "2.1\tx\t_\tX\t_\t_\t_\t_\t_\t_\n"
                + row(3, "go", "VERB", 0) + "\n\n")
        [s] = parse_conllu(text)
        assert s.tokens == ("do", "n't", "go")

    def test_wrong_column_count_names_line(self):
        with pytest.raises(ConllParseError, match="line 2"):
            parse_conllu(row(1, "a", "X", 0) + "\n1\tb\tc\n")

    def test_non_integer_head(self):
        with pytest.raises(ConllParseError, match="line 1"):
            parse_conllu(row(1, "a", "X", "root") + "\n")

    def test_head_out_of_range(self):
        with pytest.raises(TreeValidationError, match="out of range"):
            parse_conllu(row(1, "a", "X", 5) + "\n\n")

    def test_cycle_rejected(self):
        text = row(1, "a", "X", 2) + "\n" + row(2, "b", "X", 1) + "\n\n"
        with pytest.raises(TreeValidationError):
            parse_conllu(text)

    def test_ewt_sample_loads(self):
        sents = load_conllu(DATA / "en_ewt_sample.conllu")
        assert len(sents) == 2
        assert sents[0].tokens[:3] == ("From", "the", "AP")

    def test_long_sentence_keeps_length(self, czech):
        longest = max(czech, key=lambda s: s.n)
        assert longest.n == 50
        [again] = parse_conllu(format_conllu([longest]))
        assert again.n == longest.n

    def test_round_trip_corpus(self, czech):
        assert parse_conllu(format_conllu(czech)) == czech

    def test_predicted_heads_written(self):
        [s] = parse_conllu(DOGS)
        out = format_conllu([s], [(0, 1)])
        assert parse_conllu(out)[0].gold_heads == (0, 1)


class TestVocabulary:
    def corpus(self, words):
        return [Sentence(tuple(words), ("X",) * len(words), (0,) + tuple(range(1, len(words))))]

    def test_min_count_threshold(self):
        vocab = build_vocab(self.corpus(["a", "a", "b"]), min_count=2)
        assert vocab.word_id("a") not in (ROOT_ID, UNK_ID)
        assert vocab.word_id("b") == UNK_ID

    def test_min_count_one_keeps_all(self):
        vocab = build_vocab(self.corpus(["a", "a", "b"]), min_count=1)
        assert len({vocab.word_id(w) for w in "ab"}) == 2 and UNK_ID not in {vocab.word_id(w) for w in "ab"}

    def test_deterministic_bytes(self, czech):
        assert build_vocab(czech, 2).dumps() == build_vocab(list(czech), 2).dumps()

    def test_frequency_then_lexicographic(self):
        vocab = build_vocab(self.corpus(["b", "c", "a", "c"]))
        assert vocab.id_to_word[2:] == ["c", "a", "b"]

    def test_lowercase_lookup(self):
        vocab = build_vocab(self.corpus(["Dog"]))
        assert vocab.word_id("DOG") == vocab.word_id("dog") != UNK_ID

    def test_round_trip(self, czech, tmp_path):
        vocab = build_vocab(czech, 2)
        vocab.save(tmp_path / "v.txt")
        again = Vocabulary.load(tmp_path / "v.txt")
        assert again == vocab
        assert (tmp_path / "v.txt").read_text().splitlines()[0] == VOCAB_HEADER
        assert again.word_to_id["<root>"] == ROOT_ID and again.word_to_id["<unk>"] == UNK_ID

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            build_vocab([])

    def test_bad_header(self):
        with pytest.raises(ValueError, match="header"):
            Vocabulary.loads("words\n")

    def test_encode_prepends_root(self):
        [s] = parse_conllu(DOGS)
        words, tags = build_vocab([s]).encode(s)
        assert words[0] == ROOT_ID and tags[0] == ROOT_ID and len(words) == 3


class TestBatches:
    def make(self, lengths):
        return [Sentence(("w",) * n, ("X",) * n, (0,) + tuple(range(1, n))) for n in lengths]

    def test_sizes(self):
        assert [len(b) for b in batches(self.make([3] * 7), 5, 20)] == [5, 2]

    def test_max_len_filters(self):
        out = batches(self.make([5, 40, 7]), 5, 20)
        assert [s.n for b in out for s in b] == [5, 7]

    def test_seed_deterministic(self):
        data = self.make(range(1, 12))
        a = batches(data, 3, 20, shuffle_seed=4)
        b = batches(data, 3, 20, shuffle_seed=4)
        assert [[s.n for s in x] for x in a] == [[s.n for s in x] for x in b]

    def test_empty_after_filter(self):
        assert batches(self.make([30]), 5, 20) == []

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 30), max_size=40), st.integers(1, 8), st.integers(1, 30),
           st.one_of(st.none(), st.integers(0, 100)))
    def test_partition_property(self, lengths, size, max_len, seed):
        data = self.make(lengths)
        out = batches(data, size, max_len, seed)
        flat = [s for b in out for s in b]
        assert all(1 <= len(b) <= size for b in out)
        assert sorted(s.n for s in flat) == sorted(n for n in lengths if n <= max_len)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12).flatmap(lambda n: st.lists(st.integers(0, 10 ** 6), min_size=n, max_size=n)))
def test_random_tree_round_trip(keys):
    # random recursive tree: token j attaches to an earlier node of a random order
    n = len(keys)
    order = list(np.argsort(keys) + 1)
    heads = [0] * n
    for k, tok in enumerate(order):
        heads[tok - 1] = 0 if k == 0 else order[keys[k] % k]
    s = Sentence(tuple(f"w{i}" for i in range(n)), ("X",) * n, tuple(heads))
    assert parse_conllu(format_conllu([s])) == [s]
