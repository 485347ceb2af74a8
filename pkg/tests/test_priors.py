import numpy as np
import pytest

from slpn.data import Sentence
from slpn.priors import TokenPriorTable, Vocabulary


def single_token_corpus(spec: list[tuple[str, str, int]]):
    """(token, tag, count) triples expanded to one-token sentences."""
    sentences = []
    for token, tag, count in spec:
        sentences.extend(Sentence((token,), (tag,)) for _ in range(count))
    return sentences


TAGS = {"O": 0, "S-FOOD": 1, "S-ORG": 2}


class TestVocabulary:
    def test_reserved_unseen_id(self):
        vocab = Vocabulary(["a", "b", "a"])
        assert vocab.id_of("a") == 1
        assert vocab.id_of("b") == 2
        assert vocab.id_of("zzz") == 0
        assert len(vocab) == 3

    def test_order_is_first_occurrence(self):
        vocab = Vocabulary(["x", "y", "x", "z"])
        assert vocab.tokens == ["<unk>", "x", "y", "z"]


class TestTokenPriorTable:
    def test_occurrence_ratio(self):
        sentences = single_token_corpus([("Apple", "S-ORG", 200), ("Apple", "S-FOOD", 800)])
        vocab = Vocabulary.from_sentences(sentences)
        table = TokenPriorTable.from_corpus(sentences, vocab, TAGS)
        prior = table.prior(vocab.id_of("Apple"))
        assert prior[TAGS["S-ORG"]] == pytest.approx(0.2)
        assert prior[TAGS["S-FOOD"]] == pytest.approx(0.8)
        assert prior[TAGS["O"]] == 0.0

    def test_single_observation_is_one_hot(self):
        sentences = single_token_corpus([("kiwi", "S-FOOD", 1), ("pad", "O", 5)])
        vocab = Vocabulary.from_sentences(sentences)
        table = TokenPriorTable.from_corpus(sentences, vocab, TAGS)
        assert np.array_equal(table.prior(vocab.id_of("kiwi")), [0.0, 1.0, 0.0])

    def test_unseen_token_uniform(self):
        sentences = single_token_corpus([("pad", "O", 3)])
        vocab = Vocabulary.from_sentences(sentences)
        table = TokenPriorTable.from_corpus(sentences, vocab, TAGS)
        assert np.allclose(table.prior(vocab.id_of("never-seen")), [1 / 3] * 3)

    def test_total_is_labeled_token_count(self):
        sentences = [
            Sentence(("a", "b", "c"), ("O", "S-FOOD", "O")),
            Sentence(("a",), ("S-ORG",)),
        ]
        vocab = Vocabulary.from_sentences(sentences)
        table = TokenPriorTable.from_corpus(sentences, vocab, TAGS)
        assert table.total_count == 4

    def test_rows_normalized(self):
        sentences = single_token_corpus(
            [("a", "O", 3), ("a", "S-FOOD", 2), ("b", "S-ORG", 1)]
        )
        vocab = Vocabulary.from_sentences(sentences)
        table = TokenPriorTable.from_corpus(sentences, vocab, TAGS)
        matrix = table.full_matrix()
        assert np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            TokenPriorTable.from_corpus([], Vocabulary([]), TAGS)

    def test_prior_matrix_stacks_rows(self):
        sentences = single_token_corpus([("a", "O", 2), ("b", "S-ORG", 1)])
        vocab = Vocabulary.from_sentences(sentences)
        table = TokenPriorTable.from_corpus(sentences, vocab, TAGS)
        ids = vocab.ids_of(["b", "a", "b"])
        matrix = table.prior_matrix(ids)
        assert matrix.shape == (3, 3)
        assert np.array_equal(matrix[0], matrix[2])
        assert np.array_equal(matrix[0], table.prior(vocab.id_of("b")))

    def test_unknown_tag_rejected(self):
        sentences = [Sentence(("a",), ("S-NEW",))]
        vocab = Vocabulary.from_sentences(sentences)
        with pytest.raises(ValueError):
            TokenPriorTable.from_corpus(sentences, vocab, TAGS)

    def test_deterministic(self):
        sentences = single_token_corpus([("a", "O", 2), ("b", "S-ORG", 5), ("c", "S-FOOD", 1)])
        vocab = Vocabulary.from_sentences(sentences)
        one = TokenPriorTable.from_corpus(sentences, vocab, TAGS)
        two = TokenPriorTable.from_corpus(sentences, vocab, TAGS)
        assert np.array_equal(one.full_matrix(), two.full_matrix())
        assert one.total_count == two.total_count
