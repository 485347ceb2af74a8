"""Per-token class priors counted from labeled training data."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .data import Sentence

UNK_TOKEN = "<unk>"


class Vocabulary:
    """Token-string to integer-id map; id 0 is reserved for unseen tokens."""

    def __init__(self, tokens: Iterable[str]):
        self._token_to_id: dict[str, int] = {UNK_TOKEN: 0}
        for token in tokens:
            if token not in self._token_to_id:
                self._token_to_id[token] = len(self._token_to_id)
        self._id_to_token = list(self._token_to_id)

    @classmethod
    def from_sentences(cls, sentences: Sequence[Sentence]) -> "Vocabulary":
        return cls(token for sentence in sentences for token in sentence.tokens)

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, 0)

    def ids_of(self, tokens: Sequence[str]) -> list[int]:
        return [self.id_of(token) for token in tokens]

    @property
    def tokens(self) -> list[str]:
        return list(self._id_to_token)

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id


class TokenPriorTable:
    """Per-token categorical tag distributions from training occurrence counts.

    A token's prior is its per-tag count vector normalized by its total count;
    tokens never seen in training (including the reserved unseen id) fall back
    to the uniform distribution.  ``total_count`` is the number of labeled
    training tokens, i.e. the sum of all stored counts.
    """

    def __init__(self, counts: np.ndarray):
        counts = np.asarray(counts, dtype=float)
        if counts.ndim != 2:
            raise ValueError("counts must be a (vocab, classes) matrix")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise ValueError("counts must be finite and nonnegative")
        self.counts = counts
        self._totals = counts.sum(axis=1)
        self.total_count = int(counts.sum())
        if self.total_count <= 0:
            raise ValueError("prior table needs at least one labeled token")
        n_vocab, n_classes = counts.shape
        self._priors = np.full((n_vocab, n_classes), 1.0 / n_classes)
        seen = self._totals > 0
        self._priors[seen] = counts[seen] / self._totals[seen, None]

    @classmethod
    def from_corpus(
        cls,
        sentences: Sequence[Sentence],
        vocab: Vocabulary,
        tag_to_id: dict[str, int],
    ) -> "TokenPriorTable":
        if not sentences:
            raise ValueError("cannot build priors from an empty corpus")
        counts = np.zeros((len(vocab), len(tag_to_id)))
        for sentence in sentences:
            for token, tag in zip(sentence.tokens, sentence.tags):
                if tag not in tag_to_id:
                    raise ValueError(f"tag {tag!r} missing from the tag inventory")
                counts[vocab.id_of(token), tag_to_id[tag]] += 1.0
        return cls(counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[1]

    def prior(self, token_id: int) -> np.ndarray:
        """Class distribution of one token id (uniform when unseen)."""
        return self._priors[token_id].copy()

    def prior_matrix(self, token_ids: Sequence[int]) -> np.ndarray:
        """Stacked priors for a sentence of token ids, shape (len, classes)."""
        return self._priors[np.asarray(token_ids, dtype=int)]

    def full_matrix(self) -> np.ndarray:
        """All per-id priors, shape (vocab, classes); rows sum to 1."""
        return self._priors.copy()
