"""Input validation helpers for ragged token/tag sequences."""

from __future__ import annotations

from typing import Sequence

from .data import TAG_PATTERN


def check_token_sequences(X) -> list[list[str]]:
    """Validate a collection of sentences given as sequences of token strings."""
    if isinstance(X, str):
        raise ValueError("X must be a collection of sentences, not a single string")
    sentences = [list(sentence) for sentence in X]
    if not sentences:
        raise ValueError("X must contain at least one sentence")
    for i, sentence in enumerate(sentences):
        if not sentence:
            raise ValueError(f"sentence {i} is empty")
        for token in sentence:
            if not isinstance(token, str):
                raise ValueError(f"sentence {i} holds a non-string token {token!r}")
    return sentences


def check_tag_sequences(y, X: Sequence[Sequence[str]]) -> list[list[str]]:
    """Validate tags against already-checked token sequences."""
    tags = [list(row) for row in y]
    if len(tags) != len(X):
        raise ValueError(f"got {len(tags)} tag rows for {len(X)} sentences")
    for i, (sentence, row) in enumerate(zip(X, tags)):
        if len(row) != len(sentence):
            raise ValueError(
                f"sentence {i}: {len(sentence)} tokens but {len(row)} tags"
            )
        for tag in row:
            if not isinstance(tag, str) or not TAG_PATTERN.match(tag):
                raise ValueError(f"sentence {i}: tag {tag!r} is not O or B/I/E/S-<label>")
    return tags
