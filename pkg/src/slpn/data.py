"""Corpus handling: sentences, the BIOES tag codec, CoNLL column files,
leave-out OOD splits, and a synthetic corpus generator for desk-scale runs.
"""

from __future__ import annotations

import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

TAG_PATTERN = re.compile(r"^(O|[BIES]-\S+)$")

MANIFEST_SECTIONS = ("train", "val", "test_in", "test_out")


class CorpusFormatError(ValueError):
    """Malformed corpus file; carries the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class Entity(NamedTuple):
    """A labeled span; ``end`` is inclusive."""

    start: int
    end: int
    label: str


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.tokens) != len(self.tags):
            raise ValueError("tokens and tags must have equal length")
        if len(self.tokens) == 0:
            raise ValueError("a sentence needs at least one token")
        for tag in self.tags:
            if not TAG_PATTERN.match(tag):
                raise ValueError(f"tag {tag!r} is not O or B/I/E/S-<label>")

    def __len__(self) -> int:
        return len(self.tokens)


def decode_bioes(tags: Sequence[str]) -> list[Entity]:
    """Decode complete S-X / B-X (I-X)* E-X patterns into entities.

    Conservative: tokens in malformed runs (dangling B, I or E without an
    opener, label switch mid-span) are dropped rather than patched into spans.
    """
    entities: list[Entity] = []
    n = len(tags)
    i = 0
    while i < n:
        tag = tags[i]
        if tag.startswith("S-"):
            entities.append(Entity(i, i, tag[2:]))
            i += 1
        elif tag.startswith("B-"):
            label = tag[2:]
            j = i + 1
            while j < n and tags[j] == f"I-{label}":
                j += 1
            if j < n and tags[j] == f"E-{label}":
                entities.append(Entity(i, j, label))
                i = j + 1
            else:
                # Broken span: skip the B and its I run; the breaking tag may
                # itself start a valid span, so resume exactly there.
                i = j
        else:
            i += 1
    return entities


def encode_bioes(entities: Iterable[Entity], length: int) -> list[str]:
    """Inverse of :func:`decode_bioes` for valid, non-overlapping entities."""
    tags = ["O"] * length
    taken = [False] * length
    for ent in entities:
        if not 0 <= ent.start <= ent.end < length:
            raise ValueError(f"entity {ent} out of bounds for length {length}")
        if any(taken[ent.start : ent.end + 1]):
            raise ValueError(f"entity {ent} overlaps another entity")
        for pos in range(ent.start, ent.end + 1):
            taken[pos] = True
        if ent.start == ent.end:
            tags[ent.start] = f"S-{ent.label}"
        else:
            tags[ent.start] = f"B-{ent.label}"
            for pos in range(ent.start + 1, ent.end):
                tags[pos] = f"I-{ent.label}"
            tags[ent.end] = f"E-{ent.label}"
    return tags


def parse_conll(path) -> list[Sentence]:
    """Read a two-column file: ``token<TAB or space>tag``, blank line between sentences."""
    sentences: list[Sentence] = []
    tokens: list[str] = []
    tags: list[str] = []

    def flush():
        if tokens:
            sentences.append(Sentence(tuple(tokens), tuple(tags)))
            tokens.clear()
            tags.clear()

    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                flush()
                continue
            fields = line.split()
            if len(fields) != 2:
                raise CorpusFormatError(
                    f"expected 'token tag', got {len(fields)} fields", lineno
                )
            token, tag = fields
            if not TAG_PATTERN.match(tag):
                raise CorpusFormatError(f"tag {tag!r} is not O or B/I/E/S-<label>", lineno)
            tokens.append(token)
            tags.append(tag)
    flush()
    if not sentences:
        raise CorpusFormatError("file contains no sentences")
    return sentences


def write_conll(sentences: Iterable[Sentence], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for sentence in sentences:
            for token, tag in zip(sentence.tokens, sentence.tags):
                handle.write(f"{token}\t{tag}\n")
            handle.write("\n")


@dataclass
class SplitSpec:
    """Leave-out OOD split: which labels are held out and who goes where."""

    in_labels: list[str]
    out_labels: list[str]
    train: list[int]
    val: list[int]
    test_in: list[int]
    test_out: list[int]

    @property
    def test(self) -> list[int]:
        return self.test_in + self.test_out


def entity_label_counts(sentences: Sequence[Sentence]) -> Counter:
    counts: Counter = Counter()
    for sentence in sentences:
        for entity in decode_bioes(sentence.tags):
            counts[entity.label] += 1
    return counts


def leave_out_split(sentences: Sequence[Sentence], m: int, seed: int) -> SplitSpec:
    """Hold out the ``m`` rarest entity labels and split the rest 80/10/10.

    Sentences containing any held-out entity form the OOD test pool; the
    remaining sentences (including entity-free ones) are shuffled with
    ``seed`` and partitioned by floor rounding, remainder to the in-domain
    test slice.  Ties on entity counts break lexicographically.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    counts = entity_label_counts(sentences)
    if m >= len(counts):
        raise ValueError(f"m={m} must be smaller than the label count {len(counts)}")
    ranked = sorted(counts, key=lambda label: (counts[label], label))
    out_labels = sorted(ranked[:m])
    in_labels = sorted(ranked[m:])
    out_set = set(out_labels)

    d_in: list[int] = []
    d_out: list[int] = []
    for idx, sentence in enumerate(sentences):
        labels = {e.label for e in decode_bioes(sentence.tags)}
        (d_out if labels & out_set else d_in).append(idx)

    shuffled = list(d_in)
    random.Random(seed).shuffle(shuffled)
    n_train = math.floor(0.8 * len(d_in))
    n_val = math.floor(0.1 * len(d_in))
    return SplitSpec(
        in_labels=in_labels,
        out_labels=out_labels,
        train=sorted(shuffled[:n_train]),
        val=sorted(shuffled[n_train : n_train + n_val]),
        test_in=sorted(shuffled[n_train + n_val :]),
        test_out=list(d_out),
    )


def write_split_manifest(split: SplitSpec, path) -> None:
    """Persist the split as plain text: section headers, one index per line."""
    lines: list[str] = []
    for section in MANIFEST_SECTIONS:
        lines.append(f"#{section}")
        lines.extend(str(idx) for idx in getattr(split, section))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_split_manifest(path) -> dict[str, list[int]]:
    sections: dict[str, list[int]] = {name: [] for name in MANIFEST_SECTIONS}
    current: str | None = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            name = line[1:]
            if name not in sections:
                raise CorpusFormatError(f"unknown manifest section {name!r}", lineno)
            current = name
        else:
            if current is None:
                raise CorpusFormatError("index before any section header", lineno)
            try:
                sections[current].append(int(line))
            except ValueError:
                raise CorpusFormatError(f"bad sentence index {line!r}", lineno) from None
    return sections


@dataclass
class SyntheticCorpusConfig:
    """Knobs for the synthetic corpus.

    Each semantic label owns disjoint entity and context vocabularies; filler
    tokens are shared.  The last label is planted rare (its share of sentences
    is ``ood_fraction``) so that a leave-one-out split holds exactly it out.
    """

    labels: tuple[str, ...] = ("ACT", "DISH", "GEAR", "PLACE", "TEAM", "RITE")
    n_sentences: int = 2000
    entity_vocab_size: int = 30
    context_vocab_size: int = 12
    filler_vocab_size: int = 60
    ood_fraction: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ValueError("need at least two semantic labels")
        if not 0.0 <= self.ood_fraction < 1.0:
            raise ValueError("ood_fraction must be in [0, 1)")
        if self.n_sentences < 1:
            raise ValueError("n_sentences must be positive")


def _label_vocab(label: str, kind: str, size: int) -> list[str]:
    return [f"{label.lower()}_{kind}{i:02d}" for i in range(size)]


def generate_synthetic_corpus(
    config: SyntheticCorpusConfig,
) -> tuple[list[Sentence], dict]:
    """Emit a labeled corpus plus hints about the planted structure.

    Entity lengths are 1-3 tokens drawn from the owning label's vocabulary;
    context slots around an entity prefer that label's context tokens, so the
    surroundings of an entity carry signal about it.  Occasionally two
    entities sit back to back, which makes span boundaries context-dependent.
    """
    rng = random.Random(config.seed)
    entity_vocab = {
        label: _label_vocab(label, "ent", config.entity_vocab_size) for label in config.labels
    }
    context_vocab = {
        label: _label_vocab(label, "ctx", config.context_vocab_size) for label in config.labels
    }
    filler = [f"common{i:02d}" for i in range(config.filler_vocab_size)]
    rare_label = config.labels[-1]
    common_labels = config.labels[:-1]

    def sample_entity(label: str) -> tuple[list[str], list[str]]:
        length = rng.choices((1, 2, 3), weights=(0.45, 0.35, 0.2))[0]
        tokens = [rng.choice(entity_vocab[label]) for _ in range(length)]
        return tokens, encode_bioes([Entity(0, length - 1, label)], length)

    def sample_context(labels_here: Sequence[str], n: int) -> list[str]:
        out = []
        for _ in range(n):
            if labels_here and rng.random() < 0.5:
                out.append(rng.choice(context_vocab[rng.choice(labels_here)]))
            else:
                out.append(rng.choice(filler))
        return out

    sentences: list[Sentence] = []
    ood_indices: list[int] = []
    for idx in range(config.n_sentences):
        is_ood = rng.random() < config.ood_fraction
        if is_ood:
            labels_here = [rare_label]
            if rng.random() < 0.5:
                labels_here.append(rng.choice(common_labels))
        elif rng.random() < 0.05:
            labels_here = []
        else:
            labels_here = [rng.choice(common_labels)]
            if rng.random() < 0.4:
                labels_here.append(rng.choice(common_labels))

        tokens: list[str] = []
        tags: list[str] = []
        tokens.extend(sample_context(labels_here, rng.randint(1, 3)))
        tags.extend("O" for _ in range(len(tokens)))
        for pos, label in enumerate(labels_here):
            ent_tokens, ent_tags = sample_entity(label)
            tokens.extend(ent_tokens)
            tags.extend(ent_tags)
            adjacent = pos + 1 < len(labels_here) and rng.random() < 0.25
            if not adjacent:
                n_ctx = rng.randint(1, 3)
                tokens.extend(sample_context(labels_here, n_ctx))
                tags.extend("O" for _ in range(n_ctx))
        if not labels_here:
            extra = rng.randint(2, 6)
            tokens.extend(sample_context([], extra))
            tags.extend("O" for _ in range(extra))
        sentences.append(Sentence(tuple(tokens), tuple(tags)))
        if is_ood:
            ood_indices.append(idx)

    hints = {
        "planted_label": rare_label,
        "ood_sentence_indices": ood_indices,
        "entity_vocab": {label: set(v) for label, v in entity_vocab.items()},
        "context_vocab": {label: set(v) for label, v in context_vocab.items()},
        "filler_vocab": set(filler),
        "label_counts": dict(entity_label_counts(sentences)),
    }
    return sentences, hints


def write_embedding_file(path, records: Iterable[tuple[Sequence[int], np.ndarray]]) -> None:
    """Write precomputed token embeddings: ``token_id v1 ... vd`` per token,
    blank line between sentences."""
    with open(path, "w", encoding="utf-8") as handle:
        for token_ids, vectors in records:
            matrix = np.asarray(vectors, dtype=float)
            if matrix.ndim != 2 or matrix.shape[0] != len(token_ids):
                raise ValueError("need one embedding row per token id")
            for token_id, row in zip(token_ids, matrix):
                values = " ".join(repr(float(v)) for v in row)
                handle.write(f"{int(token_id)} {values}\n")
            handle.write("\n")


def read_embedding_file(path) -> list[tuple[list[int], np.ndarray]]:
    """Inverse of :func:`write_embedding_file`; validates rectangular records."""
    records: list[tuple[list[int], np.ndarray]] = []
    ids: list[int] = []
    rows: list[list[float]] = []

    def flush(lineno: int):
        if not ids:
            return
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise CorpusFormatError("embedding rows of one sentence differ in width", lineno)
        records.append((list(ids), np.asarray(rows, dtype=float)))
        ids.clear()
        rows.clear()

    with open(path, encoding="utf-8") as handle:
        lineno = 0
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                flush(lineno)
                continue
            fields = line.split()
            if len(fields) < 2:
                raise CorpusFormatError("need a token id and at least one value", lineno)
            try:
                ids.append(int(fields[0]))
                rows.append([float(v) for v in fields[1:]])
            except ValueError:
                raise CorpusFormatError(f"non-numeric field in {line!r}", lineno) from None
    flush(lineno)
    return records
