from __future__ import annotations

import pytest

from slpn.data import Entity, Sentence, encode_bioes
from slpn.training import TrainingConfig, train

TINY_CONFIG = dict(
    epochs=12,
    learning_rate=0.02,
    batch_size=16,
    embed_dim=8,
    rnn_hidden=8,
    proj_hidden=10,
    latent_dim=4,
    flow_depth=2,
    seed=0,
)


def make_two_label_corpus(n: int = 120, seed: int = 0):
    """Linearly separable corpus: token identity alone determines the tag.

    Each label owns its token set, entities are single tokens, filler is
    shared, so the token-to-tag map is a function a small model can nail.
    """
    import random

    rng = random.Random(seed)
    sentences = []
    for _ in range(n):
        label = rng.choice(["AAA", "BBB"])
        filler = [f"pad{rng.randint(0, 9)}" for _ in range(rng.randint(1, 3))]
        ent_tokens = [f"{label.lower()}{rng.randint(0, 7)}"]
        tags = encode_bioes([Entity(0, 0, label)], 1)
        tail = [f"pad{rng.randint(0, 9)}" for _ in range(rng.randint(1, 2))]
        sentences.append(
            Sentence(
                tuple(filler + ent_tokens + tail),
                tuple(["O"] * len(filler) + tags + ["O"] * len(tail)),
            )
        )
    return sentences


@pytest.fixture(scope="session")
def two_label_corpus():
    return make_two_label_corpus()


@pytest.fixture(scope="session")
def tiny_slpn_state(two_label_corpus):
    config = TrainingConfig(model_variant="slpn", **TINY_CONFIG)
    return train(config, two_label_corpus[:100], two_label_corpus[100:])


@pytest.fixture(scope="session")
def tiny_dropout_state(two_label_corpus):
    config = TrainingConfig(model_variant="dropout", dropout_rate=0.2, **TINY_CONFIG)
    return train(config, two_label_corpus[:100], two_label_corpus[100:])
