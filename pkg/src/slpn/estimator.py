"""Scikit-learn style front door for the tagger.

``SLPNTagger`` follows the estimator protocol: hyperparameters live verbatim
on the instance, ``fit(X, y)`` learns state stored with trailing underscores,
and ``get_params``/``set_params`` come from ``BaseEstimator`` so the class
composes with ``sklearn.clone`` and friends.  X is a collection of token
sequences, y the matching tag sequences.
"""

from __future__ import annotations

import random

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import Sentence
from .training import (
    TrainingConfig,
    mc_dropout_predict,
    predict_batch,
    token_accuracy,
    train,
)
from .validation import check_tag_sequences, check_token_sequences

# Public variant names; "slpn_no_softplus" is the ablation of the value gate.
ESTIMATOR_VARIANTS = ("token_pn", "slpn", "slpn_no_softplus", "dropout")


def variant_to_config(variant: str) -> tuple[str, bool]:
    """Map a public variant name to (model_variant, softplus_on)."""
    mapping = {
        "token_pn": ("token_pn", True),
        "slpn": ("slpn", True),
        "slpn_no_softplus": ("slpn", False),
        "dropout": ("dropout", True),
    }
    if variant not in mapping:
        raise ValueError(f"variant must be one of {ESTIMATOR_VARIANTS}, got {variant!r}")
    return mapping[variant]


class SLPNTagger(BaseEstimator):
    """Sequence tagger with per-token Dirichlet evidence and uncertainty scores."""

    def __init__(
        self,
        variant: str = "slpn",
        lambda_reg: float = 1e-5,
        learning_rate: float = 1e-3,
        epochs: int = 15,
        batch_size: int = 32,
        seed: int = 0,
        dropout_rate: float = 0.0,
        mc_passes: int = 10,
        embed_dim: int = 24,
        rnn_hidden: int = 24,
        proj_hidden: int = 32,
        latent_dim: int = 8,
        flow_depth: int = 6,
        proj_width: int | None = None,
        gamma: float | None = None,
        validation_fraction: float = 0.1,
    ):
        self.variant = variant
        self.lambda_reg = lambda_reg
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.dropout_rate = dropout_rate
        self.mc_passes = mc_passes
        self.embed_dim = embed_dim
        self.rnn_hidden = rnn_hidden
        self.proj_hidden = proj_hidden
        self.latent_dim = latent_dim
        self.flow_depth = flow_depth
        self.proj_width = proj_width
        self.gamma = gamma
        self.validation_fraction = validation_fraction

    def _config(self) -> TrainingConfig:
        model_variant, softplus_on = variant_to_config(self.variant)
        return TrainingConfig(
            model_variant=model_variant,
            softplus_on=softplus_on,
            lambda_reg=self.lambda_reg,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            dropout_rate=self.dropout_rate,
            mc_passes=self.mc_passes,
            embed_dim=self.embed_dim,
            rnn_hidden=self.rnn_hidden,
            proj_hidden=self.proj_hidden,
            latent_dim=self.latent_dim,
            flow_depth=self.flow_depth,
            proj_width=self.proj_width,
            gamma=self.gamma,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on token/tag sequences; carves out validation data if none given."""
        X = check_token_sequences(X)
        y = check_tag_sequences(y, X)
        sentences = [Sentence(tuple(t), tuple(g)) for t, g in zip(X, y)]
        if X_val is not None:
            X_val = check_token_sequences(X_val)
            y_val = check_tag_sequences(y_val, X_val)
            train_sentences = sentences
            val_sentences = [Sentence(tuple(t), tuple(g)) for t, g in zip(X_val, y_val)]
        else:
            if not 0.0 < self.validation_fraction < 1.0:
                raise ValueError("validation_fraction must be in (0, 1)")
            indices = list(range(len(sentences)))
            random.Random(self.seed).shuffle(indices)
            n_val = max(1, int(self.validation_fraction * len(sentences)))
            if n_val >= len(sentences):
                raise ValueError("not enough sentences to carve out validation data")
            val_idx = set(indices[:n_val])
            train_sentences = [s for i, s in enumerate(sentences) if i not in val_idx]
            val_sentences = [s for i, s in enumerate(sentences) if i in val_idx]
        self.model_state_ = train(self._config(), train_sentences, val_sentences)
        self.classes_ = list(self.model_state_.tags)
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_state_"):
            raise NotFittedError("this SLPNTagger instance is not fitted yet")

    def predict(self, X) -> list[list[str]]:
        """Most likely tag per token."""
        self._require_fitted()
        X = check_token_sequences(X)
        if self.variant == "dropout":
            return [mc_dropout_predict(self.model_state_, s).tags for s in X]
        return [p.tags for p in predict_batch(self.model_state_, X)]

    def predict_proba(self, X) -> list[np.ndarray]:
        """Per-token class probabilities, one (tokens, classes) array per sentence."""
        self._require_fitted()
        X = check_token_sequences(X)
        if self.variant == "dropout":
            return [mc_dropout_predict(self.model_state_, s).probabilities for s in X]
        return [p.probabilities for p in predict_batch(self.model_state_, X)]

    def predict_evidence(self, X) -> list[np.ndarray]:
        """Aggregated per-token evidence rows (evidential variants only)."""
        self._require_fitted()
        if self.variant == "dropout":
            raise ValueError("the dropout baseline does not produce evidence")
        X = check_token_sequences(X)
        return [p.evidence for p in predict_batch(self.model_state_, X)]

    def predict_uncertainty(self, X) -> list[dict[str, np.ndarray]]:
        """Per-token uncertainty scores, one {measure: array} dict per sentence.

        Evidential variants report all five measures; the dropout baseline
        reports its probabilistic three (aleatoric, epistemic, entropy).
        """
        self._require_fitted()
        X = check_token_sequences(X)
        out = []
        if self.variant == "dropout":
            for sentence in X:
                mc = mc_dropout_predict(self.model_state_, sentence)
                out.append({k: np.asarray(v) for k, v in mc.measure_lists().items()})
            return out
        for prediction in predict_batch(self.model_state_, X):
            out.append(
                {k: np.asarray(v) for k, v in prediction.measure_lists().items()}
            )
        return out

    def score(self, X, y) -> float:
        """Token-level accuracy against gold tags."""
        self._require_fitted()
        X = check_token_sequences(X)
        y = check_tag_sequences(y, X)
        sentences = [Sentence(tuple(t), tuple(g)) for t, g in zip(X, y)]
        if self.variant == "dropout":
            correct = total = 0
            for sentence in sentences:
                tags = mc_dropout_predict(self.model_state_, sentence.tokens).tags
                correct += sum(int(a == b) for a, b in zip(tags, sentence.tags))
                total += len(sentence)
            return correct / total
        return token_accuracy(self.model_state_, sentences)
