"""Training loop, prediction, the MC-dropout baseline, gradient auditing,
and checkpoint round-tripping."""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from . import evidence as ev
from .data import Sentence
from .model import VARIANTS, EvidentialTagger
from .priors import TokenPriorTable, Vocabulary

CHECKPOINT_FORMAT = "slpn-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when the loss stops being finite; names the offending batch."""


@dataclass
class TrainingConfig:
    model_variant: str = "slpn"
    softplus_on: bool = True
    lambda_reg: float = 1e-5
    learning_rate: float = 1e-3
    epochs: int = 15
    batch_size: int = 32
    seed: int = 0
    dropout_rate: float = 0.0
    mc_passes: int = 10
    embed_dim: int = 24
    rnn_hidden: int = 24
    proj_hidden: int = 32
    latent_dim: int = 8
    flow_depth: int = 6
    proj_width: int | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.model_variant not in VARIANTS:
            raise ValueError(f"model_variant must be one of {VARIANTS}")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.mc_passes < 1:
            raise ValueError("mc_passes must be positive")
        if min(self.embed_dim, self.rnn_hidden, self.proj_hidden, self.latent_dim) < 1:
            raise ValueError("model dimensions must be positive")
        if self.flow_depth < 0:
            raise ValueError("flow_depth must be nonnegative")


@dataclass
class ModelState:
    """A trained model bundle: network, data statistics, and provenance."""

    network: EvidentialTagger
    vocab: Vocabulary
    tags: list[str]
    priors: TokenPriorTable
    config: TrainingConfig
    loss_history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)
    val_accuracy: float = 0.0
    best_epoch: int = -1
    fingerprint: str | None = None

    def __post_init__(self):
        self.tag_to_id = {tag: i for i, tag in enumerate(self.tags)}
        self.prior_tensor = torch.as_tensor(self.priors.full_matrix(), dtype=torch.float64)


@dataclass
class Prediction:
    """Per-token outputs for one sentence."""

    tokens: list[str]
    tags: list[str]
    probabilities: np.ndarray
    evidence: np.ndarray | None = None
    alpha: np.ndarray | None = None
    reports: list[ev.UncertaintyReport] | None = None

    def measure_lists(self) -> dict[str, list[float]]:
        if self.reports is None:
            raise ValueError("no uncertainty reports on this prediction")
        return {
            name: [getattr(r, name) for r in self.reports] for name in ev.MEASURES
        }


@dataclass
class MCDropoutPrediction:
    """Per-token outputs of the stochastic-forward-pass baseline."""

    tokens: list[str]
    tags: list[str]
    probabilities: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray
    entropy: np.ndarray

    def measure_lists(self) -> dict[str, list[float]]:
        return {
            "aleatoric": self.aleatoric.tolist(),
            "epistemic": self.epistemic.tolist(),
            "entropy": self.entropy.tolist(),
        }


def dirichlet_entropy_rows(alpha: torch.Tensor) -> torch.Tensor:
    """Differential entropy of Dir(alpha) per row, differentiable."""
    a0 = alpha.sum(dim=-1)
    log_beta = torch.lgamma(alpha).sum(dim=-1) - torch.lgamma(a0)
    n_classes = alpha.shape[-1]
    return (
        log_beta
        + (a0 - n_classes) * torch.digamma(a0)
        - ((alpha - 1.0) * torch.digamma(alpha)).sum(dim=-1)
    )


def slpn_loss(evidence_rows: torch.Tensor, labels: torch.Tensor, lambda_reg: float) -> torch.Tensor:
    """Mean expected cross-entropy minus lambda times mean Dirichlet entropy.

    ``evidence_rows`` holds one nonnegative evidence row per token; the
    Dirichlet parameters are the rows plus the flat unit prior.
    """
    if evidence_rows.dim() != 2:
        raise ValueError("evidence_rows must be (tokens, classes)")
    n_classes = evidence_rows.shape[-1]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("label out of range")
    if float(evidence_rows.detach().min()) < 0:
        raise ValueError("evidence must be nonnegative")
    alpha = evidence_rows + 1.0
    a0 = alpha.sum(dim=-1)
    picked = alpha.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    uce = (torch.digamma(a0) - torch.digamma(picked)).mean()
    if lambda_reg == 0.0:
        return uce
    return uce - lambda_reg * dirichlet_entropy_rows(alpha).mean()


def _bucket_batches(
    lengths: Sequence[int], batch_size: int, rng: random.Random
) -> list[list[int]]:
    """Batches of same-length sentences; composition and order reshuffled per call."""
    by_length: dict[int, list[int]] = {}
    for idx, length in enumerate(lengths):
        by_length.setdefault(length, []).append(idx)
    batches: list[list[int]] = []
    for length in sorted(by_length):
        group = by_length[length]
        rng.shuffle(group)
        for lo in range(0, len(group), batch_size):
            batches.append(group[lo : lo + batch_size])
    rng.shuffle(batches)
    return batches


def _batch_tensors(state_like, sentences: Sequence[Sentence], indices: Sequence[int]):
    vocab, tag_to_id, prior_tensor = state_like
    ids = torch.tensor(
        [vocab.ids_of(sentences[i].tokens) for i in indices], dtype=torch.long
    )
    labels = torch.tensor(
        [[tag_to_id[t] for t in sentences[i].tags] for i in indices], dtype=torch.long
    )
    priors = prior_tensor[ids]
    return ids, labels, priors


def _batch_loss(network: EvidentialTagger, config, ids, labels, priors) -> torch.Tensor:
    if network.variant == "dropout":
        logits = network(ids)["logits"]
        return torch.nn.functional.cross_entropy(
            logits.reshape(-1, logits.shape[-1]), labels.reshape(-1)
        )
    out = network(ids, priors)
    rows = out["evidence"].reshape(-1, out["evidence"].shape[-1])
    return slpn_loss(rows, labels.reshape(-1), config.lambda_reg)


def train(
    config: TrainingConfig,
    train_sentences: Sequence[Sentence],
    val_sentences: Sequence[Sentence],
) -> ModelState:
    """Mini-batch Adam on the selected variant; returns the snapshot with the
    best validation token accuracy.  Deterministic under ``config.seed``."""
    if not train_sentences or not val_sentences:
        raise ValueError("training and validation data must be non-empty")
    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)

    vocab = Vocabulary.from_sentences(train_sentences)
    tags = sorted({tag for s in train_sentences for tag in s.tags})
    tag_to_id = {tag: i for i, tag in enumerate(tags)}
    priors = TokenPriorTable.from_corpus(train_sentences, vocab, tag_to_id)

    network = EvidentialTagger(
        vocab_size=len(vocab),
        n_classes=len(tags),
        total_count=priors.total_count,
        variant=config.model_variant,
        softplus_on=config.softplus_on,
        embed_dim=config.embed_dim,
        rnn_hidden=config.rnn_hidden,
        proj_hidden=config.proj_hidden,
        latent_dim=config.latent_dim,
        flow_depth=config.flow_depth,
        proj_width=config.proj_width,
        gamma=config.gamma,
        dropout_rate=config.dropout_rate,
    )
    state = ModelState(
        network=network, vocab=vocab, tags=tags, priors=priors, config=config
    )
    lookup = (vocab, tag_to_id, state.prior_tensor)
    optimizer = torch.optim.Adam(network.parameters(), lr=config.learning_rate)

    lengths = [len(s) for s in train_sentences]
    best_accuracy = -1.0
    best_snapshot = None
    for epoch in range(config.epochs):
        network.train()
        epoch_losses: list[float] = []
        for batch_no, batch in enumerate(_bucket_batches(lengths, config.batch_size, rng)):
            ids, labels, batch_priors = _batch_tensors(lookup, train_sentences, batch)
            loss = _batch_loss(network, config, ids, labels, batch_priors)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} batch {batch_no} "
                    f"(sentence indices {batch})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        state.loss_history.append(float(np.mean(epoch_losses)))
        accuracy = token_accuracy(state, val_sentences)
        state.val_history.append(accuracy)
        if accuracy > best_accuracy:
            best_accuracy = accuracy
            state.best_epoch = epoch
            best_snapshot = {k: v.detach().clone() for k, v in network.state_dict().items()}
    network.load_state_dict(best_snapshot)
    state.val_accuracy = best_accuracy
    return state


def predict(state: ModelState, tokens: Sequence[str]) -> Prediction:
    """Single-sentence prediction; see :func:`predict_batch` for many."""
    return predict_batch(state, [tokens])[0]


def predict_batch(
    state: ModelState,
    sentences: Sequence[Sequence[str]],
    with_reports: bool = True,
) -> list[Prediction]:
    """Deterministic per-token predictions with uncertainty reports.

    The dropout variant yields a single eval-mode pass (softmax probabilities,
    no evidence); use :func:`mc_dropout_predict` for its uncertainty scores.
    ``with_reports=False`` skips the per-token report computation (tags and
    probabilities only), which speeds up accuracy sweeps.
    """
    network = state.network
    network.eval()
    results: list[Prediction | None] = [None] * len(sentences)
    by_length: dict[int, list[int]] = {}
    for idx, sent in enumerate(sentences):
        if len(sent) == 0:
            raise ValueError("cannot predict an empty sentence")
        by_length.setdefault(len(sent), []).append(idx)
    with torch.no_grad():
        for length in sorted(by_length):
            group = by_length[length]
            ids = torch.tensor(
                [state.vocab.ids_of(sentences[i]) for i in group], dtype=torch.long
            )
            if network.variant == "dropout":
                probs = network(ids)["probabilities"].numpy()
                for row, idx in enumerate(group):
                    p = probs[row]
                    results[idx] = Prediction(
                        tokens=list(sentences[idx]),
                        tags=[state.tags[k] for k in p.argmax(axis=-1)],
                        probabilities=p,
                    )
                continue
            out = network(ids, state.prior_tensor[ids])
            evidence_rows = out["evidence"].numpy()
            alpha = out["alpha"].numpy()
            probs = out["probabilities"].numpy()
            for row, idx in enumerate(group):
                reports = (
                    [ev.uncertainty_report(alpha[row, t]) for t in range(length)]
                    if with_reports
                    else None
                )
                results[idx] = Prediction(
                    tokens=list(sentences[idx]),
                    tags=[state.tags[k] for k in probs[row].argmax(axis=-1)],
                    probabilities=probs[row],
                    evidence=evidence_rows[row],
                    alpha=alpha[row],
                    reports=reports,
                )
    return results  # type: ignore[return-value]


def token_accuracy(state: ModelState, sentences: Sequence[Sentence]) -> float:
    """Fraction of tokens whose predicted tag matches the gold tag."""
    predictions = predict_batch(state, [s.tokens for s in sentences], with_reports=False)
    correct = 0
    total = 0
    for sentence, pred in zip(sentences, predictions):
        for gold, got in zip(sentence.tags, pred.tags):
            correct += int(gold == got)
            total += 1
    return correct / total


def dropout_uncertainty_decomposition(
    prob_stack: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Mutual-information split of stacked per-pass probabilities (T, ..., c).

    Returns (mean probabilities, aleatoric, epistemic, total entropy) where
    aleatoric is the mean per-pass entropy, total is the entropy of the mean,
    and epistemic is their difference.
    """

    def _entropy(p: np.ndarray) -> np.ndarray:
        safe = np.where(p > 0.0, p, 1.0)
        return -(p * np.log(safe)).sum(axis=-1)

    mean = prob_stack.mean(axis=0)
    aleatoric = _entropy(prob_stack).mean(axis=0)
    total = _entropy(mean)
    return mean, aleatoric, total - aleatoric, total


def mc_dropout_predict(
    state: ModelState,
    tokens: Sequence[str],
    mc_passes: int | None = None,
    seed: int | None = None,
) -> MCDropoutPrediction:
    """Stochastic-forward-pass prediction for the dropout baseline."""
    if state.config.model_variant != "dropout":
        raise ValueError("MC-dropout prediction applies to the dropout variant")
    if state.config.dropout_rate <= 0.0:
        raise ValueError("dropout_rate must be positive for MC-dropout prediction")
    passes = state.config.mc_passes if mc_passes is None else int(mc_passes)
    if passes < 2:
        raise ValueError("mc_passes must be at least 2")
    network = state.network
    network.train()  # keep dropout active
    torch.manual_seed(state.config.seed if seed is None else seed)
    ids = torch.tensor([state.vocab.ids_of(tokens)], dtype=torch.long)
    stack = []
    with torch.no_grad():
        for _ in range(passes):
            stack.append(network(ids)["probabilities"][0].numpy())
    network.eval()
    mean, aleatoric, epistemic, total = dropout_uncertainty_decomposition(np.stack(stack))
    return MCDropoutPrediction(
        tokens=list(tokens),
        tags=[state.tags[k] for k in mean.argmax(axis=-1)],
        probabilities=mean,
        aleatoric=aleatoric,
        epistemic=epistemic,
        entropy=total,
    )


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Worst elementwise |a - b| / max(1, |a|, |b|)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    if a.size == 0:
        return 0.0
    return float((np.abs(a - b) / denom).max())


def gradient_check(
    state: ModelState, sentences: Sequence[Sentence], step: float = 1e-5
) -> float:
    """Compare autograd gradients of the batch loss against central finite
    differences over every parameter; returns the worst relative error."""
    network = state.network
    network.eval()
    lookup = (state.vocab, state.tag_to_id, state.prior_tensor)
    per_length: dict[int, list[int]] = {}
    for idx, sentence in enumerate(sentences):
        per_length.setdefault(len(sentence), []).append(idx)

    def batch_loss() -> torch.Tensor:
        total = None
        n_tokens = 0
        for length in sorted(per_length):
            group = per_length[length]
            ids, labels, priors = _batch_tensors(lookup, sentences, group)
            if network.variant == "dropout":
                logits = network(ids)["logits"]
                part = torch.nn.functional.cross_entropy(
                    logits.reshape(-1, logits.shape[-1]),
                    labels.reshape(-1),
                    reduction="sum",
                )
            else:
                out = network(ids, priors)
                rows = out["evidence"].reshape(-1, out["evidence"].shape[-1])
                flat = labels.reshape(-1)
                part = slpn_loss(rows, flat, state.config.lambda_reg) * flat.numel()
            total = part if total is None else total + part
            n_tokens += len(group) * length
        return total / n_tokens

    loss = batch_loss()
    network.zero_grad()
    loss.backward()
    analytic = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in network.named_parameters()
    }

    worst = 0.0
    with torch.no_grad():
        for name, param in network.named_parameters():
            flat = param.view(-1)
            grad_flat = analytic[name].view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                up = float(batch_loss())
                flat[i] = original - step
                down = float(batch_loss())
                flat[i] = original
                fd = (up - down) / (2.0 * step)
                worst = max(worst, max_relative_error(grad_flat[i].item(), fd))
    network.zero_grad()
    return worst


def save_checkpoint(state: ModelState, path) -> None:
    """Single self-describing archive; round-trips all arrays bitwise."""
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(state.config),
            "vocab_tokens": state.vocab.tokens,
            "tags": list(state.tags),
            "prior_counts": state.priors.counts,
            "state_dict": state.network.state_dict(),
            "loss_history": list(state.loss_history),
            "val_history": list(state.val_history),
            "val_accuracy": state.val_accuracy,
            "best_epoch": state.best_epoch,
            "seed": state.config.seed,
            "fingerprint": state.fingerprint,
        },
        path,
    )


def load_checkpoint(path) -> ModelState:
    payload = torch.load(path, weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a recognized checkpoint archive")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint version {payload.get('version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    config = TrainingConfig(**payload["config"])
    vocab = Vocabulary(payload["vocab_tokens"][1:])
    priors = TokenPriorTable(payload["prior_counts"])
    network = EvidentialTagger(
        vocab_size=len(vocab),
        n_classes=len(payload["tags"]),
        total_count=priors.total_count,
        variant=config.model_variant,
        softplus_on=config.softplus_on,
        embed_dim=config.embed_dim,
        rnn_hidden=config.rnn_hidden,
        proj_hidden=config.proj_hidden,
        latent_dim=config.latent_dim,
        flow_depth=config.flow_depth,
        proj_width=config.proj_width,
        gamma=config.gamma,
        dropout_rate=config.dropout_rate,
    )
    network.load_state_dict(payload["state_dict"])
    state = ModelState(
        network=network,
        vocab=vocab,
        tags=list(payload["tags"]),
        priors=priors,
        config=config,
        loss_history=list(payload["loss_history"]),
        val_history=list(payload["val_history"]),
        val_accuracy=payload["val_accuracy"],
        best_epoch=payload["best_epoch"],
        fingerprint=payload["fingerprint"],
    )
    return state
