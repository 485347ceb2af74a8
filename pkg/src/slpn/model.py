"""The trainable tagger network.

Pipeline for the evidential variants: token ids -> embedding -> one
bidirectional GRU -> two-layer projection to a small latent space -> per-class
radial-flow densities -> per-token evidence rows scaled by the token priors
and the training-token count -> optional attention transmission -> aggregated
evidence.  The dropout baseline shares the encoder and ends in a plain
softmax head instead.
"""

from __future__ import annotations

import torch
from torch import nn

from .flows import ClassConditionalRadialFlows
from .transmission import TransmissionWeights, aggregate, project_qkv, transmit

VARIANTS = ("token_pn", "slpn", "dropout")


class TokenEncoder(nn.Module):
    """Embedding table, a single bidirectional GRU, and the latent projector."""

    def __init__(
        self,
        vocab_size: int,
        embed_dim: int,
        rnn_hidden: int,
        proj_hidden: int,
        latent_dim: int,
        dropout_rate: float = 0.0,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, embed_dim, dtype=dtype)
        self.rnn = nn.GRU(embed_dim, rnn_hidden, batch_first=True, bidirectional=True).to(dtype)
        self.dropout = nn.Dropout(dropout_rate)
        self.project_in = nn.Linear(2 * rnn_hidden, proj_hidden, dtype=dtype)
        self.project_out = nn.Linear(proj_hidden, latent_dim, dtype=dtype)
        self.context_dim = 2 * rnn_hidden
        self.latent_dim = latent_dim

    def contextual_embeddings(self, token_ids: torch.Tensor) -> torch.Tensor:
        """Context-mixed token vectors, shape (batch, tokens, context_dim)."""
        embedded = self.dropout(self.embedding(token_ids))
        output, _ = self.rnn(embedded)
        return self.dropout(output)

    def encode_latent(self, contextual: torch.Tensor) -> torch.Tensor:
        """Two affine maps with a smooth nonlinearity between, to the latent space."""
        if contextual.shape[-1] != self.project_in.in_features:
            raise ValueError(
                f"contextual width {contextual.shape[-1]} does not match "
                f"encoder width {self.project_in.in_features}"
            )
        return self.project_out(torch.tanh(self.project_in(contextual)))

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        return self.encode_latent(self.contextual_embeddings(token_ids))


def token_evidence(
    latents: torch.Tensor,
    priors: torch.Tensor,
    total_count: float,
    flows: ClassConditionalRadialFlows,
) -> torch.Tensor:
    """Per-token evidence rows: total_count * density(latent | class) * prior.

    ``latents`` is (..., latent_dim) and ``priors`` (..., n_classes); leading
    dimensions are arbitrary and preserved.
    """
    lead = latents.shape[:-1]
    if priors.shape[:-1] != lead:
        raise ValueError("latents and priors disagree on leading shape")
    flat = latents.reshape(-1, latents.shape[-1])
    log_density = flows.log_density(flat).reshape(*lead, flows.n_classes)
    return total_count * torch.exp(log_density) * priors


def sentence_evidence(
    latents: torch.Tensor,
    priors: torch.Tensor,
    total_count: float,
    flows: ClassConditionalRadialFlows,
) -> torch.Tensor:
    """Evidence matrix of one sentence, one row per token."""
    if latents.dim() != 2 or latents.shape[0] < 1:
        raise ValueError("need a (tokens, latent_dim) matrix with at least one token")
    return token_evidence(latents, priors, total_count, flows)


class EvidentialTagger(nn.Module):
    """Full network producing aggregated per-token evidence (or baseline logits)."""

    def __init__(
        self,
        vocab_size: int,
        n_classes: int,
        total_count: float,
        variant: str = "slpn",
        softplus_on: bool = True,
        embed_dim: int = 24,
        rnn_hidden: int = 24,
        proj_hidden: int = 32,
        latent_dim: int = 8,
        flow_depth: int = 6,
        proj_width: int | None = None,
        gamma: float | None = None,
        dropout_rate: float = 0.0,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.variant = variant
        self.softplus_on = bool(softplus_on)
        self.n_classes = n_classes
        self.encoder = TokenEncoder(
            vocab_size, embed_dim, rnn_hidden, proj_hidden, latent_dim, dropout_rate, dtype
        )
        self.flows = ClassConditionalRadialFlows(n_classes, latent_dim, flow_depth, dtype)
        self.transmission = TransmissionWeights(n_classes, proj_width, gamma, dtype)
        self.head = nn.Linear(self.encoder.context_dim, n_classes, dtype=dtype)
        self.register_buffer("total_count", torch.tensor(float(total_count), dtype=dtype))

    def evidence_from_latents(self, latents: torch.Tensor, priors: torch.Tensor) -> dict:
        """Evidence tensors from already-encoded latents (evidential variants)."""
        own = token_evidence(latents, priors, self.total_count, self.flows)
        if self.variant == "slpn":
            queries, keys, values = project_qkv(own, self.transmission, self.softplus_on)
            received = transmit(queries, keys, values, self.transmission.gamma)
            combined = aggregate(own, received)
        else:
            received = None
            combined = own
        # Evidence is nonnegative by definition; without the softplus the
        # transmitted rows can dip below zero, so floor before the prior.
        combined = combined.clamp(min=0.0)
        alpha = combined + 1.0
        return {
            "evidence_own": own,
            "evidence_received": received,
            "evidence": combined,
            "alpha": alpha,
            "probabilities": alpha / alpha.sum(dim=-1, keepdim=True),
        }

    def forward(self, token_ids: torch.Tensor, priors: torch.Tensor | None = None) -> dict:
        if self.variant == "dropout":
            logits = self.head(self.encoder.contextual_embeddings(token_ids))
            return {"logits": logits, "probabilities": torch.softmax(logits, dim=-1)}
        if priors is None:
            raise ValueError("evidential variants need per-token priors")
        latents = self.encoder(token_ids)
        return self.evidence_from_latents(latents, priors)

    def forward_from_embeddings(self, contextual: torch.Tensor, priors: torch.Tensor) -> dict:
        """Run from precomputed contextual embeddings (external encoder channel)."""
        if self.variant == "dropout":
            logits = self.head(contextual)
            return {"logits": logits, "probabilities": torch.softmax(logits, dim=-1)}
        latents = self.encoder.encode_latent(contextual)
        return self.evidence_from_latents(latents, priors)
