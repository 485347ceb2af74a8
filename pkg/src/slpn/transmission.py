"""Evidence transmission between the tokens of one sentence.

A single revised self-attention head mixes per-token evidence rows: queries
and keys are linear projections of the evidence matrix, while values keep the
evidence shape and are passed through softplus so transmitted evidence stays
positive (evidence can only accumulate).  The softplus can be disabled for
ablation runs.
"""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F


class TransmissionWeights(nn.Module):
    """Projections W_Q, W_K (classes -> width) and W_V (classes -> classes).

    ``gamma`` rescales attention logits before the softmax; the default is
    the square root of the projection width, which itself defaults to the
    class count.  Entries start zero-mean with standard deviation 1/sqrt(c)
    to keep initial logits of order one.
    """

    def __init__(
        self,
        n_classes: int,
        proj_width: int | None = None,
        gamma: float | None = None,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        if n_classes < 1:
            raise ValueError("n_classes must be positive")
        width = n_classes if proj_width is None else int(proj_width)
        if width < 1:
            raise ValueError("proj_width must be positive")
        self.n_classes = n_classes
        self.proj_width = width
        self.gamma = math.sqrt(width) if gamma is None else float(gamma)
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        std = 1.0 / math.sqrt(n_classes)
        self.w_query = nn.Parameter(std * torch.randn(n_classes, width, dtype=dtype))
        self.w_key = nn.Parameter(std * torch.randn(n_classes, width, dtype=dtype))
        self.w_value = nn.Parameter(std * torch.randn(n_classes, n_classes, dtype=dtype))


def project_qkv(
    evidence: torch.Tensor,
    weights: TransmissionWeights,
    positive_values: bool = True,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Queries, keys, and values from a sentence evidence matrix.

    ``evidence`` is (..., tokens, classes).  Values keep the evidence shape;
    with ``positive_values`` they are softplus-activated and strictly positive.
    """
    if evidence.shape[-1] != weights.n_classes:
        raise ValueError(
            f"evidence has {evidence.shape[-1]} classes, weights expect {weights.n_classes}"
        )
    queries = evidence @ weights.w_query
    keys = evidence @ weights.w_key
    values = evidence @ weights.w_value
    if positive_values:
        values = F.softplus(values)
    return queries, keys, values


def attention_weights(queries: torch.Tensor, keys: torch.Tensor, gamma: float) -> torch.Tensor:
    """Row-stochastic attention matrix softmax(QK^T / gamma)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if queries.shape[-1] != keys.shape[-1]:
        raise ValueError("query and key widths differ")
    logits = queries @ keys.transpose(-2, -1) / gamma
    return torch.softmax(logits, dim=-1)


def transmit(
    queries: torch.Tensor,
    keys: torch.Tensor,
    values: torch.Tensor,
    gamma: float,
) -> torch.Tensor:
    """Transmitted evidence: attention-weighted mixture of value rows."""
    if values.shape[-2] != keys.shape[-2]:
        raise ValueError("values and keys disagree on token count")
    return attention_weights(queries, keys, gamma) @ values


def aggregate(own: torch.Tensor, received: torch.Tensor) -> torch.Tensor:
    """Elementwise sum of a token's own evidence and its transmitted evidence."""
    if own.shape != received.shape:
        raise ValueError(f"shape mismatch: {tuple(own.shape)} vs {tuple(received.shape)}")
    return own + received
