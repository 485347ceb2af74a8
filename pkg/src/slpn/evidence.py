"""Closed-form Dirichlet evidence mathematics.

Evidence vectors hold nonnegative pseudo-counts of per-class support.
Adding the flat all-ones prior turns evidence into Dirichlet concentration
parameters ``alpha``; every uncertainty measure and loss ingredient below is
a deterministic function of ``alpha``.  All functions are pure and operate
on plain numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

# Flat equiprobable prior: one pseudo-count per class.
PRIOR_COUNT = 1.0

# Keeps digamma away from its pole when a concentration underflows.
_ALPHA_FLOOR = 1.0 + 1e-12

# Canonical measure order used by reports and prediction dumps.
MEASURES = ("vacuity", "dissonance", "aleatoric", "epistemic", "entropy")


@dataclass(frozen=True)
class UncertaintyReport:
    """The five per-token uncertainty scores derived from one alpha vector."""

    vacuity: float
    dissonance: float
    aleatoric: float
    epistemic: float
    entropy: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in MEASURES}


def _as_alpha(alpha) -> np.ndarray:
    arr = np.asarray(alpha, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("alpha must be a 1-D vector with at least two classes")
    if not np.all(np.isfinite(arr)):
        raise ValueError("alpha entries must be finite")
    if np.any(arr < 1.0 - 1e-9):
        raise ValueError("alpha entries must be >= 1 (nonnegative evidence plus the unit prior)")
    return arr


def _as_probability(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("probability vector must be 1-D with at least two classes")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise ValueError("probabilities must be finite and nonnegative")
    if abs(float(arr.sum()) - 1.0) > 1e-9:
        raise ValueError("probabilities must sum to 1 within 1e-9")
    return arr


def expected_probability(alpha) -> np.ndarray:
    """Mean of Dir(alpha): alpha / alpha_0."""
    a = _as_alpha(alpha)
    return a / a.sum()


def vacuity(alpha) -> float:
    """Lack-of-evidence uncertainty c / alpha_0; equals 1 for a bare prior."""
    a = _as_alpha(alpha)
    # Written as c * (1 / alpha_0) so it equals c * epistemic bit for bit.
    return a.size * float(1.0 / a.sum())


def epistemic(alpha) -> float:
    """Knowledge uncertainty 1 / alpha_0 (ranks samples identically to vacuity)."""
    a = _as_alpha(alpha)
    return float(1.0 / a.sum())


def dissonance(alpha) -> float:
    """Conflicting-evidence uncertainty in [0, 1].

    Belief masses b_k = (alpha_k - 1) / alpha_0 are compared pairwise through
    the balance Bal(b_j, b_k) = 1 - |b_j - b_k| / (b_j + b_k).  Any term whose
    denominator vanishes contributes zero.
    """
    a = _as_alpha(alpha)
    b = (a - 1.0) / a.sum()
    total = 0.0
    for k in range(b.size):
        others = np.delete(b, k)
        denom = float(others.sum())
        if denom <= 0.0 or b[k] <= 0.0:
            continue
        pair = others + b[k]
        balance = np.zeros_like(others)
        nonzero = pair > 0.0
        balance[nonzero] = 1.0 - np.abs(others[nonzero] - b[k]) / pair[nonzero]
        total += float(b[k]) * float((others * balance).sum()) / denom
    return total


def aleatoric(p) -> float:
    """Data uncertainty 1 / max_k p_k of the expected class probabilities."""
    q = _as_probability(p)
    return float(1.0 / q.max())


def entropy_uncertainty(p) -> float:
    """Shannon entropy of the expected class distribution in nats; 0 log 0 := 0."""
    q = _as_probability(p)
    nz = q[q > 0.0]
    return float(-(nz * np.log(nz)).sum())


def expected_cross_entropy(alpha, label: int) -> float:
    """E_{p ~ Dir(alpha)}[-log p_label] = digamma(alpha_0) - digamma(alpha_label)."""
    a = np.maximum(_as_alpha(alpha), _ALPHA_FLOOR)
    if not 0 <= int(label) < a.size:
        raise ValueError(f"label {label} out of range for {a.size} classes")
    return float(digamma(a.sum()) - digamma(a[int(label)]))


def dirichlet_entropy(alpha) -> float:
    """Differential entropy of Dir(alpha).

    log B(alpha) + (alpha_0 - c) digamma(alpha_0) - sum_k (alpha_k - 1) digamma(alpha_k)
    """
    a = np.maximum(_as_alpha(alpha), _ALPHA_FLOOR)
    a0 = a.sum()
    log_beta = float(gammaln(a).sum() - gammaln(a0))
    return log_beta + float((a0 - a.size) * digamma(a0)) - float(((a - 1.0) * digamma(a)).sum())


def uncertainty_report(alpha) -> UncertaintyReport:
    """All five uncertainty measures of one concentration vector."""
    a = _as_alpha(alpha)
    p = expected_probability(a)
    return UncertaintyReport(
        vacuity=vacuity(a),
        dissonance=dissonance(a),
        aleatoric=aleatoric(p),
        epistemic=epistemic(a),
        entropy=entropy_uncertainty(p),
    )


def evidence_to_alpha(evidence: np.ndarray) -> np.ndarray:
    """Concentration parameters: evidence plus the flat unit prior."""
    arr = np.asarray(evidence, dtype=float)
    if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
        raise ValueError("evidence must be finite and nonnegative")
    return arr + PRIOR_COUNT


def evidence_to_probability(evidence: np.ndarray) -> np.ndarray:
    """Expected class probabilities (evidence + 1) / sum(evidence + 1).

    Accepts a single evidence row or a matrix of rows; normalization is per row.
    """
    alpha = evidence_to_alpha(evidence)
    return alpha / alpha.sum(axis=-1, keepdims=True)
