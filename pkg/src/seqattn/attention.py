"""Attention scorers: dot, bilinear, and the sequential (recurrent) scorers.

All functions accept either a single example (``j`` of shape (2h,), ``H``
of shape (n, 2h)) or a padded batch (``j`` (B, 2h), ``H`` (B, n, 2h)).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import BiGruLayer, bigru_encode
from .tensor import ConfigError, ShapeError, Tensor


class ScoringVariant(str, enum.Enum):
    DOT = "dot"
    BILINEAR = "bilinear"
    PARTIAL_BILINEAR_SA = "partial-bilinear-sa"
    ELEMENTWISE_SA = "elementwise-sa"

    @property
    def sequential(self) -> bool:
        return self in (ScoringVariant.PARTIAL_BILINEAR_SA, ScoringVariant.ELEMENTWISE_SA)

    @property
    def has_matrix(self) -> bool:
        return self in (ScoringVariant.BILINEAR, ScoringVariant.PARTIAL_BILINEAR_SA)


# The attention RNN is a plain bidirectional GRU layer over the gamma vectors.
AttentionRnn = BiGruLayer


@dataclass
class AttentionTrace:
    alpha: np.ndarray
    context: np.ndarray
    scores: np.ndarray | None = None
    gamma: np.ndarray | None = None
    eta: np.ndarray | None = None
    mask: np.ndarray | None = field(default=None, repr=False)

    def row(self, b: int) -> "AttentionTrace":
        """Slice a single example out of a batched trace, dropping padding."""
        n = int(self.mask[b].sum()) if self.mask is not None else self.alpha.shape[-1]
        pick = lambda a: None if a is None else a[b, :n]  # noqa: E731
        return AttentionTrace(
            alpha=self.alpha[b, :n],
            context=self.context[b],
            scores=pick(self.scores),
            gamma=pick(self.gamma),
            eta=pick(self.eta),
            mask=None,
        )


def _check(j: Tensor, H: Tensor):
    if H.ndim != j.ndim + 1 or H.shape[-1] != j.shape[-1] or H.shape[:-2] != j.shape[:-1]:
        raise ShapeError(f"query {j.shape} does not conform to passage states {H.shape}")
    if H.shape[-2] == 0:
        raise ShapeError("empty passage")


def _position_dot(u: Tensor, H: Tensor) -> Tensor:
    """Per-position inner products u . h_i, shape (..., n)."""
    n = H.shape[-2]
    return T.sum_components(T.mul(H, T.expand(u, n, axis=-2)), axis=-1)


def bilinear_logits(j: Tensor, H: Tensor, W: Tensor) -> Tensor:
    j, H = T.as_tensor(j), T.as_tensor(H)
    _check(j, H)
    if W.shape != (j.shape[-1], H.shape[-1]):
        raise ShapeError(f"bilinear matrix {W.shape} does not match width {j.shape[-1]}")
    # j^T W h_i == (j^T W) . h_i
    return _position_dot(T.matmul(j, W), H)


def dot_logits(j: Tensor, H: Tensor) -> Tensor:
    j, H = T.as_tensor(j), T.as_tensor(H)
    _check(j, H)
    return _position_dot(j, H)


def score_bilinear(j: Tensor, H: Tensor, W: Tensor, mask=None) -> Tensor:
    return T.masked_softmax(bilinear_logits(j, H, W), mask)


def score_dot(j: Tensor, H: Tensor, mask=None) -> Tensor:
    return T.masked_softmax(dot_logits(j, H), mask)


def gamma_vectors(variant: ScoringVariant, j: Tensor, H: Tensor, W: Tensor | None = None) -> Tensor:
    """Per-position score vectors: j * (W h_i) or j * h_i."""
    variant = ScoringVariant(variant)
    j, H = T.as_tensor(j), T.as_tensor(H)
    _check(j, H)
    if variant == ScoringVariant.PARTIAL_BILINEAR_SA:
        if W is None:
            raise ConfigError("partial-bilinear scoring needs a matrix W")
        if W.shape != (H.shape[-1], H.shape[-1]):
            raise ShapeError(f"matrix {W.shape} does not match width {H.shape[-1]}")
        proj = T.matmul(H, T.transpose(W))
    elif variant == ScoringVariant.ELEMENTWISE_SA:
        if W is not None:
            raise ConfigError("element-wise scoring takes no matrix")
        proj = H
    else:
        raise ConfigError(f"{variant.value} is not a sequential variant")
    return T.mul(proj, T.expand(j, H.shape[-2], axis=-2))


def sa_attention(rnn: AttentionRnn, gamma: Tensor, mask=None):
    """Raw sequential-attention scores 1^T eta_i and the eta sequence."""
    gamma = T.as_tensor(gamma)
    if gamma.shape[-1] != rnn.input_size:
        raise ShapeError(f"gamma width {gamma.shape[-1]} != attention RNN input {rnn.input_size}")
    eta = bigru_encode(rnn, gamma, mask)
    return T.sum_components(eta, axis=-1), eta


def context_vector(alpha: Tensor, H: Tensor) -> Tensor:
    """o = sum_i alpha_i h_i."""
    alpha, H = T.as_tensor(alpha), T.as_tensor(H)
    if alpha.shape != H.shape[:-1]:
        raise ShapeError(f"alpha {alpha.shape} does not match passage states {H.shape}")
    weights = T.expand(alpha, H.shape[-1], axis=-1)
    return T.sum_components(T.mul(H, weights), axis=-2)


def attend(
    variant: ScoringVariant,
    j: Tensor,
    H: Tensor,
    mask=None,
    W: Tensor | None = None,
    rnn: AttentionRnn | None = None,
    rate: float = 0.0,
    mode: str = "eval",
    rng=None,
    trace: bool = False,
):
    """Full attention block: scores, weights, context.  Returns (o, trace|None)."""
    variant = ScoringVariant(variant)
    gamma = eta = None
    if variant == ScoringVariant.DOT:
        scores = dot_logits(j, H)
    elif variant == ScoringVariant.BILINEAR:
        scores = bilinear_logits(j, H, W)
    else:
        if rnn is None:
            raise ConfigError(f"{variant.value} needs an attention RNN")
        gamma = gamma_vectors(variant, j, H, W if variant.has_matrix else None)
        scores, eta = sa_attention(rnn, T.dropout(gamma, rate, mode, rng), mask)
    alpha = T.masked_softmax(scores, mask)
    o = context_vector(alpha, H)
    if not trace:
        return o, None
    m = None if mask is None else np.asarray(mask, dtype=bool)
    return o, AttentionTrace(
        alpha=alpha.data.copy(),
        context=o.data.copy(),
        scores=scores.data.copy(),
        gamma=None if gamma is None else gamma.data.copy(),
        eta=None if eta is None else eta.data.copy(),
        mask=m,
    )
