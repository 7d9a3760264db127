"""Session embedding readout (four attention strategies), item scoring, and loss."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ConfigurationError, InvalidArgumentError

PROB_CLIP = 1e-10


class Variant(str, Enum):
    V1 = "v1"   # average pooling
    V2 = "v2"   # attention keyed on the last-item embedding
    V3 = "v3"   # attention keyed on the user embedding
    V4 = "v4"   # attention keyed on both

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(f"unknown variant {value!r}; expected v1..v4") from None


class LossMode(str, Enum):
    PAPER_BCE = "paper_bce"
    CATEGORICAL_CE = "categorical_ce"


def query_width(variant: Variant, d: int, m: int) -> int:
    return {Variant.V1: 0, Variant.V2: d, Variant.V3: m, Variant.V4: m + d}[Variant.parse(variant)]


@dataclass
class AttentionParams:
    W3: Tensor                   # (d, 2d + M)
    a: Tensor | None = None      # (d, 1)
    W1: Tensor | None = None     # (d, query width)
    W2: Tensor | None = None     # (d, d)
    C: Tensor | None = None      # (1, d)


def attention_weights(u, s_c, node_states, params: AttentionParams, variant,
                      mask: np.ndarray | None = None) -> Tensor:
    """Per-node weights, shape (..., n, 1). ``mask`` (..., n) zeroes padding rows."""
    variant = Variant.parse(variant)
    states = as_tensor(node_states)
    if mask is None:
        mask = np.ones(states.shape[:-1])
    mask = np.asarray(mask, dtype=np.float64)[..., None]
    if variant is Variant.V1:
        counts = mask.sum(axis=-2, keepdims=True)
        return Tensor(mask / counts)
    if params.a is None or params.W1 is None or params.W2 is None or params.C is None:
        raise ConfigurationError(f"variant {variant.value} needs attention parameters a, W1, W2, C")
    u, s_c = as_tensor(u), as_tensor(s_c)
    single = states.ndim == 2          # one graph: queries given as (w,) or (1, w)
    if single:
        u, s_c = ad.as_rows(u), ad.as_rows(s_c)
    if variant is Variant.V2:
        query = s_c
    elif variant is Variant.V3:
        query = u
    else:
        query = ad.concat([u, s_c], axis=-1)
    W1 = as_tensor(params.W1)
    if W1.shape[1] != query.shape[-1]:
        raise ConfigurationError(
            f"W1 has {W1.shape[1]} columns but variant {variant.value} query has width {query.shape[-1]}")
    keyed = query @ W1.T
    if not single:
        keyed = ad.expand_dims(keyed, -2)                 # (B, 1, d)
    hidden = ad.sigmoid(keyed + states @ as_tensor(params.W2).T + params.C)
    return (hidden @ as_tensor(params.a)) * mask


def global_embedding(weights, node_states) -> Tensor:
    """Weighted sum of node states; weights (..., n, 1) or (..., n)."""
    weights = as_tensor(weights)
    if weights.ndim == as_tensor(node_states).ndim - 1:
        weights = ad.expand_dims(weights, -1)
    return ad.total(weights * node_states, axis=-2)


def hybrid_embedding(s_c, s_g, u, params: AttentionParams) -> Tensor:
    joined = ad.concat([as_tensor(s_c), as_tensor(s_g), as_tensor(u)], axis=-1)
    W3 = as_tensor(params.W3)
    if W3.shape[1] != joined.shape[-1]:
        raise ConfigurationError(f"W3 has {W3.shape[1]} columns, expected {joined.shape[-1]}")
    return joined @ W3.T


def scores(s_h, table) -> Tensor:
    """Item scores s_h . v_i against every row of the table, shape (B, m)."""
    return ad.as_rows(s_h) @ as_tensor(table).T


def score_and_predict(s_h, table) -> tuple[Tensor, Tensor]:
    omega = scores(s_h, table)
    return omega, ad.softmax(omega, axis=-1)


def _one_hot(labels, n: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels))
    if labels.dtype.kind not in "iu" or np.any(labels < 0) or np.any(labels >= n):
        raise InvalidArgumentError(f"label out of range for {n} items: {labels.tolist()}")
    y = np.zeros((labels.shape[0], n))
    y[np.arange(labels.shape[0]), labels] = 1.0
    return y


def cross_entropy_loss(probs, labels) -> Tensor:
    """Summed binary cross-entropy over all items, averaged over the batch.

    -sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)] with p clipped to
    [1e-10, 1 - 1e-10].
    """
    probs = ad.as_rows(probs)
    y = _one_hot(labels, probs.shape[-1])
    p = ad.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP)
    per_item = y * ad.log(p) + (1.0 - y) * ad.log(1.0 - p)
    return ad.total(per_item) * (-1.0 / y.shape[0])


def categorical_loss(omega, labels) -> Tensor:
    """Plain softmax cross-entropy from raw scores, averaged over the batch."""
    omega = ad.as_rows(omega)
    y = _one_hot(labels, omega.shape[-1])
    return ad.total(y * ad.log_softmax(omega, axis=-1)) * (-1.0 / y.shape[0])
