"""DeepFM tower that turns a one-hot user portrait into the user embedding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ConfigurationError, InvalidArgumentError


@dataclass
class FMParams:
    w: Tensor        # (h, 1) linear weights
    latent: Tensor   # (h, f) one latent vector per input slot


@dataclass
class DNNParams:
    layers: list[tuple[Tensor, Tensor]]   # (W (out, in), b (1, out)) per layer

    @property
    def depth(self) -> int:
        return len(self.layers)


def fm_forward(x, fm: FMParams) -> Tensor:
    """Order-1 plus order-2 interactions; ``x`` is (h,) or (B, h), output (B, 1).

    Pairwise term via 0.5 * sum_f [(sum_j k_jf x_j)^2 - sum_j k_jf^2 x_j^2].
    """
    x = ad.as_rows(x)
    fm_w, latent = as_tensor(fm.w), as_tensor(fm.latent)
    h = x.shape[-1]
    if fm_w.shape != (h, 1) or latent.shape[0] != h:
        raise InvalidArgumentError(f"FM parameters expect input width {fm_w.shape[0]}, got {h}")
    linear = x @ fm_w
    summed = x @ latent
    squares = (x * x) @ (latent * latent)
    pairwise = ad.total(summed * summed - squares, axis=-1, keepdims=True) * 0.5
    return linear + pairwise


def dnn_forward(x, dnn: DNNParams) -> Tensor:
    """Stack of sigmoid layers; output (B, M)."""
    alpha = ad.as_rows(x)
    for i, (weight, bias) in enumerate(dnn.layers):
        weight, bias = as_tensor(weight), as_tensor(bias)
        if weight.shape[1] != alpha.shape[-1] or bias.shape != (1, weight.shape[0]):
            raise ConfigurationError(
                f"DNN layer {i}: weight {weight.shape} / bias {bias.shape} "
                f"do not chain from input width {alpha.shape[-1]}")
        alpha = ad.sigmoid(alpha @ weight.T + bias)
    return alpha


def user_embedding(x, fm: FMParams, dnn: DNNParams) -> Tensor:
    """sigmoid(FM scalar broadcast over the DNN output vector), shape (B, M)."""
    return ad.sigmoid(fm_forward(x, fm) + dnn_forward(x, dnn))


def fm_pairwise_oracle(x: np.ndarray, w: np.ndarray, latent: np.ndarray) -> float:
    """O(h^2) reference for a single input vector."""
    h = x.shape[0]
    out = float(w.reshape(-1) @ x)
    for j1 in range(h):
        for j2 in range(j1 + 1, h):
            out += float(latent[j1] @ latent[j2]) * x[j1] * x[j2]
    return out
