"""Dense parameters, Gaussian initialisation, Adam with L2, LR schedule and a
central-difference gradient oracle.

Matrices are plain 2-D ``float64`` numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import InvalidArgumentError, OracleFailureError, TrainingDivergenceError

INIT_STD = 0.1
BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8
LR_INITIAL = 0.1
LR_FLOOR = 0.01
LR_DECAY_FACTOR = 10      # divide, so 0.1 / 10 is exactly 0.01
LR_DECAY_EVERY = 10


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise InvalidArgumentError(f"{self.name}: grad shape {self.grad.shape} "
                                       f"!= value shape {self.value.shape}")

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, param: Parameter) -> "AdamState":
        return cls(np.zeros_like(param.value), np.zeros_like(param.value), 0)


def make_rng(seed: int) -> np.random.Generator:
    """The single RNG family used everywhere (PCG64, portable across platforms)."""
    return np.random.Generator(np.random.PCG64(seed))


def gaussian_init(rows: int, cols: int, rng_seed: int, std: float = INIT_STD) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise InvalidArgumentError(f"matrix dimensions must be >= 1, got {rows}x{cols}")
    return make_rng(rng_seed).normal(0.0, std, size=(rows, cols))


def adam_step(param: Parameter, state: AdamState, lr: float, l2: float = 0.0,
              beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS):
    """One bias-corrected Adam update on ``param`` using ``grad + l2 * value``.

    Updates ``param`` and ``state`` in place, zeroes the gradient slot, and
    returns both for convenience.
    """
    if state.m.shape != param.shape or state.v.shape != param.shape:
        raise InvalidArgumentError(f"{param.name}: optimizer state shape mismatch")
    if not np.all(np.isfinite(param.grad)):
        raise TrainingDivergenceError(f"non-finite gradient in parameter {param.name!r}")
    g = param.grad + l2 * param.value
    state.step += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * g
    state.v *= beta2
    state.v += (1.0 - beta2) * (g * g)
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    if not np.all(np.isfinite(param.value)):
        raise TrainingDivergenceError(f"non-finite value in parameter {param.name!r}")
    param.zero_grad()
    return param, state


def lr_at_epoch(epoch: int) -> float:
    """0.1 for epochs 0-9, then decayed by 10x per 10 epochs but never below 0.01."""
    if epoch < 0:
        raise InvalidArgumentError("epoch must be >= 0")
    return max(LR_FLOOR, LR_INITIAL / LR_DECAY_FACTOR ** (epoch // LR_DECAY_EVERY))


def finite_diff_grad(loss_fn: Callable[[], float], params: Mapping[str, np.ndarray],
                     epsilon: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``loss_fn`` w.r.t. every entry of ``params``.

    ``params`` maps names to the live arrays ``loss_fn`` reads; each entry is
    perturbed in place and restored afterwards.
    """
    if epsilon <= 0:
        raise InvalidArgumentError("epsilon must be positive")
    grads = {}
    for name, arr in params.items():
        if not arr.flags.c_contiguous:
            raise InvalidArgumentError(f"{name}: parameter array must be C-contiguous")
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            plus = float(loss_fn())
            flat[i] = orig - epsilon
            minus = float(loss_fn())
            flat[i] = orig
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise OracleFailureError(f"non-finite loss perturbing {name}[{i}]")
            gflat[i] = (plus - minus) / (2.0 * epsilon)
        grads[name] = g
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max entrywise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
