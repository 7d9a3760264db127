"""Analytic vs finite-difference gradient comparison on a tiny fixed model."""
from __future__ import annotations

import numpy as np

from .model import ModelParameters, TrainConfig, loss_and_grad, loss_value, make_batch, preset
from .numeric import finite_diff_grad, make_rng, relative_error
from .session_graph import build_graph

MICRO_VOCAB = 6
MICRO_FIELDS = (3, 4)          # one-hot widths of the two micro portrait fields
# probe a point away from the near-linear regime of the 0.1-std training init
PROBE_STD = 0.5


def micro_batch(seed: int = 0):
    """Two length-4 session prefixes over a 6-item vocabulary with their labels."""
    rng = make_rng(seed)
    prefixes = [[0, 3, 2, 3], [1, 5, 1, 2]]
    labels = [4, 0]
    h = sum(MICRO_FIELDS)
    x = np.zeros((len(prefixes), h))
    for row in range(len(prefixes)):
        offset = 0
        for width in MICRO_FIELDS:
            x[row, offset + rng.integers(width)] = 1.0
            offset += width
    return make_batch([build_graph(p) for p in prefixes], x, labels)


def micro_params(config: TrainConfig, std: float = PROBE_STD) -> ModelParameters:
    params = ModelParameters.initialize(config, MICRO_VOCAB, sum(MICRO_FIELDS))
    for p in params:
        p.value *= std / 0.1
    return params


def grad_check(config: TrainConfig | None = None, epsilon: float = 1e-5,
               params: ModelParameters | None = None, batch=None) -> dict[str, float]:
    """Max entrywise relative error per named parameter."""
    config = config or preset("micro")
    batch = batch if batch is not None else micro_batch()
    params = params if params is not None else micro_params(config)
    params.zero_grad()
    loss_and_grad(params, config, batch)
    numeric = finite_diff_grad(lambda: loss_value(params, config, batch), params.values(), epsilon)
    report = {name: relative_error(params[name].grad, numeric[name]) for name in params.names()}
    params.zero_grad()
    return report
