"""Gated graph propagation over session graphs.

All functions accept either a single graph (``a_out``/``a_in`` of shape (n, n),
states (n, d)) or a padded batch with a leading batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ConfigurationError, InvalidArgumentError, LookupFailure
from .session_graph import SessionGraph


@dataclass
class GGSNNParams:
    H: Tensor     # (d, 2d): left half feeds outgoing, right half incoming messages
    b: Tensor     # (1, 2d)
    W_z: Tensor   # (d, 2d)
    U_z: Tensor   # (d, d)
    W_r: Tensor | None   # (d, 2d); None ties the reset gate to W_z
    U_r: Tensor
    W_o: Tensor
    U_o: Tensor

    @property
    def d(self) -> int:
        return self.U_z.shape[0]

    def check(self) -> None:
        d = self.d
        expected = {"H": (d, 2 * d), "b": (1, 2 * d), "W_z": (d, 2 * d), "U_z": (d, d),
                    "U_r": (d, d), "W_o": (d, 2 * d), "U_o": (d, d)}
        if self.W_r is not None:
            expected["W_r"] = (d, 2 * d)
        for name, shape in expected.items():
            got = as_tensor(getattr(self, name)).shape
            if got != shape:
                raise ConfigurationError(f"GGS-NN parameter {name} has shape {got}, expected {shape}")


def init_states(graph: SessionGraph, table) -> Tensor:
    """Node states from the item embedding table (a fresh copy for ndarray input)."""
    table = as_tensor(table)
    m = table.shape[0]
    for item in graph.nodes:
        if not 0 <= item < m:
            raise LookupFailure(f"item index {item} not in embedding table of {m} rows")
    if not table.requires_grad:
        return Tensor(table.value[list(graph.nodes)].copy())
    return ad.take_rows(table, np.asarray(graph.nodes))


def neighbourhood(a_out, a_in, states: Tensor, params: GGSNNParams) -> Tensor:
    """Per-node propagation input: [A_out (V H_out), A_in (V H_in)] + b, shape (..., n, 2d)."""
    d = params.d
    projected = as_tensor(states) @ as_tensor(params.H)
    out_msg = as_tensor(a_out) @ projected[..., :d]
    in_msg = as_tensor(a_in) @ projected[..., d:]
    return ad.concat([out_msg, in_msg], axis=-1) + params.b


def propagate_step(a_out, a_in, states, params: GGSNNParams) -> Tensor:
    states = as_tensor(states)
    params.check()
    n = states.shape[-2]
    if as_tensor(a_out).shape[-2:] != (n, n) or as_tensor(a_in).shape[-2:] != (n, n):
        raise ConfigurationError("connection matrices do not match the node count")
    if states.shape[-1] != params.d:
        raise ConfigurationError(f"state width {states.shape[-1]} != hidden size {params.d}")
    a = neighbourhood(a_out, a_in, states, params)
    w_r = params.W_z if params.W_r is None else params.W_r
    z = ad.sigmoid(a @ as_tensor(params.W_z).T + states @ as_tensor(params.U_z).T)
    r = ad.sigmoid(a @ as_tensor(w_r).T + states @ as_tensor(params.U_r).T)
    candidate = ad.tanh(a @ as_tensor(params.W_o).T + (r * states) @ as_tensor(params.U_o).T)
    return (1.0 - z) * states + z * candidate


def propagate(graph: SessionGraph, table, params: GGSNNParams, steps: int = 1) -> Tensor:
    if steps < 1:
        raise InvalidArgumentError("propagation needs at least one step")
    states = init_states(graph, table)
    for _ in range(steps):
        states = propagate_step(graph.a_out, graph.a_in, states, params)
    return states
