"""End-to-end model: named parameters, padded graph batches and the forward pass."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError
from .ggsnn import GGSNNParams, propagate_step
from .numeric import AdamState, Parameter, gaussian_init, make_rng
from .readout import (AttentionParams, LossMode, Variant, attention_weights, categorical_loss,
                      cross_entropy_loss, global_embedding, hybrid_embedding, query_width)
from .session_graph import SessionGraph
from .user_encoder import DNNParams, FMParams, user_embedding


@dataclass
class TrainConfig:
    d: int = 32
    M: int = 32
    f: int = 10
    hidden: tuple[int, ...] = (64, 64)
    variant: str = "v4"
    batch_size: int = 32
    epochs: int = 30
    steps: int = 1
    l2: float = 1e-5
    lr_scale: float = 1.0      # multiplies the 0.1 -> 0.01 step schedule
    seed: int = 1
    loss: str = "paper_bce"
    tie_reset_update_input: bool = False
    patience: int = 0          # 0 disables early stopping; best checkpoint is always kept

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.variant = Variant.parse(self.variant).value
        try:
            self.loss = LossMode(self.loss).value
        except ValueError:
            raise ConfigurationError(f"unknown loss mode {self.loss!r}") from None
        for name in ("d", "M", "f", "batch_size", "epochs", "steps"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ConfigurationError("DNN hidden widths must be >= 1")
        if self.l2 < 0 or self.patience < 0:
            raise ConfigurationError("l2 and patience must be non-negative")
        if not self.lr_scale > 0:
            raise ConfigurationError("lr_scale must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


PRESETS = {
    "desk": dict(d=32, M=32, f=10, hidden=(64, 64), batch_size=32, lr_scale=0.1),
    "paper": dict(d=200, M=32, f=10, hidden=(64, 64), batch_size=32, l2=1e-5),
    "micro": dict(d=4, M=3, f=2, hidden=(5, 5), steps=2, variant="v4", batch_size=2),
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return TrainConfig(**{**PRESETS[name], **overrides})


def parameter_shapes(config: TrainConfig, n_items: int, input_width: int) -> "OrderedDict[str, tuple]":
    """Every trainable matrix with its shape, in a fixed order."""
    d, M, f = config.d, config.M, config.f
    shapes: OrderedDict[str, tuple] = OrderedDict()
    shapes["item_table"] = (n_items, d)
    shapes["fm.w"] = (input_width, 1)
    shapes["fm.latent"] = (input_width, f)
    widths = (input_width, *config.hidden, M)
    for i, (w_in, w_out) in enumerate(zip(widths, widths[1:])):
        shapes[f"dnn.{i}.W"] = (w_out, w_in)
        shapes[f"dnn.{i}.b"] = (1, w_out)
    shapes["ggsnn.H"] = (d, 2 * d)
    shapes["ggsnn.b"] = (1, 2 * d)
    shapes["ggsnn.W_z"] = (d, 2 * d)
    shapes["ggsnn.U_z"] = (d, d)
    if not config.tie_reset_update_input:
        shapes["ggsnn.W_r"] = (d, 2 * d)
    shapes["ggsnn.U_r"] = (d, d)
    shapes["ggsnn.W_o"] = (d, 2 * d)
    shapes["ggsnn.U_o"] = (d, d)
    variant = Variant.parse(config.variant)
    if variant is not Variant.V1:
        shapes["attn.a"] = (d, 1)
        shapes["attn.W1"] = (d, query_width(variant, d, M))
        shapes["attn.W2"] = (d, d)
        shapes["attn.C"] = (1, d)
    shapes["attn.W3"] = (d, 2 * d + M)
    return shapes


class ModelParameters:
    """Ordered collection of named :class:`Parameter` objects with Adam state."""

    def __init__(self, params: Sequence[Parameter]):
        self._params: OrderedDict[str, Parameter] = OrderedDict()
        for p in params:
            if p.name in self._params:
                raise ConfigurationError(f"duplicate parameter name {p.name!r}")
            self._params[p.name] = p
        self.adam = {name: AdamState.zeros_like(p) for name, p in self._params.items()}

    @classmethod
    def initialize(cls, config: TrainConfig, n_items: int, input_width: int) -> "ModelParameters":
        shapes = parameter_shapes(config, n_items, input_width)
        seeds = make_rng(config.seed).integers(0, 2**62, size=len(shapes))
        return cls([Parameter(name, gaussian_init(rows, cols, int(seeds[i])))
                    for i, (name, (rows, cols)) in enumerate(shapes.items())])

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def values(self) -> dict[str, np.ndarray]:
        return {n: p.value for n, p in self._params.items()}

    def count(self) -> int:
        return int(sum(p.value.size for p in self))

    def zero_grad(self) -> None:
        for p in self:
            p.zero_grad()


@dataclass
class GraphBatch:
    """Padded batch of session graphs plus user features."""

    a_out: np.ndarray      # (B, n, n)
    a_in: np.ndarray       # (B, n, n)
    nodes: np.ndarray      # (B, n) item indices, 0 in padding rows
    mask: np.ndarray       # (B, n) 1 for real nodes
    last: np.ndarray       # (B,) node position of the final item
    features: np.ndarray   # (B, h)
    labels: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.nodes.shape[0]


def make_batch(graphs: Sequence[SessionGraph], features: np.ndarray,
               labels: Sequence[int] | None = None) -> GraphBatch:
    B = len(graphs)
    n = max(g.n for g in graphs)
    a_out = np.zeros((B, n, n))
    a_in = np.zeros((B, n, n))
    nodes = np.zeros((B, n), dtype=np.intp)
    mask = np.zeros((B, n))
    for i, g in enumerate(graphs):
        a_out[i, :g.n, :g.n] = g.a_out
        a_in[i, :g.n, :g.n] = g.a_in
        nodes[i, :g.n] = g.nodes
        mask[i, :g.n] = 1.0
    last = np.array([g.last_node for g in graphs], dtype=np.intp)
    lab = None if labels is None else np.asarray(labels, dtype=np.intp)
    return GraphBatch(a_out, a_in, nodes, mask, last, np.asarray(features, dtype=np.float64), lab)


@dataclass
class ForwardResult:
    scores: Tensor
    probs: Tensor
    user: Tensor
    s_c: Tensor
    s_g: Tensor
    s_h: Tensor
    leaves: dict[str, Tensor] = field(default_factory=dict)


def _components(leaves: Mapping[str, Tensor], config: TrainConfig):
    fm = FMParams(leaves["fm.w"], leaves["fm.latent"])
    n_layers = len(config.hidden) + 1
    dnn = DNNParams([(leaves[f"dnn.{i}.W"], leaves[f"dnn.{i}.b"]) for i in range(n_layers)])
    gg = GGSNNParams(leaves["ggsnn.H"], leaves["ggsnn.b"], leaves["ggsnn.W_z"], leaves["ggsnn.U_z"],
                     leaves.get("ggsnn.W_r"), leaves["ggsnn.U_r"], leaves["ggsnn.W_o"],
                     leaves["ggsnn.U_o"])
    att = AttentionParams(leaves["attn.W3"], leaves.get("attn.a"), leaves.get("attn.W1"),
                          leaves.get("attn.W2"), leaves.get("attn.C"))
    return fm, dnn, gg, att


def forward(params: ModelParameters, config: TrainConfig, batch: GraphBatch,
            track_grad: bool = True) -> ForwardResult:
    leaves = {p.name: Tensor(p.value, requires_grad=track_grad) for p in params}
    fm, dnn, gg, att = _components(leaves, config)
    table = leaves["item_table"]

    u = user_embedding(batch.features, fm, dnn)                       # (B, M)
    states = ad.take_rows(table, batch.nodes)                         # (B, n, d)
    for _ in range(config.steps):
        states = propagate_step(batch.a_out, batch.a_in, states, gg)
    s_c = states[np.arange(batch.size), batch.last]                   # (B, d)
    weights = attention_weights(u, s_c, states, att, config.variant, mask=batch.mask)
    s_g = global_embedding(weights, states)
    s_h = hybrid_embedding(s_c, s_g, u, att)
    omega = s_h @ table.T
    probs = ad.softmax(omega, axis=-1)
    return ForwardResult(omega, probs, u, s_c, s_g, s_h, leaves)


def batch_loss(result: ForwardResult, labels, config: TrainConfig) -> Tensor:
    if config.loss == LossMode.CATEGORICAL_CE.value:
        return categorical_loss(result.scores, labels)
    return cross_entropy_loss(result.probs, labels)


def loss_and_grad(params: ModelParameters, config: TrainConfig, batch: GraphBatch) -> float:
    """Forward + backward; gradients are added into each parameter's grad slot."""
    result = forward(params, config, batch)
    loss = batch_loss(result, batch.labels, config)
    loss.backward()
    for name, leaf in result.leaves.items():
        if leaf.grad is not None:
            params[name].grad += leaf.grad
    return float(loss.value)


def loss_value(params: ModelParameters, config: TrainConfig, batch: GraphBatch) -> float:
    result = forward(params, config, batch, track_grad=False)
    return float(batch_loss(result, batch.labels, config).value)
