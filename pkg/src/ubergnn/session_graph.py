"""Directed session graphs and their row-normalised connection matrices."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class SessionGraph:
    nodes: tuple[int, ...]      # unique item indices, first-occurrence order
    a_out: np.ndarray           # (n, n)
    a_in: np.ndarray            # (n, n)
    alias: tuple[int, ...]      # sequence position -> node position
    last_node: int

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def connection(self) -> np.ndarray:
        """``[a_out | a_in]``, shape (n, 2n)."""
        return np.concatenate([self.a_out, self.a_in], axis=1)

    def edges(self):
        """Yield ``(src_item, dst_item, weight, direction)`` for non-zero entries."""
        for direction, mat in (("out", self.a_out), ("in", self.a_in)):
            for i, j in zip(*np.nonzero(mat)):
                yield self.nodes[i], self.nodes[j], float(mat[i, j]), direction


def build_graph(items: Sequence[int]) -> SessionGraph:
    if len(items) == 0:
        raise InvalidArgumentError("cannot build a graph from an empty sequence")
    position: dict[int, int] = {}
    for item in items:
        position.setdefault(int(item), len(position))
    alias = tuple(position[int(i)] for i in items)
    n = len(position)
    counts = np.zeros((n, n))
    for u, w in zip(alias, alias[1:]):
        counts[u, w] += 1.0
    out_deg = counts.sum(axis=1, keepdims=True)
    in_deg = counts.sum(axis=0, keepdims=True)
    a_out = np.divide(counts, out_deg, out=np.zeros_like(counts), where=out_deg > 0)
    a_in = np.divide(counts, in_deg, out=np.zeros_like(counts), where=in_deg > 0).T.copy()
    return SessionGraph(tuple(position), a_out, a_in, alias, alias[-1])


def gather_concat_rows(graph: SessionGraph, node_position: int) -> np.ndarray:
    if not 0 <= node_position < graph.n:
        raise InvalidArgumentError(f"node position {node_position} out of range for {graph.n} nodes")
    return np.concatenate([graph.a_out[node_position], graph.a_in[node_position]])
