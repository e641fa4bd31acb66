"""Slot-relation graph over the whole schema and per-turn active-slot masking."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data.schema import Schema, service_domain
from .numerics import ShapeError, Tensor


@dataclass(frozen=True)
class SchemaGraph:
    adjacency: np.ndarray
    node_to_slot: tuple[tuple[str, str], ...]

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    def num_edges(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())

    def edges(self) -> list[tuple[int, int]]:
        u, v = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(u.tolist(), v.tolist()))


def build_graph(schema: Schema, link_same_domain: bool = False) -> SchemaGraph:
    """Connect every pair of distinct slots that share a service.

    With ``link_same_domain`` the grouping key is the domain name instead
    (``Hotels_1`` and ``Hotels_2`` slots become connected).
    """
    keys = tuple(schema.slot_keys)
    group = [service_domain(svc) if link_same_domain else svc for svc, _ in keys]
    g = np.asarray(group, dtype=object)
    adj = (g[:, None] == g[None, :]).astype(np.int8) if keys else np.zeros((0, 0), np.int8)
    np.fill_diagonal(adj, 0)
    adj.setflags(write=False)
    return SchemaGraph(adj, keys)


def normalize_adjacency(adjacency) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a = np.asarray(adjacency.adjacency if isinstance(adjacency, SchemaGraph) else adjacency, dtype=np.float64)
    a_hat = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return d[:, None] * a_hat * d[None, :]


def export_edge_list(graph: SchemaGraph, path) -> None:
    lines = [f"{u} {v}" for u, v in graph.edges()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass(frozen=True)
class MaskedNodeFeatures:
    features: np.ndarray | Tensor
    active: np.ndarray


def active_vector(active_slots, num_nodes: int) -> np.ndarray:
    mask = np.zeros(num_nodes, dtype=bool)
    mask[list(active_slots)] = True
    return mask


def apply_active_mask(features, active) -> MaskedNodeFeatures:
    """Zero the rows of inactive slots; the input is left untouched.

    Works on numpy arrays and on autodiff tensors (gradient flows only
    through active rows).
    """
    active = np.asarray(active, dtype=bool)
    n = features.shape[0]
    if active.shape != (n,):
        raise ShapeError(f"apply_active_mask: mask of shape {active.shape} for {n} nodes")
    if isinstance(features, Tensor):
        masked = features * active[:, None].astype(features.dtype)
    else:
        masked = np.where(active[:, None], features, np.zeros((), dtype=np.asarray(features).dtype))
    return MaskedNodeFeatures(masked, active.copy())
