"""Hierarchical schema-graph encoder producing one prompt vector per slot.

Pipeline per example (all steps batched over a leading axis)::

    slot embeddings --mask--> input projection
      -> [propagation (GCN or GAT) -> ASAP pooling] x num_levels
      -> per level: concat(mean, max) over nodes, summed over levels
      -> fully connected readout r
    prompt_j = output_layer(first-level node_j features || r)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import MaskedNodeFeatures, SchemaGraph
from .numerics import F, ShapeError, Tensor


class EmptyGraphError(ValueError):
    pass


@dataclass
class GraphEncoderConfig:
    num_levels: int = 2
    hidden_dim: int = 256
    output_dim: int = 512
    input_dim: int = 512
    pooling_ratio: float = 0.5
    propagation: str = "gcn"
    gat_heads: int = 1
    drop_inactive_nodes: bool = False

    def __post_init__(self):
        self.propagation = self.propagation.lower()
        if self.propagation not in ("gcn", "gat"):
            raise ValueError(f"propagation must be 'gcn' or 'gat', got {self.propagation!r}")
        if not 0.0 < self.pooling_ratio <= 1.0:
            raise ValueError("pooling_ratio must lie in (0, 1]")
        if self.num_levels < 1:
            raise ValueError("num_levels must be >= 1")


def pooled_size(n: int, ratio: float) -> int:
    """ceil(ratio * n), guarded against float noise such as 0.7 * 10 = 7.000000000000001."""
    return max(1, math.ceil(ratio * n - 1e-9))


def _batched(x):
    return x if x.ndim >= 3 else x.reshape((1,) + x.shape)


def _eye_like(n: int, dtype) -> np.ndarray:
    return np.eye(n, dtype=dtype)


def normalized_adjacency(adj) -> Tensor:
    """Differentiable D^-1/2 (A + I) D^-1/2 for (possibly batched, weighted) adjacency."""
    adj = adj if isinstance(adj, Tensor) else Tensor(np.asarray(adj, dtype=F.get_default_dtype()))
    n = adj.shape[-1]
    a_hat = adj + _eye_like(n, adj.dtype)
    dinv = a_hat.sum(axis=-1) ** -0.5
    return a_hat * F.reshape(dinv, dinv.shape + (1,)) * F.reshape(dinv, dinv.shape[:-1] + (1, n))


def gcn_layer(features, norm_adj, weight, activation: bool = True) -> Tensor:
    """relu(A_norm @ H @ W); ``activation=False`` returns the pre-activation."""
    features, weight = F.as_tensor(features), F.as_tensor(weight)
    if features.shape[-1] != weight.shape[0]:
        raise ShapeError(f"gcn_layer: features {features.shape} vs weight {weight.shape}")
    if norm_adj.shape[-1] != features.shape[-2]:
        raise ShapeError(f"gcn_layer: adjacency {norm_adj.shape} vs features {features.shape}")
    out = F.matmul(norm_adj, F.matmul(features, weight))
    return F.relu(out) if activation else out


def gat_layer(features, adjacency, weight, att_src, att_dst, heads: int = 1,
              activation: bool = True, return_attention: bool = False):
    """Masked neighbourhood attention with self loops; heads are averaged.

    ``weight`` maps hidden -> heads * hidden; ``att_src``/``att_dst`` have
    shape (heads, hidden, 1).
    """
    features = F.as_tensor(features)
    squeeze = features.ndim == 2
    x = _batched(features)
    adj_data = adjacency.data if isinstance(adjacency, Tensor) else np.asarray(adjacency)
    if adj_data.ndim == 2:
        adj_data = adj_data[None]
    b, n, d = x.shape
    if weight.shape[0] != d or adj_data.shape[-1] != n:
        raise ShapeError(f"gat_layer: features {features.shape}, weight {weight.shape}, adjacency {adj_data.shape}")
    width = weight.shape[1] // heads
    z = F.transpose(F.reshape(F.matmul(x, weight), (b, n, heads, width)), (0, 2, 1, 3))  # (b, H, n, w)
    e_src = F.matmul(z, att_src)  # (b, H, n, 1)
    e_dst = F.matmul(z, att_dst)
    scores = F.leaky_relu(e_src + F.transpose(e_dst, (0, 1, 3, 2)), 0.2)
    mask = (adj_data + np.eye(n)) > 0
    alpha = F.softmax(scores, axis=-1, mask=mask[:, None, :, :])
    out = F.mean(F.matmul(alpha, z), axis=1)
    if activation:
        out = F.relu(out)
    if squeeze:
        out = out.reshape(out.shape[1:])
    return (out, alpha) if return_attention else out


@dataclass
class PooledLevel:
    node_features: Tensor
    adjacency: Tensor
    assignment: Tensor
    selected: np.ndarray
    fitness: Tensor
    membership: Tensor = field(repr=False, default=None)


def asap_pool(features, adjacency, params: dict, ratio: float) -> PooledLevel:
    """Adaptive structure-aware pooling over 1-hop closed neighbourhoods.

    ``params`` keys: ``master`` (h, h), ``member`` (h, h), ``score`` (h, 1),
    ``fit_self`` (h, 1), ``fit_deg`` (h, 1), ``fit_nbr`` (h, 1), ``fit_bias`` (1,).
    Clusters are ranked by fitness; ties go to the lower node index. Selected
    clusters are kept in ascending node order.
    """
    x = _batched(F.as_tensor(features))
    b, n, h = x.shape
    if n == 0:
        raise EmptyGraphError("asap_pool: graph has no nodes")
    adj = adjacency if isinstance(adjacency, Tensor) else Tensor(np.asarray(adjacency, dtype=x.dtype))
    if adj.ndim == 2:
        adj = adj.reshape((1,) + adj.shape)
    if adj.shape[-1] != n:
        raise ShapeError(f"asap_pool: adjacency {adj.shape} vs features {x.shape}")
    closed = (adj.data + np.eye(n)) > 0  # (b|1, n, n)
    closed = np.broadcast_to(closed, (b, n, n))

    # master query: elementwise max over each cluster's members
    neg = np.where(closed, 0.0, -1e9).astype(x.dtype)[..., None]  # (b, n, n, 1)
    members = F.reshape(x, (b, 1, n, h)) + neg
    master = F.tmax(members, axis=2)  # (b, n, h)

    # membership attention alpha[i, j] over j in cluster i
    q = F.reshape(F.matmul(master, params["master"]), (b, n, 1, -1))
    k = F.reshape(F.matmul(x, params["member"]), (b, 1, n, -1))
    scores = F.reshape(F.matmul(F.tanh(q + k), params["score"]), (b, n, n))
    alpha = F.softmax(scores, axis=-1, mask=closed)
    cluster = F.matmul(alpha, x)  # (b, n, h)

    # local-extremum fitness on cluster representations
    deg = F.tsum(adj, axis=-1, keepdims=True)
    fit = (F.matmul(cluster, params["fit_self"])
           + deg * F.matmul(cluster, params["fit_deg"])
           - F.matmul(adj, F.matmul(cluster, params["fit_nbr"]))
           + params["fit_bias"])
    phi = F.sigmoid(fit)  # (b, n, 1)

    k_sel = pooled_size(n, ratio)
    order = np.argsort(-phi.data[..., 0], axis=-1, kind="stable")[:, :k_sel]
    selected = np.sort(order, axis=-1)
    rows = np.arange(b)[:, None]
    x_new = phi[rows, selected] * cluster[rows, selected]  # (b, k, h)
    alpha_sel = alpha[rows, selected]  # (b, k, n)
    assignment = F.transpose(alpha_sel, (0, 2, 1))  # (b, n, k)
    a_hat = adj + np.eye(n, dtype=x.dtype)
    coarse = F.matmul(F.matmul(alpha_sel, a_hat), assignment)
    coarse = coarse * (1.0 - np.eye(k_sel, dtype=x.dtype))
    return PooledLevel(x_new, coarse, assignment, selected, phi, alpha)


def readout_summary(node_features) -> Tensor:
    """concat(mean over nodes, max over nodes) along the feature axis."""
    x = F.as_tensor(node_features)
    return F.concat([F.mean(x, axis=-2), F.tmax(x, axis=-2)], axis=-1)


def readout(levels, w1, b1, w2, b2) -> Tensor:
    """Sum per-level summaries, then two fully connected layers."""
    if not levels:
        raise ValueError("readout needs at least one level")
    total = None
    for level in levels:
        feats = level.node_features if isinstance(level, PooledLevel) else level
        s = readout_summary(feats)
        total = s if total is None else total + s
    if total.ndim == 1:
        out = F.linear(F.relu(F.linear(F.reshape(total, (1, -1)), w1, b1)), w2, b2)
        return F.reshape(out, (-1,))
    return F.linear(F.relu(F.linear(total, w1, b1)), w2, b2)


def init_graph_encoder(config: GraphEncoderConfig, rng: np.random.Generator, dtype=None) -> dict[str, Tensor]:
    dtype = dtype or F.get_default_dtype()
    h, d_in, d_out = config.hidden_dim, config.input_dim, config.output_dim

    def glorot(*shape):
        fan_in, fan_out = shape[-2], shape[-1]
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-lim, lim, size=shape).astype(dtype), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    p = {"in_proj": glorot(d_in, h)}
    for lv in range(config.num_levels):
        if config.propagation == "gcn":
            p[f"l{lv}.gcn"] = glorot(h, h)
        else:
            heads = config.gat_heads
            p[f"l{lv}.gat"] = glorot(h, heads * h)
            p[f"l{lv}.gat_src"] = glorot(heads, h, 1)
            p[f"l{lv}.gat_dst"] = glorot(heads, h, 1)
        for name in ("master", "member"):
            p[f"l{lv}.asap.{name}"] = glorot(h, h)
        p[f"l{lv}.asap.score"] = glorot(h, 1)
        for name in ("fit_self", "fit_deg", "fit_nbr"):
            p[f"l{lv}.asap.{name}"] = glorot(h, 1)
        p[f"l{lv}.asap.fit_bias"] = zeros(1)
    p["readout.w1"] = glorot(2 * h, h)
    p["readout.b1"] = zeros(h)
    p["readout.w2"] = glorot(h, d_out)
    p["readout.b2"] = zeros(d_out)
    p["out.w"] = glorot(h + d_out, d_out)
    p["out.b"] = zeros(d_out)
    for name, t in p.items():
        t.name = f"graph.{name}"
    return p


@dataclass
class GraphEncoding:
    prompts: Tensor
    levels: list[PooledLevel]
    global_vector: Tensor


class GraphEncoder:
    def __init__(self, config: GraphEncoderConfig, graph: SchemaGraph, params: dict[str, Tensor]):
        self.config = config
        self.graph = graph
        self.params = params

    def level_params(self, lv: int) -> dict[str, Tensor]:
        prefix = f"l{lv}.asap."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def _propagate(self, x, adj, lv: int, activation: bool):
        p = self.params
        if self.config.propagation == "gcn":
            return gcn_layer(x, normalized_adjacency(adj), p[f"l{lv}.gcn"], activation)
        return gat_layer(x, adj, p[f"l{lv}.gat"], p[f"l{lv}.gat_src"], p[f"l{lv}.gat_dst"],
                         self.config.gat_heads, activation)

    def encode(self, node_inputs, active=None) -> GraphEncoding:
        """Encode (B, m, input_dim) slot embeddings; ``active`` is a (B, m) bool mask or None."""
        cfg = self.config
        x = F.as_tensor(node_inputs)
        squeeze = x.ndim == 2
        x = _batched(x)
        b, m, d = x.shape
        if m != self.graph.num_nodes or d != cfg.input_dim:
            raise ShapeError(f"encode: expected (*, {self.graph.num_nodes}, {cfg.input_dim}), got {tuple(node_inputs.shape)}")
        adj = np.broadcast_to(self.graph.adjacency.astype(x.dtype), (b, m, m))
        if active is not None:
            active = np.broadcast_to(np.asarray(active, dtype=bool).reshape(-1, m), (b, m))
            x = x * active[..., None].astype(x.dtype)
            if cfg.drop_inactive_nodes:
                adj = adj * (active[:, :, None] & active[:, None, :])
        h = F.matmul(x, self.params["in_proj"])
        adj_t: Tensor = Tensor(np.ascontiguousarray(adj))
        levels = []
        node_feats = None
        for lv in range(cfg.num_levels):
            last = lv == cfg.num_levels - 1
            h = self._propagate(h, adj_t, lv, activation=not last)
            if lv == 0:
                node_feats = h
            level = asap_pool(h, adj_t, self.level_params(lv), cfg.pooling_ratio)
            levels.append(level)
            h, adj_t = level.node_features, level.adjacency
        p = self.params
        r = readout(levels, p["readout.w1"], p["readout.b1"], p["readout.w2"], p["readout.b2"])
        r_tiled = F.broadcast_to(F.reshape(r, (b, 1, cfg.output_dim)), (b, m, cfg.output_dim))
        prompts = F.linear(F.concat([node_feats, r_tiled], axis=-1), p["out.w"], p["out.b"])
        if squeeze:
            prompts = prompts.reshape(prompts.shape[1:])
        return GraphEncoding(prompts, levels, r)


def encode_graph_prompts(masked: MaskedNodeFeatures, graph: SchemaGraph, params: dict[str, Tensor],
                         config: GraphEncoderConfig) -> Tensor:
    """m x output_dim prompt matrix for one example's masked slot features."""
    feats = masked.features
    if feats.shape[0] != graph.num_nodes:
        raise ShapeError(f"encode_graph_prompts: {feats.shape[0]} rows for a {graph.num_nodes}-node graph")
    return GraphEncoder(config, graph, params).encode(feats, None).prompts
