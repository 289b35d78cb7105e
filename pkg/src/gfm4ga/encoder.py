"""Feature-deviation relational graph encoder with exact analytic gradients.

Per layer, a node aggregates neighbor embeddings through one weight matrix
per relation, scaled by a per-edge deviation weight, plus a self term:

    h_u <- relu( sum_r sum_{v in N_r(u)} a_uv * W_r^T h_v + W_self^T h_u )

The deviation weight ``a_uv`` is a learnable two-layer network with a sigmoid
head applied to ``exp(-|x_u - x_v|)`` elementwise on the raw input features,
so it is symmetric in (u, v), computed once per edge, and shared across
layers. Undirected edges message both ways; directed edges message
source -> target. The subgraph embedding is the mean of final-layer rows.

All forward intermediates needed for the backward pass are kept in an
:class:`EncodeCache`; gradients are exact (finite-difference checkable).
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graph import Subgraph


@dataclass
class EncoderParams:
    """Per-layer relation/self weights plus the deviation network."""

    relation_ids: tuple[int, ...]
    layer_dims: tuple[int, ...]  # (d_in, hidden..., d_out)
    rel_weights: list  # list over layers of {relation id: (d_l-1, d_l)}
    self_weights: list  # list over layers of (d_l-1, d_l)
    dev_w1: np.ndarray  # (d_in, dev_hidden)
    dev_b1: np.ndarray  # (dev_hidden,)
    dev_w2: np.ndarray  # (dev_hidden,)
    dev_b2: np.ndarray  # (1,)

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    def tensors(self):
        out = []
        for layer in range(self.num_layers):
            for rid in self.relation_ids:
                out.append((f"layer{layer}.rel{rid}", self.rel_weights[layer][rid]))
            out.append((f"layer{layer}.self", self.self_weights[layer]))
        out.extend(
            [("dev.w1", self.dev_w1), ("dev.b1", self.dev_b1), ("dev.w2", self.dev_w2), ("dev.b2", self.dev_b2)]
        )
        return out

    def copy(self) -> "EncoderParams":
        return copy.deepcopy(self)


def _row_normalized_gaussian(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    w = rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols))
    norms = np.linalg.norm(w, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return w / norms


def init_encoder(
    relation_ids,
    layer_dims,
    dev_hidden: int = 16,
    seed: int = 0,
) -> EncoderParams:
    """Gaussian init (std 1/sqrt(fan-in)) with row normalization, seeded."""
    if len(layer_dims) < 2:
        raise ValueError("layer_dims needs at least input and output dimensions")
    rng = np.random.default_rng(seed)
    relation_ids = tuple(sorted(int(r) for r in relation_ids))
    rel_weights, self_weights = [], []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        rel_weights.append({rid: _row_normalized_gaussian(rng, d_in, d_out) for rid in relation_ids})
        self_weights.append(_row_normalized_gaussian(rng, d_in, d_out))
    d0 = layer_dims[0]
    w1 = _row_normalized_gaussian(rng, d0, dev_hidden)
    w2 = _row_normalized_gaussian(rng, dev_hidden, 1)[:, 0]
    return EncoderParams(
        relation_ids=relation_ids,
        layer_dims=tuple(int(d) for d in layer_dims),
        rel_weights=rel_weights,
        self_weights=self_weights,
        dev_w1=w1,
        dev_b1=np.zeros(dev_hidden),
        dev_w2=w2,
        dev_b2=np.zeros(1),
    )


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def deviation_weight(params: EncoderParams, x_u: np.ndarray, x_v: np.ndarray) -> float:
    """Aggregation weight in (0, 1) for one node pair; symmetric in (u, v)."""
    x_u = np.asarray(x_u, dtype=np.float64)
    x_v = np.asarray(x_v, dtype=np.float64)
    if x_u.shape != x_v.shape:
        raise ValueError(f"feature dimensions differ: {x_u.shape} vs {x_v.shape}")
    e = np.exp(-np.abs(x_u - x_v))
    hid = np.maximum(e @ params.dev_w1 + params.dev_b1, 0.0)
    return float(_sigmoid(hid @ params.dev_w2 + params.dev_b2[0]))


@dataclass
class Embeddings:
    """All layer activations (layers[0] is the input) plus the pooled vector."""

    layers: tuple  # H^(0) .. H^(L), each (n, d_l)
    pooled: np.ndarray  # (d_L,)

    @property
    def final(self) -> np.ndarray:
        return self.layers[-1]


@dataclass
class EncodeCache:
    """Forward intermediates required by :func:`encode_backward`."""

    layers: tuple
    masks: tuple  # per layer, boolean (n, d_l): pre-activation > 0
    adjacency: dict  # relation id -> (n, n) deviation-weighted matrix
    edge_src: np.ndarray
    edge_tgt: np.ndarray
    edges_by_rel: dict  # relation id -> edge index array
    e_vecs: np.ndarray  # (m, d0)
    dev_pre1: np.ndarray  # (m, dev_hidden)
    dev_hid: np.ndarray
    alpha: np.ndarray  # (m,)
    directed: bool


def _edge_deviation_forward(params: EncoderParams, subgraph: Subgraph):
    m = len(subgraph.edges)
    d0 = params.layer_dims[0]
    if m == 0:
        zeros = np.zeros((0, d0))
        return zeros, np.zeros((0, params.dev_b1.shape[0])), np.zeros((0, params.dev_b1.shape[0])), np.zeros(0)
    src = np.fromiter((e[0] for e in subgraph.edges), dtype=np.int64, count=m)
    tgt = np.fromiter((e[1] for e in subgraph.edges), dtype=np.int64, count=m)
    e_vecs = np.exp(-np.abs(subgraph.x[src] - subgraph.x[tgt]))
    pre1 = e_vecs @ params.dev_w1 + params.dev_b1
    hid = np.maximum(pre1, 0.0)
    alpha = _sigmoid(hid @ params.dev_w2 + params.dev_b2[0])
    return e_vecs, pre1, hid, alpha


def encode_with_cache(subgraph: Subgraph, params: EncoderParams) -> tuple[Embeddings, EncodeCache]:
    n = subgraph.num_nodes
    known = set(params.relation_ids)
    used = {r for _, _, r in subgraph.edges}
    if not used <= known:
        raise ValueError(f"subgraph {subgraph.id!r} uses unknown relation ids {sorted(used - known)}")
    if subgraph.x.shape[1] != params.layer_dims[0]:
        raise ValueError(
            f"subgraph {subgraph.id!r} feature dim {subgraph.x.shape[1]} != encoder input {params.layer_dims[0]}"
        )

    m = len(subgraph.edges)
    edge_src = np.fromiter((e[0] for e in subgraph.edges), dtype=np.int64, count=m)
    edge_tgt = np.fromiter((e[1] for e in subgraph.edges), dtype=np.int64, count=m)
    edge_rel = np.fromiter((e[2] for e in subgraph.edges), dtype=np.int64, count=m)
    e_vecs, pre1, hid, alpha = _edge_deviation_forward(params, subgraph)

    adjacency: dict[int, np.ndarray] = {}
    edges_by_rel: dict[int, np.ndarray] = {}
    for rid in sorted(used):
        idx = np.flatnonzero(edge_rel == rid)
        edges_by_rel[rid] = idx
        a = np.zeros((n, n))
        s, t = edge_src[idx], edge_tgt[idx]
        np.add.at(a, (t, s), alpha[idx])  # target aggregates source
        if not subgraph.directed:
            nonloop = idx[s != t]
            np.add.at(a, (edge_src[nonloop], edge_tgt[nonloop]), alpha[nonloop])
        adjacency[rid] = a

    layers = [subgraph.x.astype(np.float64, copy=False)]
    masks = []
    h = layers[0]
    for layer in range(params.num_layers):
        msg = h @ params.self_weights[layer]
        for rid, a in adjacency.items():
            msg = msg + a @ (h @ params.rel_weights[layer][rid])
        mask = msg > 0
        h = np.where(mask, msg, 0.0)
        layers.append(h)
        masks.append(mask)

    pooled = layers[-1].mean(axis=0) if n > 0 else np.zeros(params.layer_dims[-1])
    emb = Embeddings(layers=tuple(layers), pooled=pooled)
    cache = EncodeCache(
        layers=tuple(layers),
        masks=tuple(masks),
        adjacency=adjacency,
        edge_src=edge_src,
        edge_tgt=edge_tgt,
        edges_by_rel=edges_by_rel,
        e_vecs=e_vecs,
        dev_pre1=pre1,
        dev_hid=hid,
        alpha=alpha,
        directed=subgraph.directed,
    )
    return emb, cache


def encode(subgraph: Subgraph, params: EncoderParams) -> Embeddings:
    """Deterministic forward pass; see module docstring for the update rule."""
    return encode_with_cache(subgraph, params)[0]


def pool(embeddings: Embeddings) -> np.ndarray:
    """Mean of final-layer node embeddings; errors on an empty graph."""
    final = embeddings.final
    if final.shape[0] == 0:
        raise ValueError("cannot pool an empty graph")
    return final.mean(axis=0)


def encode_backward(
    subgraph: Subgraph,
    params: EncoderParams,
    cache: Optional[EncodeCache],
    grad_nodes: Optional[np.ndarray] = None,
    grad_pooled: Optional[np.ndarray] = None,
) -> dict:
    """Exact gradients for every encoder tensor given upstream gradients.

    ``grad_nodes`` is d(loss)/d(H^(L)) and ``grad_pooled`` is d(loss)/d(h_G);
    either may be omitted. Requires the cache of the matching forward pass.
    """
    if cache is None:
        raise ValueError("encode_backward requires the forward cache")
    n = subgraph.num_nodes
    d_out = params.layer_dims[-1]
    g = np.zeros((n, d_out))
    if grad_nodes is not None:
        g = g + np.asarray(grad_nodes, dtype=np.float64)
    if grad_pooled is not None:
        if n == 0:
            raise ValueError("pooled gradient on an empty graph")
        g = g + np.asarray(grad_pooled, dtype=np.float64) / n

    grads = {name: np.zeros_like(a) for name, a in params.tensors()}
    d_alpha = np.zeros(cache.alpha.shape[0])

    for layer in range(params.num_layers - 1, -1, -1):
        h_prev = cache.layers[layer]
        g_msg = g * cache.masks[layer]
        grads[f"layer{layer}.self"] += h_prev.T @ g_msg
        g_prev = g_msg @ params.self_weights[layer].T
        for rid, a in cache.adjacency.items():
            w = params.rel_weights[layer][rid]
            propagated = a @ h_prev  # (n, d_prev)
            grads[f"layer{layer}.rel{rid}"] += propagated.T @ g_msg
            g_prev += a.T @ (g_msg @ w.T)
            d_adj = g_msg @ (h_prev @ w).T  # (n, n)
            idx = cache.edges_by_rel[rid]
            s, t = cache.edge_src[idx], cache.edge_tgt[idx]
            d_alpha[idx] += d_adj[t, s]
            if not cache.directed:
                nonloop = s != t
                d_alpha[idx[nonloop]] += d_adj[s[nonloop], t[nonloop]]
        g = g_prev

    if cache.alpha.shape[0] > 0:
        dz2 = d_alpha * cache.alpha * (1.0 - cache.alpha)
        grads["dev.w2"] += cache.dev_hid.T @ dz2
        grads["dev.b2"] += np.array([dz2.sum()])
        d_hid = np.outer(dz2, params.dev_w2)
        d_hid[cache.dev_pre1 <= 0] = 0.0
        grads["dev.w1"] += cache.e_vecs.T @ d_hid
        grads["dev.b1"] += d_hid.sum(axis=0)
    return grads


def pooled_embedding(subgraph: Subgraph, params: EncoderParams) -> np.ndarray:
    """Convenience: encode then pool, warning on all-zero output."""
    emb = encode(subgraph, params)
    pooled = pool(emb)
    if not np.any(pooled):
        warnings.warn(f"subgraph {subgraph.id!r} pooled to the zero vector", RuntimeWarning)
    return pooled
