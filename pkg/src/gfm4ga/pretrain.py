"""Dual-level contrastive pretraining of the encoder on unlabeled subgraphs.

Subgraph level: a subgraph from which a high-anomaly group was extracted is
contrasted (InfoNCE over cosine similarity) against its own extracted group
(positive) and against subgraphs where extraction failed (negatives).
Node level: within one subgraph, connected nodes with close high anomaly
scores attract while non-adjacent nodes with distant scores repel.

The estimator is not trained by the contrastive objective (group selection
is discrete); it keeps calibrating against reconstruction-error targets
between encoder updates, and extraction is refreshed on a fixed period.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import opt
from .encoder import EncoderParams, encode_backward, encode_with_cache
from .estimator import (
    DEFAULT_MIN_GROUP_SIZE,
    DEFAULT_SCORE_THRESHOLD,
    EstimatorParams,
    calibrate_estimator,
    extract_group,
    score_nodes,
)
from .graph import Dataset, Subgraph, induced_subgraph, neighbor_sets


@dataclass
class PretrainConfig:
    """Hyperparameters of the contrastive pretraining stage."""

    temperature: float = 0.8
    subgraph_weight: float = 0.7  # mixing weight of the subgraph-level task
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.1
    pair_close: float = 0.1  # max score gap of a positive node pair
    pair_far: float = 0.4  # min score gap of a negative node pair
    pair_cap: int = 10  # per-anchor cap on each pair list
    negatives_per_anchor: int = 8
    refresh_period: int = 5  # re-run scoring + extraction every this many epochs
    score_threshold: float = DEFAULT_SCORE_THRESHOLD
    min_group_size: int = DEFAULT_MIN_GROUP_SIZE
    clip_norm: float = 5.0
    calibration_lr: float = 0.5
    calibration_passes_per_epoch: int = 1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.subgraph_weight <= 1.0:
            raise ValueError("subgraph_weight must lie in [0, 1]")
        if self.pair_close >= self.pair_far:
            raise ValueError("pair_close must be below pair_far")


def cosine_with_grads(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Cosine similarity and its partials; zero-norm inputs give 0 with a warning."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        warnings.warn("cosine similarity of a zero-norm embedding defined as 0", RuntimeWarning)
        return 0.0, np.zeros_like(a), np.zeros_like(b)
    c = float(a @ b) / (na * nb)
    da = b / (na * nb) - c * a / (na * na)
    db = a / (na * nb) - c * b / (nb * nb)
    return c, da, db


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return cosine_with_grads(a, b)[0]


def subgraph_contrastive_loss_with_grads(
    anchor: np.ndarray,
    positive: np.ndarray,
    negatives: Sequence[np.ndarray],
    temperature: float,
) -> tuple[float, np.ndarray, np.ndarray, list[np.ndarray]]:
    """InfoNCE over cosine similarities for one anchor.

    Returns (loss, d_anchor, d_positive, d_negatives). With no negatives the
    ratio is exactly 1, so the loss and all gradients are zero.
    """
    c_pos, da_pos, dp = cosine_with_grads(anchor, positive)
    if not negatives:
        return 0.0, np.zeros_like(anchor), np.zeros_like(positive), []
    c_negs, da_negs, dn_list = [], [], []
    for neg in negatives:
        c, da, dn = cosine_with_grads(anchor, neg)
        c_negs.append(c)
        da_negs.append(da)
        dn_list.append(dn)
    logits = np.array([c_pos] + c_negs) / temperature
    shift = logits - logits.max()
    softmax = np.exp(shift)
    softmax /= softmax.sum()
    loss = float(-logits[0] + logits.max() + np.log(np.exp(shift).sum()))
    d_logits = softmax.copy()
    d_logits[0] -= 1.0
    d_logits /= temperature
    d_anchor = d_logits[0] * da_pos
    d_positive = d_logits[0] * dp
    d_negatives = []
    for j, (da, dn) in enumerate(zip(da_negs, dn_list), start=1):
        d_anchor = d_anchor + d_logits[j] * da
        d_negatives.append(d_logits[j] * dn)
    return loss, d_anchor, d_positive, d_negatives


def subgraph_contrastive_loss(anchor, positive, negatives, temperature: float) -> float:
    """Anchor-vs-extracted-group InfoNCE value (non-negative)."""
    return subgraph_contrastive_loss_with_grads(anchor, positive, list(negatives), temperature)[0]


def build_node_pairs(
    subgraph: Subgraph,
    scores: np.ndarray,
    close_threshold: float,
    far_threshold: float,
    score_threshold: float,
    cap: int = 10,
) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Per-anchor positive/negative node pairs from scores and adjacency.

    Positives: edges (u, l) where both scores reach ``score_threshold`` and
    differ by at most ``close_threshold``. Negatives: non-adjacent (u, k) with
    score gap at least ``far_threshold``. Each anchor keeps at most ``cap``
    pairs per list (closest gaps for positives, widest for negatives; ties go
    to the smaller node index).
    """
    s = np.asarray(scores, dtype=np.float64)
    n = subgraph.num_nodes
    if s.shape[0] != n:
        raise ValueError(f"scores length {s.shape[0]} != node count {n}")
    nbrs = neighbor_sets(subgraph)
    positives: list[tuple[int, int]] = []
    negatives: list[tuple[int, int]] = []
    for u in range(n):
        pos_cands = [
            l
            for l in nbrs[u]
            if min(s[u], s[l]) >= score_threshold and abs(s[u] - s[l]) <= close_threshold
        ]
        pos_cands.sort(key=lambda l: (abs(s[u] - s[l]), l))
        positives.extend((u, l) for l in pos_cands[:cap])
        neg_cands = [
            k for k in range(n) if k != u and k not in nbrs[u] and abs(s[u] - s[k]) >= far_threshold
        ]
        neg_cands.sort(key=lambda k: (-abs(s[u] - s[k]), k))
        negatives.extend((u, k) for k in neg_cands[:cap])
    return positives, negatives


def node_contrastive_loss_with_grads(
    embeddings: np.ndarray,
    positive_pairs: Sequence[tuple[int, int]],
    negative_pairs: Sequence[tuple[int, int]],
    temperature: float,
) -> tuple[float, np.ndarray]:
    """Pooled per-anchor InfoNCE over node embeddings; returns (loss, dH).

    Anchors lacking a positive pair are skipped; anchors with positives but no
    negatives contribute 0. The loss is the mean over eligible anchors.
    """
    h = np.asarray(embeddings, dtype=np.float64)
    d_h = np.zeros_like(h)
    by_anchor_pos: dict[int, list[int]] = {}
    by_anchor_neg: dict[int, list[int]] = {}
    for u, l in positive_pairs:
        by_anchor_pos.setdefault(int(u), []).append(int(l))
    for u, k in negative_pairs:
        by_anchor_neg.setdefault(int(u), []).append(int(k))
    anchors = sorted(by_anchor_pos)
    if not anchors:
        return 0.0, d_h

    total = 0.0
    scale = 1.0 / len(anchors)
    for u in anchors:
        pos = by_anchor_pos[u]
        neg = by_anchor_neg.get(u, [])
        sims, du_parts, dother = [], [], []
        for v in pos + neg:
            c, du, dv = cosine_with_grads(h[u], h[v])
            sims.append(c / temperature)
            du_parts.append(du)
            dother.append(dv)
        sims = np.array(sims)
        m = sims.max()
        e = np.exp(sims - m)
        num = float(e[: len(pos)].sum())
        den = float(e.sum())
        total += float(np.log(den) - np.log(num))
        # d(loss)/d(sim): -e/num on positives, plus e/den on all terms
        d_sims = e / den
        d_sims[: len(pos)] -= e[: len(pos)] / num
        d_sims *= scale / temperature
        for i, v in enumerate(pos + neg):
            d_h[u] += d_sims[i] * du_parts[i]
            d_h[v] += d_sims[i] * dother[i]
    return total * scale, d_h


def node_contrastive_loss(embeddings, positive_pairs, negative_pairs, temperature: float) -> float:
    return node_contrastive_loss_with_grads(embeddings, positive_pairs, negative_pairs, temperature)[0]


@dataclass
class ContrastBatch:
    """One pretraining batch: anchor/positive/negative roles plus node pairs."""

    subgraph_ids: list[str]
    anchor_ids: list[str]  # subgraphs with an accepted extracted group
    rejected_ids: list[str]
    group_nodes: dict  # anchor id -> extracted node tuple
    node_pairs: dict  # subgraph id -> (positive pairs, negative pairs)


@dataclass
class PretrainResult:
    encoder: EncoderParams
    estimator: EstimatorParams
    curve: list  # per-epoch dicts: epoch, loss_sub, loss_node, loss_total
    anchor_counts: list = field(default_factory=list)


def _refresh_extraction(dataset: Dataset, estimator: EstimatorParams, cfg: PretrainConfig):
    scores = {}
    groups = {}
    for s in dataset.subgraphs:
        sc = score_nodes(estimator, s)
        scores[s.id] = sc
        grp = extract_group(s, sc, cfg.score_threshold, cfg.min_group_size)
        groups[s.id] = None if grp is None else grp.nodes
    return scores, groups


def pretrain(
    dataset: Dataset,
    estimator: EstimatorParams,
    encoder: EncoderParams,
    cfg: PretrainConfig,
    seed: int = 0,
) -> PretrainResult:
    """Run the dual-level contrastive pretraining loop.

    Deterministic given (dataset, params, cfg, seed) in sequential mode.
    Raises RuntimeError if no subgraph ever yields an accepted group.
    """
    if len(dataset.subgraphs) == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    encoder = encoder.copy()
    estimator = estimator.copy()
    rng = np.random.default_rng(seed)
    curve: list[dict] = []
    anchor_counts: list[int] = []
    subgraphs = list(dataset.subgraphs)
    scores: dict = {}
    groups: dict = {}
    node_pairs: dict = {}

    for epoch in range(cfg.epochs):
        if epoch % cfg.refresh_period == 0:
            scores, groups = _refresh_extraction(dataset, estimator, cfg)
            n_anchors = sum(1 for g in groups.values() if g is not None)
            anchor_counts.append(n_anchors)
            if n_anchors == 0:
                raise RuntimeError(
                    "pretraining aborted: no subgraph produced an accepted group "
                    f"(threshold {cfg.score_threshold}, min size {cfg.min_group_size}) at epoch {epoch}"
                )
            node_pairs = {
                s.id: build_node_pairs(
                    s, scores[s.id], cfg.pair_close, cfg.pair_far, cfg.score_threshold, cfg.pair_cap
                )
                for s in subgraphs
            }

        order = rng.permutation(len(subgraphs))
        sub_losses, node_losses, totals = [], [], []
        for start in range(0, len(order), cfg.batch_size):
            batch = [subgraphs[i] for i in order[start : start + cfg.batch_size]]
            loss_sub, loss_node, grads = _batch_losses_and_grads(
                batch, encoder, groups, node_pairs, cfg
            )
            total = cfg.subgraph_weight * loss_sub + (1.0 - cfg.subgraph_weight) * loss_node
            opt.clip_grads_(grads, cfg.clip_norm)
            opt.sgd_step_(encoder, grads, cfg.learning_rate)
            sub_losses.append(loss_sub)
            node_losses.append(loss_node)
            totals.append(total)

        curve.append(
            {
                "epoch": epoch,
                "loss_sub": float(np.mean(sub_losses)),
                "loss_node": float(np.mean(node_losses)),
                "loss_total": float(np.mean(totals)),
            }
        )
        for _ in range(cfg.calibration_passes_per_epoch):
            estimator = calibrate_estimator(estimator, dataset, epochs=1, lr=cfg.calibration_lr)
    return PretrainResult(encoder=encoder, estimator=estimator, curve=curve, anchor_counts=anchor_counts)


def _batch_losses_and_grads(
    batch: list[Subgraph],
    encoder: EncoderParams,
    groups: dict,
    node_pairs: dict,
    cfg: PretrainConfig,
) -> tuple[float, float, dict]:
    """Mean subgraph- and node-level losses over one batch plus encoder grads.

    Both loss gradients are scaled by their mixing weights here so a single
    backward pass per subgraph serves the combined objective.
    """
    embeddings = {}
    caches = {}
    pooled_grads = {s.id: np.zeros(encoder.layer_dims[-1]) for s in batch}
    node_grads: dict[str, np.ndarray] = {}
    group_subs = {}
    group_pool_grads = {}

    for s in batch:
        emb, cache = encode_with_cache(s, encoder)
        embeddings[s.id] = emb
        caches[s.id] = cache
        if groups.get(s.id) is not None:
            gsub = induced_subgraph(s, groups[s.id], new_id=f"{s.id}/group")
            gemb, gcache = encode_with_cache(gsub, encoder)
            group_subs[s.id] = (gsub, gemb, gcache)
            group_pool_grads[s.id] = np.zeros(encoder.layer_dims[-1])

    anchor_ids = [s.id for s in batch if s.id in group_subs]
    rejected_ids = [s.id for s in batch if s.id not in group_subs]

    # Subgraph-level task: each anchor against its group and in-batch rejects.
    loss_sub = 0.0
    if anchor_ids:
        w_anchor = 1.0 / len(anchor_ids)
        for aid in anchor_ids:
            negatives = rejected_ids[: cfg.negatives_per_anchor]
            neg_embs = [embeddings[rid].pooled for rid in negatives]
            loss, d_anchor, d_pos, d_negs = subgraph_contrastive_loss_with_grads(
                embeddings[aid].pooled, group_subs[aid][1].pooled, neg_embs, cfg.temperature
            )
            loss_sub += loss * w_anchor
            scale = cfg.subgraph_weight * w_anchor
            pooled_grads[aid] += scale * d_anchor
            group_pool_grads[aid] += scale * d_pos
            for rid, dn in zip(negatives, d_negs):
                pooled_grads[rid] += scale * dn

    # Node-level task: mean over batch subgraphs that have eligible anchors.
    eligible = [s for s in batch if node_pairs.get(s.id, ([], []))[0]]
    loss_node = 0.0
    if eligible:
        w_graph = 1.0 / len(eligible)
        for s in eligible:
            pos, neg = node_pairs[s.id]
            loss, d_h = node_contrastive_loss_with_grads(
                embeddings[s.id].final, pos, neg, cfg.temperature
            )
            loss_node += loss * w_graph
            node_grads[s.id] = (1.0 - cfg.subgraph_weight) * w_graph * d_h

    grads = opt.zero_grads(encoder)
    for s in batch:
        g_nodes = node_grads.get(s.id)
        g_pool = pooled_grads[s.id]
        if g_nodes is None and not np.any(g_pool):
            continue
        part = encode_backward(s, encoder, caches[s.id], grad_nodes=g_nodes, grad_pooled=g_pool)
        opt.accumulate_grads(grads, part)
    for aid, (gsub, _, gcache) in group_subs.items():
        g_pool = group_pool_grads[aid]
        if not np.any(g_pool):
            continue
        part = encode_backward(gsub, encoder, gcache, grad_pooled=g_pool)
        opt.accumulate_grads(grads, part)
    return loss_sub, loss_node, grads
