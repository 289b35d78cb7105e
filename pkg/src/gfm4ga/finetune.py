"""Few-shot supervised adaptation and prediction.

The k labeled subgraphs drive a weighted binary cross-entropy over the
combined score S-bar = (S + S-hat)/2, where S comes from the feature-based
estimator and S-hat from a bilinear head over encoder embeddings and
group-context embeddings. Node weights follow the part-proportion law
(subgraph-size factor times negative log proportion times mean part degree),
and an L2 anchor ties encoder and estimator parameters to their pretrained
values. Context refinement only runs on subgraphs whose mean score clears
the threshold; everything else predicts the raw estimator score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import opt
from .encoder import EncoderParams, EncodeCache, encode_backward, encode_with_cache
from .estimator import (
    DEFAULT_SCORE_THRESHOLD,
    EstimatorParams,
    ScoreCache,
    score_nodes_with_cache,
    scorer_backward,
)
from .graph import Subgraph, degree_vector

CLAMP = 1e-7  # probabilities are clamped to [CLAMP, 1-CLAMP] before logs


def _sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class PartWeights:
    """Loss weights of the anomaly/normal parts of one labeled subgraph."""

    anomaly_weight: float  # W for the anomaly part
    normal_weight: float  # W for the normal part
    subgraph_weight: float  # exp(1/|V|)
    anomaly_mean_degree: float
    normal_mean_degree: float


def part_weights(subgraph: Subgraph, labels: Optional[Sequence[int]] = None) -> PartWeights:
    """Part weights: e^(1/n) * (-log part proportion) * mean part degree.

    An empty part weighs 0 by definition; a full part weighs exactly 0 since
    log(1) = 0.
    """
    y = np.asarray(subgraph.labels if labels is None else labels, dtype=np.int64)
    n = subgraph.num_nodes
    if y.shape[0] != n:
        raise ValueError("labels length differs from node count")
    if n == 0:
        raise ValueError("empty subgraph has no part weights")
    deg = degree_vector(subgraph).astype(np.float64)
    w_subgraph = math.exp(1.0 / n)

    def one_part(mask: np.ndarray) -> tuple[float, float]:
        size = int(mask.sum())
        if size == 0:
            return 0.0, 0.0
        mean_deg = float(deg[mask].mean())
        proportion = size / n
        return w_subgraph * (-math.log(proportion)) * mean_deg, mean_deg

    w_pos, d_pos = one_part(y == 1)
    w_neg, d_neg = one_part(y == 0)
    return PartWeights(
        anomaly_weight=w_pos,
        normal_weight=w_neg,
        subgraph_weight=w_subgraph,
        anomaly_mean_degree=d_pos,
        normal_mean_degree=d_neg,
    )


def subgraph_score(scores: np.ndarray) -> float:
    """Mean anomaly probability of a subgraph; errors on empty input."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot average an empty score vector")
    return float(s.mean())


@dataclass
class ContextHead:
    """Bilinear score-refinement matrix, trained only during finetuning."""

    bilinear: np.ndarray  # (d_L, d_L)

    def tensors(self):
        return [("bilinear", self.bilinear)]

    def copy(self) -> "ContextHead":
        return ContextHead(bilinear=self.bilinear.copy())

    @staticmethod
    def zeros(dim: int) -> "ContextHead":
        return ContextHead(bilinear=np.zeros((dim, dim)))


def _degree_ratio(d_u: float, d_v: float) -> float:
    total = d_u + d_v
    return abs(d_u - d_v) / total if total > 0 else 0.0


def select_context(
    subgraph: Subgraph,
    scores: np.ndarray,
    node: int,
    k: int,
    mode: str,
    degrees: Optional[np.ndarray] = None,
    neighbors: Optional[Sequence[set]] = None,
) -> list[int]:
    """Top-k 1-hop context of ``node`` ranked by score/degree affinity.

    ``high`` mode (likely anomaly) ranks neighbors by joint closeness of
    anomaly score and degree; ``low`` mode ranks by joint difference. Ties
    break toward the smaller node index; isolated nodes get an empty list.
    """
    if mode not in ("high", "low"):
        raise ValueError(f"unknown context mode {mode!r}")
    s = np.asarray(scores, dtype=np.float64)
    deg = degree_vector(subgraph).astype(np.float64) if degrees is None else np.asarray(degrees, dtype=np.float64)
    if neighbors is None:
        from .graph import neighbor_sets

        neighbors = neighbor_sets(subgraph)
    cands = sorted(neighbors[node])
    if not cands:
        return []

    def key(v: int) -> float:
        score_gap = abs(s[node] - s[v])
        deg_gap = _degree_ratio(deg[node], deg[v])
        if mode == "high":
            return (1.0 - score_gap) * (1.0 - deg_gap)
        return score_gap * deg_gap

    ranked = sorted(cands, key=lambda v: (-key(v), v))
    return ranked[: max(k, 0)]


def context_embedding(embeddings: np.ndarray, context: Sequence[int], node: int) -> np.ndarray:
    """Mean embedding of the context members; falls back to the node itself."""
    if len(context) == 0:
        return embeddings[node].copy()
    return embeddings[list(context)].mean(axis=0)


def refine_scores(embeddings: np.ndarray, context_embeddings: np.ndarray, head: ContextHead) -> np.ndarray:
    """Bilinear refinement: sigmoid(h_u^T W h_u^ctx) per node."""
    h = np.asarray(embeddings, dtype=np.float64)
    c = np.asarray(context_embeddings, dtype=np.float64)
    if h.shape != c.shape or h.shape[1] != head.bilinear.shape[0]:
        raise ValueError("embedding/context/bilinear dimensions do not match")
    z = np.einsum("ni,ij,nj->n", h, head.bilinear, c)
    return _sigmoid(z)


def combine_scores(scores: np.ndarray, refined: np.ndarray) -> np.ndarray:
    """Final probability: elementwise average of raw and refined scores."""
    return (np.asarray(scores, dtype=np.float64) + np.asarray(refined, dtype=np.float64)) / 2.0


@dataclass
class FinetuneConfig:
    """Hyperparameters of few-shot adaptation and prediction."""

    score_threshold: float = DEFAULT_SCORE_THRESHOLD  # gate on the mean subgraph score
    context_k: int = 10
    steps: int = 150
    learning_rate: float = 0.05
    anchor_coefficient: float = 1.0  # scale of the L2 pull toward pretrained params
    clip_norm: float = 5.0
    uniform_node_weights: bool = False  # ablation: W_p = W_n = 1
    skip_refinement: bool = False  # ablation: always predict the raw score


@dataclass
class PipelineState:
    """Cached forward pass of the full scoring pipeline on one subgraph."""

    scores: np.ndarray
    score_cache: ScoreCache
    mean_score: float
    gated_in: bool
    combined: np.ndarray
    refined: Optional[np.ndarray] = None
    encode_cache: Optional[EncodeCache] = None
    final_embeddings: Optional[np.ndarray] = None
    context_embeddings: Optional[np.ndarray] = None
    contexts: Optional[list] = None
    bilinear_z: Optional[np.ndarray] = None


def pipeline_forward(
    subgraph: Subgraph,
    encoder: EncoderParams,
    estimator: EstimatorParams,
    head: ContextHead,
    cfg: FinetuneConfig,
) -> PipelineState:
    """Run estimator scoring and, when gated in, context-refined scoring."""
    scores, score_cache = score_nodes_with_cache(estimator, subgraph)
    mean_score = subgraph_score(scores)
    gated_in = (mean_score > cfg.score_threshold) and not cfg.skip_refinement
    if not gated_in:
        return PipelineState(
            scores=scores,
            score_cache=score_cache,
            mean_score=mean_score,
            gated_in=False,
            combined=scores.copy(),
        )
    emb, cache = encode_with_cache(subgraph, encoder)
    h = emb.final
    deg = degree_vector(subgraph).astype(np.float64)
    from .graph import neighbor_sets

    nbrs = neighbor_sets(subgraph)
    contexts = []
    for u in range(subgraph.num_nodes):
        mode = "high" if scores[u] > mean_score else "low"
        contexts.append(select_context(subgraph, scores, u, cfg.context_k, mode, degrees=deg, neighbors=nbrs))
    h_ctx = np.stack([context_embedding(h, contexts[u], u) for u in range(subgraph.num_nodes)])
    z = np.einsum("ni,ij,nj->n", h, head.bilinear, h_ctx)
    refined = _sigmoid(z)
    combined = combine_scores(scores, refined)
    return PipelineState(
        scores=scores,
        score_cache=score_cache,
        mean_score=mean_score,
        gated_in=True,
        combined=combined,
        refined=refined,
        encode_cache=cache,
        final_embeddings=h,
        context_embeddings=h_ctx,
        contexts=contexts,
        bilinear_z=z,
    )


def predict(
    subgraph: Subgraph,
    encoder: EncoderParams,
    estimator: EstimatorParams,
    head: ContextHead,
    cfg: FinetuneConfig,
) -> np.ndarray:
    """Final per-node anomaly probabilities for one subgraph."""
    return pipeline_forward(subgraph, encoder, estimator, head, cfg).combined


def _weighted_bce_and_grad(
    combined: np.ndarray, labels: np.ndarray, weights: PartWeights
) -> tuple[float, np.ndarray]:
    """Negative weighted log-likelihood of one subgraph and d(loss)/d(combined)."""
    p = np.clip(combined, CLAMP, 1.0 - CLAMP)
    y = labels.astype(np.float64)
    w_pos = weights.anomaly_weight
    w_neg = weights.normal_weight
    value = -float(np.sum(w_pos * y * np.log(p) + w_neg * (1.0 - y) * np.log(1.0 - p)))
    grad = -(w_pos * y / p - w_neg * (1.0 - y) / (1.0 - p))
    grad[(combined < CLAMP) | (combined > 1.0 - CLAMP)] = 0.0  # clamp region
    return value, grad


def finetune_loss_and_grads(
    batch: Sequence[Subgraph],
    encoder: EncoderParams,
    estimator: EstimatorParams,
    head: ContextHead,
    pretrained_encoder: EncoderParams,
    pretrained_estimator: EstimatorParams,
    cfg: FinetuneConfig,
) -> tuple[float, dict, dict, dict, dict]:
    """Few-shot loss (weighted BCE mean + L2 anchors) and exact gradients.

    Returns (loss, encoder grads, estimator grads, head grads, detail) where
    detail holds the group-anomaly and constraint terms separately.
    """
    if len(batch) == 0:
        raise ValueError("finetune batch is empty")
    enc_grads = opt.zero_grads(encoder)
    est_grads = opt.zero_grads(estimator)
    head_grads = opt.zero_grads(head)
    loss_ga = 0.0
    inv_k = 1.0 / len(batch)

    for s in batch:
        state = pipeline_forward(s, encoder, estimator, head, cfg)
        y = s.label_array()
        if cfg.uniform_node_weights:
            weights = PartWeights(1.0, 1.0, 1.0, 0.0, 0.0)
        else:
            weights = part_weights(s)
        value, d_combined = _weighted_bce_and_grad(state.combined, y, weights)
        loss_ga += inv_k * value
        d_combined = inv_k * d_combined

        if not state.gated_in:
            part = scorer_backward(estimator, state.score_cache, d_combined)
            opt.accumulate_grads(est_grads, part)
            continue

        d_scores = 0.5 * d_combined
        d_refined = 0.5 * d_combined
        part = scorer_backward(estimator, state.score_cache, d_scores)
        opt.accumulate_grads(est_grads, part)

        refined = state.refined
        dz = d_refined * refined * (1.0 - refined)
        h = state.final_embeddings
        h_ctx = state.context_embeddings
        w = head.bilinear
        head_grads["bilinear"] += (h * dz[:, None]).T @ h_ctx
        d_h = dz[:, None] * (h_ctx @ w.T)
        d_hctx = dz[:, None] * (h @ w)
        for u, ctx in enumerate(state.contexts):
            if len(ctx) == 0:
                d_h[u] += d_hctx[u]
            else:
                share = d_hctx[u] / len(ctx)
                for m in ctx:
                    d_h[m] += share
        part = encode_backward(s, encoder, state.encode_cache, grad_nodes=d_h)
        opt.accumulate_grads(enc_grads, part)

    fc_enc, fc_enc_grads = opt.l2_distance_grads(encoder, pretrained_encoder, cfg.anchor_coefficient)
    fc_est, fc_est_grads = opt.l2_distance_grads(estimator, pretrained_estimator, cfg.anchor_coefficient)
    opt.accumulate_grads(enc_grads, fc_enc_grads)
    opt.accumulate_grads(est_grads, fc_est_grads)
    loss_fc = fc_enc + fc_est
    detail = {"loss_ga": loss_ga, "loss_fc": loss_fc}
    return loss_ga + loss_fc, enc_grads, est_grads, head_grads, detail


def finetune_loss(
    batch: Sequence[Subgraph],
    encoder: EncoderParams,
    estimator: EstimatorParams,
    head: ContextHead,
    pretrained_encoder: EncoderParams,
    pretrained_estimator: EstimatorParams,
    cfg: FinetuneConfig,
) -> float:
    return finetune_loss_and_grads(
        batch, encoder, estimator, head, pretrained_encoder, pretrained_estimator, cfg
    )[0]


@dataclass
class FinetuneResult:
    encoder: EncoderParams
    estimator: EstimatorParams
    head: ContextHead
    curve: list = field(default_factory=list)


def finetune(
    pretrained_encoder: EncoderParams,
    pretrained_estimator: EstimatorParams,
    batch: Sequence[Subgraph],
    cfg: FinetuneConfig,
) -> FinetuneResult:
    """Optimize encoder, estimator, and bilinear head on the k-shot batch.

    Full-batch first-order steps with gradient clipping; the bilinear head
    starts at zero (so the refined score begins at the uninformative 0.5).
    Deterministic: no stochastic operations are involved.
    """
    if len(batch) == 0:
        raise ValueError("cannot finetune on an empty k-shot set")
    for s in batch:
        if s.labels is None:
            raise ValueError(f"k-shot subgraph {s.id!r} has no labels")
    encoder = pretrained_encoder.copy()
    estimator = pretrained_estimator.copy()
    head = ContextHead.zeros(encoder.layer_dims[-1])
    curve = []
    for step in range(cfg.steps):
        loss, enc_g, est_g, head_g, detail = finetune_loss_and_grads(
            batch, encoder, estimator, head, pretrained_encoder, pretrained_estimator, cfg
        )
        all_grads = {f"enc.{k}": v for k, v in enc_g.items()}
        all_grads.update({f"est.{k}": v for k, v in est_g.items()})
        all_grads.update({f"head.{k}": v for k, v in head_g.items()})
        opt.clip_grads_(all_grads, cfg.clip_norm)
        opt.sgd_step_(encoder, {k[4:]: v for k, v in all_grads.items() if k.startswith("enc.")}, cfg.learning_rate)
        opt.sgd_step_(estimator, {k[4:]: v for k, v in all_grads.items() if k.startswith("est.")}, cfg.learning_rate)
        opt.sgd_step_(head, {k[5:]: v for k, v in all_grads.items() if k.startswith("head.")}, cfg.learning_rate)
        curve.append({"step": step, "loss": loss, **detail})
    return FinetuneResult(encoder=encoder, estimator=estimator, head=head, curve=curve)
