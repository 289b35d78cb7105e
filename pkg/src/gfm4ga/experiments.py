"""Experiment orchestration: pipeline assembly, k-shot grids, ablations, reports.

A run pretrains once per distinct pretraining recipe (mixing weight /
enabled flag), then finetunes and evaluates per (variant, shot, seed) cell.
Cells are independent and keyed, so reports do not depend on execution
order; canonical report bytes exclude wall-clock timing.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import ExperimentConfig
from .encoder import EncoderParams, init_encoder
from .estimator import (
    EstimatorParams,
    calibrate_estimator,
    choose_num_components,
    fit_pca,
    init_estimator,
    pca_eigenvalues,
)
from .finetune import ContextHead, FinetuneConfig, finetune, predict
from .graph import Dataset, Subgraph
from .metrics import auprc, auroc
from .pretrain import PretrainConfig, pretrain
from .synth import KShotSplit, make_kshot_splits
from .util import pmap

ABLATION_NAMES = ("no-sub-pt", "no-node-pt", "no-node-wt", "no-ano-ctx")


@dataclass(frozen=True)
class VariantSpec:
    """One pipeline configuration to train and evaluate."""

    name: str
    subgraph_weight: Optional[float] = None  # pretraining mix override
    pretrain: bool = True
    uniform_node_weights: bool = False
    skip_refinement: bool = False
    context_k: Optional[int] = None


FULL_VARIANT = VariantSpec(name="full")


def ablation_variants() -> list[VariantSpec]:
    return [
        FULL_VARIANT,
        VariantSpec(name="no-sub-pt", subgraph_weight=0.0),
        VariantSpec(name="no-node-pt", subgraph_weight=1.0),
        VariantSpec(name="no-node-wt", uniform_node_weights=True),
        VariantSpec(name="no-ano-ctx", skip_refinement=True),
    ]


def pretrain_config(cfg: ExperimentConfig, subgraph_weight: Optional[float] = None) -> PretrainConfig:
    return PretrainConfig(
        temperature=cfg.temperature,
        subgraph_weight=cfg.subgraph_weight if subgraph_weight is None else subgraph_weight,
        epochs=cfg.pretrain_epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.pretrain_lr,
        pair_close=cfg.pair_close,
        pair_far=cfg.pair_far,
        pair_cap=cfg.pair_cap,
        negatives_per_anchor=cfg.negatives_per_anchor,
        refresh_period=cfg.refresh_period,
        score_threshold=cfg.score_threshold,
        min_group_size=cfg.min_group_size,
        clip_norm=cfg.clip_norm,
        calibration_lr=cfg.calibration_lr,
    )


def finetune_config(cfg: ExperimentConfig, variant: VariantSpec = FULL_VARIANT) -> FinetuneConfig:
    return FinetuneConfig(
        score_threshold=cfg.score_threshold,
        context_k=cfg.context_k if variant.context_k is None else variant.context_k,
        steps=cfg.finetune_steps,
        learning_rate=cfg.finetune_lr,
        anchor_coefficient=cfg.anchor_coefficient,
        clip_norm=cfg.clip_norm,
        uniform_node_weights=variant.uniform_node_weights,
        skip_refinement=variant.skip_refinement,
    )


def prepare_estimator(dataset: Dataset, cfg: ExperimentConfig, seed: int = 0) -> EstimatorParams:
    """Fit the PCA on all node features, init the scorer, run initial calibration."""
    features = np.concatenate([s.x for s in dataset.subgraphs if s.num_nodes > 0], axis=0)
    if cfg.pca_components > 0:
        components = cfg.pca_components
    else:
        components = choose_num_components(pca_eigenvalues(features), features.shape[1], cfg.pca_cap)
    mean, basis = fit_pca(features, components)
    params = init_estimator(mean, basis, hidden=cfg.scorer_hidden, seed=seed + 1)
    return calibrate_estimator(params, dataset, epochs=cfg.calibration_epochs, lr=cfg.calibration_lr)


def init_pipeline_encoder(relation_ids, feature_dim: int, cfg: ExperimentConfig, seed: int = 0) -> EncoderParams:
    layer_dims = (feature_dim, *cfg.hidden_dims)
    return init_encoder(relation_ids, layer_dims, dev_hidden=cfg.dev_hidden, seed=seed)


@dataclass
class TrainedPipeline:
    encoder: EncoderParams
    estimator: EstimatorParams
    curve: list = field(default_factory=list)


def pretrain_pipeline(
    corpus: Dataset,
    cfg: ExperimentConfig,
    seed: int = 0,
    subgraph_weight: Optional[float] = None,
    enable_pretrain: bool = True,
    relation_ids: Optional[Sequence[int]] = None,
) -> TrainedPipeline:
    """Initialize estimator and encoder, then optionally pretrain them."""
    registry = tuple(relation_ids) if relation_ids is not None else corpus.relation_registry
    feature_dim = corpus.subgraphs[0].feature_dim
    estimator = prepare_estimator(corpus, cfg, seed=seed)
    encoder = init_pipeline_encoder(registry, feature_dim, cfg, seed=seed)
    if not enable_pretrain or cfg.pretrain_epochs <= 0:
        return TrainedPipeline(encoder=encoder, estimator=estimator, curve=[])
    result = pretrain(corpus, estimator, encoder, pretrain_config(cfg, subgraph_weight), seed=seed)
    return TrainedPipeline(encoder=result.encoder, estimator=result.estimator, curve=result.curve)


def evaluate(
    encoder: EncoderParams,
    estimator: EstimatorParams,
    head: ContextHead,
    subgraphs: Sequence[Subgraph],
    ft_cfg: FinetuneConfig,
    pooling: str = "micro",
) -> dict:
    """AUROC/AUPRC of predicted node scores over the evaluation subgraphs.

    Micro pooling ranks all nodes together; macro averages per-subgraph
    metrics over subgraphs that contain both classes.
    """
    if len(subgraphs) == 0:
        raise ValueError("evaluation set is empty")
    preds = pmap(lambda s: predict(s, encoder, estimator, head, ft_cfg), subgraphs)
    if pooling == "micro":
        scores = np.concatenate(preds)
        labels = np.concatenate([s.label_array() for s in subgraphs])
        return {
            "auroc": auroc(scores, labels),
            "auprc": auprc(scores, labels),
            "n_nodes": int(labels.size),
            "n_subgraphs": len(subgraphs),
        }
    if pooling != "macro":
        raise ValueError(f"unknown pooling {pooling!r}")
    per_auroc, per_auprc = [], []
    for s, p in zip(subgraphs, preds):
        y = s.label_array()
        if 0 < int(y.sum()) < y.size:
            per_auroc.append(auroc(p, y))
            per_auprc.append(auprc(p, y))
    if not per_auroc:
        raise ValueError("no evaluation subgraph contains both classes")
    return {
        "auroc": float(np.mean(per_auroc)),
        "auprc": float(np.mean(per_auprc)),
        "n_nodes": int(sum(s.num_nodes for s in subgraphs)),
        "n_subgraphs": len(per_auroc),
    }


@dataclass
class EvalReport:
    """Per-cell metrics plus mean/std summaries and the config snapshot.

    ``runtime_seconds`` is informational only and is excluded from the
    canonical serialization so identical reruns produce identical bytes.
    """

    config: dict
    cells: list
    summary: dict
    runtime_seconds: Optional[float] = None

    def to_json(self) -> str:
        payload = {"config": self.config, "cells": self.cells, "summary": self.summary, "runtime_seconds": None}
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        payload = json.loads(text)
        return EvalReport(
            config=payload["config"],
            cells=payload["cells"],
            summary=payload["summary"],
            runtime_seconds=payload.get("runtime_seconds"),
        )


def _summarize(cells: list[dict]) -> dict:
    groups: dict[str, dict[str, list]] = {}
    for cell in cells:
        key = f"{cell['variant']}|shot={cell['shot']}"
        bucket = groups.setdefault(key, {"auroc": [], "auprc": []})
        bucket["auroc"].append(cell["auroc"])
        bucket["auprc"].append(cell["auprc"])
    summary = {}
    for key, bucket in sorted(groups.items()):
        summary[key] = {
            "auroc_mean": float(np.mean(bucket["auroc"])),
            "auroc_std": float(np.std(bucket["auroc"])),
            "auprc_mean": float(np.mean(bucket["auprc"])),
            "auprc_std": float(np.std(bucket["auprc"])),
            "per_seed_auroc": [float(v) for v in bucket["auroc"]],
            "per_seed_auprc": [float(v) for v in bucket["auprc"]],
        }
    return summary


def _add_ablation_deltas(summary: dict) -> None:
    for key in list(summary):
        variant, shot_part = key.split("|", 1)
        if variant == "full":
            continue
        full_key = f"full|{shot_part}"
        if full_key in summary:
            summary[key]["auroc_delta_vs_full"] = float(
                summary[key]["auroc_mean"] - summary[full_key]["auroc_mean"]
            )


def run_variants(
    corpus: Dataset,
    labeled: Dataset,
    cfg: ExperimentConfig,
    variants: Sequence[VariantSpec],
    shots: Sequence[int],
    seeds: Optional[Sequence[int]] = None,
    seed: int = 0,
) -> EvalReport:
    """Full grid: pretrain per recipe once, finetune/evaluate per cell."""
    started = time.monotonic()
    seeds = list(seeds if seeds is not None else cfg.seeds)
    registry = tuple(sorted(set(corpus.relation_registry) | set(labeled.relation_registry)))

    pipelines: dict[tuple, TrainedPipeline] = {}
    for variant in variants:
        key = _pretrain_key(cfg, variant)
        if key not in pipelines:
            pipelines[key] = pretrain_pipeline(
                corpus,
                cfg,
                seed=seed,
                subgraph_weight=variant.subgraph_weight,
                enable_pretrain=variant.pretrain,
                relation_ids=registry,
            )

    splits: dict[tuple[int, int], KShotSplit] = {}
    for shot in shots:
        for split in make_kshot_splits(labeled, shot, seeds):
            splits[(shot, split.seed)] = split

    cells = []
    for variant in variants:
        pipeline = pipelines[_pretrain_key(cfg, variant)]
        ft_cfg = finetune_config(cfg, variant)
        for shot in shots:
            for sd in seeds:
                split = splits[(shot, sd)]
                cells.append(
                    _run_cell(pipeline, labeled, split, ft_cfg, variant.name, cfg.pooling)
                )

    summary = _summarize(cells)
    _add_ablation_deltas(summary)
    return EvalReport(
        config=cfg.snapshot(),
        cells=cells,
        summary=summary,
        runtime_seconds=time.monotonic() - started,
    )


def _pretrain_key(cfg: ExperimentConfig, variant: VariantSpec) -> tuple:
    weight = cfg.subgraph_weight if variant.subgraph_weight is None else variant.subgraph_weight
    return (variant.pretrain, weight if variant.pretrain else None)


def _run_cell(
    pipeline: TrainedPipeline,
    labeled: Dataset,
    split: KShotSplit,
    ft_cfg: FinetuneConfig,
    variant_name: str,
    pooling: str,
) -> dict:
    batch = [labeled.by_id(i) for i in split.finetune_ids]
    result = finetune(pipeline.encoder, pipeline.estimator, batch, ft_cfg)
    eval_subgraphs = [labeled.by_id(i) for i in split.eval_ids]
    metrics = evaluate(result.encoder, result.estimator, result.head, eval_subgraphs, ft_cfg, pooling)
    return {
        "variant": variant_name,
        "shot": split.k,
        "seed": split.seed,
        "auroc": metrics["auroc"],
        "auprc": metrics["auprc"],
        "n_eval_nodes": metrics["n_nodes"],
        "n_eval_subgraphs": metrics["n_subgraphs"],
    }


def run_kshot_sweep(
    corpus: Dataset,
    labeled: Dataset,
    cfg: ExperimentConfig,
    shots: Optional[Sequence[int]] = None,
    seeds: Optional[Sequence[int]] = None,
    seed: int = 0,
) -> EvalReport:
    shots = list(shots if shots is not None else cfg.shots())
    return run_variants(corpus, labeled, cfg, [FULL_VARIANT], shots, seeds, seed)


def run_ablations(
    corpus: Dataset,
    labeled: Dataset,
    cfg: ExperimentConfig,
    shot: int = 10,
    seeds: Optional[Sequence[int]] = None,
    seed: int = 0,
) -> EvalReport:
    return run_variants(corpus, labeled, cfg, ablation_variants(), [shot], seeds, seed)


def sweep_alpha(
    corpus: Dataset,
    labeled: Dataset,
    cfg: ExperimentConfig,
    alphas: Sequence[float],
    shot: int = 10,
    seeds: Optional[Sequence[int]] = None,
    seed: int = 0,
) -> EvalReport:
    variants = [VariantSpec(name=f"alpha={a:g}", subgraph_weight=float(a)) for a in alphas]
    return run_variants(corpus, labeled, cfg, variants, [shot], seeds, seed)


def sweep_context_k(
    corpus: Dataset,
    labeled: Dataset,
    cfg: ExperimentConfig,
    context_sizes: Sequence[int],
    shot: int = 10,
    seeds: Optional[Sequence[int]] = None,
    seed: int = 0,
) -> EvalReport:
    variants = [VariantSpec(name=f"context_k={k}", context_k=int(k)) for k in context_sizes]
    return run_variants(corpus, labeled, cfg, variants, [shot], seeds, seed)


def curve_csv(report: EvalReport) -> str:
    """Summary CSV: one row per (variant, shot) with mean and std columns."""
    lines = ["variant,shot,auroc_mean,auroc_std,auprc_mean,auprc_std"]
    for key, row in report.summary.items():
        variant, shot_part = key.split("|", 1)
        shot = shot_part.split("=", 1)[1]
        lines.append(
            f"{variant},{shot},{row['auroc_mean']!r},{row['auroc_std']!r},"
            f"{row['auprc_mean']!r},{row['auprc_std']!r}"
        )
    return "\n".join(lines) + "\n"


def cells_csv(report: EvalReport) -> str:
    lines = ["variant,shot,seed,auroc,auprc"]
    for cell in report.cells:
        lines.append(
            f"{cell['variant']},{cell['shot']},{cell['seed']},{cell['auroc']!r},{cell['auprc']!r}"
        )
    return "\n".join(lines) + "\n"
