"""Experiment configuration: one flat dataclass plus key=value file parsing."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence


@dataclass
class ExperimentConfig:
    """Every tunable hyperparameter of the pipeline in one place.

    Serialized as flat ``key = value`` lines; integer lists are
    comma-separated.
    """

    # shared thresholds
    temperature: float = 0.8
    subgraph_weight: float = 0.7  # mixing weight of the subgraph-level contrast
    score_threshold: float = 0.4  # minimum average anomaly score (extraction + gate)
    min_group_size: int = 3
    context_k: int = 10  # neighbors per group-anomaly context

    # encoder
    hidden_dims: tuple = (64, 32)  # one entry per encoder layer
    dev_hidden: int = 16

    # estimator
    pca_components: int = 0  # 0 selects automatically (cap + 90% variance rule)
    pca_cap: int = 16
    scorer_hidden: int = 16
    calibration_epochs: int = 3
    calibration_lr: float = 0.5

    # pretraining
    pretrain_epochs: int = 30
    batch_size: int = 32
    pretrain_lr: float = 0.1
    pair_close: float = 0.1
    pair_far: float = 0.4
    pair_cap: int = 10
    negatives_per_anchor: int = 8
    refresh_period: int = 5
    clip_norm: float = 5.0

    # finetuning
    finetune_steps: int = 150
    finetune_lr: float = 0.05
    anchor_coefficient: float = 1.0

    # evaluation protocol
    shot_min: int = 10
    shot_max: int = 100
    shot_step: int = 10
    seeds: tuple = (1, 2, 3, 4, 5)
    pooling: str = "micro"  # "micro" pools nodes across subgraphs; "macro" averages per subgraph

    def shots(self) -> list[int]:
        return list(range(self.shot_min, self.shot_max + 1, self.shot_step))

    def snapshot(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def _parse_value(raw: str, example):
    raw = raw.strip()
    if isinstance(example, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(example, int):
        return int(raw)
    if isinstance(example, float):
        return float(raw)
    if isinstance(example, tuple):
        items = [p for p in raw.replace(",", " ").split() if p]
        return tuple(int(p) for p in items)
    return raw


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` comments allowed) into a config."""
    cfg = ExperimentConfig()
    known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {line_no}: expected 'key = value', got {line!r}")
        key, raw = (p.strip() for p in stripped.split("=", 1))
        if key not in known:
            raise ValueError(f"config line {line_no}: unknown key {key!r}")
        try:
            setattr(cfg, key, _parse_value(raw, known[key]))
        except ValueError as exc:
            raise ValueError(f"config line {line_no}: bad value for {key!r}: {exc}") from exc
    return cfg


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(i) for i in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))
