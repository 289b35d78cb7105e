"""Synthetic group-anomaly benchmarks, base-graph ingestion, and k-shot splits.

Each synthetic subgraph is a preferential-attachment benign backbone plus one
injected anomaly group: new nodes wired densely (random inner edges) or as a
chain, tied to the backbone by sparse camouflage edges, with features drawn
from the benign distribution and shifted by a configured magnitude along a
random unit direction shared by the group. Generation is deterministic per
(config, subgraph index), so parallel generation is schedule-independent.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .graph import Dataset, Subgraph, induced_subgraph, neighbor_sets, connected_components

PATTERNS = ("dense", "chain", "mixed")


@dataclass
class SynthConfig:
    """Knobs of the synthetic generator; rates are probabilities in [0, 1]."""

    num_subgraphs: int = 200
    size_mean: float = 25.0
    size_std: float = 5.0
    feature_dim: int = 32
    pattern: str = "mixed"
    group_mean: float = 8.0
    group_std: float = 2.0
    feature_shift: float = 5.0  # L2 magnitude added to anomalous features
    inner_density: float = 0.8  # edge probability inside a dense group
    camouflage_rate: float = 0.05  # group-to-benign edge probability
    num_relations: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}")
        for name in ("inner_density", "camouflage_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {rate}")
        if self.group_mean < 3:
            raise ValueError("group_mean must be at least 3")
        if self.feature_shift < 0:
            raise ValueError("feature_shift must be nonnegative")
        if self.num_subgraphs < 1 or self.num_relations < 1:
            raise ValueError("num_subgraphs and num_relations must be positive")


def _preferential_attachment(rng: np.random.Generator, n: int, attach: int = 2) -> list[tuple[int, int]]:
    """Undirected backbone with power-law-ish degrees."""
    edges: list[tuple[int, int]] = []
    if n < 2:
        return edges
    deg = np.zeros(n, dtype=np.float64)
    edges.append((0, 1))
    deg[0] = deg[1] = 1
    for i in range(2, n):
        weights = deg[:i] + 1.0
        k = min(attach, i)
        targets = rng.choice(i, size=k, replace=False, p=weights / weights.sum())
        for t in sorted(int(t) for t in targets):
            edges.append((t, i))
            deg[t] += 1
            deg[i] += 1
    return edges


def _group_inner_edges(rng: np.random.Generator, members: Sequence[int], pattern: str, density: float):
    edges = []
    members = list(members)
    if pattern == "chain":
        edges.extend((members[i], members[i + 1]) for i in range(len(members) - 1))
        return edges
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            if rng.random() < density:
                edges.append((members[i], members[j]))
    return edges


def _make_subgraph(cfg: SynthConfig, index: int) -> Subgraph:
    rng = np.random.default_rng([cfg.seed, index])
    n = max(5, int(round(rng.normal(cfg.size_mean, cfg.size_std))))
    g = max(3, int(round(rng.normal(cfg.group_mean, cfg.group_std))))
    if cfg.group_mean >= cfg.size_mean - 2 and g >= n:
        raise ValueError(f"group size {g} must stay below subgraph size {n}; adjust the config means")
    g = min(g, n - 2)  # tail draws clip instead of failing a sane config
    m = n - g

    pattern = cfg.pattern
    if pattern == "mixed":
        pattern = "dense" if rng.random() < 0.5 else "chain"

    plain_edges = _preferential_attachment(rng, m)
    members = list(range(m, n))
    plain_edges.extend(_group_inner_edges(rng, members, pattern, cfg.inner_density))
    if m > 0 and cfg.camouflage_rate > 0:
        hits = rng.random((g, m)) < cfg.camouflage_rate
        for gi, bi in zip(*np.nonzero(hits)):
            plain_edges.append((members[int(gi)], int(bi)))

    relations = rng.integers(0, cfg.num_relations, size=len(plain_edges))
    edges = [(u, v, int(r)) for (u, v), r in zip(plain_edges, relations)]

    x = rng.standard_normal((n, cfg.feature_dim))
    direction = rng.standard_normal(cfg.feature_dim)
    norm = np.linalg.norm(direction)
    if norm > 0 and cfg.feature_shift > 0:
        x[m:] += cfg.feature_shift * direction / norm
    labels = [0] * m + [1] * g

    return Subgraph.create(
        id=f"synth-{index:05d}",
        node_ids=list(range(n)),
        x=x,
        edges=edges,
        relations=range(cfg.num_relations),
        labels=labels,
        directed=False,
    )


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Deterministic synthetic dataset; one injected anomaly group per subgraph."""
    return Dataset.from_subgraphs(_make_subgraph(cfg, i) for i in range(cfg.num_subgraphs))


def _jaccard(a: set, b: set) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def sample_group_subgraphs(
    base: Subgraph,
    min_interconnected: int = 3,
    dedup_threshold: float = 0.8,
    hop_fraction: float = 0.6,
    seed: int = 0,
) -> Dataset:
    """Sample 2-hop neighborhoods around anomaly nodes of a labeled base graph.

    A neighborhood is kept only if its induced subgraph contains a connected
    component of at least ``min_interconnected`` anomaly nodes (connectivity
    counted over anomaly-anomaly edges), and dropped if its node-id Jaccard
    similarity with an already-emitted subgraph exceeds ``dedup_threshold``.
    Each hop frontier is randomly thinned to ``hop_fraction`` of its nodes.
    A base graph without anomalies yields an empty dataset.
    """
    if base.labels is None:
        raise ValueError("base graph must carry node labels")
    labels = base.label_array()
    anomalies = [int(i) for i in np.flatnonzero(labels == 1)]
    if not anomalies:
        return Dataset.from_subgraphs([])
    nbrs = neighbor_sets(base)
    rng = np.random.default_rng(seed)
    emitted: list[set] = []
    out: list[Subgraph] = []

    def thin(frontier: list[int]) -> list[int]:
        if not frontier or hop_fraction >= 1.0:
            return list(frontier)
        keep = max(1, int(math.ceil(hop_fraction * len(frontier))))
        picked = rng.choice(len(frontier), size=keep, replace=False)
        return [frontier[i] for i in sorted(int(i) for i in picked)]

    for a in anomalies:
        hop1 = thin(sorted(nbrs[a]))
        seen = {a, *hop1}
        frontier2 = sorted({v for u in hop1 for v in nbrs[u]} - seen)
        hop2 = thin(frontier2)
        nodes = sorted(seen | set(hop2))
        sub = induced_subgraph(base, nodes, new_id=f"sample-{base.node_ids[a]}")
        anomaly_idx = [i for i in range(sub.num_nodes) if sub.labels[i] == 1]
        comps = connected_components(sub, subset=anomaly_idx)
        if not comps or max(len(c) for c in comps) < min_interconnected:
            continue
        id_set = set(sub.node_ids)
        if any(_jaccard(id_set, prev) > dedup_threshold for prev in emitted):
            continue
        emitted.append(id_set)
        out.append(sub)
    return Dataset.from_subgraphs(out)


@dataclass(frozen=True)
class KShotSplit:
    """One finetune/eval partition of the labeled subgraph ids."""

    k: int
    seed: int
    finetune_ids: tuple[str, ...]
    eval_ids: tuple[str, ...]


def make_kshot_splits(dataset: Dataset, k: int, seeds: Sequence[int]) -> list[KShotSplit]:
    """Uniform without-replacement k-shot splits, one per seed."""
    labeled_ids = sorted(s.id for s in dataset.labeled())
    if k > len(labeled_ids):
        raise ValueError(f"k={k} exceeds the {len(labeled_ids)} labeled subgraphs")
    if k == len(labeled_ids):
        warnings.warn("k equals the labeled count; the evaluation set is empty", UserWarning)
    splits = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(labeled_ids), size=k, replace=False)
        chosen = {labeled_ids[i] for i in picked}
        splits.append(
            KShotSplit(
                k=k,
                seed=int(seed),
                finetune_ids=tuple(sorted(chosen)),
                eval_ids=tuple(i for i in labeled_ids if i not in chosen),
            )
        )
    return splits


def load_base_graph(
    edges_path,
    labels_path,
    features_path=None,
    directed: bool = False,
) -> Subgraph:
    """Read a whole labeled graph from "u v rel" edge lines and "node label" lines.

    Node ids are remapped to dense indices (original ids kept). Without a
    feature file, each node gets a single max-normalized degree feature.
    """
    raw_edges = []
    with open(edges_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) < 2:
                raise ValueError(f"{edges_path}: line {line_no}: expected 'u v [rel]'")
            u, v = int(parts[0]), int(parts[1])
            rel = int(parts[2]) if len(parts) > 2 else 0
            raw_edges.append((u, v, rel))

    labels_by_id: dict[int, int] = {}
    with open(labels_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 2:
                raise ValueError(f"{labels_path}: line {line_no}: expected 'node label'")
            labels_by_id[int(parts[0])] = int(parts[1])

    node_ids = sorted(set(labels_by_id) | {u for u, _, _ in raw_edges} | {v for _, v, _ in raw_edges})
    remap = {nid: i for i, nid in enumerate(node_ids)}
    edges = [(remap[u], remap[v], r) for u, v, r in raw_edges]
    labels = [labels_by_id.get(nid, 0) for nid in node_ids]

    if features_path is not None:
        feats_by_id = {}
        with open(features_path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts or parts[0].startswith("#"):
                    continue
                feats_by_id[int(parts[0])] = [float(v) for v in parts[1:]]
        dims = {len(v) for v in feats_by_id.values()}
        if len(dims) != 1:
            raise ValueError(f"{features_path}: inconsistent feature dimensions {sorted(dims)}")
        d = dims.pop()
        x = np.zeros((len(node_ids), d))
        for nid, row in feats_by_id.items():
            if nid in remap:
                x[remap[nid]] = row
    else:
        deg = np.zeros(len(node_ids))
        for u, v, _ in edges:
            deg[u] += 1
            deg[v] += 1
        x = (deg / max(deg.max(), 1.0)).reshape(-1, 1)

    return Subgraph.create(
        id="base",
        node_ids=node_ids,
        x=x,
        edges=edges,
        labels=labels,
        directed=directed,
    )
