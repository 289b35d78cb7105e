"""Canonical subgraph/dataset data model, validation, and JSONL serialization.

A :class:`Subgraph` is a typed multigraph over a dense node index range
``0..n-1`` with a float64 feature matrix and optional binary node labels.
Undirected edges are stored once and expanded to both directions at
message-passing time. Instances are treated as immutable after construction
and are safe to share across parallel workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

UNLABELED = "unlabeled"
LABELED = "labeled"

# Exact key set of one JSONL record; this is the on-disk contract.
RECORD_KEYS = ("id", "node_ids", "x", "edges", "relations", "y", "directed")


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be parsed; message names the line."""


@dataclass(frozen=True)
class Subgraph:
    """One detection unit: nodes, float64 features, typed edges, optional labels."""

    id: str
    node_ids: tuple[int, ...]
    x: np.ndarray  # (n, d) float64
    edges: tuple[tuple[int, int, int], ...]  # (source, target, relation)
    relations: tuple[int, ...]  # sorted relation ids present
    labels: Optional[tuple[int, ...]] = None
    directed: bool = False

    @staticmethod
    def create(id, node_ids, x, edges, relations=None, labels=None, directed=False) -> "Subgraph":
        """Normalize raw fields (arrays, sorting) without validating invariants."""
        if len(node_ids) == 0:
            x = np.zeros((0, 0), dtype=np.float64)
        else:
            x = np.asarray(x, dtype=np.float64)
            if x.ndim == 1:
                x = x.reshape(len(node_ids), -1)
        edges = tuple((int(u), int(v), int(r)) for u, v, r in edges)
        if relations is None:
            relations = sorted({r for _, _, r in edges})
        return Subgraph(
            id=str(id),
            node_ids=tuple(int(i) for i in node_ids),
            x=x,
            edges=edges,
            relations=tuple(sorted(int(r) for r in relations)),
            labels=None if labels is None else tuple(int(y) for y in labels),
            directed=bool(directed),
        )

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def feature_dim(self) -> int:
        return int(self.x.shape[1]) if self.x.ndim == 2 else 0

    def label_array(self) -> np.ndarray:
        if self.labels is None:
            raise ValueError(f"subgraph {self.id!r} carries no labels")
        return np.asarray(self.labels, dtype=np.int64)


def validate(subgraph: Subgraph) -> list[str]:
    """Return a list of invariant violations (empty iff the subgraph is well formed).

    Each violation names the offending field and index; this is a diagnostic
    operation and never raises.
    """
    violations: list[str] = []
    n = subgraph.num_nodes
    x = subgraph.x
    if x.ndim != 2:
        # Ragged rows end up as a 1-d object array; name the first bad row.
        rows = list(x) if x.ndim == 1 else []
        if rows and all(hasattr(r, "__len__") for r in rows):
            d0 = len(rows[0])
            for i, row in enumerate(rows):
                if len(row) != d0:
                    violations.append(f"features[{i}]: dimension {len(row)} != {d0}")
        if not violations:
            violations.append(f"features: expected 2-d matrix, got ndim={x.ndim}")
        return violations
    if x.shape[0] != n:
        violations.append(f"features: row count {x.shape[0]} != node count {n}")
    rel_set = set(subgraph.relations)
    for i, (u, v, r) in enumerate(subgraph.edges):
        if not (0 <= u < n):
            violations.append(f"edges[{i}]: source index {u} outside [0, {n})")
        if not (0 <= v < n):
            violations.append(f"edges[{i}]: target index {v} outside [0, {n})")
        if r not in rel_set:
            violations.append(f"edges[{i}]: relation {r} not in relation set {sorted(rel_set)}")
    if subgraph.labels is not None:
        if len(subgraph.labels) != n:
            violations.append(f"labels: length {len(subgraph.labels)} != node count {n}")
        for i, y in enumerate(subgraph.labels):
            if y not in (0, 1):
                violations.append(f"labels[{i}]: value {y} not in {{0, 1}}")
    return violations


def _validate_feature_rows(raw_rows: Sequence, line_no: int) -> None:
    dims = {len(row) for row in raw_rows if isinstance(row, list)}
    if len(dims) > 1:
        raise DatasetFormatError(f"line {line_no}: feature rows have mixed dimensions {sorted(dims)}")


def degree(subgraph: Subgraph, node: int, relation: Optional[int] = None) -> int:
    """Count edges incident to ``node``, optionally restricted to one relation.

    For directed subgraphs both in- and out-edges count; a self-loop counts
    twice (once per endpoint).
    """
    if not (0 <= node < subgraph.num_nodes):
        raise IndexError(f"node index {node} outside [0, {subgraph.num_nodes})")
    count = 0
    for u, v, r in subgraph.edges:
        if relation is not None and r != relation:
            continue
        if u == node:
            count += 1
        if v == node:
            count += 1
    return count


def degree_vector(subgraph: Subgraph) -> np.ndarray:
    """All node degrees at once (same counting rule as :func:`degree`)."""
    deg = np.zeros(subgraph.num_nodes, dtype=np.int64)
    for u, v, _ in subgraph.edges:
        deg[u] += 1
        deg[v] += 1
    return deg


def neighbor_sets(subgraph: Subgraph) -> list[set[int]]:
    """Undirected adjacency view: neighbors of each node ignoring relation/direction."""
    nbrs: list[set[int]] = [set() for _ in range(subgraph.num_nodes)]
    for u, v, _ in subgraph.edges:
        if u != v:
            nbrs[u].add(v)
            nbrs[v].add(u)
    return nbrs


def connected_components(subgraph: Subgraph, subset: Optional[Iterable[int]] = None) -> list[list[int]]:
    """Connected components (undirected view), optionally within a node subset.

    Components are returned as sorted index lists, ordered by smallest member.
    """
    if subset is None:
        alive = set(range(subgraph.num_nodes))
    else:
        alive = set(subset)
    nbrs = neighbor_sets(subgraph)
    seen: set[int] = set()
    components: list[list[int]] = []
    for start in sorted(alive):
        if start in seen:
            continue
        stack = [start]
        comp = []
        seen.add(start)
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in nbrs[u]:
                if v in alive and v not in seen:
                    seen.add(v)
                    stack.append(v)
        components.append(sorted(comp))
    return components


def induced_subgraph(subgraph: Subgraph, nodes: Sequence[int], new_id: Optional[str] = None) -> Subgraph:
    """Induced subgraph on ``nodes``; indices are remapped to 0..len(nodes)-1."""
    order = sorted(dict.fromkeys(int(i) for i in nodes))
    remap = {old: new for new, old in enumerate(order)}
    kept = tuple(
        (remap[u], remap[v], r)
        for u, v, r in subgraph.edges
        if u in remap and v in remap
    )
    return Subgraph.create(
        id=new_id if new_id is not None else f"{subgraph.id}/induced",
        node_ids=[subgraph.node_ids[i] for i in order],
        x=subgraph.x[order],
        edges=kept,
        relations=subgraph.relations,
        labels=None if subgraph.labels is None else [subgraph.labels[i] for i in order],
        directed=subgraph.directed,
    )


@dataclass(frozen=True)
class Dataset:
    """A collection of subgraphs plus the global relation registry and split tags."""

    subgraphs: tuple[Subgraph, ...]
    relation_registry: tuple[int, ...] = field(default_factory=tuple)
    split_tags: dict = field(default_factory=dict)  # subgraph id -> "labeled" | "unlabeled"

    @staticmethod
    def from_subgraphs(subgraphs: Iterable[Subgraph]) -> "Dataset":
        subs = tuple(subgraphs)
        registry = sorted(set().union(*[set(s.relations) for s in subs]) if subs else set())
        tags = {s.id: (LABELED if s.labels is not None else UNLABELED) for s in subs}
        return Dataset(subgraphs=subs, relation_registry=tuple(registry), split_tags=tags)

    def __len__(self) -> int:
        return len(self.subgraphs)

    def by_id(self, subgraph_id: str) -> Subgraph:
        for s in self.subgraphs:
            if s.id == subgraph_id:
                return s
        raise KeyError(subgraph_id)

    def labeled(self) -> list[Subgraph]:
        return [s for s in self.subgraphs if s.labels is not None]

    def unlabeled(self) -> list[Subgraph]:
        return [s for s in self.subgraphs if s.labels is None]


def _record_from_subgraph(s: Subgraph) -> dict:
    return {
        "id": s.id,
        "node_ids": list(s.node_ids),
        "x": [[float(v) for v in row] for row in s.x],
        "edges": [[u, v, r] for u, v, r in s.edges],
        "relations": list(s.relations),
        "y": None if s.labels is None else list(s.labels),
        "directed": s.directed,
    }


def _subgraph_from_record(rec: dict, line_no: int) -> Subgraph:
    if not isinstance(rec, dict):
        raise DatasetFormatError(f"line {line_no}: record is not a JSON object")
    missing = [k for k in RECORD_KEYS if k not in rec]
    if missing:
        raise DatasetFormatError(f"line {line_no}: missing keys {missing}")
    extra = [k for k in rec if k not in RECORD_KEYS]
    if extra:
        raise DatasetFormatError(f"line {line_no}: unexpected keys {extra}")
    _validate_feature_rows(rec["x"], line_no)
    try:
        edges = [(int(u), int(v), int(r)) for u, v, r in rec["edges"]]
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"line {line_no}: malformed edge entry ({exc})") from exc
    try:
        return Subgraph.create(
            id=rec["id"],
            node_ids=rec["node_ids"],
            x=rec["x"],
            edges=edges,
            relations=rec["relations"],
            labels=rec["y"],
            directed=rec["directed"],
        )
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"line {line_no}: malformed record ({exc})") from exc


def save_dataset(dataset: Dataset, path) -> None:
    """Write one subgraph per line as JSON with the fixed record key order."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset.subgraphs:
            fh.write(json.dumps(_record_from_subgraph(s)) + "\n")


def load_dataset(path) -> Dataset:
    """Read a JSONL dataset; raises :class:`DatasetFormatError` naming the bad line."""
    subgraphs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            subgraphs.append(_subgraph_from_record(rec, line_no))
    return Dataset.from_subgraphs(subgraphs)
