"""Feature-based node anomaly estimation and greedy group extraction.

The estimator scores each node from its features alone: a fitted PCA
projection followed by a small two-layer scorer with a sigmoid head. Scores
live in (0, 1) and are comparable across subgraphs because both the PCA and
the scorer are shared dataset-wide. Greedy density peeling then proposes a
connected high-score node group per subgraph, gated by a minimum average
score and a minimum size.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .graph import Dataset, Subgraph, connected_components

DEFAULT_SCORE_THRESHOLD = 0.4  # minimum average score of an accepted group
DEFAULT_MIN_GROUP_SIZE = 3
# Calibration targets are reconstruction errors min-max scaled between these
# quantiles (clipped); plain min-max lets a single extreme node flatten every
# other target far below the acceptance threshold.
TARGET_QUANTILES = (0.01, 0.99)


@dataclass
class EstimatorParams:
    """Fitted PCA (frozen) plus the trainable two-layer sigmoid scorer."""

    pca_mean: np.ndarray  # (d,)
    pca_basis: np.ndarray  # (d, p), orthonormal columns
    w1: np.ndarray  # (p, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: np.ndarray  # (1,)

    def tensors(self):
        # Trainable tensors only; the PCA stays frozen after fitting.
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]

    def copy(self) -> "EstimatorParams":
        return copy.deepcopy(self)

    @property
    def feature_dim(self) -> int:
        return int(self.pca_mean.shape[0])

    @property
    def num_components(self) -> int:
        return int(self.pca_basis.shape[1])


def _row_normalized_gaussian(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    w = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
    norms = np.linalg.norm(w.reshape(shape[0], -1), axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return (w.reshape(shape[0], -1) / norms).reshape(shape)


def init_estimator(mean: np.ndarray, basis: np.ndarray, hidden: int = 16, seed: int = 0) -> EstimatorParams:
    rng = np.random.default_rng(seed)
    p = basis.shape[1]
    return EstimatorParams(
        pca_mean=np.asarray(mean, dtype=np.float64),
        pca_basis=np.asarray(basis, dtype=np.float64),
        w1=_row_normalized_gaussian(rng, (p, hidden)),
        b1=np.zeros(hidden),
        w2=_row_normalized_gaussian(rng, (hidden, 1))[:, 0],
        b2=np.zeros(1),
    )


def choose_num_components(eigenvalues: np.ndarray, feature_dim: int, cap: int = 16) -> int:
    """Smaller of min(d, cap) and the component count explaining 90% variance."""
    total = float(eigenvalues.sum())
    if total <= 0:
        return 1
    cum = np.cumsum(eigenvalues) / total
    ninety = int(np.searchsorted(cum, 0.9) + 1)
    return max(1, min(feature_dim, cap, ninety))


def fit_pca(features: np.ndarray, components: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-``components`` principal directions of the centered feature matrix.

    Computed through the SVD of the centered data, so the returned basis
    matches the eigenvectors of the covariance matrix with nonincreasing
    eigenvalues. Column signs are fixed so the largest-magnitude entry of each
    direction is positive.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2-d matrix")
    n, d = x.shape
    if components > d:
        raise ValueError(f"components {components} exceeds feature dimension {d}")
    if components < 1:
        raise ValueError("components must be >= 1")
    mean = x.mean(axis=0)
    centered = x - mean
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    basis = vt[:components].T.copy()
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(components)])
    flip[flip == 0] = 1.0
    basis *= flip
    return mean, basis


def pca_eigenvalues(features: np.ndarray) -> np.ndarray:
    """All covariance eigenvalues, nonincreasing (used for component selection)."""
    x = np.asarray(features, dtype=np.float64)
    centered = x - x.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    eig = np.zeros(x.shape[1])
    denom = max(x.shape[0] - 1, 1)
    eig[: s.shape[0]] = (s**2) / denom
    return eig


def reconstruction_errors(params: EstimatorParams, x: np.ndarray) -> np.ndarray:
    """Squared L2 residual of each feature row after projecting onto the basis."""
    centered = np.asarray(x, dtype=np.float64) - params.pca_mean
    z = centered @ params.pca_basis
    residual = centered - z @ params.pca_basis.T
    return np.sum(residual**2, axis=1)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ScoreCache:
    """Intermediates of one scoring pass, consumed by :func:`scorer_backward`."""

    z: np.ndarray  # (n, p) projections
    pre1: np.ndarray  # (n, hidden) first-layer pre-activations
    hid: np.ndarray  # (n, hidden)
    scores: np.ndarray  # (n,)


def score_nodes_with_cache(params: EstimatorParams, subgraph: Subgraph) -> tuple[np.ndarray, ScoreCache]:
    x = subgraph.x
    if x.shape[1] != params.feature_dim:
        raise ValueError(
            f"subgraph {subgraph.id!r} feature dim {x.shape[1]} != estimator dim {params.feature_dim}"
        )
    z = (x - params.pca_mean) @ params.pca_basis
    pre1 = z @ params.w1 + params.b1
    hid = np.maximum(pre1, 0.0)
    scores = _sigmoid(hid @ params.w2 + params.b2[0])
    return scores, ScoreCache(z=z, pre1=pre1, hid=hid, scores=scores)


def score_nodes(params: EstimatorParams, subgraph: Subgraph) -> np.ndarray:
    """Per-node anomaly probabilities in (0, 1), a function of features only."""
    return score_nodes_with_cache(params, subgraph)[0]


def scorer_backward(params: EstimatorParams, cache: ScoreCache, d_scores: np.ndarray) -> dict:
    """Gradients of the scorer tensors given upstream d(loss)/d(scores)."""
    s = cache.scores
    dz2 = d_scores * s * (1.0 - s)  # (n,)
    grads = {
        "w2": cache.hid.T @ dz2,
        "b2": np.array([dz2.sum()]),
    }
    dhid = np.outer(dz2, params.w2)
    dhid[cache.pre1 <= 0] = 0.0
    grads["w1"] = cache.z.T @ dhid
    grads["b1"] = dhid.sum(axis=0)
    return grads


def calibration_targets(params: EstimatorParams, dataset: Dataset) -> dict[str, np.ndarray]:
    """Per-subgraph regression targets: reconstruction error, min-max scaled.

    The scale is computed once over all nodes in the dataset between the 1st
    and 99th error percentiles and clipped to [0, 1]; a degenerate scale
    (identical errors everywhere) maps every target to 0.
    """
    errors = {s.id: reconstruction_errors(params, s.x) for s in dataset.subgraphs}
    pooled = np.concatenate(list(errors.values())) if errors else np.zeros(0)
    if pooled.size == 0:
        raise ValueError("cannot calibrate on an empty dataset")
    lo = float(np.quantile(pooled, TARGET_QUANTILES[0]))
    hi = float(np.quantile(pooled, TARGET_QUANTILES[1]))
    if hi - lo < 1e-12:
        return {sid: np.zeros_like(e) for sid, e in errors.items()}
    return {sid: np.clip((e - lo) / (hi - lo), 0.0, 1.0) for sid, e in errors.items()}


def calibrate_estimator(
    params: EstimatorParams,
    dataset: Dataset,
    epochs: int,
    lr: float = 0.5,
) -> EstimatorParams:
    """Train the scorer to regress toward normalized reconstruction errors.

    Returns a new parameter set; ``epochs=0`` returns an identical copy. One
    epoch is a full sequential pass over the dataset with per-subgraph
    mean-squared-error steps.
    """
    out = params.copy()
    if epochs <= 0:
        return out
    targets = calibration_targets(out, dataset)
    for _ in range(epochs):
        for s in dataset.subgraphs:
            if s.num_nodes == 0:
                continue
            scores, cache = score_nodes_with_cache(out, s)
            d_scores = 2.0 * (scores - targets[s.id]) / s.num_nodes
            grads = scorer_backward(out, cache, d_scores)
            for name, a in out.tensors():
                a -= lr * grads[name]
    return out


def calibration_loss(params: EstimatorParams, dataset: Dataset) -> float:
    """Mean squared calibration error over all subgraphs (monitoring only)."""
    targets = calibration_targets(params, dataset)
    total, count = 0.0, 0
    for s in dataset.subgraphs:
        if s.num_nodes == 0:
            continue
        scores = score_nodes(params, s)
        total += float(np.sum((scores - targets[s.id]) ** 2))
        count += s.num_nodes
    return total / max(count, 1)


@dataclass(frozen=True)
class PeelStep:
    """One greedy removal: node taken out, remaining size, objective after."""

    removed: Optional[int]  # None marks the initial full set
    size: int
    objective: float


@dataclass(frozen=True)
class ExtractedGroup:
    """Accepted candidate group: connected node subset with its score average."""

    nodes: tuple[int, ...]
    average_score: float
    trace: tuple[PeelStep, ...]


def peel_objective(subgraph: Subgraph, scores: np.ndarray, subset: Sequence[int], edge_weight: float) -> float:
    """Density objective (score mass + weighted inner-edge mass) / size."""
    members = set(int(i) for i in subset)
    if not members:
        return 0.0
    score_sum = float(np.sum(scores[sorted(members)]))
    inner = sum(1 for u, v, _ in subgraph.edges if u in members and v in members)
    return (score_sum + edge_weight * inner) / len(members)


def default_edge_weight(subgraph: Subgraph) -> float:
    if not subgraph.edges:
        return 0.0
    deg = np.zeros(subgraph.num_nodes, dtype=np.int64)
    for u, v, _ in subgraph.edges:
        deg[u] += 1
        deg[v] += 1
    return 1.0 / float(deg.max())


def extract_group(
    subgraph: Subgraph,
    scores: np.ndarray,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
    min_size: int = DEFAULT_MIN_GROUP_SIZE,
    edge_weight: Optional[float] = None,
) -> Optional[ExtractedGroup]:
    """Greedy density peeling for a connected high-anomaly node group.

    Starting from the full node set, repeatedly drop the node with the
    smallest marginal contribution (score plus weighted surviving incident
    edges), recording the objective after every removal. The best recorded
    subset of size >= ``min_size`` is restricted to its largest connected
    component; the result is accepted only if that component still has
    >= ``min_size`` nodes and plain average score >= ``score_threshold``.
    Returns ``None`` on rejection.
    """
    n = subgraph.num_nodes
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[0] != n:
        raise ValueError(f"scores length {scores.shape[0]} != node count {n}")
    if n == 0:
        return None
    lam = default_edge_weight(subgraph) if edge_weight is None else float(edge_weight)

    alive = set(range(n))
    # Incident edge count within the alive set, one count per stored edge.
    deg_alive = np.zeros(n, dtype=np.int64)
    incident: list[list[int]] = [[] for _ in range(n)]
    for idx, (u, v, _) in enumerate(subgraph.edges):
        deg_alive[u] += 1
        if v != u:
            deg_alive[v] += 1
        incident[u].append(idx)
        if v != u:
            incident[v].append(idx)
    edge_alive = [True] * len(subgraph.edges)

    score_sum = float(scores.sum())
    edge_count = len(subgraph.edges)
    objective = (score_sum + lam * edge_count) / n
    trace = [PeelStep(removed=None, size=n, objective=objective)]
    best_obj, best_set = (objective, frozenset(alive)) if n >= min_size else (-np.inf, None)

    while len(alive) > 1:
        victim = min(alive, key=lambda u: (scores[u] + lam * deg_alive[u], u))
        alive.remove(victim)
        score_sum -= float(scores[victim])
        for idx in incident[victim]:
            if edge_alive[idx]:
                edge_alive[idx] = False
                edge_count -= 1
                u, v, _ = subgraph.edges[idx]
                other = v if u == victim else u
                if other != victim:
                    deg_alive[other] -= 1
        deg_alive[victim] = 0
        objective = (score_sum + lam * edge_count) / len(alive)
        trace.append(PeelStep(removed=victim, size=len(alive), objective=objective))
        if len(alive) >= min_size and objective > best_obj:
            best_obj, best_set = objective, frozenset(alive)

    if best_set is None:
        return None
    components = connected_components(subgraph, subset=best_set)
    component = max(components, key=len)  # earliest (smallest min index) wins ties
    if len(component) < min_size:
        return None
    average = float(np.mean(scores[component]))
    if average < score_threshold:
        return None
    return ExtractedGroup(nodes=tuple(component), average_score=average, trace=tuple(trace))


def best_recorded_objective(trace: Sequence[PeelStep], min_size: int) -> float:
    """Best peel objective among recorded states of size >= ``min_size``."""
    eligible = [step.objective for step in trace if step.size >= min_size]
    return max(eligible) if eligible else float("-inf")


def estimator_to_doc(params: EstimatorParams) -> dict:
    """Single JSON-ready document holding the PCA and scorer layers losslessly."""
    return {
        "pca_mean": params.pca_mean.tolist(),
        "pca_basis": params.pca_basis.tolist(),
        "scorer": {
            "w1": params.w1.tolist(),
            "b1": params.b1.tolist(),
            "w2": params.w2.tolist(),
            "b2": params.b2.tolist(),
        },
    }


def estimator_from_doc(doc: dict) -> EstimatorParams:
    scorer = doc["scorer"]
    return EstimatorParams(
        pca_mean=np.asarray(doc["pca_mean"], dtype=np.float64),
        pca_basis=np.asarray(doc["pca_basis"], dtype=np.float64),
        w1=np.asarray(scorer["w1"], dtype=np.float64),
        b1=np.asarray(scorer["b1"], dtype=np.float64),
        w2=np.asarray(scorer["w2"], dtype=np.float64),
        b2=np.asarray(scorer["b2"], dtype=np.float64),
    )
