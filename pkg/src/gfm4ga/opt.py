"""Flat-vector views over parameter sets, plus the first-order update step.

Every trainable parameter object in this package exposes
``tensors() -> list[(name, ndarray)]`` in a fixed declared order; gradients
travel as ``{name: ndarray}`` dicts keyed identically. That convention keeps
checkpointing, L2 anchoring, clipping, and finite-difference checks uniform.
"""

from __future__ import annotations

import numpy as np


def params_to_vector(params) -> np.ndarray:
    return np.concatenate([a.ravel() for _, a in params.tensors()]) if params.tensors() else np.zeros(0)


def set_params_from_vector(params, vec: np.ndarray) -> None:
    """Write ``vec`` back into the parameter arrays in place."""
    offset = 0
    for _, a in params.tensors():
        a.flat[:] = vec[offset : offset + a.size]
        offset += a.size
    if offset != vec.size:
        raise ValueError(f"vector length {vec.size} does not match parameter count {offset}")


def grads_to_vector(params, grads: dict) -> np.ndarray:
    parts = []
    for name, a in params.tensors():
        g = grads.get(name)
        parts.append(np.zeros(a.size) if g is None else np.asarray(g).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def zero_grads(params) -> dict:
    return {name: np.zeros_like(a) for name, a in params.tensors()}


def accumulate_grads(total: dict, part: dict, scale: float = 1.0) -> None:
    for name, g in part.items():
        if name in total:
            total[name] += scale * g
        else:
            total[name] = scale * np.array(g)


def global_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g)))
    return float(np.sqrt(total))


def clip_grads_(grads: dict, max_norm: float) -> float:
    """Scale gradients in place to ``max_norm`` if they exceed it; returns the norm."""
    norm = global_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def sgd_step_(params, grads: dict, lr: float) -> None:
    for name, a in params.tensors():
        g = grads.get(name)
        if g is not None:
            a -= lr * g


def l2_distance(params_a, params_b) -> float:
    """Euclidean norm of the flattened parameter difference."""
    va = params_to_vector(params_a)
    vb = params_to_vector(params_b)
    if va.shape != vb.shape:
        raise ValueError("parameter sets have different shapes")
    return float(np.linalg.norm(va - vb))


def l2_distance_grads(params, reference, coeff: float = 1.0) -> tuple[float, dict]:
    """Value and gradient of ``coeff * ||params - reference||_2``.

    The norm is not differentiable at zero distance; the subgradient 0 is used
    there so optimization can start exactly at the reference point.
    """
    diff = params_to_vector(params) - params_to_vector(reference)
    norm = float(np.linalg.norm(diff))
    grads = {}
    if norm > 0.0:
        gvec = (coeff / norm) * diff
        offset = 0
        for name, a in params.tensors():
            grads[name] = gvec[offset : offset + a.size].reshape(a.shape)
            offset += a.size
    else:
        grads = zero_grads(params)
    return coeff * norm, grads
