"""Checkpoint files: one JSON header line plus a float64 parameter block.

The header carries dimensions, relation ids, the tensor manifest in declared
order, and the estimator document (its parameters are small and live as JSON
numbers, which round-trip float64 exactly). Encoder and bilinear-head tensors
follow as raw little-endian float64 in manifest order, so reloading is
bit-exact.
"""

from __future__ import annotations

import json
from typing import Optional

import numpy as np

from .encoder import EncoderParams
from .estimator import EstimatorParams, estimator_from_doc, estimator_to_doc
from .finetune import ContextHead

FORMAT_TAG = "gfm4ga-checkpoint/1"


class CheckpointFormatError(ValueError):
    pass


def _block_tensors(encoder: EncoderParams, head: Optional[ContextHead]):
    tensors = list(encoder.tensors())
    if head is not None:
        tensors.extend((f"head.{name}", a) for name, a in head.tensors())
    return tensors


def save_checkpoint(
    path,
    encoder: EncoderParams,
    estimator: EstimatorParams,
    head: Optional[ContextHead] = None,
    meta: Optional[dict] = None,
) -> None:
    tensors = _block_tensors(encoder, head)
    header = {
        "format": FORMAT_TAG,
        "encoder": {
            "relation_ids": list(encoder.relation_ids),
            "layer_dims": list(encoder.layer_dims),
            "dev_hidden": int(encoder.dev_b1.shape[0]),
        },
        "estimator": estimator_to_doc(estimator),
        "head_dim": None if head is None else int(head.bilinear.shape[0]),
        "manifest": [[name, list(a.shape)] for name, a in tensors],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, a in tensors:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[EncoderParams, EstimatorParams, Optional[ContextHead], dict]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"{path}: unreadable checkpoint header ({exc})") from exc
        if header.get("format") != FORMAT_TAG:
            raise CheckpointFormatError(f"{path}: unknown checkpoint format {header.get('format')!r}")
        block = fh.read()

    enc_meta = header["encoder"]
    relation_ids = tuple(int(r) for r in enc_meta["relation_ids"])
    layer_dims = tuple(int(d) for d in enc_meta["layer_dims"])
    dev_hidden = int(enc_meta["dev_hidden"])
    num_layers = len(layer_dims) - 1
    encoder = EncoderParams(
        relation_ids=relation_ids,
        layer_dims=layer_dims,
        rel_weights=[
            {rid: np.zeros((layer_dims[l], layer_dims[l + 1])) for rid in relation_ids}
            for l in range(num_layers)
        ],
        self_weights=[np.zeros((layer_dims[l], layer_dims[l + 1])) for l in range(num_layers)],
        dev_w1=np.zeros((layer_dims[0], dev_hidden)),
        dev_b1=np.zeros(dev_hidden),
        dev_w2=np.zeros(dev_hidden),
        dev_b2=np.zeros(1),
    )
    head = None if header["head_dim"] is None else ContextHead.zeros(int(header["head_dim"]))

    tensors = dict(_block_tensors(encoder, head))
    offset = 0
    for name, shape in header["manifest"]:
        if name not in tensors:
            raise CheckpointFormatError(f"{path}: manifest names unknown tensor {name!r}")
        size = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(block, dtype="<f8", count=size, offset=offset)
        offset += size * 8
        target = tensors[name]
        if list(target.shape) != list(shape):
            raise CheckpointFormatError(f"{path}: tensor {name!r} shape mismatch")
        target.flat[:] = raw
    if offset != len(block):
        raise CheckpointFormatError(f"{path}: parameter block length mismatch")

    return encoder, estimator_from_doc(header["estimator"]), head, header.get("meta", {})
