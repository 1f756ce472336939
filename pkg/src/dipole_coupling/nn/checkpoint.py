"""JSON checkpoints.

Layout::

    {"schema_version": 1, "seed": ..., "epoch": ..., "loss": ...,
     "optimizer": {...}, "layers": [{"name", "kind", "activation"?,
     "params": {key: {"shape": [...], "data": [...]}}}], "extra": {...}}

Floats go through ``repr`` so parameters round-trip bit for bit.
"""
import hashlib
import json

import numpy as np

from .core import Conv2d, Dense
from .lstm import LSTMLayer

SCHEMA_VERSION = 1


def _array_doc(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _array(doc):
    return np.asarray(doc["data"], dtype=np.float64).reshape(doc["shape"])


def layer_doc(name, layer):
    if isinstance(layer, Dense):
        kind = "dense"
    elif isinstance(layer, LSTMLayer):
        kind = "lstm"
    elif isinstance(layer, Conv2d):
        kind = "conv2d"
    else:
        raise TypeError(f"cannot serialise {type(layer).__name__}")
    doc = {"name": name, "kind": kind,
           "params": {k: _array_doc(v) for k, v in layer.params.items()}}
    if kind == "dense":
        doc["activation"] = layer.activation
    if kind == "conv2d":
        doc["trainable"] = layer.trainable
    return doc


def layer_from_doc(doc):
    p = {k: _array(v) for k, v in doc["params"].items()}
    if doc["kind"] == "dense":
        return Dense(p["w"], p["b"], doc["activation"])
    if doc["kind"] == "lstm":
        return LSTMLayer(p["wx"], p["wh"], p["b"])
    if doc["kind"] == "conv2d":
        return Conv2d(p["k"], doc.get("trainable", True))
    raise ValueError(f"unknown layer kind {doc['kind']!r}")


def layers_doc(layers):
    return [layer_doc(name, layer) for name, layer in layers.items()]


def layers_from_doc(docs):
    return {d["name"]: layer_from_doc(d) for d in docs}


def checkpoint_doc(layers, *, seed, epoch, loss, optimizer=None, extra=None):
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "epoch": epoch,
        "loss": loss,
        "optimizer": optimizer or {},
        "layers": layers_doc(layers),
        "extra": extra or {},
    }


def dumps(doc):
    return json.dumps(doc, sort_keys=True)


def digest(doc):
    return hashlib.sha256(dumps(doc).encode()).hexdigest()[:16]


def save(path, doc):
    with open(path, "w") as fh:
        fh.write(dumps(doc))


def load(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {doc.get('schema_version')!r}")
    return doc
