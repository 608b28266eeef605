"""Self-describing model container.

A container is a single JSON document::

    {"format": "uvsysid-container", "version": 1, "kind": "...",
     "provenance": {...}, "scalars": {...}, "config": {...},
     "arrays": {"A": {"shape": [d, d], "dtype": "float64", "data": [...]}}}

Arrays are stored row-major.  Floats are written with their shortest
round-trip representation, so save/load is bit-exact.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContainerError

FORMAT = "uvsysid-container"
VERSION = 1


@dataclass
class Container:
    kind: str
    arrays: dict
    scalars: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)


def _check_finite(name, value):
    if isinstance(value, float) and not math.isfinite(value):
        raise ContainerError(f"scalar {name!r} is not finite")


def dumps(container):
    arrays = {}
    for name, a in container.arrays.items():
        a = np.asarray(a, dtype=np.float64)
        if not np.all(np.isfinite(a)):
            raise ContainerError(f"array {name!r} contains non-finite values")
        arrays[name] = {"shape": list(a.shape), "dtype": "float64", "data": a.ravel(order="C").tolist()}
    for k, v in container.scalars.items():
        _check_finite(k, v)
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": container.kind,
        "provenance": container.provenance,
        "scalars": container.scalars,
        "config": container.config,
        "arrays": arrays,
    }
    return json.dumps(doc, allow_nan=False) + "\n"


def loads(text, expect_kind=None):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ContainerError(f"not a model container: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ContainerError("not a model container (missing format header)")
    if doc.get("version") != VERSION:
        raise ContainerError(f"unsupported container version {doc.get('version')!r}")
    kind = doc.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise ContainerError(f"expected a {expect_kind!r} container, found {kind!r}")
    arrays = {}
    for name, entry in doc.get("arrays", {}).items():
        data = np.array(entry["data"], dtype=np.float64)
        arrays[name] = data.reshape(entry["shape"])
    return Container(
        kind=kind,
        arrays=arrays,
        scalars=doc.get("scalars", {}),
        config=doc.get("config", {}),
        provenance=doc.get("provenance", {}),
    )


def save(path, container):
    try:
        Path(path).write_text(dumps(container), encoding="utf-8")
    except OSError as exc:
        raise ContainerError(f"cannot write {path}: {exc}") from exc


def load(path, expect_kind=None):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ContainerError(f"cannot read {path}: {exc}") from exc
    return loads(text, expect_kind)


def peek_kind(path):
    return load(path).kind
