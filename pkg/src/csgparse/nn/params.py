"""Parameter storage, SGD with momentum, and the checkpoint file format.

Checkpoint layout (all integers little-endian)::

    b"CSGCKPT\\0"  magic
    uint32         format version
    uint64         manifest length in bytes
    manifest       UTF-8 JSON: {"entries": [{name, shape, offset, kind}], "step", "meta"}
    payload        concatenated float64 little-endian arrays
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from collections import OrderedDict

import numpy as np

from .autodiff import Tensor, parameter

MAGIC = b"CSGCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ParameterStore:
    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.momentum: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = parameter(value)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(t.grad ** 2)) for t in self.params.values()
                                 if t.grad is not None)))

    def scale_grads(self, factor: float) -> None:
        for t in self.params.values():
            if t.grad is not None:
                t.grad = t.grad * factor

    def add_grads(self, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            t = self.params[name]
            t.grad = g if t.grad is None else t.grad + g

    def take_grads(self) -> dict[str, np.ndarray]:
        out = {n: t.grad for n, t in self.params.items() if t.grad is not None}
        self.zero_grad()
        return out

    def n_values(self) -> int:
        return sum(t.value.size for t in self.params.values())


def sgd_momentum_step(store: ParameterStore, lr: float, momentum: float,
                      allow_missing: bool = False) -> None:
    """``v <- momentum * v + g``; ``theta <- theta - lr * v``; gradients cleared."""
    for name, t in store.params.items():
        g = t.grad
        if g is None:
            if not allow_missing:
                raise ValueError(f"parameter {name!r} has no gradient")
            g = np.zeros_like(t.value)
        v = store.momentum.get(name)
        v = g if v is None else momentum * v + g
        store.momentum[name] = v
        t.value = t.value - lr * v
        t.grad = None
    store.step += 1


def save_checkpoint(path, store: ParameterStore, meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for kind, source in (("param", {n: t.value for n, t in store.params.items()}),
                         ("momentum", store.momentum)):
        for name, arr in source.items():
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "kind": kind})
            chunks.append(data)
            offset += len(data)
    manifest = json.dumps({"entries": entries, "step": store.step, "meta": meta or {}},
                          sort_keys=True).encode()
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<IQ", VERSION, len(manifest)))
            f.write(manifest)
            for c in chunks:
                f.write(c)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Return ``(manifest, params, momentum)`` arrays from a checkpoint file."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, mlen = struct.unpack_from("<IQ", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    manifest = json.loads(blob[start:start + mlen].decode())
    payload = memoryview(blob)[start + mlen:]
    params, mom = {}, {}
    for e in manifest["entries"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=e["offset"])
        arr = arr.reshape(e["shape"]).astype(np.float64)
        (params if e["kind"] == "param" else mom)[e["name"]] = arr
    return manifest, params, mom


def load_into(store: ParameterStore, path) -> dict:
    manifest, params, mom = read_checkpoint(path)
    missing = set(store.params) - set(params)
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    for name, t in store.params.items():
        if params[name].shape != t.shape:
            raise CheckpointError(f"{path}: {name} has shape {params[name].shape}, expected {t.shape}")
        t.value = params[name]
        t.grad = None
    store.momentum = {n: v for n, v in mom.items() if n in store.params}
    store.step = manifest["step"]
    return manifest["meta"]
