"""Single-file checkpoints: JSON header followed by a float64 parameter payload.

Layout::

    b"PXDMLCK1"            8-byte magic
    uint64 little-endian   header length in bytes
    header                 UTF-8 JSON
    payload                little-endian float64: every layer's W (row-major) then b,
                           then the proxy matrix (row-major)
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import EmbeddingModel
from .errors import CheckpointError, ProxyDMLError
from .proxies import ProxySet

MAGIC = b"PXDMLCK1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: EmbeddingModel
    proxies: ProxySet
    config: dict | None
    header: dict


def _payload(model: EmbeddingModel, proxies: ProxySet) -> bytes:
    parts = [a.ravel() for a in model.parameters()] + [proxies.vectors.ravel()]
    return np.concatenate(parts).astype("<f8").tobytes()


def encode_checkpoint(model: EmbeddingModel, proxies: ProxySet, config: dict | None = None) -> bytes:
    payload = _payload(model, proxies)
    header = {
        "format": FORMAT_VERSION,
        "model": {
            "layers": [
                {"in": w.shape[1], "out": w.shape[0], "activation": act}
                for w, act in zip(model.weights, model.activations)
            ],
            "embed_dim": model.embed_dim,
            "seed": model.seed,
        },
        "proxies": {
            "shape": list(proxies.vectors.shape),
            "mode": proxies.mode,
            "label_to_proxy": None if proxies.label_to_proxy is None else proxies.label_to_proxy.tolist(),
            "proxy_per_class_ratio": proxies.proxy_per_class_ratio,
        },
        "config": config,
        "payload": {"num_values": len(payload) // 8, "sha256": hashlib.sha256(payload).hexdigest()},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + payload


def save_checkpoint(path: str | Path, model: EmbeddingModel, proxies: ProxySet, config: dict | None = None) -> None:
    """Write atomically, so an interrupted run keeps the previous checkpoint."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(model, proxies, config))
    os.replace(tmp, path)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (n_head,) = struct.unpack("<Q", blob[8:16])
    if 16 + n_head > len(blob):
        raise CheckpointError("truncated header")
    try:
        header = json.loads(blob[16:16 + n_head].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    payload = blob[16 + n_head:]
    try:
        if header["format"] != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format {header['format']}")
        if len(payload) != 8 * header["payload"]["num_values"]:
            raise CheckpointError("payload length does not match header")
        if hashlib.sha256(payload).hexdigest() != header["payload"]["sha256"]:
            raise CheckpointError("payload checksum mismatch")
        values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        weights, biases, acts = [], [], []
        pos = 0
        for layer in header["model"]["layers"]:
            n_in, n_out = int(layer["in"]), int(layer["out"])
            weights.append(values[pos:pos + n_in * n_out].reshape(n_out, n_in).copy())
            pos += n_in * n_out
            biases.append(values[pos:pos + n_out].copy())
            pos += n_out
            acts.append(layer["activation"])
        model = EmbeddingModel(weights, biases, acts, header["model"].get("seed"))
        ph = header["proxies"]
        rows, cols = ph["shape"]
        vectors = values[pos:pos + rows * cols].reshape(rows, cols).copy()
        if pos + rows * cols != values.size:
            raise CheckpointError("payload has trailing values")
        proxies = ProxySet(vectors, ph["mode"], ph["label_to_proxy"], ph["proxy_per_class_ratio"])
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, ProxyDMLError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    return Checkpoint(model, proxies, header.get("config"), header)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from None
    return decode_checkpoint(blob)
