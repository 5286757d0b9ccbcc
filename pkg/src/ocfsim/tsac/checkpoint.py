"""Versioned binary container for network parameters; bit-exact round-trip.

Layout: 8-byte magic, uint32 little-endian header length, UTF-8 JSON header
(format version, NetConfig fields, ordered tensor records with name/shape/
section), then the raw tensor payload: row-major float64 little-endian in
exactly the header's order. Live parameters come first, then the target
critic head copies.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .net import NetConfig, PolicyNet, param_shapes

MAGIC = b"TSACNET1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised on malformed, truncated, or incompatible checkpoint files."""


def save_checkpoint(net: PolicyNet, path: str) -> None:
    cfg = net.config
    order = list(param_shapes(cfg))
    records = [{"name": n, "shape": list(net.params[n].shape), "section": "live"}
               for n in order]
    records += [{"name": n, "shape": list(net.target[n].shape), "section": "target"}
                for n in sorted(net.target)]
    header = {
        "version": FORMAT_VERSION,
        "config": {
            "d_model": cfg.d_model, "n_heads": cfg.n_heads,
            "n_layers": cfg.n_layers, "hidden": cfg.hidden,
            "agent_dim": cfg.agent_dim, "cand_dim": cfg.cand_dim,
        },
        "tensors": records,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for rec in records:
            source = net.params if rec["section"] == "live" else net.target
            fh.write(np.ascontiguousarray(source[rec["name"]], dtype="<f8").tobytes())


def load_checkpoint(path: str) -> PolicyNet:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 4 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('version')!r}")
    cfg = NetConfig(**header["config"])
    expected = param_shapes(cfg)

    params: dict[str, np.ndarray] = {}
    target: dict[str, np.ndarray] = {}
    offset = start + hlen
    for rec in header["tensors"]:
        shape = tuple(rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated tensor {rec['name']}")
        arr = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
        if rec["section"] == "live":
            if rec["name"] not in expected or shape != expected[rec["name"]]:
                raise CheckpointError(
                    f"{path}: tensor {rec['name']} has shape {shape}, "
                    f"config expects {expected.get(rec['name'])}")
            params[rec["name"]] = arr
        else:
            target[rec["name"]] = arr
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)[:3]}")
    return PolicyNet(config=cfg, params=params, target=target)
