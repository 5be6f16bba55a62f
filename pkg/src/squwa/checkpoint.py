"""Binary tensor container used for model checkpoints and attention dumps.

Layout::

    8 bytes   magic  b"SQUWABIN"
    4 bytes   format version, little-endian uint32
    8 bytes   header length N, little-endian uint64
    N bytes   UTF-8 JSON header {"version", "meta", "tensors": [{name, shape, offset, nbytes}]}
    ...       tensor blocks, little-endian float32, offsets relative to the data start
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from squwa.errors import VersionError

MAGIC = b"SQUWABIN"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def write_blocks(path, tensors: Mapping[str, np.ndarray], meta: dict) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"version": VERSION, "meta": meta, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def read_blocks(path) -> tuple[dict, dict]:
    """Return ``(meta, {name: float32 array})``; raise VersionError on any format problem."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise VersionError(f"{path}: truncated header")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise VersionError(f"{path}: not a squwa binary file")
    if version != VERSION:
        raise VersionError(f"{path}: format version {version}, expected {VERSION}")
    start = _PREFIX.size + hlen
    if len(data) < start:
        raise VersionError(f"{path}: truncated header")
    try:
        header = json.loads(data[_PREFIX.size:start])
    except ValueError as e:
        raise VersionError(f"{path}: corrupt header") from e
    tensors = {}
    for t in header["tensors"]:
        lo = start + t["offset"]
        if lo + t["nbytes"] > len(data):
            raise VersionError(f"{path}: truncated tensor block {t['name']!r}")
        arr = np.frombuffer(data, dtype="<f4", count=t["nbytes"] // 4, offset=lo)
        tensors[t["name"]] = arr.reshape(t["shape"]).copy()
    expected = start + sum(t["nbytes"] for t in header["tensors"])
    if len(data) != expected:
        raise VersionError(f"{path}: {len(data)} bytes, header describes {expected}")
    return header["meta"], tensors


def save_checkpoint(model, path) -> None:
    """Persist a full model or a bare quality model with the config needed to rebuild it."""
    from squwa.sq_model import SQModel

    if isinstance(model, SQModel):
        meta = {"kind": "sq", "sq_model": model.cfg.to_dict()}
    else:
        meta = {"kind": "squwa", "variant": model.vc.to_dict(), "model": model.mc.to_dict(),
                "sq_model": model.sq_model.cfg.to_dict()}
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    write_blocks(path, state, meta)


def load_checkpoint(path):
    """Rebuild the model stored at ``path`` (eval mode, quality branch frozen)."""
    import torch

    from squwa.sq_model import SQModel, SQModelConfig, freeze
    from squwa.variants import ModelConfig, SQUWAModel, VariantConfig

    meta, tensors = read_blocks(path)
    kind = meta.get("kind")
    if kind == "sq":
        model = SQModel(SQModelConfig(**meta["sq_model"]))
    elif kind == "squwa":
        sq = SQModel(SQModelConfig(**meta["sq_model"]))
        model = SQUWAModel(VariantConfig(**meta["variant"]), ModelConfig(**meta["model"]), sq)
    else:
        raise VersionError(f"{path}: unknown checkpoint kind {kind!r}")
    reference = model.state_dict()
    if set(reference) != set(tensors):
        raise VersionError(f"{path}: parameter names do not match the {kind} architecture")
    state = {k: torch.from_numpy(tensors[k]).to(reference[k].dtype) for k in reference}
    model.load_state_dict(state)
    model.eval()
    if kind == "sq":
        freeze(model)
    return model
