"""Checkpoint wire format.

Layout: bytes "MSRN" | u8 version=1 | u32 little-endian JSON header length |
UTF-8 JSON header | all parameters as contiguous little-endian float64 in
manifest order.  The header carries the model spec, init scheme, training
metadata (including fitted band statistics) and a parameter manifest of
(name, shape, element offset) in the registry's fixed topological order, so
a load reproduces the byte-exact parameter set.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BadMagicError, DataError, TruncatedFileError
from .model import Model, ModelSpec, build_model

MAGIC = b"MSRN"
VERSION = 1
INIT_SCHEME = "gaussian-fan-in"  # std = sqrt(2 / fan_in), biases 0, BN (1, 0)


def save_checkpoint(path, model: Model, training: Optional[dict] = None) -> None:
    manifest = []
    offset = 0
    chunks = []
    for name, tensor in model.params.items():
        manifest.append({"name": name, "shape": list(tensor.shape),
                         "offset": offset})
        offset += tensor.size
        chunks.append(tensor.data.astype("<f8").tobytes())
    header = {
        "model_spec": model.spec.to_dict(),
        "init_scheme": INIT_SCHEME,
        "training": training or {},
        "manifest": manifest,
        "total_elements": offset,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)


@dataclass
class Checkpoint:
    spec: ModelSpec
    header: dict
    payload: np.ndarray  # flat float64 parameter block

    @property
    def training(self) -> dict:
        return self.header.get("training", {})

    def band_stats(self):
        """Fitted (mean, std) arrays, or None if training did not standardize."""
        t = self.training
        if t.get("band_mean") is None:
            return None
        return (np.asarray(t["band_mean"], dtype=np.float64),
                np.asarray(t["band_std"], dtype=np.float64))

    def restore(self) -> Model:
        """Rebuild the model and load every tensor bit-exactly."""
        model = build_model(self.spec, np.random.default_rng(0))
        by_name = {m["name"]: m for m in self.header["manifest"]}
        for name, tensor in model.params.items():
            meta = by_name.pop(name, None)
            if meta is None:
                raise DataError(f"checkpoint manifest is missing parameter {name!r}")
            if tuple(meta["shape"]) != tensor.shape:
                raise DataError(
                    f"checkpoint parameter {name!r} has shape {meta['shape']}, "
                    f"model expects {list(tensor.shape)}")
            start = meta["offset"]
            tensor.data[...] = self.payload[start:start + tensor.size].reshape(tensor.shape)
        if by_name:
            raise DataError(
                f"checkpoint carries unknown parameters: {sorted(by_name)}")
        return model


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise BadMagicError(f"not a checkpoint (magic {blob[:4]!r})")
    if len(blob) < 9:
        raise TruncatedFileError("checkpoint header truncated")
    version, = struct.unpack_from("<B", blob, 4)
    if version != VERSION:
        raise BadMagicError(f"unsupported checkpoint version {version}")
    header_len, = struct.unpack_from("<I", blob, 5)
    if len(blob) < 9 + header_len:
        raise TruncatedFileError("checkpoint JSON header truncated")
    header = json.loads(blob[9:9 + header_len].decode())
    total = header["total_elements"]
    expected = 9 + header_len + total * 8
    if len(blob) != expected:
        raise TruncatedFileError(
            f"checkpoint payload is {len(blob) - 9 - header_len} bytes, "
            f"expected {total * 8}")
    payload = np.frombuffer(blob, dtype="<f8", offset=9 + header_len).copy()
    spec = ModelSpec.from_dict(header["model_spec"])
    return Checkpoint(spec=spec, header=header, payload=payload)
