"""Versioned binary model files.

Layout: 8-byte magic, little-endian uint32 version, uint32 header length,
UTF-8 JSON header (network spec, array table, free-form metadata), then
every parameter and running-statistic array in declaration order as
little-endian float32.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .._io import atomic_path
from ..imaging import ImageType
from .network import Network, NetworkSpec

MAGIC = b"EEGRCNN\x00"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


def save_model(net: Network, path, meta: dict | None = None) -> Path:
    arrays = net.named_arrays()
    header = {
        "spec": net.spec.to_dict(),
        "seed": net.seed,
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    with atomic_path(path) as tmp:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", MODEL_VERSION, len(blob)))
            fh.write(blob)
            for _, arr in arrays:
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise ModelFormatError(f"{path}: not a model file")
    raw = fh.read(8)
    if len(raw) != 8:
        raise ModelFormatError(f"{path}: truncated header")
    version, n = struct.unpack("<II", raw)
    if version != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {version}")
    blob = fh.read(n)
    if len(blob) != n:
        raise ModelFormatError(f"{path}: truncated header")
    try:
        return json.loads(blob)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: corrupt header: {exc}") from exc


def load_model(path, image_type=None) -> tuple[Network, dict]:
    """Return ``(network, meta)``; ``image_type`` if given must match the file."""
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        spec = NetworkSpec.from_dict(header["spec"])
        if image_type is not None and spec.image_type != ImageType.parse(image_type).label:
            raise ModelFormatError(
                f"{path}: model is for {spec.image_type} images, not {ImageType.parse(image_type).label}"
            )
        net = Network(spec, seed=header.get("seed", 0))
        expected = {name: arr.shape for name, arr in net.named_arrays()}
        if [a["name"] for a in header["arrays"]] != list(expected):
            raise ModelFormatError(f"{path}: parameter table does not match the network spec")
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            if shape != expected[entry["name"]]:
                raise ModelFormatError(f"{path}: shape mismatch for {entry['name']}: {shape}")
            count = int(np.prod(shape))
            data = fh.read(4 * count)
            if len(data) != 4 * count:
                raise ModelFormatError(f"{path}: truncated parameter data")
            net.set_array(entry["name"], np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32))
        if fh.read(1):
            raise ModelFormatError(f"{path}: trailing data after parameters")
    return net, header.get("meta", {})
