"""Single-file checkpoints: a JSON manifest followed by raw tensor bytes.

Layout: 8-byte magic, little-endian uint32 manifest length, UTF-8 JSON
manifest, then the concatenated little-endian tensor payload. The manifest
records the format version, a kind tag, a config snapshot, and a tensor
directory mapping each name to shape, dtype, and byte offset into the
payload. Offsets never overlap, and load(save(x)) is bit-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"STRAFCKP"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, kind: str, config: dict, tensors: dict[str, np.ndarray]) -> None:
    entries = {}
    payload = bytearray()
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        dtype_name = arr.dtype.name
        if dtype_name not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {dtype_name} for {name!r}")
        raw = arr.astype(_DTYPES[dtype_name]).tobytes()
        entries[name] = {"shape": list(arr.shape), "dtype": dtype_name,
                         "offset": len(payload), "nbytes": len(raw)}
        payload.extend(raw)
    manifest = {"format_version": FORMAT_VERSION, "kind": kind,
                "config": config, "tensors": entries}
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path, expect_kind: str | None = None
                    ) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (config snapshot, tensors). Validates offsets and the kind tag."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (mlen,) = struct.unpack("<I", data[8:12])
    if 12 + mlen > len(data):
        raise CheckpointError("manifest length exceeds file size")
    try:
        manifest = json.loads(data[12:12 + mlen].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {manifest.get('format_version')}")
    if expect_kind is not None and manifest.get("kind") != expect_kind:
        raise CheckpointError(
            f"expected checkpoint kind {expect_kind!r}, got {manifest.get('kind')!r}")

    payload = data[12 + mlen:]
    spans = []
    tensors: dict[str, np.ndarray] = {}
    for name, entry in manifest["tensors"].items():
        off, nbytes = entry["offset"], entry["nbytes"]
        if off < 0 or off + nbytes > len(payload):
            raise CheckpointError(f"tensor {name!r} offset out of bounds")
        spans.append((off, off + nbytes, name))
        arr = np.frombuffer(payload[off:off + nbytes], dtype=_DTYPES[entry["dtype"]])
        tensors[name] = arr.reshape(entry["shape"]).astype(entry["dtype"])
    spans.sort()
    for (a0, a1, na), (b0, b1, nb) in zip(spans, spans[1:]):
        if b0 < a1:
            raise CheckpointError(f"tensors {na!r} and {nb!r} overlap in the payload")
    return manifest["config"], tensors
