"""Single-file binary checkpoints.

Layout: 8-byte magic, u64 little-endian header length, UTF-8 JSON header,
then the raw little-endian tensor payload in manifest order. The header
carries everything needed to rebuild the model without guessing: format
version, model kind and config, adapter spec (or null), vocabulary, tensor
manifest (name/dtype/shape/offset), plus free-form training metadata.

Loading a truncated or tampered file raises CheckpointError rather than
returning a half-built model.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import LoraSpec, ModelConfig, attach_lora, init_model
from .tokenizer import Vocab

MAGIC = b"SCRBLAB1"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path: str | Path, model, vocab: Vocab,
                    meta: dict | None = None) -> None:
    path = Path(path)
    names: list[str] = []
    arrays: list[np.ndarray] = []
    for name, p in model.named_parameters():
        names.append(name)
        arrays.append(p.data)
    manifest = []
    offset = 0
    blobs = []
    for name, arr in zip(names, arrays):
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {dtype} for {name}")
        blob = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        manifest.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "config": model.config.to_dict(),
        "lora": model.lora_spec.to_dict() if model.lora_spec else None,
        "vocab": vocab.to_json(),
        "tensors": manifest,
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def read_header(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 8:
        raise CheckpointError(f"{path} is too short to be a checkpoint")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} has wrong magic bytes")
    (header_len,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    if len(raw) < start + header_len:
        raise CheckpointError(f"{path} is truncated inside the header")
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} header is not valid JSON: {exc}") from exc
    for key in ("format_version", "kind", "config", "lora", "vocab", "tensors"):
        if key not in header:
            raise CheckpointError(f"{path} header is missing '{key}'")
    if header["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format_version {header['format_version']}, expected {FORMAT_VERSION}"
        )
    header["_payload_start"] = start + header_len
    return header


def load_checkpoint(path: str | Path):
    """Rebuild (model, vocab, meta) from disk; bit-exact with what was saved."""
    path = Path(path)
    header = read_header(path)
    raw = path.read_bytes()
    payload_start = header["_payload_start"]

    config = ModelConfig.from_dict(header["config"])
    saved_dtypes = {entry["dtype"] for entry in header["tensors"]}
    dtype = np.float64 if saved_dtypes == {"float64"} else np.float32
    model = init_model(config, dtype=dtype)
    if header["kind"] != model.kind:
        raise CheckpointError(
            f"{path} header kind={header['kind']} does not match config"
        )
    if header["lora"] is not None:
        attach_lora(model, LoraSpec.from_dict(header["lora"]), dtype=dtype)
    vocab = Vocab.from_json(header["vocab"])

    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        lo = payload_start + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(raw):
            raise CheckpointError(f"{path} is truncated inside the payload")
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path} declares unknown dtype {entry['dtype']}")
        arr = np.frombuffer(raw[lo:hi], dtype=dtype).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(entry["dtype"])
    try:
        model.load_state_arrays(arrays)
    except ValueError as exc:
        raise CheckpointError(f"{path} tensor manifest mismatch: {exc}") from exc
    return model, vocab, header.get("meta", {})


def parameters_digest(model, trainable: bool | None = None) -> str:
    """sha256 over (name, bytes) of parameters, optionally filtered by
    trainability. Useful for asserting that frozen weights never moved."""
    h = hashlib.sha256()
    for name, p in sorted(model.named_parameters(), key=lambda kv: kv[0]):
        if trainable is not None and p.requires_grad != trainable:
            continue
        h.update(name.encode("utf-8"))
        h.update(str(p.data.dtype).encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
