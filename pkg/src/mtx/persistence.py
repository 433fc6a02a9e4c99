"""Named-tensor checkpoints.

File layout::

    [8 bytes]  little-endian uint64 manifest length L
    [L bytes]  UTF-8 JSON manifest: name -> {dtype, shape, offset, nbytes}
    [payload]  raw little-endian float32 tensors, offsets relative to payload start

Architecture configuration lives next to the checkpoint in ``{path}.json``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import torch

_HEADER = struct.Struct("<Q")
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    """Raised for unreadable or inconsistent checkpoint files."""


def _atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensors(tensors: dict) -> bytes:
    manifest = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        t = tensors[name]
        if isinstance(t, torch.Tensor):
            t = t.detach().cpu().numpy()
        arr = np.ascontiguousarray(t)
        if arr.dtype.kind != "f":
            raise CheckpointError(f"tensor {name!r}: only float tensors can be stored, got {arr.dtype}")
        raw = arr.astype(_F32, copy=False).tobytes()
        manifest[name] = {"dtype": "f32", "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(len(header)) + header + b"".join(chunks)


def decode_tensors(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < _HEADER.size:
        raise CheckpointError("corrupt manifest: file shorter than header")
    (length,) = _HEADER.unpack_from(data)
    start = _HEADER.size + length
    if start > len(data):
        raise CheckpointError("corrupt manifest: declared length exceeds file size")
    try:
        manifest = json.loads(data[_HEADER.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt manifest: {e}") from None
    if not isinstance(manifest, dict):
        raise CheckpointError("corrupt manifest: expected a JSON object")

    payload = memoryview(data)[start:]
    out = {}
    spans = []
    for name, entry in manifest.items():
        try:
            dtype, shape = entry["dtype"], [int(s) for s in entry["shape"]]
            offset, nbytes = int(entry["offset"]), int(entry["nbytes"])
        except (KeyError, TypeError, ValueError):
            raise CheckpointError(f"corrupt manifest: bad entry for {name!r}") from None
        if dtype != "f32":
            raise CheckpointError(f"tensor {name!r}: unsupported dtype {dtype!r}")
        if nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"corrupt manifest: nbytes of {name!r} does not match its shape")
        if offset < 0 or offset + nbytes > len(payload):
            raise CheckpointError(f"corrupt manifest: {name!r} extends past end of payload")
        spans.append((offset, offset + nbytes, name))
        out[name] = np.frombuffer(payload[offset:offset + nbytes], dtype=_F32).reshape(shape).copy()
    spans.sort()
    for (_, end, a), (begin, _, b) in zip(spans, spans[1:]):
        if begin < end:
            raise CheckpointError(f"corrupt manifest: {a!r} and {b!r} overlap")
    if sum(e - b for b, e, _ in spans) != len(payload):
        raise CheckpointError("corrupt manifest: payload length does not match manifest")
    return out


def save_tensors(tensors: dict, path, config: dict | None = None) -> dict:
    """Write ``tensors`` (and optional sidecar ``config``) atomically; return the manifest."""
    data = encode_tensors(tensors)
    _atomic_write(path, data)
    if config is not None:
        _atomic_write(sidecar_path(path), json.dumps(config, sort_keys=True, indent=2).encode("utf-8"))
    (length,) = _HEADER.unpack_from(data)
    return json.loads(data[_HEADER.size:_HEADER.size + length])


def load_tensors(path) -> dict[str, np.ndarray]:
    return decode_tensors(Path(path).read_bytes())


def sidecar_path(path) -> Path:
    return Path(f"{path}.json")


def read_sidecar(path) -> dict | None:
    p = sidecar_path(path)
    if not p.exists():
        return None
    return json.loads(p.read_text())


def model_tensors(model: torch.nn.Module) -> dict:
    # integer buffers (BatchNorm's num_batches_tracked) are bookkeeping, not weights
    return {k: v for k, v in model.state_dict().items() if v.is_floating_point()}


def load_into(model: torch.nn.Module, tensors: dict[str, np.ndarray]):
    expected = model_tensors(model)
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise CheckpointError(f"shape mismatch: missing {missing}, unexpected {extra}")
    state = {}
    for name, ref in expected.items():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {tuple(arr.shape)}, model {tuple(ref.shape)}")
        state[name] = torch.from_numpy(arr).to(ref.dtype)
    model.load_state_dict(state, strict=False)
    return model


def save(model, path) -> dict:
    """Save a Generator, PatchDiscriminator or Encoder with its architecture sidecar."""
    config = {"kind": type(model).__name__, **model.config()}
    return save_tensors(model_tensors(model), path, config)


def load(path):
    """Rebuild a model from ``path`` and its sidecar, validating every tensor shape."""
    from .encoder import Encoder
    from .mdan import PatchDiscriminator
    from .mgan import Generator

    config = read_sidecar(path)
    if config is None:
        raise CheckpointError(f"missing architecture sidecar {sidecar_path(path)}")
    kinds = {"Generator": Generator, "PatchDiscriminator": PatchDiscriminator, "Encoder": Encoder}
    config = dict(config)
    kind = config.pop("kind", None)
    if kind not in kinds:
        raise CheckpointError(f"unknown model kind {kind!r}")
    model = kinds[kind].from_config(config)
    load_into(model, load_tensors(path))
    model.eval()
    return model


def parameter_bytes(model: torch.nn.Module) -> int:
    """Bytes needed to store the model's float tensors in single precision."""
    return sum(4 * t.numel() for t in model_tensors(model).values())
