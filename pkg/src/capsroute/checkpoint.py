"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic   b"CAPS"
    version u16 (currently 1)
    header  u32 byte length, then UTF-8 text: the full config snapshot as
            ``key = value`` lines plus ``conv_padding = valid`` so tensor
            dimensions in the records below are auditable
    records one per parameter, in model insertion order:
            u16 name length, UTF-8 name,
            u32 rank, rank x u32 dims,
            prod(dims) x f32 payload

Parameters are stored as f32; loading widens back to the runtime dtype, so a
round trip through disk is idempotent byte for byte.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import Config, parse_config
from .errors import CheckpointError
from .tensor import Tensor

MAGIC = b"CAPS"
VERSION = 1
_EXTRA_KEYS = ("conv_padding",)


def save_checkpoint(path, params: dict, cfg: Config) -> None:
    header = ("conv_padding = valid\n" + cfg.to_text()).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<H", VERSION)
    blob += struct.pack("<I", len(header))
    blob += header
    for name, p in params.items():
        data = p.data if isinstance(p, Tensor) else np.asarray(p)
        payload = np.ascontiguousarray(data, dtype="<f4")
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<I", payload.ndim)
        blob += struct.pack(f"<{payload.ndim}I", *payload.shape)
        blob += payload.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path):
    """Returns (config, extras dict, name -> float64 array in stored order)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    view = memoryview(raw)
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<H", view, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (header_len,) = struct.unpack_from("<I", view, 6)
    offset = 10
    header_text = bytes(view[offset : offset + header_len]).decode("utf-8")
    offset += header_len

    extras = {}
    config_lines = []
    for line in header_text.splitlines():
        key = line.split("=", 1)[0].strip()
        if key in _EXTRA_KEYS:
            extras[key] = line.split("=", 1)[1].strip()
        else:
            config_lines.append(line)
    cfg = parse_config("\n".join(config_lines))

    params: dict[str, np.ndarray] = {}
    try:
        while offset < len(raw):
            (name_len,) = struct.unpack_from("<H", view, offset)
            offset += 2
            name = bytes(view[offset : offset + name_len]).decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", view, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", view, offset)
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            flat = np.frombuffer(view, dtype="<f4", count=count, offset=offset)
            offset += 4 * count
            params[name] = flat.astype(np.float64).reshape(dims)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt record stream: {exc}") from exc
    return cfg, extras, params


def apply_parameters(model_params: dict, loaded: dict, source: str = "checkpoint") -> None:
    """Copy loaded arrays into model tensors; dimension mismatches are fatal."""
    missing = sorted(set(model_params) - set(loaded))
    unexpected = sorted(set(loaded) - set(model_params))
    if missing or unexpected:
        raise CheckpointError(
            f"{source}: parameter set mismatch; missing {missing}, unexpected {unexpected}")
    mismatched = [f"{name}: model {model_params[name].shape} vs stored {loaded[name].shape}"
                  for name in model_params if model_params[name].shape != loaded[name].shape]
    if mismatched:
        raise CheckpointError(f"{source}: architecture mismatch; " + "; ".join(mismatched))
    for name, tensor in model_params.items():
        tensor.data = loaded[name].copy()
