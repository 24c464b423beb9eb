"""Binary weight file.

Layout (little-endian)::

    b"FSCRNNW1"                 8-byte magic
    u32 version, u32 base_channels, u32 n_classes
    per block: u32 name_len, name (utf-8), u32 ndim, u32 dims..., float64 data
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .unet import UNetModel

MAGIC = b"FSCRNNW1"
FORMAT_VERSION = 1


class WeightFileError(ValueError):
    """Corrupt or truncated weight file."""


class WeightVersionError(WeightFileError):
    """Wrong magic bytes or unsupported format version."""


def dumps_weights(model: UNetModel) -> bytes:
    parts = [MAGIC, struct.pack("<III", FORMAT_VERSION, model.base_channels, model.n_classes)]
    for name, arr in model.state().items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_weights(model: UNetModel, path) -> None:
    Path(path).write_bytes(dumps_weights(model))


def loads_weights(blob: bytes) -> UNetModel:
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise WeightVersionError("not a weight file (bad magic)")
    if len(blob) < len(MAGIC) + 16:
        raise WeightFileError("weight file truncated")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    version, base, n_classes = struct.unpack_from("<III", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise WeightVersionError(f"unsupported weight format version {version}")
    if zlib.crc32(body) != crc:
        raise WeightFileError("weight file checksum mismatch (corrupt or truncated)")

    pos = len(MAGIC) + 12
    state = {}
    try:
        while pos < len(body):
            (name_len,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<I", body, pos)
            dims = struct.unpack_from(f"<{ndim}I", body, pos + 4)
            pos += 4 + 4 * ndim
            count = int(np.prod(dims))
            data = np.frombuffer(body, dtype="<f8", count=count, offset=pos)
            pos += 8 * count
            state[name] = data.reshape(dims).astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise WeightFileError(f"malformed parameter block: {exc}") from exc

    model = UNetModel(base_channels=base, n_classes=n_classes)
    try:
        model.load_state(state)
    except ValueError as exc:
        raise WeightFileError(str(exc)) from exc
    model.version = 0
    return model


def load_weights(path) -> UNetModel:
    return loads_weights(Path(path).read_bytes())
