"""Binary matrix container, JSON sidecars and provenance records.

Container layout (all little-endian)::

    16 bytes  magic b"FODKIT-MATRIX-01"
     4 bytes  u32 rows
     4 bytes  u32 cols
    8*r*c     f64 payload, row-major
     8 bytes  first 8 bytes of sha256(header + payload)
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import struct
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, MissingArtifactError

__all__ = [
    "MAGIC",
    "CorruptArtifactError",
    "encode_matrix",
    "decode_matrix",
    "write_matrix",
    "read_matrix",
    "sha256_file",
    "write_json",
    "read_json",
    "cache_dir",
    "provenance",
]

MAGIC = b"FODKIT-MATRIX-01"
_HEADER = struct.Struct("<16sII")
_CHECK = 8


class CorruptArtifactError(ConfigurationError):
    """A matrix file fails its magic, size or checksum test."""


def encode_matrix(matrix) -> bytes:
    m = np.asarray(matrix, dtype="<f8")
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ConfigurationError("only 1-d or 2-d arrays can be stored")
    rows, cols = m.shape
    body = _HEADER.pack(MAGIC, rows, cols) + np.ascontiguousarray(m).tobytes()
    return body + hashlib.sha256(body).digest()[:_CHECK]


def decode_matrix(data: bytes, name: str = "<bytes>") -> np.ndarray:
    if len(data) < _HEADER.size + _CHECK:
        raise CorruptArtifactError(f"{name}: truncated matrix file")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptArtifactError(f"{name}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * rows * cols + _CHECK
    if len(data) != expected:
        raise CorruptArtifactError(f"{name}: size {len(data)} does not match {rows}x{cols} header")
    body, check = data[:-_CHECK], data[-_CHECK:]
    if hashlib.sha256(body).digest()[:_CHECK] != check:
        raise CorruptArtifactError(f"{name}: checksum mismatch")
    return np.frombuffer(body, dtype="<f8", offset=_HEADER.size).reshape(rows, cols).astype(float)


def write_matrix(path, matrix) -> str:
    """Write atomically; returns the sha256 hex digest of the file."""
    path = Path(path)
    data = encode_matrix(matrix)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return hashlib.sha256(data).hexdigest()


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing artifact {path}")
    return decode_matrix(path.read_bytes(), str(path))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_default) + "\n"


def write_json(path, data) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps(data), encoding="utf-8")
    os.replace(tmp, path)


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing file {path}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def cache_dir(default=None) -> Path:
    """Artifact cache location; ``FODKIT_CACHE_DIR`` overrides ``default``."""
    env = os.environ.get("FODKIT_CACHE_DIR")
    if env:
        return Path(env)
    if default is not None:
        return Path(default)
    return Path.home() / ".cache" / "fodkit"


def provenance(config_hash: str, seed, command: str, extra: dict | None = None) -> dict:
    import scipy

    from . import __version__

    rec = {
        "command": command,
        "config_sha256": config_hash,
        "seed": seed,
        "versions": {
            "fodkit": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "platform": platform.platform(),
    }
    if extra:
        rec.update(extra)
    return rec
