"""Named-tensor checkpoint container.

Little-endian layout: magic "FFNRCKPT", version u32, config blob (u32 length +
UTF-8 text), entry count u32, then per entry a name (u32 length + UTF-8),
rank u32, dims u32[rank], and the f32 payload in C order. Round trips are
bit-exact: weights are stored exactly as they sit in memory.
"""

from __future__ import annotations

import struct

import numpy as np

from .flowdata import FormatError, TruncationError

CKPT_MAGIC = b"FFNRCKPT"
CKPT_VERSION = 1


def write_container(config_text: str, entries: dict[str, np.ndarray]) -> bytes:
    """Serialize a config string and named float32 arrays."""
    out = bytearray()
    out += CKPT_MAGIC
    out += struct.pack("<I", CKPT_VERSION)
    blob = config_text.encode("utf-8")
    out += struct.pack("<I", len(blob))
    out += blob
    out += struct.pack("<I", len(entries))
    for name, arr in entries.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        out += struct.pack("<I", len(nb))
        out += nb
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes(order="C")
    return bytes(out)


def read_container(data: bytes) -> tuple[str, dict[str, np.ndarray]]:
    """Parse bytes produced by write_container."""
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise TruncationError(f"checkpoint truncated while reading {what}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(8, "magic") != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack("<I", take(4, "config length"))
    config_text = take(blob_len, "config").decode("utf-8")
    (count,) = struct.unpack("<I", take(4, "entry count"))
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = take(4 * n, f"payload of {name}")
        entries[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last entry")
    return config_text, entries


def save_container(path, config_text: str, entries: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(write_container(config_text, entries))


def load_container(path) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        return read_container(f.read())
