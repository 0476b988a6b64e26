"""Data-reduction workflow: bundle a low-resolution field with the trained
model into one archive file, reconstruct at any requested resolution, and
account for the achieved compression rate.

Archive layout (little-endian): magic "FFNRARCH", version u32, section count
u32, then a table of (tag u32, offset u64, length u64, crc32 u32) per section
followed by the section payloads. Sections: LOWRES (FFNR bytes), CKPT
(checkpoint container bytes), META (UTF-8 key = value text).
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass

from .flowdata import (
    FlowField,
    FormatError,
    NormStats,
    TruncationError,
    downsample,
    from_ffnr_bytes,
    to_ffnr_bytes,
)
from .inr_core import ModelConfig
from .training import (
    Checkpoint,
    TrainConfig,
    format_config_text,
    parse_config_text,
    reconstruct,
    train_one_stage,
)

ARCH_MAGIC = b"FFNRARCH"
ARCH_VERSION = 1
TAG_LOWRES = 1
TAG_CKPT = 2
TAG_META = 3

_TABLE_ENTRY = struct.Struct("<IQQI")
_HEAD = struct.Struct("<8sII")


class ArchiveCorruptionError(FormatError):
    """A section checksum failed on load."""


@dataclass
class Archive:
    """Compressed representation of a flow field."""

    low: FlowField
    checkpoint_bytes: bytes
    stats: NormStats
    original_dims: tuple[int, int, int, int]
    meta: dict[str, str]

    @property
    def factors(self) -> tuple[int, int]:
        return int(self.meta["sx"]), int(self.meta["st"])

    def checkpoint(self) -> Checkpoint:
        return Checkpoint.from_bytes(self.checkpoint_bytes)


def _meta_text(a: Archive) -> str:
    return format_config_text(dict(a.meta))


def serialize_archive(a: Archive) -> bytes:
    sections = [
        (TAG_LOWRES, to_ffnr_bytes(a.low)),
        (TAG_CKPT, a.checkpoint_bytes),
        (TAG_META, _meta_text(a).encode("utf-8")),
    ]
    header_len = _HEAD.size + _TABLE_ENTRY.size * len(sections)
    out = bytearray()
    out += _HEAD.pack(ARCH_MAGIC, ARCH_VERSION, len(sections))
    offset = header_len
    for tag, payload in sections:
        out += _TABLE_ENTRY.pack(tag, offset, len(payload), zlib.crc32(payload))
        offset += len(payload)
    for _, payload in sections:
        out += payload
    return bytes(out)


def deserialize_archive(data: bytes) -> Archive:
    if len(data) < _HEAD.size:
        raise TruncationError("archive too short for header")
    magic, version, count = _HEAD.unpack_from(data, 0)
    if magic != ARCH_MAGIC:
        raise FormatError(f"bad archive magic {magic!r}")
    if version != ARCH_VERSION:
        raise FormatError(f"unsupported archive version {version}")
    table_end = _HEAD.size + _TABLE_ENTRY.size * count
    if len(data) < table_end:
        raise TruncationError("archive too short for section table")
    payloads: dict[int, bytes] = {}
    for i in range(count):
        tag, offset, length, crc = _TABLE_ENTRY.unpack_from(
            data, _HEAD.size + i * _TABLE_ENTRY.size
        )
        if offset + length > len(data):
            raise TruncationError(f"section {tag} extends past end of archive")
        payload = data[offset : offset + length]
        if zlib.crc32(payload) != crc:
            raise ArchiveCorruptionError(f"checksum mismatch in section {tag}")
        payloads[tag] = payload
    for tag in (TAG_LOWRES, TAG_CKPT, TAG_META):
        if tag not in payloads:
            raise FormatError(f"archive missing section {tag}")
    low = from_ffnr_bytes(payloads[TAG_LOWRES])
    meta = parse_config_text(payloads[TAG_META].decode("utf-8"))
    ckpt = Checkpoint.from_bytes(payloads[TAG_CKPT])
    dims = tuple(int(meta[k]) for k in ("original_t", "original_h", "original_w", "original_c"))
    return Archive(
        low=low,
        checkpoint_bytes=payloads[TAG_CKPT],
        stats=ckpt.norm_stats,
        original_dims=dims,
        meta=meta,
    )


def write_archive(path, a: Archive) -> None:
    with open(path, "wb") as f:
        f.write(serialize_archive(a))


def read_archive(path) -> Archive:
    with open(path, "rb") as f:
        return deserialize_archive(f.read())


# ---------------------------------------------------------------------------
# Compress / decompress
# ---------------------------------------------------------------------------

def compress(
    high: FlowField, cfg: TrainConfig, model_cfg: ModelConfig | None = None
) -> Archive:
    """Downsample, train at the configured factors, and bundle the result."""
    low = downsample(high, cfg.sx, cfg.st)
    ckpt = train_one_stage(low, high, cfg, model_cfg)
    t, h, w, c = high.shape
    meta = {
        "original_t": str(t),
        "original_h": str(h),
        "original_w": str(w),
        "original_c": str(c),
        "sx": str(cfg.sx),
        "st": str(cfg.st),
        "iters": str(ckpt.iteration),
        "seed": str(cfg.seed),
    }
    return Archive(
        low=low,
        checkpoint_bytes=ckpt.to_bytes(),
        stats=ckpt.norm_stats,
        original_dims=(t, h, w, c),
        meta=meta,
    )


def compress_to_file(
    path, high: FlowField, cfg: TrainConfig, model_cfg: ModelConfig | None = None
) -> Archive:
    """compress() plus single-file delivery; a failed run leaves no partial
    artifact behind."""
    try:
        archive = compress(high, cfg, model_cfg)
        write_archive(path, archive)
        return archive
    except BaseException:
        if os.path.exists(path):
            os.unlink(path)
        raise


def decompress(a: Archive, dims: tuple[int, int, int]) -> FlowField:
    """Reconstruct the archived field at the requested (T, H, W) dims, which
    may be any size at or above the stored low-res grid (extended
    super-resolution needs no retraining)."""
    t, h, w = (int(d) for d in dims)
    t_l, h_l, w_l, _ = a.low.shape
    if t < t_l or h < h_l or w < w_l:
        raise ValueError(f"requested dims {dims} below stored low-res dims {a.low.shape[:3]}")
    ckpt = a.checkpoint()
    model = ckpt.build_model()
    return reconstruct(model, a.low, ckpt.norm_stats, (t, h, w))


# ---------------------------------------------------------------------------
# Compression accounting
# ---------------------------------------------------------------------------

@dataclass
class CompressionReport:
    ratio: float
    original_bytes: int
    archive_bytes: int
    lowres_bytes: int
    checkpoint_bytes: int
    meta_bytes: int
    header_bytes: int


def compression_rate(a: Archive, original: FlowField) -> CompressionReport:
    """Original payload bytes over total archive bytes, with the exact
    per-section breakdown (components sum to the archive size)."""
    lowres = len(to_ffnr_bytes(a.low))
    ckpt = len(a.checkpoint_bytes)
    meta = len(_meta_text(a).encode("utf-8"))
    header = _HEAD.size + 3 * _TABLE_ENTRY.size
    total = header + lowres + ckpt + meta
    original_bytes = int(original.values.size) * 4
    return CompressionReport(
        ratio=original_bytes / total,
        original_bytes=original_bytes,
        archive_bytes=total,
        lowres_bytes=lowres,
        checkpoint_bytes=ckpt,
        meta_bytes=meta,
        header_bytes=header,
    )
