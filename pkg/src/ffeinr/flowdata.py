"""Flow-field data model: raw file format, synthetic generators, downsampling,
normalization and patch sampling.

A flow field is a dense (T, H, W, C) float32 grid with physical extents.
Grid nodes span the extents inclusively: node (r, c) of an (H, W) grid sits at
``y = y_min + r * (y_max - y_min) / (H - 1)`` and analogously in x.
Frame t is at simulation time ``t * dt``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

FFNR_MAGIC = b"FFNR"
FFNR_VERSION = 1


class FormatError(ValueError):
    """File does not conform to the expected binary layout."""


class TruncationError(FormatError):
    """Declared dimensions are inconsistent with the payload length."""


class DataError(ValueError):
    """Payload values violate data invariants (e.g. non-finite entries)."""


@dataclass
class FlowField:
    """Dense space-time grid of physical values.

    values        -- (T, H, W, C) float32, all finite
    extents       -- (x_min, x_max, y_min, y_max) in domain length units
    dt            -- time between consecutive frames
    channel_names -- one name per channel, e.g. ("u_x", "u_y")
    """

    values: np.ndarray
    extents: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    dt: float = 1.0
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 4:
            raise ValueError(f"values must be 4-D (T, H, W, C), got shape {self.values.shape}")
        t, h, w, c = self.values.shape
        if t < 1 or h < 2 or w < 2 or c < 1:
            raise ValueError(f"shape (T={t}, H={h}, W={w}, C={c}) violates T>=1, H>=2, W>=2, C>=1")
        if not np.isfinite(self.values).all():
            raise DataError("values contain non-finite entries")
        x_min, x_max, y_min, y_max = (float(v) for v in self.extents)
        if not (x_max > x_min and y_max > y_min):
            raise ValueError(f"degenerate extents {self.extents}")
        self.extents = (x_min, x_max, y_min, y_max)
        self.dt = float(self.dt)
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.channel_names:
            self.channel_names = tuple(f"c{i}" for i in range(c))
        self.channel_names = tuple(str(n) for n in self.channel_names)
        if len(self.channel_names) != c:
            raise ValueError(f"{len(self.channel_names)} channel names for {c} channels")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.values.shape

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[3]

    def x_coords(self) -> np.ndarray:
        x_min, x_max, _, _ = self.extents
        return np.linspace(x_min, x_max, self.values.shape[2])

    def y_coords(self) -> np.ndarray:
        _, _, y_min, y_max = self.extents
        return np.linspace(y_min, y_max, self.values.shape[1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, FlowField):
            return NotImplemented
        return (
            self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
            and self.extents == other.extents
            and self.dt == other.dt
            and self.channel_names == other.channel_names
        )


@dataclass
class SlicePair:
    """Two consecutive low-resolution frames, each (H_l, W_l, C)."""

    frames: np.ndarray  # (2, H_l, W_l, C) float32
    t0_index: int
    t1_index: int

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[0] != 2:
            raise ValueError(f"frames must be (2, H, W, C), got {self.frames.shape}")
        if self.t1_index != self.t0_index + 1:
            raise ValueError(f"t1_index must be t0_index + 1, got {self.t0_index}, {self.t1_index}")


def slice_pair(field: FlowField, t0: int) -> SlicePair:
    """Extract the consecutive frame pair (t0, t0 + 1) of a field."""
    if not 0 <= t0 < field.n_frames - 1:
        raise ValueError(f"pair index {t0} out of range for {field.n_frames} frames")
    return SlicePair(frames=field.values[t0 : t0 + 2], t0_index=t0, t1_index=t0 + 1)


@dataclass
class NormStats:
    """Per-channel affine normalization: normalized = (v - offset) / scale."""

    offset: np.ndarray  # (C,) float64
    scale: np.ndarray  # (C,) float64

    def __post_init__(self):
        self.offset = np.atleast_1d(np.asarray(self.offset, dtype=np.float64))
        self.scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        if self.offset.shape != self.scale.shape or self.offset.ndim != 1:
            raise ValueError("offset and scale must be matching 1-D arrays")
        if not (self.scale > 0).all():
            raise ValueError("scale must be positive per channel")

    def encode(self, values: np.ndarray) -> np.ndarray:
        """Physical values -> normalized values (float32)."""
        return ((values - self.offset) / self.scale).astype(np.float32)

    def decode(self, values: np.ndarray) -> np.ndarray:
        """Normalized values -> physical values (float32)."""
        return (values * self.scale + self.offset).astype(np.float32)


@dataclass
class QueryBatch:
    """Normalized space-time query coordinates.

    xy -- (N, 2) with both components in [-1, 1]; column 0 is x (width axis),
          column 1 is y (height axis).
    t  -- (N,) in [0, 1]; 0 is the first input slice, 1 the second.
    """

    xy: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float32)
        self.t = np.asarray(self.t, dtype=np.float32)
        if self.xy.ndim != 2 or self.xy.shape[1] != 2:
            raise ValueError(f"xy must be (N, 2), got {self.xy.shape}")
        if self.t.shape != (self.xy.shape[0],):
            raise ValueError(f"t must be (N,) matching xy, got {self.t.shape}")
        if self.xy.shape[0] < 1:
            raise ValueError("query batch must contain at least one point")
        if not (np.abs(self.xy) <= 1.0).all():
            raise ValueError("xy coordinates must lie in [-1, 1]")
        if not ((self.t >= 0.0) & (self.t <= 1.0)).all():
            raise ValueError("t coordinates must lie in [0, 1]")

    def __len__(self) -> int:
        return self.xy.shape[0]


@dataclass
class TrainingSample:
    """One supervised sample: a cropped low-res pair, the aligned high-res
    target patch at one time step, and the query lattice for that patch."""

    pair: SlicePair
    target: np.ndarray  # (n_hi, n_hi, C) float32
    coords: QueryBatch
    time_step: int  # index within the 0..st high-res steps of the interval
    patch_origin: tuple[int, int] = (0, 0)  # (row0, col0) in low-res indices


# ---------------------------------------------------------------------------
# FFNR raw file format
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sI4I4dd")  # magic, version, dims, extents, dt


def to_ffnr_bytes(fld: FlowField) -> bytes:
    """Serialize a field in the FFNR little-endian raw format."""
    for name in fld.channel_names:
        if "\x00" in name:
            raise ValueError(f"channel name {name!r} contains NUL")
    t, h, w, c = fld.values.shape
    out = bytearray()
    out += _HEADER.pack(FFNR_MAGIC, FFNR_VERSION, t, h, w, c, *fld.extents, fld.dt)
    out += fld.values.astype("<f4", copy=False).tobytes(order="C")
    for name in fld.channel_names:
        out += name.encode("utf-8") + b"\x00"
    return bytes(out)


def from_ffnr_bytes(data: bytes) -> FlowField:
    """Parse FFNR bytes back into a FlowField.

    Raises FormatError on a bad magic/version, TruncationError when the
    declared dims do not match the payload length, and DataError on
    non-finite payload values.
    """
    if len(data) < _HEADER.size:
        raise TruncationError(f"file too short for header ({len(data)} bytes)")
    magic, version, t, h, w, c, x0, x1, y0, y1, dt = _HEADER.unpack_from(data, 0)
    if magic != FFNR_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {FFNR_MAGIC!r}")
    if version != FFNR_VERSION:
        raise FormatError(f"unsupported version {version}")
    count = t * h * w * c
    payload_end = _HEADER.size + 4 * count
    if len(data) < payload_end:
        raise TruncationError(
            f"dims ({t},{h},{w},{c}) need {4 * count} payload bytes, "
            f"found {len(data) - _HEADER.size}"
        )
    values = np.frombuffer(data, dtype="<f4", count=count, offset=_HEADER.size)
    if not np.isfinite(values).all():
        raise DataError("payload contains non-finite values")
    tail = data[payload_end:]
    parts = tail.split(b"\x00")
    if len(parts) != c + 1 or parts[-1] != b"":
        raise TruncationError(f"expected {c} NUL-terminated channel names")
    names = tuple(p.decode("utf-8") for p in parts[:-1])
    return FlowField(
        values=values.reshape(t, h, w, c).copy(),
        extents=(x0, x1, y0, y1),
        dt=dt,
        channel_names=names,
    )


def save_raw(fld: FlowField, path) -> None:
    """Write a field to disk in the FFNR raw format."""
    with open(path, "wb") as f:
        f.write(to_ffnr_bytes(fld))


def load_raw(path) -> FlowField:
    """Read an FFNR file back into a FlowField."""
    with open(path, "rb") as f:
        return from_ffnr_bytes(f.read())


# ---------------------------------------------------------------------------
# Downsampling and synthetic data
# ---------------------------------------------------------------------------

def downsample(fld: FlowField, s_factor: int, t_factor: int) -> FlowField:
    """Strided point sampling: keep spatial indices 0, s, 2s, ... and time
    indices 0, t_f, 2t_f, ... Extents are unchanged; dt scales by t_factor.
    """
    s, tf = int(s_factor), int(t_factor)
    if s < 1 or tf < 1:
        raise ValueError(f"factors must be >= 1, got ({s_factor}, {t_factor})")
    vals = fld.values[::tf, ::s, ::s, :].copy()
    return FlowField(
        values=vals,
        extents=fld.extents,
        dt=fld.dt * tf,
        channel_names=fld.channel_names,
    )


def gen_taylor_green(n: int, frames: int, nu: float, dt: float = 0.25) -> FlowField:
    """Decaying Taylor-Green vortex on [0, 2*pi]^2, the standard closed-form
    incompressible test field:

        u(x, y, t) =  sin(x) cos(y) exp(-2 nu t)
        v(x, y, t) = -cos(x) sin(y) exp(-2 nu t)

    Divergence-free at every node, which makes it a convenient stand-in for
    solver output when none is at hand.
    """
    if n < 4:
        raise ValueError(f"n must be >= 4, got {n}")
    if frames < 2:
        raise ValueError(f"frames must be >= 2, got {frames}")
    if nu < 0:
        raise ValueError(f"nu must be >= 0, got {nu}")
    xs = np.linspace(0.0, 2.0 * math.pi, n)
    ys = np.linspace(0.0, 2.0 * math.pi, n)
    x, y = np.meshgrid(xs, ys)  # (H, W), row r -> y, col c -> x
    u0 = np.sin(x) * np.cos(y)
    v0 = -np.cos(x) * np.sin(y)
    times = np.arange(frames) * dt
    decay = np.exp(-2.0 * nu * times)[:, None, None]
    vals = np.stack([u0[None] * decay, v0[None] * decay], axis=-1)
    return FlowField(
        values=vals.astype(np.float32),
        extents=(0.0, 2.0 * math.pi, 0.0, 2.0 * math.pi),
        dt=dt,
        channel_names=("u_x", "u_y"),
    )


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def normalize(fld: FlowField) -> tuple[FlowField, NormStats]:
    """Map each channel affinely to [-1, 1].

    offset = (max + min) / 2 and scale = (max - min) / 2 per channel; a
    constant channel gets scale clamped to 1 so zero-padded regions do not
    abort training.
    """
    v = fld.values.astype(np.float64)
    cmax = v.max(axis=(0, 1, 2))
    cmin = v.min(axis=(0, 1, 2))
    offset = (cmax + cmin) / 2.0
    scale = (cmax - cmin) / 2.0
    scale[scale == 0.0] = 1.0
    stats = NormStats(offset=offset, scale=scale)
    out = FlowField(
        values=stats.encode(fld.values),
        extents=fld.extents,
        dt=fld.dt,
        channel_names=fld.channel_names,
    )
    return out, stats


def denormalize(fld: FlowField, stats: NormStats) -> FlowField:
    """Inverse of normalize for a whole field."""
    return FlowField(
        values=stats.decode(fld.values),
        extents=fld.extents,
        dt=fld.dt,
        channel_names=fld.channel_names,
    )


# ---------------------------------------------------------------------------
# Patch sampling
# ---------------------------------------------------------------------------

def patch_lattice(patch: int, s_factor: int) -> np.ndarray:
    """Normalized [-1, 1] positions of the (patch-1)*s + 1 high-res nodes
    covered by a `patch`-node low-res window (node-anchored: low node k maps
    to high node k*s)."""
    n_hi = (patch - 1) * s_factor + 1
    return (-1.0 + 2.0 * np.arange(n_hi) / (n_hi - 1)).astype(np.float32)


def crop_patch(
    low: FlowField,
    high: FlowField,
    factors: tuple[int, int],
    patch: int,
    rng: np.random.Generator,
    pairs=None,
) -> TrainingSample:
    """Draw one random training sample.

    Picks a consecutive low-res frame pair (from `pairs` when given), a random
    patch-aligned spatial crop, and one of the st + 1 high-res time steps
    spanning the pair (endpoints included). The target is the spatially
    aligned high-res region at that step; coords hold its lattice in
    patch-normalized [-1, 1]^2 coordinates.
    """
    sx, st = int(factors[0]), int(factors[1])
    t_l, h_l, w_l, c = low.shape
    if patch < 2:
        raise ValueError(f"patch must be >= 2, got {patch}")
    if patch > h_l or patch > w_l:
        raise ValueError(f"patch {patch} exceeds low-res grid ({h_l}, {w_l})")
    if t_l < 2:
        raise ValueError("need at least two low-res frames")
    if pairs is None:
        pairs = np.arange(t_l - 1)
    pairs = np.asarray(pairs)

    t0 = int(pairs[rng.integers(0, len(pairs))])
    row0 = int(rng.integers(0, h_l - patch + 1))
    col0 = int(rng.integers(0, w_l - patch + 1))
    j = int(rng.integers(0, st + 1))

    pair = SlicePair(
        frames=low.values[t0 : t0 + 2, row0 : row0 + patch, col0 : col0 + patch, :],
        t0_index=t0,
        t1_index=t0 + 1,
    )

    t_hi = t0 * st + j
    n_hi = (patch - 1) * sx + 1
    r_hi = row0 * sx
    c_hi = col0 * sx
    target = high.values[t_hi, r_hi : r_hi + n_hi, c_hi : c_hi + n_hi, :]

    lat = patch_lattice(patch, sx)
    gx, gy = np.meshgrid(lat, lat)  # row -> y, col -> x
    xy = np.stack([gx.ravel(), gy.ravel()], axis=1)
    t_coord = np.full(xy.shape[0], j / st, dtype=np.float32)
    return TrainingSample(
        pair=pair,
        target=np.ascontiguousarray(target),
        coords=QueryBatch(xy=xy, t=t_coord),
        time_step=j,
        patch_origin=(row0, col0),
    )
