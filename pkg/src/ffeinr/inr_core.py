"""Feature-enhanced implicit representation.

The composed network maps a low-resolution frame pair plus continuous
space-time query coordinates to physical values:

    grid    = encode(frames)                 # discrete feature grid
    f_s     = spatial_net(offset(x), grid)   # continuous spatial features
    flow    = temporal_net(t, f_s)           # per-query motion flow
    x_w     = clamp(x + flow)                # warped query coordinates
    f_w     = spatial_net(offset(x_w), grid) # re-query at the warped point
    values  = decoder(f_w)

All implicit networks are sine-activated MLPs with the frequency-scaled
uniform initialization that sine networks require. Spatial coordinates live
in [-1, 1]^2 over the feature grid (one cell per low-res node), the temporal
coordinate in [0, 1] across the input pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn

from .encoder import Encoder, EncoderConfig
from .flowdata import QueryBatch, SlicePair

__all__ = [
    "SirenLayerSpec",
    "siren_uniform_bound",
    "siren_init",
    "SineLayer",
    "Siren",
    "lookup_features",
    "warp",
    "SpatialINR",
    "TemporalINR",
    "ValueDecoder",
    "ModelConfig",
    "FFEINRModel",
    "QueryBatch",
]


# ---------------------------------------------------------------------------
# Sine layers
# ---------------------------------------------------------------------------

@dataclass
class SirenLayerSpec:
    fan_in: int
    fan_out: int
    omega0: float = 30.0
    is_first: bool = False

    def __post_init__(self):
        if self.fan_in < 1 or self.fan_out < 1:
            raise ValueError("layer dims must be positive")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")


def siren_uniform_bound(spec: SirenLayerSpec) -> float:
    """Half-width of the uniform init interval for a sine layer."""
    if spec.is_first:
        return 1.0 / spec.fan_in
    return math.sqrt(6.0 / spec.fan_in) / spec.omega0


def siren_init(spec: SirenLayerSpec, generator: torch.Generator | None = None):
    """Sample (weight, bias) uniformly within the layer's closed-form bound."""
    bound = siren_uniform_bound(spec)
    weight = torch.empty(spec.fan_out, spec.fan_in)
    bias = torch.empty(spec.fan_out)
    weight.uniform_(-bound, bound, generator=generator)
    bias.uniform_(-bound, bound, generator=generator)
    return weight, bias


class SineLayer(nn.Module):
    def __init__(self, fan_in, fan_out, omega0=30.0, is_first=False, generator=None):
        super().__init__()
        self.spec = SirenLayerSpec(fan_in, fan_out, omega0, is_first)
        self.linear = nn.Linear(fan_in, fan_out)
        w, b = siren_init(self.spec, generator)
        with torch.no_grad():
            self.linear.weight.copy_(w)
            self.linear.bias.copy_(b)

    def forward(self, x):
        return torch.sin(self.spec.omega0 * self.linear(x))


class Siren(nn.Module):
    """Sine-activated MLP with a final affine layer (no sine on the output).

    Sine layers always use the frequency-scaled uniform scheme. The final
    affine layer defaults to the same bound; output heads that must span a
    wide target range can use final_init="fan_in" (uniform within
    1/sqrt(fan_in)) so the output scale does not rate-limit early training.
    """

    def __init__(self, in_features, hidden, depth, out_features, omega0=30.0,
                 generator=None, final_init="siren"):
        super().__init__()
        if depth < 1:
            raise ValueError("need at least one hidden layer")
        layers = [SineLayer(in_features, hidden, omega0, is_first=True, generator=generator)]
        for _ in range(depth - 1):
            layers.append(SineLayer(hidden, hidden, omega0, generator=generator))
        self.hidden_layers = nn.ModuleList(layers)
        self.final = nn.Linear(hidden, out_features)
        if final_init == "fan_in":
            bound = 1.0 / math.sqrt(hidden)
            w = torch.empty(out_features, hidden)
            b = torch.empty(out_features)
            w.uniform_(-bound, bound, generator=generator)
            b.uniform_(-bound, bound, generator=generator)
        elif final_init == "siren":
            w, b = siren_init(SirenLayerSpec(hidden, out_features, omega0), generator)
        else:
            raise ValueError(f"unknown final_init {final_init!r}")
        with torch.no_grad():
            self.final.weight.copy_(w)
            self.final.bias.copy_(b)

    def forward(self, x):
        for layer in self.hidden_layers:
            x = layer(x)
        return self.final(x)


# ---------------------------------------------------------------------------
# Feature-grid lookup and warping
# ---------------------------------------------------------------------------

def _index_space(coord, n):
    # [-1, 1] -> [0, n] cell index space
    return (coord + 1.0) * (0.5 * n)


def lookup_features(grid, xy, mode="nearest"):
    """Fetch per-query feature vectors and cell-relative offsets.

    grid -- (B, C_f, H, W) feature maps; the W cells tile x in [-1, 1] and
            the H cells tile y, so cell k spans [-1 + 2k/n, -1 + 2(k+1)/n).
    xy   -- (B, N, 2) query coordinates in [-1, 1].

    A query is resolved to its containing cell (floor in index space; the
    exact upper boundary clamps to the last cell). Offsets are relative to
    that cell's center, scaled to [-1, 1] across the cell. `mode` "bilinear"
    additionally blends the four surrounding cell centers.

    Returns (features (B, N, C_f), offsets (B, N, 2)).
    """
    b, c_f, h, w = grid.shape
    x, y = xy[..., 0], xy[..., 1]
    u = _index_space(x, w)
    v = _index_space(y, h)
    ix = u.floor().long().clamp(0, w - 1)
    iy = v.floor().long().clamp(0, h - 1)
    off_x = (2.0 * (u - ix.to(u.dtype) - 0.5)).clamp(-1.0, 1.0)
    off_y = (2.0 * (v - iy.to(v.dtype) - 0.5)).clamp(-1.0, 1.0)
    offsets = torch.stack([off_x, off_y], dim=-1)

    flat = grid.reshape(b, c_f, h * w)

    def gather(row_idx, col_idx):
        idx = (row_idx * w + col_idx).unsqueeze(1).expand(b, c_f, -1)
        return flat.gather(2, idx).permute(0, 2, 1)

    if mode == "nearest":
        feats = gather(iy, ix)
    elif mode == "bilinear":
        uu = (u - 0.5).clamp(0.0, float(w - 1))
        vv = (v - 0.5).clamp(0.0, float(h - 1))
        x0 = uu.floor().long().clamp(0, max(w - 2, 0))
        y0 = vv.floor().long().clamp(0, max(h - 2, 0))
        wx = (uu - x0.to(uu.dtype)).clamp(0.0, 1.0).unsqueeze(-1)
        wy = (vv - y0.to(vv.dtype)).clamp(0.0, 1.0).unsqueeze(-1)
        x1 = (x0 + 1).clamp(0, w - 1)
        y1 = (y0 + 1).clamp(0, h - 1)
        feats = (
            gather(y0, x0) * (1 - wx) * (1 - wy)
            + gather(y0, x1) * wx * (1 - wy)
            + gather(y1, x0) * (1 - wx) * wy
            + gather(y1, x1) * wx * wy
        )
    else:
        raise ValueError(f"unknown lookup mode {mode!r}")
    return feats, offsets


def warp(xy, flow):
    """Displace query coordinates by a motion flow and clamp to the domain."""
    if xy.shape != flow.shape:
        raise ValueError(f"shape mismatch: {tuple(xy.shape)} vs {tuple(flow.shape)}")
    return (xy + flow).clamp(-1.0, 1.0)


# ---------------------------------------------------------------------------
# Implicit networks
# ---------------------------------------------------------------------------

class SpatialINR(nn.Module):
    """Continuous spatial feature field conditioned on a discrete grid.

    The head emits features consumed by two downstream networks, so it uses
    the fan-in init to give them full-scale inputs from the start."""

    def __init__(self, c_f, width=256, depth=3, omega0=30.0, lookup="nearest", generator=None):
        super().__init__()
        self.lookup = lookup
        self.net = Siren(2 + c_f, width, depth, c_f, omega0, generator, final_init="fan_in")

    def query(self, grid, xy):
        feats, offsets = lookup_features(grid, xy, self.lookup)
        return self.net(torch.cat([offsets, feats], dim=-1))


class TemporalINR(nn.Module):
    """Maps (t, spatial features) to a 2-vector motion flow per query."""

    def __init__(self, c_f, width=256, depth=3, omega0=30.0, generator=None):
        super().__init__()
        self.net = Siren(1 + c_f, width, depth, 2, omega0, generator)

    def forward(self, t, feats):
        if t.shape != feats.shape[:-1]:
            raise ValueError(f"t shape {tuple(t.shape)} does not match features")
        return self.net(torch.cat([t.unsqueeze(-1), feats], dim=-1))


class ValueDecoder(nn.Module):
    """Decodes warped spatial features into physical channel values.

    The output head uses the fan-in init so it can span the [-1, 1] value
    range from the start."""

    def __init__(self, c_f, out_channels, width=256, depth=2, omega0=30.0, generator=None):
        super().__init__()
        self.net = Siren(c_f, width, depth, out_channels, omega0, generator, final_init="fan_in")

    def forward(self, feats):
        return self.net(feats)


# ---------------------------------------------------------------------------
# Composed model
# ---------------------------------------------------------------------------

@dataclass
class ModelConfig:
    in_channels: int = 2
    c_f: int = 64
    spatial_width: int = 256
    spatial_depth: int = 3
    temporal_width: int = 256
    temporal_depth: int = 3
    decoder_width: int = 256
    decoder_depth: int = 2
    omega0: float = 30.0
    lookup: str = "nearest"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if self.encoder.c_f != self.c_f:
            self.encoder = replace(self.encoder, c_f=self.c_f, lstm_hidden=None)
        if self.lookup not in ("nearest", "bilinear"):
            raise ValueError(f"unknown lookup mode {self.lookup!r}")

    def to_flat(self) -> dict:
        d = {
            k: getattr(self, k)
            for k in (
                "in_channels", "c_f", "spatial_width", "spatial_depth",
                "temporal_width", "temporal_depth", "decoder_width",
                "decoder_depth", "omega0", "lookup",
            )
        }
        d["n_blocks"] = self.encoder.n_blocks
        d["lstm_hidden"] = self.encoder.lstm_hidden
        d["kernel"] = self.encoder.kernel
        return d

    @classmethod
    def from_flat(cls, d: dict) -> "ModelConfig":
        enc = EncoderConfig(
            c_f=int(d["c_f"]),
            n_blocks=int(d["n_blocks"]),
            lstm_hidden=int(d["lstm_hidden"]),
            kernel=int(d["kernel"]),
        )
        return cls(
            in_channels=int(d["in_channels"]),
            c_f=int(d["c_f"]),
            spatial_width=int(d["spatial_width"]),
            spatial_depth=int(d["spatial_depth"]),
            temporal_width=int(d["temporal_width"]),
            temporal_depth=int(d["temporal_depth"]),
            decoder_width=int(d["decoder_width"]),
            decoder_depth=int(d["decoder_depth"]),
            omega0=float(d["omega0"]),
            lookup=str(d["lookup"]),
            encoder=enc,
        )


class FFEINRModel(nn.Module):
    """Encoder plus the three implicit networks, composed end to end."""

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        c = self.cfg
        self.encoder = Encoder(c.in_channels, c.encoder)
        self.spatial = SpatialINR(c.c_f, c.spatial_width, c.spatial_depth, c.omega0, c.lookup)
        self.temporal = TemporalINR(c.c_f, c.temporal_width, c.temporal_depth, c.omega0)
        self.decoder = ValueDecoder(c.c_f, c.in_channels, c.decoder_width, c.decoder_depth, c.omega0)

    def encode_frames(self, frames):
        """(B, 2, C, H, W) frame pairs -> (B, C_f, H, W) feature grids."""
        return self.encoder(frames)

    def query_values(self, grid, xy, t):
        """Evaluate the implicit stack on precomputed feature grids."""
        feats = self.spatial.query(grid, xy)
        flow = self.temporal(t, feats)
        warped = warp(xy, flow)
        warped_feats = self.spatial.query(grid, warped)
        return self.decoder(warped_feats)

    def forward(self, frames, xy, t):
        """Full pipeline: frames (B, 2, C, H, W) or (2, C, H, W), queries
        xy (B, N, 2) / (N, 2) in [-1, 1] and t (B, N) / (N,) in [0, 1].
        Returns (B, N, C) or (N, C) normalized values."""
        unbatched = frames.ndim == 4
        if unbatched:
            frames, xy, t = frames.unsqueeze(0), xy.unsqueeze(0), t.unsqueeze(0)
        if not torch.all(xy.abs() <= 1.0):
            raise ValueError("query xy coordinates must lie in [-1, 1]")
        if not torch.all((t >= 0.0) & (t <= 1.0)):
            raise ValueError("query t coordinates must lie in [0, 1]")
        grid = self.encode_frames(frames)
        out = self.query_values(grid, xy, t)
        return out[0] if unbatched else out

    @torch.no_grad()
    def predict(self, pair: SlicePair, query: QueryBatch) -> np.ndarray:
        """Single-pair numpy convenience around forward()."""
        p = next(self.parameters())
        frames = torch.from_numpy(pair.frames).permute(0, 3, 1, 2).to(p.dtype)
        xy = torch.from_numpy(query.xy).to(p.dtype)
        t = torch.from_numpy(query.t).to(p.dtype)
        return self.forward(frames, xy, t).numpy()
