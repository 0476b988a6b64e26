"""Input encoder: per-frame convolutional features, a learned temporal blend,
and a bidirectional ConvLSTM fusion pass producing one feature grid per
low-resolution frame pair.

Every stage is stride-1 with same-padding, so spatial dims are preserved
end to end: (C, H_l, W_l) in, (C_f, H_l, W_l) out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .flowdata import SlicePair

LEAKY_SLOPE = 0.1


@dataclass
class EncoderConfig:
    c_f: int = 64  # feature channels
    n_blocks: int = 3  # residual blocks in the per-frame extractor
    lstm_hidden: int | None = None  # defaults to c_f
    kernel: int = 3

    def __post_init__(self):
        if self.lstm_hidden is None:
            self.lstm_hidden = self.c_f
        if min(self.c_f, self.n_blocks, self.lstm_hidden, self.kernel) < 1:
            raise ValueError("all encoder dimensions must be positive")
        if self.kernel % 2 != 1:
            raise ValueError(f"kernel must be odd, got {self.kernel}")


@dataclass
class FeatureGrid:
    """Discrete feature map (C_f, H_l, W_l) anchoring the implicit networks."""

    features: np.ndarray
    source_shape: tuple[int, int]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 3:
            raise ValueError(f"features must be (C_f, H, W), got {self.features.shape}")
        if self.features.shape[1:] != tuple(self.source_shape):
            raise ValueError("source_shape does not match feature dims")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")


class ResidualBlock(nn.Module):
    def __init__(self, channels, kernel):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv2d(channels, channels, kernel, padding=pad)
        self.conv2 = nn.Conv2d(channels, channels, kernel, padding=pad)

    def forward(self, x):
        h = self.conv2(F.leaky_relu(self.conv1(x), LEAKY_SLOPE))
        return x + h


class FrameFeatureExtractor(nn.Module):
    """Shared per-frame feature extraction: input conv plus residual blocks."""

    def __init__(self, in_channels, cfg: EncoderConfig):
        super().__init__()
        pad = cfg.kernel // 2
        self.conv_in = nn.Conv2d(in_channels, cfg.c_f, cfg.kernel, padding=pad)
        self.blocks = nn.ModuleList(
            ResidualBlock(cfg.c_f, cfg.kernel) for _ in range(cfg.n_blocks)
        )

    def forward(self, x):
        h = F.leaky_relu(self.conv_in(x), LEAKY_SLOPE)
        for block in self.blocks:
            h = block(h)
        return h


class FeatureBlend(nn.Module):
    """Learned blend of two feature maps, gated per branch.

    Each input passes through its own convolution branch; the two branch
    outputs are mixed with gates that always sum to one. With the gate logits
    at their zero init and alpha = 0.5 the gates are exactly (0.5, 0.5).
    """

    def __init__(self, channels, kernel):
        super().__init__()
        pad = kernel // 2
        self.branch0 = nn.Conv2d(channels, channels, kernel, padding=pad)
        self.branch1 = nn.Conv2d(channels, channels, kernel, padding=pad)
        self.gate_logits = nn.Parameter(torch.zeros(2))

    def gates(self, alpha):
        base = torch.softmax(self.gate_logits, dim=0)
        raw = torch.stack([(1.0 - alpha) * base[0], alpha * base[1]])
        return raw / raw.sum()

    def forward(self, f0, f1, alpha=0.5):
        if f0.shape != f1.shape:
            raise ValueError(f"shape mismatch: {f0.shape} vs {f1.shape}")
        alpha = torch.as_tensor(alpha, dtype=f0.dtype, device=f0.device)
        g = self.gates(alpha)
        return g[0] * self.branch0(f0) + g[1] * self.branch1(f1)


class ConvLSTMCell(nn.Module):
    def __init__(self, in_channels, hidden, kernel):
        super().__init__()
        pad = kernel // 2
        self.hidden = hidden
        self.gates = nn.Conv2d(in_channels + hidden, 4 * hidden, kernel, padding=pad)

    def forward(self, x, state):
        h, c = state
        z = self.gates(torch.cat([x, h], dim=1))
        i, f, o, g = torch.chunk(z, 4, dim=1)
        c_next = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_next = torch.sigmoid(o) * torch.tanh(c_next)
        return h_next, c_next

    def initial_state(self, x):
        b, _, h, w = x.shape
        zeros = x.new_zeros(b, self.hidden, h, w)
        return zeros, zeros.clone()


class BiConvLSTMFusion(nn.Module):
    """Bidirectional ConvLSTM over a short feature sequence.

    One cell is shared between the two sweep directions, so reversing the
    input sequence exactly swaps the forward/backward halves of the
    concatenated state before the 1x1 projection.
    """

    def __init__(self, channels, hidden, kernel, out_channels=None):
        super().__init__()
        self.cell = ConvLSTMCell(channels, hidden, kernel)
        self.project = nn.Conv2d(2 * hidden, out_channels or channels, 1)

    def _sweep(self, sequence):
        state = self.cell.initial_state(sequence[0])
        for x in sequence:
            state = self.cell(x, state)
        return state[0]

    def forward(self, sequence):
        if len(sequence) == 0:
            raise ValueError("sequence must be non-empty")
        shape = sequence[0].shape
        if any(x.shape != shape for x in sequence):
            raise ValueError("sequence feature maps must share one shape")
        fwd = self._sweep(list(sequence))
        bwd = self._sweep(list(sequence)[::-1])
        return self.project(torch.cat([fwd, bwd], dim=1))


class Encoder(nn.Module):
    """Full input encoder for one low-resolution frame pair.

    forward() takes frames of shape (B, 2, C, H, W) and returns a feature
    grid (B, C_f, H, W); encode_pair() is the single-pair numpy convenience.
    """

    def __init__(self, in_channels, cfg: EncoderConfig | None = None):
        super().__init__()
        self.cfg = cfg or EncoderConfig()
        self.in_channels = in_channels
        self.extract = FrameFeatureExtractor(in_channels, self.cfg)
        self.blend = FeatureBlend(self.cfg.c_f, self.cfg.kernel)
        self.fuse = BiConvLSTMFusion(
            self.cfg.c_f, self.cfg.lstm_hidden, self.cfg.kernel, self.cfg.c_f
        )

    def forward(self, frames):
        if frames.ndim != 5 or frames.shape[1] != 2:
            raise ValueError(f"frames must be (B, 2, C, H, W), got {tuple(frames.shape)}")
        if frames.shape[2] != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} input channels, got {frames.shape[2]}"
            )
        f0 = self.extract(frames[:, 0])
        f1 = self.extract(frames[:, 1])
        mid = self.blend(f0, f1, 0.5)
        return self.fuse([f0, mid, f1])

    @torch.no_grad()
    def encode_pair(self, pair: SlicePair) -> FeatureGrid:
        # (2, H, W, C) -> (1, 2, C, H, W)
        frames = torch.from_numpy(pair.frames).permute(0, 3, 1, 2).unsqueeze(0)
        grid = self.forward(frames)[0]
        return FeatureGrid(
            features=grid.numpy(), source_shape=tuple(grid.shape[1:])
        )
