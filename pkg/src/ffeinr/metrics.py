"""Trilinear space-time interpolation baseline and evaluation metrics.

Conventions, fixed here because they matter when comparing numbers:

* PSNR uses the global maximum of |reference| over all frames and channels,
  in physical units, and one MSE over all elements. Identical inputs return
  the cap value 99.0 dB.
* SSIM uses global per-(frame, channel) statistics over the whole slice (no
  sliding window), with c1 = (0.01 L)^2, c2 = (0.03 L)^2 and L the global
  reference max - min; the reported value is the mean over frames and
  channels.
* RMSE is computed separately per channel on physical values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flowdata import FlowField

PSNR_CAP_DB = 99.0


@dataclass
class MetricReport:
    """Evaluation result for one method at one factor pair."""

    method: str
    factor: tuple[int, int]  # (s_factor, t_factor)
    psnr_db: float
    ssim: float
    rmse: tuple[float, ...]  # per channel
    per_timestep_psnr: tuple[float, ...] = ()

    def __post_init__(self):
        if any(r < 0 for r in self.rmse):
            raise ValueError("rmse must be non-negative")
        if self.ssim > 1.0 + 1e-9:
            raise ValueError(f"ssim {self.ssim} exceeds 1")


def _values(a) -> np.ndarray:
    return a.values if isinstance(a, FlowField) else np.asarray(a)


def _check_shapes(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _values(pred).astype(np.float64), _values(gt).astype(np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    return p, g


# ---------------------------------------------------------------------------
# Trilinear baseline
# ---------------------------------------------------------------------------

def _axis_fractions(n_src: int, n_dst: int, factor=None) -> np.ndarray:
    """Fractional source indices for n_dst nodes along one axis.

    With an integer `factor` the mapping is node-anchored (destination node m
    lands on source index m / factor, so source node k is exact at m = k *
    factor); indices past the last source node extrapolate linearly through
    the final cell. Without a factor the endpoints are mapped to endpoints.
    """
    if factor is not None:
        return np.arange(n_dst) / float(factor)
    if n_dst == 1:
        return np.zeros(1)
    return np.arange(n_dst) * (n_src - 1) / (n_dst - 1)


def _lerp_axis(arr: np.ndarray, axis: int, u: np.ndarray) -> np.ndarray:
    """Linear interpolation along one axis at fractional indices u.

    Indices beyond [0, n-1] use the slope of the nearest cell (linear
    extrapolation), which keeps multilinear fields exact everywhere.
    """
    n = arr.shape[axis]
    if n == 1:
        if not np.allclose(u, 0.0):
            raise ValueError("cannot interpolate along a singleton axis")
        reps = [1] * arr.ndim
        reps[axis] = len(u)
        return np.tile(arr, reps)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, n - 2)
    w = u - i0
    a0 = np.take(arr, i0, axis=axis)
    a1 = np.take(arr, i0 + 1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = len(u)
    w = w.reshape(shape)
    return a0 * (1.0 - w) + a1 * w


def trilinear_upsample(
    low: FlowField,
    target_dims: tuple[int, int, int],
    factors: tuple[int, int] | None = None,
) -> FlowField:
    """Separable linear interpolation in t, y, x up to target dims (T, H, W).

    When `factors` = (s, t) is given, the lattice is node-anchored: low node k
    maps exactly onto target node k * factor. Otherwise the low grid is
    stretched endpoint-to-endpoint over the target grid.
    """
    t_dst, h_dst, w_dst = (int(d) for d in target_dims)
    t_src, h_src, w_src, _ = low.shape
    if t_dst < t_src or h_dst < h_src or w_dst < w_src:
        raise ValueError(f"target dims {target_dims} smaller than source {low.shape[:3]}")
    if (t_dst > t_src and t_src < 2) or (h_dst > h_src and h_src < 2) or (
        w_dst > w_src and w_src < 2
    ):
        raise ValueError("need at least 2 source nodes along any interpolated axis")

    sf = tf = None
    if factors is not None:
        sf, tf = int(factors[0]), int(factors[1])
        if sf < 1 or tf < 1:
            raise ValueError(f"factors must be >= 1, got {factors}")

    vals = low.values.astype(np.float64)
    vals = _lerp_axis(vals, 0, _axis_fractions(t_src, t_dst, tf))
    vals = _lerp_axis(vals, 1, _axis_fractions(h_src, h_dst, sf))
    vals = _lerp_axis(vals, 2, _axis_fractions(w_src, w_dst, sf))

    dt = low.dt / tf if tf is not None else (
        low.dt * (t_src - 1) / (t_dst - 1) if t_dst > 1 else low.dt
    )
    return FlowField(
        values=vals.astype(np.float32),
        extents=low.extents,
        dt=dt,
        channel_names=low.channel_names,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def psnr(pred, gt) -> float:
    """Peak signal-to-noise ratio in dB: 10 log10(MAX^2 / MSE) with MAX the
    global maximum of |gt|. Zero MSE returns the 99 dB cap."""
    p, g = _check_shapes(pred, gt)
    mse = float(np.mean((p - g) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    peak = float(np.abs(g).max())
    if peak == 0.0:
        return float("-inf")
    return float(10.0 * np.log10(peak * peak / mse))


def psnr_per_frame(pred, gt) -> np.ndarray:
    """PSNR per leading-axis frame, sharing the global MAX of |gt| so the
    series is comparable across time."""
    p, g = _check_shapes(pred, gt)
    peak = float(np.abs(g).max())
    axes = tuple(range(1, p.ndim))
    mse = np.mean((p - g) ** 2, axis=axes)
    out = np.full(len(mse), PSNR_CAP_DB)
    nz = mse > 0.0
    if peak == 0.0:
        out[nz] = float("-inf")
    else:
        out[nz] = 10.0 * np.log10(peak * peak / mse[nz])
    return out


def ssim(pred, gt) -> float:
    """Global-statistics structural similarity.

    Computed per (frame, channel) from whole-slice means, variances and
    covariance, then averaged. L is the global gt max - min (clamped to 1 for
    constant references).
    """
    p, g = _check_shapes(pred, gt)
    if p.ndim < 3:
        p = p.reshape(p.shape + (1,) * (3 - p.ndim))
        g = g.reshape(g.shape + (1,) * (3 - g.ndim))
    # flatten everything except frame (first) and channel (last) axes
    t, c = p.shape[0], p.shape[-1]
    p = p.reshape(t, -1, c)
    g = g.reshape(t, -1, c)
    lum_range = float(g.max() - g.min())
    if lum_range == 0.0:
        lum_range = 1.0
    c1 = (0.01 * lum_range) ** 2
    c2 = (0.03 * lum_range) ** 2
    mu_p = p.mean(axis=1)
    mu_g = g.mean(axis=1)
    var_p = p.var(axis=1)
    var_g = g.var(axis=1)
    cov = ((p - mu_p[:, None, :]) * (g - mu_g[:, None, :])).mean(axis=1)
    score = ((2 * mu_p * mu_g + c1) * (2 * cov + c2)) / (
        (mu_p**2 + mu_g**2 + c1) * (var_p + var_g + c2)
    )
    return float(score.mean())


def rmse_per_channel(pred, gt) -> np.ndarray:
    """Root-mean-square error per channel (channels on the last axis)."""
    p, g = _check_shapes(pred, gt)
    axes = tuple(range(p.ndim - 1))
    return np.sqrt(np.mean((p - g) ** 2, axis=axes))
