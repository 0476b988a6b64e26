"""Figure generation: velocity-magnitude color maps, error maps with a shared
scale across panels, and classical 4th-order Runge-Kutta streamline tracing
with bilinear velocity sampling.

Colormaps are fixed lookup tables built from hardcoded anchor colors, so
renders are byte-deterministic across library versions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Sequential magnitude map: dark violet -> teal -> yellow anchors.
SEQUENTIAL_ANCHORS = (
    (0.267, 0.005, 0.329),
    (0.283, 0.141, 0.458),
    (0.254, 0.265, 0.530),
    (0.207, 0.372, 0.553),
    (0.164, 0.471, 0.558),
    (0.128, 0.567, 0.551),
    (0.135, 0.659, 0.518),
    (0.267, 0.749, 0.441),
    (0.478, 0.821, 0.318),
    (0.741, 0.873, 0.150),
    (0.993, 0.906, 0.144),
)

# Error map diverging away from zero: white at zero through orange to dark red.
ERROR_ANCHORS = (
    (1.000, 1.000, 1.000),
    (0.996, 0.800, 0.500),
    (0.930, 0.400, 0.220),
    (0.700, 0.080, 0.100),
    (0.400, 0.000, 0.050),
)

STAGNATION_SPEED = 1e-9


def build_lut(anchors, n: int = 256) -> np.ndarray:
    """Linear interpolation of RGB anchors into an (n, 3) uint8 table."""
    anchors = np.asarray(anchors, dtype=np.float64)
    pos = np.linspace(0.0, 1.0, len(anchors))
    xs = np.linspace(0.0, 1.0, n)
    rgb = np.stack([np.interp(xs, pos, anchors[:, c]) for c in range(3)], axis=1)
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


SEQUENTIAL_LUT = build_lut(SEQUENTIAL_ANCHORS)
ERROR_LUT = build_lut(ERROR_ANCHORS)


@dataclass
class RenderedImage:
    rgb: np.ndarray  # (H, W, 3) uint8
    vmin: float
    vmax: float


@dataclass
class Streamline:
    """Polyline traced through the velocity field from one seed point."""

    points: np.ndarray  # (n, 2) domain coordinates
    seed: tuple[float, float]


def apply_colormap(values: np.ndarray, vmin: float, vmax: float, lut: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if vmax > vmin:
        idx = np.clip((values - vmin) / (vmax - vmin) * (len(lut) - 1), 0, len(lut) - 1)
    else:
        idx = np.zeros_like(values)
    return lut[np.round(idx).astype(np.int64)]


def _magnitude(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.size == 0:
        raise ValueError(f"frame must be a non-empty (H, W, C) array, got {frame.shape}")
    if frame.shape[2] >= 2:
        return np.hypot(frame[:, :, 0], frame[:, :, 1])
    return frame[:, :, 0]


def render_magnitude_map(frame: np.ndarray) -> RenderedImage:
    """Velocity-magnitude color map of one frame.

    Vector frames (C >= 2) map sqrt(u_x^2 + u_y^2) on a scale anchored at
    zero; scalar frames map the raw value over its own range.
    """
    mag = _magnitude(frame)
    vmin = 0.0 if np.asarray(frame).shape[2] >= 2 else float(mag.min())
    vmax = float(mag.max())
    return RenderedImage(
        rgb=apply_colormap(mag, vmin, vmax, SEQUENTIAL_LUT), vmin=vmin, vmax=vmax
    )


def render_error_map(pred, gt):
    """Per-pixel error magnitude |pred - gt| on a colormap diverging from zero.

    `pred` may be a single frame or a sequence of frames (one per method); all
    panels of one call share a common scale (the max error across panels) so
    they stay comparable.
    """
    single = not isinstance(pred, (list, tuple))
    preds = [pred] if single else list(pred)
    gt = np.asarray(gt, dtype=np.float64)
    errors = []
    for p in preds:
        p = np.asarray(p, dtype=np.float64)
        if p.shape != gt.shape:
            raise ValueError(f"shape mismatch: pred {p.shape} vs gt {gt.shape}")
        errors.append(np.sqrt(((p - gt) ** 2).sum(axis=2)))
    vmax = max(float(e.max()) for e in errors)
    images = [
        RenderedImage(rgb=apply_colormap(e, 0.0, vmax, ERROR_LUT), vmin=0.0, vmax=vmax)
        for e in errors
    ]
    return images[0] if single else images


def write_png(path, rgb: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# Streamlines
# ---------------------------------------------------------------------------

def bilinear_velocity(frame: np.ndarray, extents, pts: np.ndarray) -> np.ndarray:
    """Sample (u_x, u_y) at domain points by bilinear interpolation; samples
    outside the grid clamp to the border."""
    h, w = frame.shape[:2]
    x_min, x_max, y_min, y_max = extents
    pts = np.atleast_2d(pts)
    cx = np.clip((pts[:, 0] - x_min) / (x_max - x_min) * (w - 1), 0, w - 1)
    cy = np.clip((pts[:, 1] - y_min) / (y_max - y_min) * (h - 1), 0, h - 1)
    ix = np.minimum(cx.astype(np.int64), w - 2)
    iy = np.minimum(cy.astype(np.int64), h - 2)
    fx = (cx - ix)[:, None]
    fy = (cy - iy)[:, None]
    v00 = frame[iy, ix, :2]
    v01 = frame[iy, ix + 1, :2]
    v10 = frame[iy + 1, ix, :2]
    v11 = frame[iy + 1, ix + 1, :2]
    return (
        v00 * (1 - fx) * (1 - fy)
        + v01 * fx * (1 - fy)
        + v10 * (1 - fx) * fy
        + v11 * fx * fy
    )


def _inside(pt, extents) -> bool:
    x_min, x_max, y_min, y_max = extents
    return x_min <= pt[0] <= x_max and y_min <= pt[1] <= y_max


def trace_streamlines(
    frame: np.ndarray,
    extents,
    seeds,
    step: float,
    max_steps: int,
) -> list[Streamline]:
    """Integrate dx/ds = u(x) with classical fixed-step RK4 from each seed.

    A trace terminates at the domain boundary (the exiting point is not
    recorded), after max_steps, or when the local speed stagnates below
    1e-9.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[2] < 2:
        raise ValueError("frame must be (H, W, C>=2)")
    if not step > 0:
        raise ValueError("step must be positive")

    def vel(p):
        return bilinear_velocity(frame, extents, p[None])[0]

    lines = []
    for seed in seeds:
        p = np.asarray(seed, dtype=np.float64)
        if not _inside(p, extents):
            raise ValueError(f"seed {tuple(seed)} outside extents {extents}")
        pts = [p.copy()]
        for _ in range(max_steps):
            k1 = vel(p)
            if np.hypot(*k1) < STAGNATION_SPEED:
                break
            k2 = vel(p + 0.5 * step * k1)
            k3 = vel(p + 0.5 * step * k2)
            k4 = vel(p + step * k3)
            p_next = p + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not _inside(p_next, extents):
                break
            p = p_next
            pts.append(p.copy())
        lines.append(Streamline(points=np.asarray(pts), seed=(float(seed[0]), float(seed[1]))))
    return lines


def random_seeds(extents, n: int, rng: np.random.Generator, inset: float = 0.05) -> np.ndarray:
    """Uniform seed points over the interior of the domain, inset by a margin
    fraction per side so traces do not start on the boundary."""
    x_min, x_max, y_min, y_max = extents
    dx, dy = x_max - x_min, y_max - y_min
    xs = rng.uniform(x_min + inset * dx, x_max - inset * dx, n)
    ys = rng.uniform(y_min + inset * dy, y_max - inset * dy, n)
    return np.stack([xs, ys], axis=1)


def render_streamline_map(
    frame: np.ndarray,
    extents,
    streamlines,
    line_color=(255, 255, 255),
    upscale: int = 4,
) -> RenderedImage:
    """Streamlines drawn over the velocity-magnitude background."""
    base = render_magnitude_map(np.asarray(frame))
    rgb = np.repeat(np.repeat(base.rgb, upscale, axis=0), upscale, axis=1).copy()
    h, w = rgb.shape[:2]
    x_min, x_max, y_min, y_max = extents
    color = np.asarray(line_color, dtype=np.uint8)
    for line in streamlines:
        pts = line.points
        for a, b in zip(pts[:-1], pts[1:]):
            seg = np.hypot(*(b - a))
            # dense enough sampling that consecutive samples touch pixels
            n = max(2, int(np.ceil(seg / min(x_max - x_min, y_max - y_min) * max(h, w) * 2)))
            ts = np.linspace(0.0, 1.0, n)[:, None]
            xy = a[None, :] * (1 - ts) + b[None, :] * ts
            cols = np.clip(
                np.round((xy[:, 0] - x_min) / (x_max - x_min) * (w - 1)), 0, w - 1
            ).astype(int)
            rows = np.clip(
                np.round((xy[:, 1] - y_min) / (y_max - y_min) * (h - 1)), 0, h - 1
            ).astype(int)
            rgb[rows, cols] = color
    return RenderedImage(rgb=rgb, vmin=base.vmin, vmax=base.vmax)
