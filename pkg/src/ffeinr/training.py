"""One-stage training with Charbonnier loss and Adam, the optional two-stage
fine-tuning mode with randomly resampled factors, dense reconstruction, and
the factor-sweep evaluation protocol.

Loss is computed on normalized values; all reported metrics are computed on
denormalized (physical) values. Normalization statistics always come from the
low-resolution field, because that is all a decompressing consumer has.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .flowdata import (
    FlowField,
    NormStats,
    crop_patch,
    downsample,
    normalize,
)
from .inr_core import FFEINRModel, ModelConfig
from .metrics import (
    MetricReport,
    psnr,
    psnr_per_frame,
    rmse_per_channel,
    ssim,
    trilinear_upsample,
)


class TrainingDivergedError(RuntimeError):
    """Raised when the loss goes non-finite; carries run diagnostics."""

    def __init__(self, iteration, lr, seed):
        self.iteration, self.lr, self.seed = iteration, lr, seed
        super().__init__(
            f"non-finite loss at iteration {iteration} (lr={lr:g}, seed={seed})"
        )


@dataclass
class TrainConfig:
    sx: int = 4  # spatial training factor
    st: int = 2  # temporal training factor
    iters: int = 7500
    batch: int = 16
    patch: int = 16
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    charbonnier_eps: float = 1e-3
    seed: int = 0
    two_stage: bool = False
    stage2_iters: int = 0
    stage2_factor_ranges: tuple[tuple[int, int], tuple[int, int]] = ((2, 4), (2, 8))
    holdout_frac: float = 0.1
    lr_drop_iters: tuple[int, ...] = (4000, 6000)
    lr_drop_gamma: float = 0.5

    def __post_init__(self):
        if self.sx < 1 or self.st < 1:
            raise ValueError("factors must be >= 1")
        if self.iters < 1 or self.batch < 1 or self.patch < 2:
            raise ValueError("iters/batch must be >= 1 and patch >= 2")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if not self.charbonnier_eps > 0:
            raise ValueError("charbonnier_eps must be positive")
        (s_lo, s_hi), (t_lo, t_hi) = self.stage2_factor_ranges
        if s_lo < 1 or t_lo < 1 or s_hi < s_lo or t_hi < t_lo:
            raise ValueError(f"bad stage-2 factor ranges {self.stage2_factor_ranges}")

    def to_flat(self) -> dict:
        d = {}
        for f in dc_fields(self):
            v = getattr(self, f.name)
            if f.name == "stage2_factor_ranges":
                d["stage2_s_min"], d["stage2_s_max"] = v[0]
                d["stage2_t_min"], d["stage2_t_max"] = v[1]
            elif f.name == "lr_drop_iters":
                d["lr_drop_iters"] = ",".join(str(i) for i in v)
            else:
                d[f.name] = v
        return d

    @classmethod
    def from_flat(cls, d: dict) -> "TrainConfig":
        def get(key, conv, default):
            return conv(d[key]) if key in d else default

        def as_bool(v):
            return v if isinstance(v, bool) else str(v).lower() in ("true", "1", "yes")

        drops = d.get("lr_drop_iters", "4000,6000")
        if isinstance(drops, str):
            drops = tuple(int(x) for x in drops.split(",") if x.strip())
        return cls(
            sx=get("sx", int, 4),
            st=get("st", int, 2),
            iters=get("iters", int, 7500),
            batch=get("batch", int, 16),
            patch=get("patch", int, 16),
            lr=get("lr", float, 1e-4),
            beta1=get("beta1", float, 0.9),
            beta2=get("beta2", float, 0.99),
            charbonnier_eps=get("charbonnier_eps", float, 1e-3),
            seed=get("seed", int, 0),
            two_stage=get("two_stage", as_bool, False),
            stage2_iters=get("stage2_iters", int, 0),
            stage2_factor_ranges=(
                (get("stage2_s_min", int, 2), get("stage2_s_max", int, 4)),
                (get("stage2_t_min", int, 2), get("stage2_t_max", int, 8)),
            ),
            holdout_frac=get("holdout_frac", float, 0.1),
            lr_drop_iters=tuple(drops),
            lr_drop_gamma=get("lr_drop_gamma", float, 0.5),
        )


# ---------------------------------------------------------------------------
# Flat key = value config text
# ---------------------------------------------------------------------------

def format_config_text(d: dict) -> str:
    out = io.StringIO()
    for k, v in d.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        out.write(f"{k} = {v}\n")
    return out.getvalue()


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def charbonnier(pred, target, eps=1e-3):
    """Smooth robust loss: mean of sqrt((pred - target)^2 + eps^2)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    pred = torch.as_tensor(pred)
    target = torch.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return torch.sqrt((pred - target) ** 2 + eps * eps).mean()


# ---------------------------------------------------------------------------
# Checkpoint
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Everything needed to rebuild the trained model bit-identically."""

    model_state: dict[str, np.ndarray]
    model_config: ModelConfig
    train_config: TrainConfig
    norm_stats: NormStats
    iteration: int
    loss_history: np.ndarray
    stage2_factors: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 2), dtype=np.float32)
    )

    def to_bytes(self) -> bytes:
        cfg = dict(self.train_config.to_flat())
        cfg.update(self.model_config.to_flat())
        cfg["iteration"] = self.iteration
        cfg["norm_offset"] = ",".join(repr(float(v)) for v in self.norm_stats.offset)
        cfg["norm_scale"] = ",".join(repr(float(v)) for v in self.norm_stats.scale)
        entries = {f"model/{k}": v for k, v in self.model_state.items()}
        entries["history/loss"] = np.asarray(self.loss_history, dtype=np.float32)
        entries["history/stage2_factors"] = np.asarray(self.stage2_factors, dtype=np.float32)
        return ckpt_io.write_container(format_config_text(cfg), entries)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        config_text, entries = ckpt_io.read_container(data)
        cfg = parse_config_text(config_text)
        stats = NormStats(
            offset=np.array([float(v) for v in cfg["norm_offset"].split(",")]),
            scale=np.array([float(v) for v in cfg["norm_scale"].split(",")]),
        )
        state = {
            k[len("model/") :]: v for k, v in entries.items() if k.startswith("model/")
        }
        return cls(
            model_state=state,
            model_config=ModelConfig.from_flat(cfg),
            train_config=TrainConfig.from_flat(cfg),
            norm_stats=stats,
            iteration=int(cfg["iteration"]),
            loss_history=entries["history/loss"],
            stage2_factors=entries["history/stage2_factors"].reshape(-1, 2),
        )

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())

    def build_model(self) -> FFEINRModel:
        model = FFEINRModel(self.model_config)
        state = {k: torch.from_numpy(v.copy()) for k, v in self.model_state.items()}
        model.load_state_dict(state, strict=True)
        model.eval()
        return model


def state_to_numpy(model: FFEINRModel) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().astype(np.float32, copy=True) for k, v in model.state_dict().items()}


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def holdout_pairs(n_pairs: int, frac: float = 0.1) -> list[int]:
    """Indices of the slice pairs held out for validation (the trailing ones)."""
    if n_pairs < 2 or frac <= 0:
        return []
    k = min(n_pairs - 1, max(1, round(frac * n_pairs)))
    return list(range(n_pairs - k, n_pairs))


def _train_pairs(n_pairs: int, frac: float) -> np.ndarray:
    held = set(holdout_pairs(n_pairs, frac))
    keep = [k for k in range(n_pairs) if k not in held]
    return np.asarray(keep if keep else list(range(n_pairs)))


def _assemble_batch(low_n, high_n, factors, cfg, rng, pairs):
    samples = [
        crop_patch(low_n, high_n, factors, cfg.patch, rng, pairs=pairs)
        for _ in range(cfg.batch)
    ]
    frames = np.stack([s.pair.frames for s in samples])  # (B, 2, p, p, C)
    frames = torch.from_numpy(frames).permute(0, 1, 4, 2, 3).contiguous()
    xy = torch.from_numpy(np.stack([s.coords.xy for s in samples]))
    t = torch.from_numpy(np.stack([s.coords.t for s in samples]))
    target = torch.from_numpy(
        np.stack([s.target.reshape(-1, s.target.shape[-1]) for s in samples])
    )
    return frames, xy, t, target


def _lr_at(cfg: TrainConfig, iteration: int) -> float:
    drops = sum(1 for d in cfg.lr_drop_iters if iteration >= d)
    return cfg.lr * (cfg.lr_drop_gamma**drops)


def _check_alignment(low: FlowField, high: FlowField, cfg: TrainConfig) -> None:
    expected = high.values[:: cfg.st, :: cfg.sx, :: cfg.sx, :]
    if low.values.shape != expected.shape or not np.array_equal(low.values, expected):
        raise ValueError("low is not the (sx, st)-strided downsample of high")


def _run_steps(model, opt, cfg, iters, start_iter, batch_fn, history):
    for i in range(iters):
        it = start_iter + i
        lr = _lr_at(cfg, it)
        for group in opt.param_groups:
            group["lr"] = lr
        frames, xy, t, target = batch_fn(it)
        loss = charbonnier(model(frames, xy, t), target, cfg.charbonnier_eps)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(iteration=it, lr=lr, seed=cfg.seed)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(np.float32(loss.item()))


def train_one_stage(
    low: FlowField, high: FlowField, cfg: TrainConfig, model_cfg: ModelConfig | None = None
) -> Checkpoint:
    """Fixed-factor training of the full pipeline.

    Every step draws `batch` random patch samples (random pair from the
    training split, random crop, random target step among the st + 1 high-res
    steps of the interval) and takes one Adam step on the Charbonnier loss.
    """
    _check_alignment(low, high, cfg)
    if cfg.patch > min(low.shape[1], low.shape[2]):
        raise ValueError(f"patch {cfg.patch} exceeds low-res grid {low.shape[1:3]}")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    low_n, stats = normalize(low)
    high_n = FlowField(
        values=stats.encode(high.values),
        extents=high.extents,
        dt=high.dt,
        channel_names=high.channel_names,
    )
    if model_cfg is None:
        model_cfg = ModelConfig(in_channels=low.n_channels)
    model = FFEINRModel(model_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))

    pairs = _train_pairs(low.n_frames - 1, cfg.holdout_frac)
    history: list[np.float32] = []

    def batch_fn(_it):
        return _assemble_batch(low_n, high_n, (cfg.sx, cfg.st), cfg, rng, pairs)

    _run_steps(model, opt, cfg, cfg.iters, 0, batch_fn, history)
    return Checkpoint(
        model_state=state_to_numpy(model),
        model_config=model_cfg,
        train_config=cfg,
        norm_stats=stats,
        iteration=cfg.iters,
        loss_history=np.asarray(history, dtype=np.float32),
    )


def train_two_stage(
    low: FlowField, high: FlowField, cfg: TrainConfig, model_cfg: ModelConfig | None = None
) -> Checkpoint:
    """Fixed-factor training followed by fine-tuning with factors resampled
    uniformly per batch from cfg.stage2_factor_ranges."""
    (s_lo, s_hi), (t_lo, t_hi) = cfg.stage2_factor_ranges
    probe = downsample(high, s_hi, t_hi)
    if cfg.patch > min(probe.shape[1], probe.shape[2]) or probe.n_frames < 2:
        raise ValueError(
            f"stage-2 ranges {cfg.stage2_factor_ranges} shrink the grid below "
            f"patch {cfg.patch} / two frames"
        )

    base = train_one_stage(low, high, cfg, model_cfg)
    if cfg.stage2_iters == 0:
        return base

    torch.manual_seed(cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed + 1)
    stats = base.norm_stats
    high_n = FlowField(
        values=stats.encode(high.values),
        extents=high.extents,
        dt=high.dt,
        channel_names=high.channel_names,
    )
    lows: dict[tuple[int, int], FlowField] = {}

    model = base.build_model()
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))

    history = list(base.loss_history)
    factor_log: list[tuple[int, int]] = []

    def batch_fn(_it):
        sx = int(rng.integers(s_lo, s_hi + 1))
        st = int(rng.integers(t_lo, t_hi + 1))
        factor_log.append((sx, st))
        key = (sx, st)
        if key not in lows:
            lows[key] = downsample(high_n, sx, st)
        low_i = lows[key]
        pairs = _train_pairs(low_i.n_frames - 1, cfg.holdout_frac)
        return _assemble_batch(low_i, high_n, key, cfg, rng, pairs)

    _run_steps(model, opt, cfg, cfg.stage2_iters, cfg.iters, batch_fn, history)
    return Checkpoint(
        model_state=state_to_numpy(model),
        model_config=base.model_config,
        train_config=cfg,
        norm_stats=stats,
        iteration=cfg.iters + cfg.stage2_iters,
        loss_history=np.asarray(history, dtype=np.float32),
        stage2_factors=np.asarray(factor_log, dtype=np.float32).reshape(-1, 2),
    )


# ---------------------------------------------------------------------------
# Dense reconstruction and evaluation
# ---------------------------------------------------------------------------

def covered_dims(low_shape, factors) -> tuple[int, int, int]:
    """Highest-resolution dims whose node-anchored lattice the low grid fully
    covers: low node k maps to high node k * factor."""
    t_l, h_l, w_l = low_shape[:3]
    sx, st = factors
    return (st * (t_l - 1) + 1, sx * (h_l - 1) + 1, sx * (w_l - 1) + 1)


def reconstruct(
    model: FFEINRModel,
    low: FlowField,
    stats: NormStats,
    out_dims: tuple[int, int, int],
    chunk: int = 65536,
) -> FlowField:
    """Query the model on a dense lattice of the requested dims.

    Output frame j at fractional low-res time tau = j * (T_l - 1) / (T_o - 1)
    is produced from the slice pair (floor(tau), floor(tau) + 1); spatial
    queries span [-1, 1]^2 over the requested grid. Values are denormalized.
    """
    t_o, h_o, w_o = (int(d) for d in out_dims)
    t_l, h_l, w_l, c = low.shape
    if t_l < 2:
        raise ValueError("need at least two low-res frames to reconstruct")
    if t_o < t_l or h_o < h_l or w_o < w_l:
        raise ValueError(f"requested dims {out_dims} below low-res dims {low.shape[:3]}")

    xs = np.linspace(-1.0, 1.0, w_o, dtype=np.float32)
    ys = np.linspace(-1.0, 1.0, h_o, dtype=np.float32)
    gx, gy = np.meshgrid(xs, ys)
    xy_all = torch.from_numpy(np.stack([gx.ravel(), gy.ravel()], axis=1)).unsqueeze(0)
    n = xy_all.shape[1]

    tau = np.arange(t_o) * (t_l - 1) / (t_o - 1)
    interval = np.minimum(np.floor(tau).astype(int), t_l - 2)
    t_loc = (tau - interval).astype(np.float32)

    low_n = stats.encode(low.values)
    out = np.empty((t_o, h_o, w_o, c), dtype=np.float32)
    model.eval()
    with torch.no_grad():
        for k in range(t_l - 1):
            js = np.nonzero(interval == k)[0]
            if len(js) == 0:
                continue
            frames = (
                torch.from_numpy(low_n[k : k + 2]).permute(0, 3, 1, 2).unsqueeze(0)
            )
            grid = model.encode_frames(frames)
            for j in js:
                t_full = torch.full((1, n), float(t_loc[j]))
                vals = np.empty((n, c), dtype=np.float32)
                for lo in range(0, n, chunk):
                    hi = min(lo + chunk, n)
                    v = model.query_values(grid, xy_all[:, lo:hi], t_full[:, lo:hi])
                    vals[lo:hi] = v[0].numpy()
                out[j] = stats.decode(vals).reshape(h_o, w_o, c)
    dt = low.dt * (t_l - 1) / (t_o - 1) if t_o > 1 else low.dt
    return FlowField(
        values=out, extents=low.extents, dt=dt, channel_names=low.channel_names
    )


def _report(method, factor, pred: FlowField, gt: FlowField) -> MetricReport:
    return MetricReport(
        method=method,
        factor=tuple(factor),
        psnr_db=psnr(pred, gt),
        ssim=ssim(pred.values, gt.values),
        rmse=tuple(float(r) for r in rmse_per_channel(pred, gt)),
        per_timestep_psnr=tuple(float(p) for p in psnr_per_frame(pred.values, gt.values)),
    )


def evaluate(ckpt: Checkpoint, high: FlowField, factors) -> list[MetricReport]:
    """Downsample, reconstruct and score at each factor pair, alongside the
    trilinear baseline on identical inputs.

    Metrics cover the node-anchored region the low grid spans (indices up to
    factor * (n_low - 1) per axis); when the factor does not divide the grid,
    the few uncovered edge nodes are extrapolation for every method and are
    excluded from scoring.
    """
    model = ckpt.build_model()
    reports = []
    for factor in factors:
        sx, st = int(factor[0]), int(factor[1])
        low = downsample(high, sx, st)
        if low.n_frames < 2 or low.shape[1] < 2 or low.shape[2] < 2:
            raise ValueError(f"factor {factor} exceeds the grid {high.shape[:3]}")
        dims = covered_dims(low.shape, (sx, st))
        gt = FlowField(
            values=high.values[: dims[0], : dims[1], : dims[2], :],
            extents=high.extents,
            dt=high.dt,
            channel_names=high.channel_names,
        )
        recon = reconstruct(model, low, ckpt.norm_stats, dims)
        tri = trilinear_upsample(low, dims, factors=(sx, st))
        reports.append(_report("ffeinr", (sx, st), recon, gt))
        reports.append(_report("trilinear", (sx, st), tri, gt))
    return reports


def validation_frames(n_pairs: int, st: int, frac: float = 0.1) -> list[int]:
    """High-res frame indices used for validation: the intermediate steps of
    the held-out trailing slice pairs (endpoints excluded when st > 1)."""
    held = holdout_pairs(n_pairs, frac)
    frames = []
    for k in held:
        steps = range(1, st) if st > 1 else range(0, 2)
        frames.extend(k * st + j for j in steps)
    return sorted(set(frames))


def validation_report(ckpt: Checkpoint, high: FlowField) -> dict:
    """PSNR of the model vs the trilinear baseline on held-out intermediate
    frames at the trained factor pair."""
    cfg = ckpt.train_config
    low = downsample(high, cfg.sx, cfg.st)
    dims = covered_dims(low.shape, (cfg.sx, cfg.st))
    gt_vals = high.values[: dims[0], : dims[1], : dims[2], :]
    model = ckpt.build_model()
    recon = reconstruct(model, low, ckpt.norm_stats, dims)
    tri = trilinear_upsample(low, dims, factors=(cfg.sx, cfg.st))
    frames = validation_frames(low.n_frames - 1, cfg.st, cfg.holdout_frac)
    if not frames:
        frames = list(range(dims[0]))
    sel = np.asarray(frames)
    return {
        "frames": frames,
        "ffeinr_psnr": psnr(recon.values[sel], gt_vals[sel]),
        "trilinear_psnr": psnr(tri.values[sel], gt_vals[sel]),
    }
