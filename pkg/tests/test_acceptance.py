"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The directional-reproduction criteria (A1, A2, A10) train real models on the
synthetic vortex field and take tens of minutes on CPU; they carry the `slow`
marker. Everything else runs in seconds.
"""

import math
import os
import sys

import numpy as np
import pytest
import torch

from ffeinr.flowdata import (
    FlowField,
    downsample,
    from_ffnr_bytes,
    gen_taylor_green,
    load_raw,
    save_raw,
    to_ffnr_bytes,
)
from ffeinr.checkpoint import read_container, write_container
from ffeinr.inr_core import (
    FFEINRModel,
    ModelConfig,
    SirenLayerSpec,
    siren_init,
    siren_uniform_bound,
)
from ffeinr.metrics import (
    PSNR_CAP_DB,
    psnr,
    rmse_per_channel,
    ssim,
    trilinear_upsample,
)
from ffeinr.reduction import (
    ArchiveCorruptionError,
    compress,
    deserialize_archive,
    serialize_archive,
)
from ffeinr.training import (
    TrainConfig,
    evaluate,
    train_one_stage,
    validation_report,
)
from ffeinr.viz import trace_streamlines

from conftest import A1_FACTORS, A1_ITERS, A10_STAGE2_ITERS


def record(criterion: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    sys.__stdout__.write(f"ACCEPTANCE {criterion}: {status} — {detail}\n")
    sys.__stdout__.flush()
    assert ok, f"{criterion} failed: {detail}"


# ---------------------------------------------------------------------------
# A1  directional reproduction at desk scale
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_a1_directional_reproduction(vortex_field, a1_checkpoint):
    rep = validation_report(a1_checkpoint, vortex_field)
    margin = rep["ffeinr_psnr"] - rep["trilinear_psnr"]

    hist = a1_checkpoint.loss_history
    win = max(1, len(hist) // 10)
    loss_drops = float(np.mean(hist[-win:])) < float(np.mean(hist[:win]))

    record(
        "A1",
        margin >= 2.0 and loss_drops,
        f"validation PSNR {rep['ffeinr_psnr']:.2f} dB vs trilinear "
        f"{rep['trilinear_psnr']:.2f} dB (margin {margin:+.2f} dB, need >= +2); "
        f"loss {np.mean(hist[:win]):.4f} -> {np.mean(hist[-win:]):.4f}",
    )


@pytest.mark.slow
def test_supporting_error_panels_reflect_a1(vortex_field, a1_checkpoint):
    # shared-scale error panels of both methods on one held-out frame: the
    # baseline panel must carry the larger mean pixel error
    from ffeinr.training import covered_dims, reconstruct
    from ffeinr.viz import render_error_map

    low = downsample(vortex_field, *A1_FACTORS)
    dims = covered_dims(low.shape, A1_FACTORS)
    model = a1_checkpoint.build_model()
    recon = reconstruct(model, low, a1_checkpoint.norm_stats, dims)
    tri = trilinear_upsample(low, dims, factors=A1_FACTORS)
    rep = validation_report(a1_checkpoint, vortex_field)
    frame = rep["frames"][-1]
    gt = vortex_field.values[frame, : dims[1], : dims[2], :]
    panels = render_error_map([recon.values[frame], tri.values[frame]], gt)
    assert panels[0].vmax == panels[1].vmax
    err_model = np.sqrt(((recon.values[frame] - gt) ** 2).sum(axis=2)).mean()
    err_tri = np.sqrt(((tri.values[frame] - gt) ** 2).sum(axis=2)).mean()
    assert err_tri > err_model


@pytest.mark.slow
def test_supporting_decompress_endpoint_reconstruction(vortex_field, a1_checkpoint):
    # an archive built from the trained model must reproduce the stored
    # low-res frames at the anchored nodes when asked for low dims, up to the
    # trained endpoint reconstruction error
    from ffeinr.reduction import Archive, decompress
    from ffeinr.training import covered_dims, reconstruct

    low = downsample(vortex_field, *A1_FACTORS)
    t, h, w, c = vortex_field.shape
    archive = Archive(
        low=low,
        checkpoint_bytes=a1_checkpoint.to_bytes(),
        stats=a1_checkpoint.norm_stats,
        original_dims=(t, h, w, c),
        meta={
            "original_t": str(t), "original_h": str(h), "original_w": str(w),
            "original_c": str(c), "sx": "4", "st": "2",
            "iters": str(a1_checkpoint.iteration), "seed": "0",
        },
    )
    out = decompress(archive, low.shape[:3])
    assert out.shape == low.shape

    # tolerance: the endpoint error of the dense reconstruction at the
    # trained factor, with headroom
    model = a1_checkpoint.build_model()
    dims = covered_dims(low.shape, A1_FACTORS)
    recon = reconstruct(model, low, a1_checkpoint.norm_stats, dims)
    gt = vortex_field.values[: dims[0], : dims[1], : dims[2], :]
    endpoint_rmse = float(
        np.sqrt(np.mean((recon.values[:: A1_FACTORS[1]] - gt[:: A1_FACTORS[1]]) ** 2))
    )
    low_rmse = float(np.sqrt(np.mean((out.values - low.values) ** 2)))
    assert low_rmse <= 3.0 * endpoint_rmse + 1e-6

    # extended factors through the archive path stay finite
    dense = decompress(archive, (8 * (low.n_frames - 1) + 1, dims[1], dims[2]))
    assert np.isfinite(dense.values).all()


# ---------------------------------------------------------------------------
# A2  extended super-resolution without retraining
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_a2_extended_super_resolution(vortex_field, a1_checkpoint):
    factors = [(2, 2), (4, 4), (4, 8)]
    reports = evaluate(a1_checkpoint, vortex_field, factors)
    by_factor = {}
    for r in reports:
        by_factor.setdefault(r.factor, {})[r.method] = r
    all_finite = all(
        np.isfinite(r.psnr_db) and np.isfinite(r.ssim) and all(np.isfinite(v) for v in r.rmse)
        for r in reports
    )
    wins = sum(
        1
        for f in factors
        if by_factor[f]["ffeinr"].psnr_db > by_factor[f]["trilinear"].psnr_db
    )
    detail = "; ".join(
        f"{f}: {by_factor[f]['ffeinr'].psnr_db:.2f} vs {by_factor[f]['trilinear'].psnr_db:.2f} dB"
        for f in factors
    )
    record("A2", all_finite and wins >= 2, f"wins {wins}/3 extended factors ({detail})")


# ---------------------------------------------------------------------------
# A3  metric oracles
# ---------------------------------------------------------------------------

def _psnr_oracle(pred, gt):
    se = 0.0
    for p, g in zip(pred.ravel(), gt.ravel()):
        se += (float(p) - float(g)) ** 2
    mse = se / pred.size
    if mse == 0.0:
        return PSNR_CAP_DB
    peak = max(abs(float(v)) for v in gt.ravel())
    return 10.0 * math.log10(peak * peak / mse)


def _ssim_oracle(pred, gt):
    lum = float(gt.max() - gt.min()) or 1.0
    c1, c2 = (0.01 * lum) ** 2, (0.03 * lum) ** 2
    scores = []
    for ti in range(pred.shape[0]):
        for ci in range(pred.shape[-1]):
            p = pred[ti, ..., ci].astype(np.float64).ravel()
            g = gt[ti, ..., ci].astype(np.float64).ravel()
            mp, mg = p.mean(), g.mean()
            vp = ((p - mp) ** 2).mean()
            vg = ((g - mg) ** 2).mean()
            cov = ((p - mp) * (g - mg)).mean()
            scores.append(
                ((2 * mp * mg + c1) * (2 * cov + c2))
                / ((mp * mp + mg * mg + c1) * (vp + vg + c2))
            )
    return float(np.mean(scores))


def _rmse_oracle(pred, gt):
    out = []
    for ci in range(pred.shape[-1]):
        d = pred[..., ci].astype(np.float64).ravel() - gt[..., ci].astype(np.float64).ravel()
        out.append(math.sqrt(float((d * d).sum()) / d.size))
    return np.asarray(out)


def test_a3_metric_oracles():
    rng = np.random.default_rng(42)
    worst_psnr = worst_ssim = worst_rmse = 0.0
    for _ in range(100):
        shape = (
            int(rng.integers(1, 4)),
            int(rng.integers(2, 7)),
            int(rng.integers(2, 7)),
            int(rng.integers(1, 4)),
        )
        gt = rng.normal(size=shape)
        pred = gt + rng.normal(scale=rng.uniform(0.01, 1.0), size=shape)
        worst_psnr = max(worst_psnr, abs(psnr(pred, gt) - _psnr_oracle(pred, gt)))
        worst_ssim = max(worst_ssim, abs(ssim(pred, gt) - _ssim_oracle(pred, gt)))
        worst_rmse = max(
            worst_rmse, float(np.abs(rmse_per_channel(pred, gt) - _rmse_oracle(pred, gt)).max())
        )
    a = rng.normal(size=(2, 5, 5, 2))
    identity_exact = (
        psnr(a, a) == PSNR_CAP_DB
        and ssim(a, a) == pytest.approx(1.0, abs=1e-12)
        and np.array_equal(rmse_per_channel(a, a), np.zeros(2))
    )
    record(
        "A3",
        worst_psnr < 1e-6 and worst_rmse < 1e-6 and worst_ssim < 1e-4 and identity_exact,
        f"max |err| over 100 pairs: psnr {worst_psnr:.2e}, rmse {worst_rmse:.2e}, "
        f"ssim {worst_ssim:.2e}; identity exact: {identity_exact}",
    )


# ---------------------------------------------------------------------------
# A4  trilinear exactness
# ---------------------------------------------------------------------------

def test_a4_trilinear_exactness():
    ts = np.arange(4)[:, None, None]
    ys = np.linspace(-1, 1, 5)[None, :, None]
    xs = np.linspace(0, 2, 6)[None, None, :]
    vals = (0.37 - 1.3 * xs + 0.55 * ys + 0.21 * ts).astype(np.float32)
    low = FlowField(values=vals[..., None], extents=(0, 2, -1, 1), dt=1.0)

    def analytic(dims, factors):
        t_hi, h_hi, w_hi = dims
        if factors is None:
            tt = np.arange(t_hi)[:, None, None] * 3 / (t_hi - 1)
            yy = np.linspace(-1, 1, h_hi)[None, :, None]
            xx = np.linspace(0, 2, w_hi)[None, None, :]
        else:
            sf, tf = factors
            tt = np.arange(t_hi)[:, None, None] / tf
            yy = (-1 + np.arange(h_hi) / sf * 0.5)[None, :, None]
            xx = (np.arange(w_hi) / sf * 0.4)[None, None, :]
        return 0.37 - 1.3 * xx + 0.55 * yy + 0.21 * tt

    worst = 0.0
    for dims in [(4, 5, 6), (7, 9, 11), (10, 17, 23)]:
        hi = trilinear_upsample(low, dims)
        worst = max(worst, float(np.abs(hi.values[..., 0] - analytic(dims, None)).max()))
    for factors, dims in [((2, 2), (7, 9, 11)), ((3, 2), (7, 13, 16))]:
        hi = trilinear_upsample(low, dims, factors=factors)
        worst = max(worst, float(np.abs(hi.values[..., 0] - analytic(dims, factors)).max()))

    rng = np.random.default_rng(0)
    rnd = FlowField(values=rng.normal(size=(3, 4, 5, 2)).astype(np.float32))
    hi = trilinear_upsample(rnd, (5, 7, 9), factors=(2, 2))
    nodes_exact = bool(np.allclose(hi.values[::2, ::2, ::2], rnd.values, atol=1e-7))
    record(
        "A4",
        worst < 1e-6 and nodes_exact,
        f"multilinear reproduction max err {worst:.2e} (tol 1e-6); "
        f"low-res nodes exact: {nodes_exact}",
    )


# ---------------------------------------------------------------------------
# A5  full-pipeline gradient correctness
# ---------------------------------------------------------------------------

def test_a5_gradient_correctness():
    torch.manual_seed(11)
    cfg = ModelConfig(
        in_channels=2, c_f=4, spatial_width=8, spatial_depth=2,
        temporal_width=8, temporal_depth=2, decoder_width=8, decoder_depth=1,
        encoder={"c_f": 4, "n_blocks": 1, "kernel": 3},
    )
    model = FFEINRModel(cfg).double()
    rng = np.random.default_rng(5)
    frames = torch.tensor(rng.normal(size=(1, 2, 2, 4, 4)))
    xy = torch.tensor(rng.uniform(-0.85, 0.85, size=(1, 24, 2)))
    t = torch.tensor(rng.uniform(0.05, 0.95, size=(1, 24)))
    target = torch.tensor(rng.normal(size=(1, 24, 2)))

    def loss_value():
        return ((model(frames, xy, t) - target) ** 2).mean()

    model.zero_grad()
    loss_value().backward()
    params = [p for p in model.parameters() if p.grad is not None]
    # small step: global-flow parameters see third derivatives of order
    # (omega0 * lattice scale)^3, so truncation dominates at larger h
    h = 1e-6
    worst = 0.0
    for _ in range(50):
        p = params[rng.integers(len(params))]
        idx = tuple(rng.integers(s) for s in p.shape)
        analytic = p.grad[idx].item()
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + h
            up = loss_value().item()
            p[idx] = orig - h
            dn = loss_value().item()
            p[idx] = orig
        fd = (up - dn) / (2 * h)
        worst = max(worst, abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-7))
    record("A5", worst < 1e-4, f"max relative gradient error {worst:.2e} over 50 probes")


# ---------------------------------------------------------------------------
# A6  sine-layer initialization bounds and uniformity
# ---------------------------------------------------------------------------

def test_a6_siren_initialization():
    from scipy import stats as sps

    specs = [
        SirenLayerSpec(2, 500_000, is_first=True),
        SirenLayerSpec(256, 3907, omega0=30.0),  # ~1e6 weights
    ]
    ok = True
    details = []
    for i, spec in enumerate(specs):
        # pinned seed: a p > 0.01 gate rejects ~1% of genuinely uniform draws
        g = torch.Generator().manual_seed(101 + i)
        w, _ = siren_init(spec, g)
        samples = w.numpy().ravel()
        assert samples.size >= 1_000_000
        bound = siren_uniform_bound(spec)
        inside = bool((np.abs(samples) <= bound).all())
        counts, _ = np.histogram(samples, bins=20, range=(-bound, bound))
        p = float(sps.chisquare(counts).pvalue)
        ok = ok and inside and p > 0.01
        kind = "first" if spec.is_first else "hidden"
        details.append(f"{kind}: bound {bound:.6g}, in-bounds {inside}, chi2 p={p:.3f}")
    record("A6", ok, "; ".join(details))


# ---------------------------------------------------------------------------
# A7  zero-flow collapse
# ---------------------------------------------------------------------------

def test_a7_zero_flow_collapse():
    torch.manual_seed(2)
    cfg = ModelConfig(
        in_channels=2, c_f=8, spatial_width=16, spatial_depth=2,
        temporal_width=16, temporal_depth=2, decoder_width=16, decoder_depth=1,
        encoder={"c_f": 8, "n_blocks": 1, "kernel": 3},
    )
    model = FFEINRModel(cfg)
    with torch.no_grad():
        for p in model.temporal.parameters():
            p.zero_()
    frames = torch.randn(2, 2, 8, 8)
    xy = torch.rand(64, 2) * 2 - 1
    outs = [
        model(frames, xy, torch.full((64,), tv))
        for tv in (0.0, 0.1, 0.25, 0.5, 0.75, 1.0)
    ]
    identical = all(torch.equal(o, outs[0]) for o in outs[1:])
    record("A7", identical, "outputs bit-identical across 6 time values with zeroed flow net")


# ---------------------------------------------------------------------------
# A8  format round trips and corruption detection
# ---------------------------------------------------------------------------

def test_a8_round_trips(tmp_path):
    rng = np.random.default_rng(3)
    fld = FlowField(
        values=rng.normal(size=(3, 5, 6, 2)).astype(np.float32),
        extents=(0.0, 2.5, -1.0, 1.0),
        dt=0.125,
        channel_names=("u_x", "u_y"),
    )
    raw_ok = to_ffnr_bytes(from_ffnr_bytes(to_ffnr_bytes(fld))) == to_ffnr_bytes(fld)
    p = tmp_path / "f.ffnr"
    save_raw(fld, p)
    file_ok = load_raw(p) == fld

    entries = {"a/w": rng.normal(size=(3, 4)).astype(np.float32),
               "b": rng.normal(size=(7,)).astype(np.float32)}
    blob = write_container("k = 1\n", entries)
    text, back = read_container(blob)
    ckpt_ok = (
        write_container(text, back) == blob
        and all(np.array_equal(entries[k], back[k]) for k in entries)
    )

    high = gen_taylor_green(n=12, frames=5, nu=0.05)
    cfg = TrainConfig(sx=2, st=2, iters=2, batch=2, patch=4, seed=0)
    mc = ModelConfig(
        in_channels=2, c_f=8, spatial_width=16, spatial_depth=2,
        temporal_width=16, temporal_depth=2, decoder_width=16, decoder_depth=1,
        encoder={"c_f": 8, "n_blocks": 1, "kernel": 3},
    )
    archive = compress(high, cfg, mc)
    data = serialize_archive(archive)
    arch_ok = serialize_archive(deserialize_archive(data)) == data

    corrupted = bytearray(data)
    corrupted[len(data) // 2] ^= 0x5A
    try:
        deserialize_archive(bytes(corrupted))
        crc_ok = False
    except ArchiveCorruptionError:
        crc_ok = True

    record(
        "A8",
        raw_ok and file_ok and ckpt_ok and arch_ok and crc_ok,
        f"raw bytes {raw_ok}, raw file {file_ok}, checkpoint {ckpt_ok}, "
        f"archive {arch_ok}, corruption detected {crc_ok}",
    )


# ---------------------------------------------------------------------------
# A9  streamline integrator
# ---------------------------------------------------------------------------

def test_a9_streamline_integrator():
    frame = np.zeros((16, 16, 2))
    frame[:, :, 0] = 1.0
    lines = trace_streamlines(frame, (0, 1, 0, 1), [(0.05, 0.4)], step=0.01, max_steps=200)
    straightness = float(np.abs(lines[0].points[:, 1] - 0.4).max())

    xs = np.linspace(-2, 2, 129)
    gx, gy = np.meshgrid(xs, xs)
    rot = np.stack([-gy, gx], axis=-1)
    extents = (-2, 2, -2, 2)

    def closure_error(n_steps):
        step = 2 * math.pi / n_steps
        ln = trace_streamlines(rot, extents, [(1.0, 0.0)], step=step, max_steps=n_steps)[0]
        end = ln.points[-1]
        return float(np.hypot(end[0] - 1.0, end[1]))

    err_1000 = closure_error(1000)
    e1, e2 = closure_error(250), closure_error(500)
    factor = e1 / e2 if e2 > 0 else float("inf")
    record(
        "A9",
        straightness <= 1e-6 and err_1000 <= 0.01 and factor >= 8.0,
        f"straightness {straightness:.2e} (tol 1e-6), period closure {err_1000:.2e} "
        f"(tol 0.01), halving factor {factor:.1f} (need >= 8)",
    )


# ---------------------------------------------------------------------------
# A10  one-stage vs two-stage comparison
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_a10_stage_comparison(vortex_field, a1_checkpoint, two_stage_checkpoint):
    rows = []
    for name, ckpt in (("one-stage", a1_checkpoint), ("two-stage", two_stage_checkpoint)):
        reports = evaluate(ckpt, vortex_field, [A1_FACTORS])
        model_rep = [r for r in reports if r.method == "ffeinr"][0]
        rows.append((name, ckpt.iteration, ckpt.train_config.seed, model_rep))
    header = f"{'mode':<12}{'iters':>8}{'seed':>6}{'psnr_db':>10}{'ssim':>8}{'rmse_ux':>10}{'rmse_uy':>10}"
    table = [header]
    for name, iters, seed, rep in rows:
        table.append(
            f"{name:<12}{iters:>8}{seed:>6}{rep.psnr_db:>10.2f}{rep.ssim:>8.4f}"
            f"{rep.rmse[0]:>10.4f}{rep.rmse[1]:>10.4f}"
        )
    sys.__stdout__.write("\n".join(table) + "\n")

    completed = (
        rows[0][1] == A1_ITERS
        and rows[1][1] == A1_ITERS + A10_STAGE2_ITERS
        and len(two_stage_checkpoint.stage2_factors) == A10_STAGE2_ITERS
    )
    finite = all(np.isfinite(r[3].psnr_db) for r in rows)
    direction = rows[0][3].psnr_db - rows[1][3].psnr_db
    record(
        "A10",
        completed and finite,
        f"both runs complete under fixed seeds; one-stage minus two-stage "
        f"PSNR {direction:+.2f} dB at trained factor (direction reported, not asserted)",
    )


# ---------------------------------------------------------------------------
# A11  optional full-data track
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_a11_full_data_track():
    path = os.environ.get("FFEINR_CYLINDER")
    if not path:
        sys.__stdout__.write(
            "ACCEPTANCE A11: SKIP — FFEINR_CYLINDER not set (optional full-data track)\n"
        )
        pytest.skip("converted Cylinder dataset not available")
    high = load_raw(path)
    low = downsample(high, 4, 2)
    cfg = TrainConfig(sx=4, st=2, iters=7500, batch=16, patch=16, lr=1e-4, seed=0)
    ckpt = train_one_stage(low, high, cfg, ModelConfig(in_channels=high.n_channels))
    rep = validation_report(ckpt, high)
    margin = rep["ffeinr_psnr"] - rep["trilinear_psnr"]
    record(
        "A11",
        rep["ffeinr_psnr"] >= 40.0 and margin >= 4.0,
        f"PSNR {rep['ffeinr_psnr']:.2f} dB (need >= 40), margin {margin:+.2f} dB (need >= +4)",
    )
