"""Session-scoped fixtures for the training-backed acceptance runs.

The trained checkpoints are expensive (tens of minutes on CPU). They are
built once per session and additionally cached on disk keyed by a hash of
the package sources and the run configuration, so unrelated test iterations
do not retrain. Set FFEINR_TEST_FRESH=1 to force retraining.
"""

import hashlib
import os
import sys
import time
from pathlib import Path

import pytest

import ffeinr
from ffeinr.flowdata import downsample, gen_taylor_green
from ffeinr.inr_core import ModelConfig
from ffeinr.training import Checkpoint, TrainConfig, train_one_stage, train_two_stage

A1_FACTORS = (4, 2)
A1_ITERS = 2000
A10_STAGE2_ITERS = 750
VORTEX_PARAMS = dict(n=64, frames=33, nu=0.01, dt=0.25)

CACHE_DIR = Path(__file__).parent / ".cache"


def a1_model_config() -> ModelConfig:
    return ModelConfig(
        in_channels=2,
        c_f=64,
        spatial_width=64,
        spatial_depth=3,
        temporal_width=64,
        temporal_depth=3,
        decoder_width=64,
        decoder_depth=2,
        encoder={"c_f": 64, "n_blocks": 3, "kernel": 3},
    )


def a1_train_config(**overrides) -> TrainConfig:
    # schedule sized for the 2000-iteration acceptance budget
    base = dict(
        sx=A1_FACTORS[0], st=A1_FACTORS[1], iters=A1_ITERS, batch=16, patch=16,
        lr=3e-4, seed=0, lr_drop_iters=(500, 1000, 1400, 1800), lr_drop_gamma=0.4,
    )
    base.update(overrides)
    return TrainConfig(**base)


def _source_hash() -> str:
    h = hashlib.sha256()
    root = Path(ffeinr.__file__).parent
    for p in sorted(root.glob("*.py")):
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _cached_run(tag: str, cfg, train_fn) -> Checkpoint:
    key_text = f"{tag}|{cfg}|{a1_model_config()}|{sorted(VORTEX_PARAMS.items())}"
    key = hashlib.sha256(key_text.encode()).hexdigest()[:16]
    path = CACHE_DIR / f"{tag}-{key}-{_source_hash()}.ckpt"
    if not os.environ.get("FFEINR_TEST_FRESH") and path.exists():
        sys.__stdout__.write(f"[{tag} fixture] loaded cached checkpoint {path.name}\n")
        return Checkpoint.load(path)
    t0 = time.time()
    ckpt = train_fn()
    sys.__stdout__.write(
        f"[{tag} fixture] trained {ckpt.iteration} iterations in {time.time() - t0:.0f}s\n"
    )
    sys.__stdout__.flush()
    CACHE_DIR.mkdir(exist_ok=True)
    ckpt.save(path)
    return ckpt


@pytest.fixture(scope="session")
def vortex_field():
    return gen_taylor_green(**VORTEX_PARAMS)


@pytest.fixture(scope="session")
def a1_checkpoint(vortex_field):
    cfg = a1_train_config()
    low = downsample(vortex_field, *A1_FACTORS)
    return _cached_run(
        "a1", cfg, lambda: train_one_stage(low, vortex_field, cfg, a1_model_config())
    )


@pytest.fixture(scope="session")
def two_stage_checkpoint(vortex_field):
    cfg = a1_train_config(
        two_stage=True,
        stage2_iters=A10_STAGE2_ITERS,
        stage2_factor_ranges=((2, 4), (2, 8)),
    )
    low = downsample(vortex_field, *A1_FACTORS)
    return _cached_run(
        "two-stage", cfg, lambda: train_two_stage(low, vortex_field, cfg, a1_model_config())
    )
