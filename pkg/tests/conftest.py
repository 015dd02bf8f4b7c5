"""Shared fixtures. The trained-model pair and the fitted quantizer are
session-scoped because several test modules (trainer, cli, acceptance)
reuse them; everything is seeded and deterministic."""

import numpy as np
import pytest

from lvrc.audio import AudioBuffer
from lvrc.config import paper_config, toy_config
from lvrc.features import log_mel_features
from lvrc.model import CodecModel
from lvrc.quantizer import fit_quantizer
from lvrc.trainer import ClipDataset, synthetic_clip, train

PAIR_SEED = 2024
PAIR_STEPS = 1500
PAIR_LR = 2e-3


def make_toy_cfg(nu: float):
    cfg = toy_config()
    cfg.train.steps = PAIR_STEPS
    cfg.train.nu = nu
    cfg.train.lr = PAIR_LR
    cfg.train.seed = PAIR_SEED
    cfg.validate()
    return cfg


@pytest.fixture(scope="session")
def toy_cfg():
    return toy_config()


@pytest.fixture(scope="session")
def paired_runs(tmp_path_factory):
    """Two identical trainings except nu: {0.0, 0.01}. The core experiment."""
    out = {}
    for nu in (0.0, 0.01):
        cfg = make_toy_cfg(nu)
        dataset = ClipDataset.synthetic(cfg)
        run_dir = tmp_path_factory.mktemp(f"run_nu{nu}")
        result = train(cfg, run_dir, dataset=dataset, log_every=50)
        assert not result.halted, "training halted on non-finite loss"
        out[nu] = {"cfg": cfg, "result": result, "dataset": dataset}
    return out


@pytest.fixture(scope="session")
def eval_clips():
    """Held-out synthetic clips (seed disjoint from training pools)."""
    cfg = make_toy_cfg(0.0)
    return ClipDataset.synthetic(cfg, n_clips=16, seed=777)


def load_model(entry) -> CodecModel:
    model = CodecModel(entry["cfg"].model, seed=entry["cfg"].train.seed)
    model.load_checkpoint(entry["result"].checkpoint_path)
    return model


@pytest.fixture(scope="session")
def paper_quantizer():
    """Full-scale (16 kHz, 120-bit) quantizer fitted on synthetic clips."""
    cfg = paper_config()
    rng = np.random.default_rng(0)
    frames = np.concatenate([
        log_mel_features(AudioBuffer(synthetic_clip(rng, 16000, 32000), 16000),
                         cfg.features)
        for _ in range(20)
    ])
    model = fit_quantizer(frames, cfg.quantizer, cfg.digest())
    return cfg, model, frames


@pytest.fixture(scope="session")
def toy_quantizer(toy_cfg):
    """Quantizer fitted on the synthetic toy corpus."""
    dataset = ClipDataset.synthetic(toy_cfg, n_clips=48, n_noises=0)
    sr = toy_cfg.features.sample_rate
    frames = np.concatenate([
        log_mel_features(AudioBuffer(clip, sr), toy_cfg.features)
        for clip in dataset.clips
    ])
    return fit_quantizer(frames, toy_cfg.quantizer, toy_cfg.digest()), frames


def fd_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Vector-norm relative error used by every gradient check."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-10)
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. arr, in place."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + h
        fp = f()
        arr[i] = orig - h
        fm = f()
        arr[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad
