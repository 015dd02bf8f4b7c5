"""Data pipeline, voicing score, noise augmentation and the training loop.

The trainer consumes either a manifest of WAV files or the built-in
synthetic dataset (harmonic tones with vibrato plus filtered noise
bursts), mixes noise at a random SNR per clip, and minimizes the
teacher-forced NLL plus the predictive-variance regularizer. Metrics go
to an append-only CSV (step, nll, jvar, sigma_mean, sparsity);
checkpoints carry the optimizer state so training resumes bit-exactly.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer, load_wav
from .config import CodecConfig, TrainConfig
from .errors import ConfigError, NumericError
from .features import frame_signal, log_mel_features
from .model import CodecModel
from .neural import Adam, PruningSchedule, prune_update

METRICS_HEADER = ["step", "nll", "jvar", "sigma_mean", "sparsity"]


# ---------------------------------------------------------------------------
# voicing and noise mixing
# ---------------------------------------------------------------------------

def voicing_score(frame: np.ndarray, sample_rate: int) -> float:
    """Peak normalized autocorrelation over 50-400 Hz pitch lags, in [0, 1].

    Frames whose RMS is below 1e-4 score 0. The frame should cover at
    least two periods of the lowest pitch (2 * sample_rate / 50 samples).
    """
    frame = np.asarray(frame, dtype=np.float64)
    if np.sqrt(np.mean(frame**2)) < 1e-4:
        return 0.0
    lag_min = max(2, sample_rate // 400)
    lag_max = min(sample_rate // 50, len(frame) - 1)
    if lag_max <= lag_min:
        return 0.0
    frame = frame - frame.mean()
    best = 0.0
    for lag in range(lag_min, lag_max + 1):
        a, b = frame[lag:], frame[:-lag]
        denom = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
        if denom <= 0:
            continue
        best = max(best, float(np.dot(a, b)) / denom)
    return float(np.clip(best, 0.0, 1.0))


def voicing_per_frame(samples: np.ndarray, window: int, hop: int, sample_rate: int) -> np.ndarray:
    """Voicing score for every analysis frame (same framing as the mel frontend)."""
    frames = frame_signal(samples, window, hop)
    return np.array([voicing_score(f, sample_rate) for f in frames])


def mix_noise(clean: AudioBuffer, noise: AudioBuffer | None, snr_db: float,
              rng: np.random.Generator) -> AudioBuffer:
    """Add noise at the requested SNR; peak-normalize only if the mix clips.

    snr_db = inf (or noise None) returns the clean buffer unchanged, as
    does digital silence. The noise is looped or randomly cropped to the
    clip length.
    """
    if noise is None or math.isinf(snr_db):
        return clean
    if noise.sample_rate != clean.sample_rate:
        raise ConfigError("clean and noise sample rates differ")
    p_clean = float(np.mean(clean.samples**2))
    if p_clean == 0.0:
        return clean

    length = len(clean.samples)
    src = noise.samples
    if len(src) < length:
        reps = -(-length // max(len(src), 1))
        src = np.tile(src, reps)
    if len(src) > length:
        start = int(rng.integers(0, len(src) - length + 1))
        src = src[start : start + length]
    p_noise = float(np.mean(src**2))
    if p_noise == 0.0:
        return clean
    scale = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixed = clean.samples + scale * src
    peak = np.max(np.abs(mixed))
    if peak > 1.0:
        mixed = mixed / peak
    return AudioBuffer(mixed, clean.sample_rate)


# ---------------------------------------------------------------------------
# synthetic toy data
# ---------------------------------------------------------------------------

TONE_PITCHES = (220.0,)


def harmonic_tone(rng: np.random.Generator, sample_rate: int, n_samples: int,
                  f0: float | None = None, vibrato: bool = True,
                  harmonic_rolloff: float = 4.0) -> np.ndarray:
    """Harmonic tone with optional 5 Hz vibrato; amplitude ~ 1/h**rolloff.

    Without an explicit f0, the pitch is drawn from the small canonical
    set TONE_PITCHES (with ~1% jitter), so the toy task has identifiable
    pitch classes spaced well beyond the tracking tolerance.
    """
    if f0 is None:
        f0 = float(rng.choice(TONE_PITCHES) * (1.0 + rng.uniform(-0.01, 0.01)))
    t = np.arange(n_samples) / sample_rate
    if vibrato:
        depth = rng.uniform(0.0, 0.01)
        inst = f0 * (1.0 + depth * np.sin(2 * np.pi * 5.0 * t + rng.uniform(0, 2 * np.pi)))
    else:
        inst = np.full(n_samples, f0)
    phase = 2 * np.pi * np.cumsum(inst) / sample_rate
    out = np.zeros(n_samples)
    h = 1
    while h * f0 < 0.45 * sample_rate and h <= 6:
        out += (h ** -harmonic_rolloff) * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
        h += 1
    out *= 0.45 / max(np.max(np.abs(out)), 1e-9)
    # onsets stay sharp (the analysis filterbank smears them anyway); a
    # one-millisecond edge just avoids DC steps
    ramp = min(8, max(n_samples // 4, 1))
    env = np.ones(n_samples)
    env[:ramp] = np.linspace(0, 1, ramp)
    env[-ramp:] = np.linspace(1, 0, ramp)
    return out * env


def tone_burst_train(rng: np.random.Generator, sample_rate: int, n_samples: int,
                     f0: float, burst_ms: float = 45.0, gap_ms: float = 25.0) -> np.ndarray:
    """Repeated short tone bursts at one pitch, separated by silence.

    Matches the onset-rich structure of the training clips; useful as a
    decode test signal whose pitch must come from the conditioning.
    """
    out = np.zeros(n_samples)
    burst = int(burst_ms * sample_rate / 1000.0)
    gap = int(gap_ms * sample_rate / 1000.0)
    pos = 0
    while pos + burst <= n_samples:
        out[pos : pos + burst] = harmonic_tone(rng, sample_rate, burst, f0=f0,
                                               vibrato=False)
        pos += burst + gap
    return out


def noise_burst(rng: np.random.Generator, n_samples: int) -> np.ndarray:
    """Smoothed white noise burst at moderate amplitude."""
    x = rng.normal(0.0, 1.0, n_samples)
    kernel = np.ones(5) / 5.0
    x = np.convolve(x, kernel, mode="same")
    return 0.12 * x / max(np.max(np.abs(x)), 1e-9)


def synthetic_clip(rng: np.random.Generator, sample_rate: int, n_samples: int,
                   voiced_fraction: float = 0.7, click_rate: float = 10.0) -> np.ndarray:
    """Short voiced tone segments among noise bursts and gaps, plus rare clicks.

    Segments are kept short so clips are onset-rich: right after each tone
    onset the past waveform carries no pitch, which forces the model to
    read pitch from the conditioning. The clicks are impulsive outliers: a
    maximum-likelihood fit must keep heavy predictive tails to afford
    them, which is what the variance regularizer counteracts on the
    predictable (voiced) parts.
    """
    out = np.zeros(n_samples)
    pos = 0
    while pos < n_samples:
        seg = int(rng.integers(n_samples // 5, max(n_samples // 3, n_samples // 5 + 1)))
        seg = min(seg, n_samples - pos)
        draw = rng.random()
        if draw < voiced_fraction:
            out[pos : pos + seg] = harmonic_tone(rng, sample_rate, seg)
        elif draw < voiced_fraction + 0.5 * (1.0 - voiced_fraction):
            out[pos : pos + seg] = noise_burst(rng, seg)
        # else: leave a silent gap
        pos += seg
    for _ in range(rng.poisson(click_rate * n_samples / sample_rate)):
        at = int(rng.integers(0, n_samples))
        amp = rng.uniform(0.25, 0.6) * rng.choice((-1.0, 1.0))
        out[at : at + 2] += amp
    return np.clip(out, -1.0, 1.0)


class ClipDataset:
    """Fixed pool of equal-length clips with per-step noise augmentation.

    Voicing scores are computed once on the clean clips; mel features are
    recomputed per step because they see the mixed signal.
    """

    def __init__(self, cfg: CodecConfig, clips: list[np.ndarray],
                 noises: list[np.ndarray]):
        if not clips:
            raise ConfigError("dataset needs at least one clip")
        n = min(len(c) for c in clips)
        n -= n % cfg.model.n_bands
        self.cfg = cfg
        self.clips = [np.asarray(c[:n], dtype=np.float64) for c in clips]
        self.noises = [np.asarray(x, dtype=np.float64) for x in noises]
        self.clip_len = n
        feat = cfg.features
        self.voicing = np.stack([
            voicing_per_frame(c, feat.window_length, feat.hop_length, feat.sample_rate)
            for c in self.clips
        ])

    @classmethod
    def synthetic(cls, cfg: CodecConfig, n_clips: int = 48, n_noises: int = 12,
                  seed: int | None = None) -> "ClipDataset":
        seed = cfg.train.seed if seed is None else seed
        rng = np.random.default_rng([seed, 0xDA7A])
        sr = cfg.features.sample_rate
        n = int(round(cfg.train.clip_seconds * sr))
        clips = [synthetic_clip(rng, sr, n) for _ in range(n_clips)]
        noises = [noise_burst(rng, n) for _ in range(n_noises)]
        return cls(cfg, clips, noises)

    @classmethod
    def from_manifest(cls, cfg: CodecConfig, entries, split: str = "train") -> "ClipDataset":
        clips, noises = [], []
        sr = cfg.features.sample_rate
        n = int(round(cfg.train.clip_seconds * sr))
        for entry in entries:
            if entry.split != split:
                continue
            buf = load_wav(entry.clean_path)
            if buf.sample_rate != sr:
                raise ConfigError(f"{entry.clean_path}: rate {buf.sample_rate} != {sr}")
            samples = buf.samples
            if len(samples) < n:
                samples = np.pad(samples, (0, n - len(samples)))
            for lo in range(0, len(samples) - n + 1, n):
                clips.append(samples[lo : lo + n])
            if entry.noise_path:
                nbuf = load_wav(entry.noise_path)
                if nbuf.sample_rate != sr:
                    raise ConfigError(f"{entry.noise_path}: rate {nbuf.sample_rate} != {sr}")
                noises.append(nbuf.samples)
        return cls(cfg, clips, noises)

    def batch(self, step: int):
        """Deterministic batch for a step: (audio (B,L), mels (B,F,M), voicing (B,F))."""
        tc = self.cfg.train
        rng = np.random.default_rng([tc.seed, 0xBA7C4, step])
        idx = rng.integers(0, len(self.clips), size=tc.batch_size)
        sr = self.cfg.features.sample_rate
        audio = np.empty((tc.batch_size, self.clip_len))
        for row, i in enumerate(idx):
            clean = AudioBuffer(self.clips[i], sr)
            if self.noises:
                j = int(rng.integers(0, len(self.noises)))
                snr = float(rng.uniform(tc.snr_min, tc.snr_max))
                mixed = mix_noise(clean, AudioBuffer(self.noises[j], sr), snr, rng)
            else:
                mixed = clean
            audio[row] = mixed.samples
        mels = np.stack([
            log_mel_features(AudioBuffer(a, sr), self.cfg.features) for a in audio
        ])
        return audio, mels, self.voicing[idx]


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    clean_path: str
    noise_path: str | None
    split: str


def parse_manifest(path) -> list[ManifestEntry]:
    """Newline-delimited records: clean_path <tab> noise_path <tab> split.

    An empty or '-' noise path means no paired noise. A path may not
    appear in both splits.
    """
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ConfigError(f"{path}:{lineno}: expected 3 tab-separated fields")
            clean, noise, split = (p.strip() for p in parts)
            if split not in ("train", "dev"):
                raise ConfigError(f"{path}:{lineno}: split must be train or dev")
            entries.append(ManifestEntry(clean, noise if noise not in ("", "-") else None, split))
    by_split: dict[str, set] = {"train": set(), "dev": set()}
    for e in entries:
        by_split[e.split].add(e.clean_path)
    overlap = by_split["train"] & by_split["dev"]
    if overlap:
        raise ConfigError(f"paths in both splits: {sorted(overlap)[:3]}")
    return entries


# ---------------------------------------------------------------------------
# system matrix (coder attribute combinations)
# ---------------------------------------------------------------------------

@dataclass
class SystemPreset:
    """One column of the coder attribute matrix."""

    label: str
    var_reg: bool
    denoised_input: bool
    quantized: bool
    pruned: bool

    def apply(self, cfg: CodecConfig) -> CodecConfig:
        """Wire the attributes into a copy of the configuration."""
        import copy

        out = copy.deepcopy(cfg)
        out.train.nu = cfg.train.nu if self.var_reg and cfg.train.nu > 0 else (
            0.01 if self.var_reg else 0.0
        )
        out.train.pruning = self.pruned
        out.model.gru_blocks = 16 if self.pruned else 1
        return out


def build_system_matrix(var_reg: bool = False, denoised_input: bool = False,
                        quantized: bool = False, pruned: bool = False) -> SystemPreset:
    """Named preset for an attribute combination; no attributes is 'b'.

    The denoised-input attribute only selects which input files are
    consumed (the denoiser itself is an external system).
    """
    label = ""
    if quantized or pruned:
        label += "q"
    if var_reg:
        label += "v"
    if denoised_input:
        label += "t"
    return SystemPreset(label or "b", var_reg, denoised_input, quantized, pruned)


ALL_SYSTEMS = {
    "b": build_system_matrix(),
    "v": build_system_matrix(var_reg=True),
    "t": build_system_matrix(denoised_input=True),
    "vt": build_system_matrix(var_reg=True, denoised_input=True),
    "q": build_system_matrix(quantized=True, pruned=True),
    "qv": build_system_matrix(var_reg=True, quantized=True, pruned=True),
    "qt": build_system_matrix(denoised_input=True, quantized=True, pruned=True),
    "qvt": build_system_matrix(var_reg=True, denoised_input=True, quantized=True, pruned=True),
}


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint_path: str
    metrics_path: str
    metrics: list[dict]
    final_step: int
    halted: bool
    checkpoint_series: list[str] = None


def train(cfg: CodecConfig, out_dir, dataset: ClipDataset | None = None,
          resume_from: str | None = None, log_every: int = 1) -> TrainResult:
    """Run the training loop; deterministic for a given config and seed.

    Writes checkpoint files and an append-only metrics CSV into out_dir.
    A non-finite loss halts training with the last good checkpoint kept.
    """
    cfg.validate()
    tc = cfg.train
    os.makedirs(out_dir, exist_ok=True)
    dataset = dataset or ClipDataset.synthetic(cfg)
    model = CodecModel(cfg.model, seed=tc.seed)
    optimizer = Adam(lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.adam_eps)
    params = model.parameters()
    digest = cfg.digest()

    start_step = 0
    if resume_from is not None:
        start_step, arrays = model.load_checkpoint(resume_from, expected_digest=digest)
        optimizer.load_state(arrays, params, step_count=int(arrays["adam_step"][0]))

    schedule = None
    if tc.pruning:
        schedule = PruningSchedule(tc.prune_start, tc.prune_end, tc.target_sparsity,
                                   tc.prune_interval)

    metrics_path = os.path.join(out_dir, "metrics.csv")
    metrics: list[dict] = []
    new_file = not os.path.exists(metrics_path) or resume_from is None
    metrics_fh = open(metrics_path, "w" if new_file else "a", newline="")
    writer = csv.writer(metrics_fh)
    if new_file:
        writer.writerow(METRICS_HEADER)

    ckpt_path = os.path.join(out_dir, "model.ckpt")
    series: list[str] = []
    halted = False
    step = start_step

    def save(step_now, keep=False):
        extra = {"adam_step": np.array([optimizer.step_count], dtype=np.int64)}
        extra.update(optimizer.state_arrays())
        model.save_checkpoint(ckpt_path, digest, step_now, extra)
        if keep:
            kept = os.path.join(out_dir, f"model_step{step_now}.ckpt")
            model.save_checkpoint(kept, digest, step_now, extra)
            series.append(kept)

    baseline = None
    if tc.baseline_gamma0 > 0.0:
        from .mol import BaselineSpec

        baseline = BaselineSpec(tc.baseline_gamma0)

    try:
        for step in range(start_step + 1, tc.steps + 1):
            audio, mels, voicing = dataset.batch(step)
            model.zero_grads()
            res = model.teacher_forced(
                audio, mels, nu=tc.nu, regularizer=tc.regularizer,
                var_floor=tc.var_floor, voicing=voicing, baseline=baseline,
            )
            optimizer.step(params)
            if schedule is not None and schedule.due(step):
                for p in model.prunable_parameters():
                    prune_update(p, schedule, step)
            if step % log_every == 0 or step == tc.steps:
                prunable = model.prunable_parameters()
                total = sum(p.value.size for p in prunable)
                masked = sum(int(p.value.size - p.mask.sum()) if p.mask is not None else 0
                             for p in prunable)
                row = {
                    "step": step,
                    "nll": res["nll"],
                    "jvar": res["jvar"],
                    "sigma_mean": float(res["sigma"].mean()),
                    "sparsity": masked / total if total else 0.0,
                }
                metrics.append(row)
                writer.writerow([row[k] for k in METRICS_HEADER])
            if step % tc.checkpoint_interval == 0:
                save(step, keep=True)
    except NumericError:
        halted = True
    finally:
        metrics_fh.close()
    if not halted:
        save(step)
    return TrainResult(ckpt_path, metrics_path, metrics, step, halted, series)
