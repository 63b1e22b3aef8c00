"""Waveform -> normalised, frame-reduced 80-band mel spectrogram."""

from __future__ import annotations

import csv
import io
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import MelConfig


class AudioError(ValueError):
    """Unreadable or unusable audio input."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")
        if self.samples.ndim != 1:
            raise AudioError("waveform must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("waveform contains non-finite samples")


def preemphasis(w: Waveform, coeff: float) -> Waveform:
    """``y[0] = x[0]``, ``y[n] = x[n] - coeff * x[n-1]``."""
    if not 0.0 <= coeff < 1.0:
        raise ValueError("preemphasis coefficient must be in [0, 1)")
    x = w.samples
    y = x.copy()
    y[1:] -= coeff * x[:-1]
    return Waveform(y, w.sample_rate)


def _window(cfg: MelConfig) -> np.ndarray:
    # periodic Hann of length win, zero-padded and centred inside n_fft
    n = np.arange(cfg.win)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / cfg.win)
    left = (cfg.n_fft - cfg.win) // 2
    out = np.zeros(cfg.n_fft)
    out[left:left + cfg.win] = hann
    return out


def frame_signal(w: Waveform, cfg: MelConfig) -> np.ndarray:
    """Windowed frames ``[T_frames, n_fft]``, centred with reflect padding."""
    x = w.samples
    if x.size < cfg.win:
        raise AudioError(f"signal of {x.size} samples is shorter than one window ({cfg.win})")
    pad = cfg.n_fft // 2
    padded = np.pad(x, pad, mode="reflect")
    n_frames = 1 + (padded.size - cfg.n_fft) // cfg.hop
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.n_fft)[::cfg.hop][:n_frames]
    return frames * _window(cfg)


def stft_magnitude(w: Waveform, cfg: MelConfig) -> np.ndarray:
    """``|STFT|`` of shape ``[T_frames, n_fft // 2 + 1]``; ``T_frames = 1 + len // hop``."""
    return np.abs(np.fft.rfft(frame_signal(w, cfg), n=cfg.n_fft, axis=-1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: MelConfig) -> np.ndarray:
    """Peak frequency of each filter (the interior points of the mel grid)."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2.0), cfg.n_mels + 2))
    return edges[1:-1]


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """``[80, n_fft // 2 + 1]`` triangular filters on the HTK mel scale, peak 1."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2.0), cfg.n_mels + 2))
    freqs = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.sample_rate)
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(bank.sum(axis=1) <= 0.0)
    if empty.size:
        raise AudioError(
            f"mel filters {empty.tolist()} have zero width at n_fft={cfg.n_fft}; "
            "increase n_fft or lower the sample rate"
        )
    return bank


def mel_db(w: Waveform, cfg: MelConfig) -> np.ndarray:
    """Mel magnitudes in dB (``20 log10``), clipped below at the dB floor."""
    emphasised = preemphasis(w, cfg.preemphasis)
    mag = stft_magnitude(emphasised, cfg)
    mel = mag @ mel_filterbank(cfg).T
    floor = 10.0 ** (cfg.db_floor / 20.0)
    return 20.0 * np.log10(np.maximum(mel, floor))


def normalize_db(db: np.ndarray, cfg: MelConfig) -> np.ndarray:
    return np.clip((db - cfg.db_floor) / cfg.db_range, 0.0, 1.0)


def reduce_frames(spec: np.ndarray, factor: int = 16) -> np.ndarray:
    """Keep rows 0, factor, 2*factor, ... (``ceil(T / factor)`` rows)."""
    spec = np.asarray(spec)
    if spec.shape[0] < 1:
        raise ValueError("cannot reduce an empty spectrogram")
    if factor < 1:
        raise ValueError("reduction factor must be >= 1")
    return spec[::factor]


def extract_mel(w: Waveform, cfg: MelConfig | None = None) -> np.ndarray:
    """Full pipeline; returns ``[ceil((1 + len // hop) / reduction), 80]`` in [0, 1]."""
    cfg = cfg or MelConfig()
    if w.sample_rate != cfg.sample_rate:
        raise AudioError(f"waveform is {w.sample_rate} Hz, config expects {cfg.sample_rate} Hz")
    return reduce_frames(normalize_db(mel_db(w, cfg), cfg), cfg.reduction)


def expected_frames(n_samples: int, cfg: MelConfig) -> int:
    full = 1 + n_samples // cfg.hop
    return -(-full // cfg.reduction)


# ---------------------------------------------------------------------------
# file formats


def read_wav(source) -> Waveform:
    """16-bit PCM WAV (path or bytes); multi-channel input is averaged to mono."""
    try:
        fh = wave.open(io.BytesIO(source) if isinstance(source, (bytes, bytearray)) else str(source), "rb")
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"not a readable WAV file: {exc}") from exc
    with fh:
        if fh.getsampwidth() != 2 or fh.getcomptype() != "NONE":
            raise AudioError("only 16-bit PCM WAV is supported")
        channels = fh.getnchannels()
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        pcm = pcm[: pcm.size - pcm.size % channels].reshape(-1, channels).mean(axis=1)
    return Waveform(pcm, rate)


def write_wav(path: str | Path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def save_mel_csv(path: str | Path, spec: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(spec):
            writer.writerow([repr(float(v)) for v in row])


def load_mel_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    spec = np.asarray(rows, dtype=np.float64)
    if spec.ndim != 2 or spec.shape[1] != 80:
        raise AudioError(f"{path}: expected T x 80 mel matrix, got shape {spec.shape}")
    return spec
