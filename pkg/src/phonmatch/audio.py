"""16 kHz mono audio I/O, 40-band log-mel features and SNR noise mixing."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SAMPLE_RATE = 16000
WIN_LENGTH = 400  # 25 ms
HOP_LENGTH = 160  # 10 ms
N_FFT = 512
N_MELS = 40
F_MIN = 20.0
F_MAX = 7600.0
LOG_FLOOR = 1e-12


class AudioError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.rate != SAMPLE_RATE:
            raise AudioError(f"expected {SAMPLE_RATE} Hz audio, got {self.rate} Hz")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError("expected mono audio as a 1-D sample array")
        if len(samples) < WIN_LENGTH:
            raise AudioError(f"waveform has {len(samples)} samples, shorter than one {WIN_LENGTH}-sample window")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate


def read_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate, frames = wf.getnchannels(), wf.getsampwidth(), wf.getframerate(), wf.getnframes()
            raw = wf.readframes(frames)
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"{path}: expected PCM16 RIFF/WAVE ({exc})") from None
    if channels != 1:
        raise AudioError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise AudioError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
    if rate != SAMPLE_RATE:
        raise AudioError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0)


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(pcm.tobytes())


def num_frames(num_samples: int) -> int:
    return (num_samples - WIN_LENGTH) // HOP_LENGTH + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies() -> np.ndarray:
    points = mel_to_hz(np.linspace(hz_to_mel(F_MIN), hz_to_mel(F_MAX), N_MELS + 2))
    return points[1:-1]


@lru_cache(maxsize=1)
def mel_filterbank() -> np.ndarray:
    """Triangular HTK-mel filters, shape [N_FFT // 2 + 1, N_MELS], peak weight 1."""
    points = mel_to_hz(np.linspace(hz_to_mel(F_MIN), hz_to_mel(F_MAX), N_MELS + 2))
    freqs = np.arange(N_FFT // 2 + 1) * SAMPLE_RATE / N_FFT
    lower, centre, upper = points[:-2, None], points[1:-1, None], points[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    fb = np.maximum(0.0, np.minimum(rising, falling)).T
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=1)
def _window() -> np.ndarray:
    # symmetric Hann over the 400-sample analysis window
    return np.hanning(WIN_LENGTH)


def compute_log_mel(w: Waveform) -> np.ndarray:
    """Log-mel energies, shape [num_frames, 40]."""
    x = w.samples
    if len(x) < WIN_LENGTH:
        raise AudioError("waveform shorter than one analysis window")
    frames = np.lib.stride_tricks.sliding_window_view(x, WIN_LENGTH)[::HOP_LENGTH]
    spectrum = np.abs(np.fft.rfft(frames * _window(), n=N_FFT, axis=-1))
    return np.log(np.maximum(spectrum @ mel_filterbank(), LOG_FLOOR))


def noise_scale(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Gain for ``noise`` so that 10*log10(P_signal / P_noise) equals ``snr_db``."""
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    p_signal = float(np.mean(np.square(signal)))
    p_noise = float(np.mean(np.square(noise)))
    if p_signal == 0.0:
        raise AudioError("cannot mix noise into a silent signal")
    if p_noise == 0.0:
        raise AudioError("noise has zero power")
    return float(np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0))))


def mix_noise(w: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    n = np.resize(noise.samples, len(w.samples))  # loops shorter noise
    gain = noise_scale(w.samples, n, snr_db)
    return Waveform(np.clip(w.samples + gain * n, -1.0, 1.0))
