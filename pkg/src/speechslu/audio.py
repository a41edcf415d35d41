"""Audio frontend: WAV input, log-mel features, mel feature files.

The mel layout follows the common ASR convention: 25 ms windows on a
10 ms hop, 80 triangular mel filters, natural-log compression with a
1e-10 floor. A clip is always padded or truncated to `clip_seconds`
before analysis, so the frame count is exactly clip_seconds * 100.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

LOG_FLOOR = 1e-10
WINDOW_SECONDS = 0.025
HOP_SECONDS = 0.010

MEL_MAGIC = b"MELF"


@dataclass
class MelSpectrogram:
    frames: np.ndarray          # [n_mels, T_mel] float32
    frame_rate: float = 100.0
    n_mels: int = 80

    def __post_init__(self):
        if self.frames.shape[0] != self.n_mels:
            raise ValueError(
                f"mel frames have {self.frames.shape[0]} bins, expected {self.n_mels}")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters [n_mels, n_fft//2 + 1] spanning 0..Nyquist."""
    n_bins = n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * sample_rate / n_fft
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        rise = (fft_freqs - lo) / max(mid - lo, 1e-12)
        fall = (hi - fft_freqs) / max(hi - mid, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall))
    return fb.astype(np.float32)


def mel_filter_centers(n_mels: int, sample_rate: int) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return mel_to_hz(mel_points)[1:-1]


def log_mel(waveform: np.ndarray, sample_rate: int, n_mels: int = 80,
            clip_seconds: float = 30.0) -> MelSpectrogram:
    """Log-mel spectrogram of a mono waveform, padded/truncated to the clip length."""
    wav = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if wav.size == 0:
        raise ValueError("log_mel: empty waveform")
    if sample_rate <= 0:
        raise ValueError(f"log_mel: bad sample rate {sample_rate}")

    n_target = int(round(clip_seconds * sample_rate))
    if wav.size < n_target:
        wav = np.pad(wav, (0, n_target - wav.size))
    else:
        wav = wav[:n_target]

    win = int(round(WINDOW_SECONDS * sample_rate))
    hop = int(round(HOP_SECONDS * sample_rate))
    t_mel = n_target // hop
    # frames are centered on t*hop: pad half a window on both sides
    half = win // 2
    padded = np.pad(wav, (half, win - half))
    window = np.hanning(win)
    frames = np.lib.stride_tricks.sliding_window_view(padded, win)[::hop][:t_mel]
    spec = np.abs(np.fft.rfft(frames * window, n=win, axis=1)) ** 2
    fb = mel_filterbank(n_mels, win, sample_rate)
    mel = spec @ fb.T.astype(np.float64)
    logmel = np.log(np.maximum(mel, LOG_FLOOR)).T.astype(np.float32)
    return MelSpectrogram(frames=logmel, frame_rate=1.0 / HOP_SECONDS, n_mels=n_mels)


def load_wav(path) -> tuple[np.ndarray, int]:
    """Read a PCM16 or float32 WAV; multichannel input is downmixed."""
    sample_rate, data = wavfile.read(path)
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    else:
        data = data.astype(np.float64)
    return data, int(sample_rate)


def save_mel(path, mel: MelSpectrogram) -> None:
    n_mels, t = mel.frames.shape
    payload = np.ascontiguousarray(mel.frames, dtype="<f4").tobytes()
    Path(path).write_bytes(MEL_MAGIC + struct.pack("<II", n_mels, t) + payload)


def load_mel(path) -> MelSpectrogram:
    buf = Path(path).read_bytes()
    if buf[:4] != MEL_MAGIC:
        raise ValueError(f"{path}: not a mel feature file")
    n_mels, t = struct.unpack_from("<II", buf, 4)
    frames = np.frombuffer(buf, dtype="<f4", count=n_mels * t, offset=12)
    return MelSpectrogram(frames=frames.reshape(n_mels, t).copy(), n_mels=n_mels)


# ---------------------------------------------------------------------------
# synthetic features: deterministic stand-in for real audio/TTS
# ---------------------------------------------------------------------------

FRAMES_PER_WORD = 16


def synthesize_mel(text: str, n_mels: int = 80,
                   frames_per_word: int = FRAMES_PER_WORD) -> MelSpectrogram:
    """Deterministic mel features keyed to a transcript.

    Each word renders as a fixed pseudo-random spectral pattern derived
    from the word string alone, so identical transcripts always produce
    identical features and the text->feature mapping is learnable.
    """
    words = text.split() or [""]
    floor = np.float32(np.log(LOG_FLOOR))
    frames = np.full((n_mels, frames_per_word * len(words)), floor, dtype=np.float32)
    for i, word in enumerate(words):
        seed = int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        pattern = rng.uniform(1.0, 6.0, size=n_mels).astype(np.float32)
        ramp = np.linspace(0.0, 0.5, frames_per_word, dtype=np.float32)
        span = frames[:, i * frames_per_word:(i + 1) * frames_per_word]
        span += pattern[:, None] + ramp[None, :]
    return MelSpectrogram(frames=frames, n_mels=n_mels)


def resolve_audio(ref: str, base_dir=None, n_mels: int = 80,
                  clip_seconds: float = 30.0) -> MelSpectrogram:
    """Turn a manifest audio reference into mel features.

    Supports "synthetic:<text>" URIs (generated on the fly), .mel feature
    files, and WAV files run through the log-mel frontend. Relative paths
    resolve against `base_dir`.
    """
    if ref.startswith("synthetic:"):
        return synthesize_mel(ref[len("synthetic:"):], n_mels=n_mels)
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    if path.suffix == ".mel":
        return load_mel(path)
    wav, sr = load_wav(path)
    return log_mel(wav, sr, n_mels=n_mels, clip_seconds=clip_seconds)
