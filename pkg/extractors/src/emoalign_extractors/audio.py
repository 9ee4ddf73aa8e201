"""Audio loading, resampling, and fixed-length segmentation."""

from __future__ import annotations

import logging
import math
import wave
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .formats import ExtractionError

log = logging.getLogger(__name__)

_PCM_SCALE = {1: 127.0, 2: 32767.0, 4: 2147483647.0}


def load_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a PCM WAV file as mono float64 in [-1, 1] plus its sample rate."""
    try:
        with wave.open(str(path), "rb") as fh:
            n_channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            frames = fh.readframes(fh.getnframes())
    except wave.Error as e:
        raise ExtractionError(f"{path}: not a readable WAV file: {e}") from e
    if width not in (2, 4) and width != 1:
        raise ExtractionError(f"{path}: unsupported sample width {width}")
    if width == 1:  # 8-bit WAV is unsigned
        samples = np.frombuffer(frames, dtype=np.uint8).astype(np.float64) - 128.0
    else:
        dtype = np.int16 if width == 2 else np.int32
        samples = np.frombuffer(frames, dtype=dtype).astype(np.float64)
    samples /= _PCM_SCALE[width]
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return samples, rate


def load_audio(path: str | Path) -> tuple[np.ndarray, int]:
    """Load WAV directly; anything else goes through torchaudio if present."""
    path = Path(path)
    if path.suffix.lower() == ".wav":
        return load_wav(path)
    try:
        import torchaudio

        waveform, rate = torchaudio.load(str(path))
        return waveform.mean(dim=0).numpy().astype(np.float64), int(rate)
    except ImportError as e:
        raise ExtractionError(
            f"{path}: only WAV is supported without torchaudio ({e})"
        ) from e


def resample(wave_data: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    if rate == target_rate:
        return wave_data
    g = math.gcd(rate, target_rate)
    return resample_poly(wave_data, target_rate // g, rate // g)


def split_segments(
    wave_data: np.ndarray,
    rate: int,
    segment_seconds: float,
    min_final_seconds: float = 1.0,
) -> list[np.ndarray]:
    """Cut into fixed-length segments; a short final remainder is kept only
    if it covers at least `min_final_seconds`."""
    if segment_seconds <= 0:
        raise ExtractionError(f"segment length must be positive, got {segment_seconds}")
    seg_len = int(round(segment_seconds * rate))
    min_len = int(round(min_final_seconds * rate))
    segments = []
    for start in range(0, len(wave_data), seg_len):
        chunk = wave_data[start : start + seg_len]
        if len(chunk) < seg_len and len(chunk) < min_len:
            break
        segments.append(chunk)
    return segments
