import wave
from pathlib import Path

import numpy as np
import pytest


def write_tone_wav(
    path: Path, seconds: float, rate: int = 16000, freq: float = 440.0
) -> Path:
    """16-bit mono PCM sine tone."""
    t = np.arange(int(seconds * rate)) / rate
    samples = (0.6 * np.sin(2 * np.pi * freq * t) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(samples.tobytes())
    return path


@pytest.fixture
def tone_wav(tmp_path):
    def _make(seconds, rate=16000, freq=440.0, name="tone.wav"):
        return write_tone_wav(tmp_path / name, seconds, rate, freq)

    return _make
