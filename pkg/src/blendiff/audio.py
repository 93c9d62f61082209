"""Per-frame audio features and their on-disk formats.

Binary feature files (``.feat``) are::

    bytes 0..8    magic b"BDFEAT01"
    bytes 8..16   rows, uint64 little-endian
    bytes 16..24  cols, uint64 little-endian
    bytes 24..    rows*cols float64 little-endian, row-major

The CSV fallback has a header ``f0,f1,...`` and one row per frame.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IngestionError, ParseError, ValidationError

FEAT_MAGIC = b"BDFEAT01"
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class AudioFeatureSequence:
    feats: np.ndarray
    fps: float = 25.0

    def __post_init__(self):
        f = np.array(self.feats, dtype=np.float64)
        if f.ndim != 2:
            raise ValidationError(f"audio features must be 2-D, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            row = int(np.argwhere(~np.isfinite(f))[0, 0])
            raise ValidationError(f"non-finite audio feature at frame {row}")
        f.setflags(write=False)
        object.__setattr__(self, "feats", f)

    def __len__(self):
        return self.feats.shape[0]

    @property
    def dim(self) -> int:
        return self.feats.shape[1]

    def window(self, start: int, n: int) -> np.ndarray:
        """Rows ``start .. start+n``, zero-padded past the end."""
        out = np.zeros((n, self.dim))
        chunk = self.feats[start:start + n]
        out[: len(chunk)] = chunk
        return out


def mel_filterbank(sr: int, n_fft: int, n_mels: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    fmax = sr / 2 if fmax is None else fmax

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins = np.linspace(0.0, sr / 2, n_fft // 2 + 1)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bins - lo) / np.maximum(mid - lo, 1e-12)
    down = (hi - bins) / np.maximum(hi - mid, 1e-12)
    return np.maximum(0.0, np.minimum(up, down))


class LogMelExtractor:
    """Log mel energies over a Hann window two frame-hops wide, centred on each video frame."""

    def __init__(self, n_mels: int = 29):
        self.n_mels = n_mels

    def __call__(self, waveform: np.ndarray, sample_rate: int, fps: float) -> AudioFeatureSequence:
        y = np.asarray(waveform, dtype=np.float64)
        if y.ndim != 1:
            raise IngestionError("waveform must be mono (1-D)")
        n_frames = int(np.floor(len(y) * fps / sample_rate + 1e-9))
        if n_frames < 1:
            raise IngestionError(
                f"{len(y)} samples at {sample_rate} Hz is shorter than one frame at {fps} fps"
            )
        hop = sample_rate / fps
        win = max(4, int(round(2 * hop)))
        centers = (np.arange(n_frames) + 0.5) * hop
        starts = np.round(centers - win / 2).astype(np.int64) + win
        padded = np.concatenate([np.zeros(win), y, np.zeros(2 * win)])
        frames = padded[starts[:, None] + np.arange(win)] * np.hanning(win)
        power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
        mel = power @ mel_filterbank(sample_rate, win, self.n_mels).T
        return AudioFeatureSequence(np.log(mel + LOG_FLOOR), fps)


class PassthroughExtractor:
    """Returns precomputed features from a file unchanged."""

    def __call__(self, path, fps: float = 25.0) -> AudioFeatureSequence:
        return AudioFeatureSequence(read_features(path), fps)


def extract_audio_features(waveform, sample_rate: int, fps: float = 25.0, extractor=None) -> AudioFeatureSequence:
    extractor = extractor or LogMelExtractor()
    return extractor(waveform, sample_rate, fps)


def read_wav(path) -> tuple[np.ndarray, int]:
    """16-bit PCM mono WAV as floats in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise IngestionError(f"{path}: expected mono audio, found {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise IngestionError(f"{path}: expected 16-bit PCM")
            sr = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise IngestionError(f"{path}: {exc}") from None
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, sr


def write_wav(path, waveform: np.ndarray, sample_rate: int) -> None:
    pcm = np.clip(np.round(np.asarray(waveform) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def write_features(path, feats: np.ndarray) -> None:
    feats = np.ascontiguousarray(feats, dtype="<f8")
    path = Path(path)
    if path.suffix.lower() == ".csv":
        header = ",".join(f"f{i}" for i in range(feats.shape[1]))
        np.savetxt(path, feats, delimiter=",", header=header, comments="", fmt="%.17g")
        return
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(struct.pack("<QQ", *feats.shape))
        fh.write(feats.tobytes())


def read_features(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _read_features_csv(path)
    data = path.read_bytes()
    if data[:8] != FEAT_MAGIC:
        raise ParseError(f"{path}: bad magic {data[:8]!r}")
    rows, cols = struct.unpack("<QQ", data[8:24])
    body = data[24:]
    if len(body) != rows * cols * 8:
        raise ParseError(f"{path}: expected {rows}x{cols} float64 values, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)


def _read_features_csv(path: Path) -> np.ndarray:
    lines = path.read_text().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    width = len(lines[0].split(","))
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != width:
            raise ParseError(f"{path}: expected {width} values, found {len(parts)}", line=lineno)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ParseError(f"{path}: malformed number", line=lineno) from None
    arr = np.array(rows, dtype=np.float64).reshape(-1, width)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{path}: non-finite value", line=int(np.argwhere(~np.isfinite(arr))[0, 0]) + 2)
    return arr


def load_audio(path, fps: float = 25.0, n_mels: int = 29) -> AudioFeatureSequence:
    """WAV files go through the log-mel extractor; feature files pass through."""
    path = Path(path)
    if path.suffix.lower() == ".wav":
        y, sr = read_wav(path)
        return LogMelExtractor(n_mels)(y, sr, fps)
    return PassthroughExtractor()(path, fps)
