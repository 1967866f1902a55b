"""Log-Mel front-end, feature concatenation and the binary feature archive.

Archive layout (all integers little-endian)::

    b"CSFB" | u32 version=1 | u32 num_frames | u32 num_bins
    | num_frames*num_bins float32 LE, row-major
    | u32 meta_len | meta_len bytes of UTF-8 JSON (frontend config)
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CSFB"
VERSION = 1
NUM_MELS = 40
_HEADER = struct.Struct("<4sIII")
_U32 = struct.Struct("<I")
_FLOAT = np.dtype("<f4")


class ArchiveError(ValueError):
    pass


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate_hz: int = 16000
    frame_len_ms: float = 25.0
    frame_shift_ms: float = 15.0
    num_mels: int = NUM_MELS
    log_floor: float = 1e-10
    window: str = "hann"
    mel_scale: str = "htk"
    power: float = 2.0

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if self.frame_len_ms <= 0 or self.frame_shift_ms <= 0:
            raise ValueError("frame length and shift must be positive")
        if self.frame_shift_ms > self.frame_len_ms:
            raise ValueError("frame shift must not exceed frame length")
        if self.num_mels < 1:
            raise ValueError("num_mels must be at least 1")
        if not self.log_floor > 0:
            raise ValueError("log_floor must be positive")
        if self.window != "hann" or self.mel_scale != "htk" or self.power != 2.0:
            raise ValueError("only the hann / htk / power-spectrum front-end is supported")

    @property
    def win_length(self) -> int:
        return int(round(self.sample_rate_hz * self.frame_len_ms / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate_hz * self.frame_shift_ms / 1000))

    @property
    def n_fft(self) -> int:
        return 1 << (self.win_length - 1).bit_length()

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(win_length=self.win_length, hop_length=self.hop_length, n_fft=self.n_fft)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> FrontendConfig:
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """``num_frames x num_bins`` float32 log-Mel energies."""

    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(f"feature data must be 2-D, got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return self.data.shape == other.data.shape and self.data.tobytes() == other.data.tobytes()

    @classmethod
    def empty(cls, num_bins: int = NUM_MELS) -> FeatureMatrix:
        return cls(np.zeros((0, num_bins), dtype=np.float32))


def num_frames(num_samples: int, win_length: int, hop_length: int) -> int:
    if num_samples < win_length:
        return 0
    return (num_samples - win_length) // hop_length + 1


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters on the HTK mel scale spanning 0 Hz to Nyquist.

    Returns an array of shape ``(n_fft // 2 + 1, num_mels)``; each filter
    peaks at 1.0 at its centre frequency.
    """
    freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), num_mels + 2))
    lower, centre, upper = edges[:-2], edges[1:-1], edges[2:]
    up = (freqs[:, None] - lower) / (centre - lower)
    down = (upper - freqs[:, None]) / (upper - centre)
    return np.maximum(0.0, np.minimum(up, down))


def _frame(samples: np.ndarray, win_length: int, hop_length: int) -> np.ndarray:
    n = num_frames(len(samples), win_length, hop_length)
    if n == 0:
        return np.zeros((0, win_length), dtype=np.float64)
    view = np.lib.stride_tricks.sliding_window_view(samples, win_length)
    return view[: (n - 1) * hop_length + 1 : hop_length]


def extract_logmel(samples, cfg: FrontendConfig | None = None) -> FeatureMatrix:
    """Compute log-Mel features for a mono PCM signal.

    Samples are taken as-is (no pre-emphasis, no dithering, no mean removal).
    A trailing remainder shorter than one window is dropped.
    """
    cfg = cfg or FrontendConfig()
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected mono samples, got shape {x.shape}")
    frames = _frame(x, cfg.win_length, cfg.hop_length)
    window = np.hanning(cfg.win_length + 1)[:-1]  # periodic Hann
    spec = np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    mel = power @ mel_filterbank(cfg.num_mels, cfg.n_fft, cfg.sample_rate_hz)
    logmel = np.log(np.maximum(mel, cfg.log_floor))
    return FeatureMatrix(logmel.astype(np.float32), meta=cfg.to_dict())


def concat_features(parts) -> FeatureMatrix:
    """Stack feature matrices along time, in order."""
    parts = list(parts)
    if not parts:
        return FeatureMatrix.empty()
    bins = {p.num_bins for p in parts}
    if len(bins) != 1:
        raise ValueError(f"bin count mismatch in concatenation: {sorted(bins)}")
    meta = parts[0].meta if all(p.meta == parts[0].meta for p in parts) else {}
    return FeatureMatrix(np.concatenate([p.data for p in parts], axis=0), meta=dict(meta))


def archive_bytes(m: FeatureMatrix) -> bytes:
    meta = json.dumps(m.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = m.data.astype(_FLOAT, copy=False).tobytes(order="C")
    return b"".join(
        [_HEADER.pack(MAGIC, VERSION, m.num_frames, m.num_bins), payload, _U32.pack(len(meta)), meta]
    )


def write_archive(m: FeatureMatrix, path: str | Path) -> None:
    Path(path).write_bytes(archive_bytes(m))


def parse_archive(buf: bytes) -> FeatureMatrix:
    if len(buf) < _HEADER.size:
        raise ArchiveError(f"truncated header: {len(buf)} bytes, expected {_HEADER.size}")
    magic, version, frames, bins = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ArchiveError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ArchiveError(f"version mismatch: file has {version}, reader supports {VERSION}")
    expected = frames * bins * _FLOAT.itemsize
    start = _HEADER.size
    available = len(buf) - start
    if available < expected:
        raise ArchiveError(
            f"truncated payload: expected {expected} bytes ({frames}x{bins} floats), "
            f"got {max(available, 0)}"
        )
    data = np.frombuffer(buf, dtype=_FLOAT, count=frames * bins, offset=start)
    pos = start + expected
    meta: dict = {}
    if pos < len(buf):
        if len(buf) - pos < _U32.size:
            raise ArchiveError("truncated metadata length")
        (meta_len,) = _U32.unpack_from(buf, pos)
        pos += _U32.size
        if len(buf) - pos != meta_len:
            raise ArchiveError(
                f"metadata block size mismatch: expected {meta_len} bytes, got {len(buf) - pos}"
            )
        meta = json.loads(buf[pos:].decode("utf-8"))
    return FeatureMatrix(data.reshape(frames, bins).astype(np.float32), meta=meta)


def read_archive(path: str | Path) -> FeatureMatrix:
    return parse_archive(Path(path).read_bytes())


def read_wav(path: str | Path, cfg: FrontendConfig | None = None) -> np.ndarray:
    """Read a mono WAV file as float64 samples in [-1, 1].

    Files whose sample rate differs from the front-end's are rejected;
    resampling is deliberately not done here.
    """
    from scipy.io import wavfile

    cfg = cfg or FrontendConfig()
    rate, data = wavfile.read(str(path))
    if rate != cfg.sample_rate_hz:
        raise ValueError(f"{path}: sample rate {rate} Hz, front-end expects {cfg.sample_rate_hz} Hz")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        if info.min == 0:  # unsigned 8-bit PCM
            return (data.astype(np.float64) - 128.0) / 128.0
        return data.astype(np.float64) / float(-info.min)
    return data.astype(np.float64)
