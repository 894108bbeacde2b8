"""Mix-bandwidth log-mel filterbank features.

Both sampling rates map onto one d-dimensional mel axis spanning 0-8 kHz.
16 kHz audio uses a 2N-point transform (N+1 spectrum bins); 8 kHz audio
uses an N-point transform whose missing top octave is zero-padded to the
same N+1 bins, so bin k means the same frequency in both pipelines. After
the log, only the first n_active mel rows of an 8 kHz utterance carry
information; per-utterance normalization standardizes that active slice
with one scalar mean/std and zeroes the padded rows.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .audio_io import AudioBuffer
from .errors import ConfigError, DegenerateInputError

_HEADER_FMT = "<4i"  # d, T, n_active, sample_rate


@dataclass(frozen=True)
class FbankConfig:
    d: int = 80
    window_ms: float = 20.0
    shift_ms: float = 10.0
    fft_half: int = 256  # N: 2N-point FFT at 16 kHz, N-point at 8 kHz
    preemphasis: float = 0.97
    f_high: float = 8000.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.log_floor <= 0.0:
            raise ValueError("log_floor must be positive")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def shift_samples(self, sample_rate: int) -> int:
        return int(round(self.shift_ms * sample_rate / 1000.0))

    def fft_size(self, sample_rate: int) -> int:
        return 2 * self.fft_half if sample_rate == 16000 else self.fft_half


@dataclass
class FeatureMatrix:
    """d x T log-mel features with the active-band row count."""

    values: np.ndarray
    n_active: int
    sample_rate: int
    normalized: bool = field(default=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be a d x T matrix")
        if not 1 <= self.n_active <= self.values.shape[0]:
            raise ValueError("n_active must be in [1, d]")

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f: float) -> float:
    """Mel value of a frequency: 2595 * log10(1 + f/700)."""
    if f < 0:
        raise ValueError(f"frequency must be non-negative, got {f}")
    return 2595.0 * math.log10(1.0 + f / 700.0)


def mel_bandwidth(d: int, f_high: float = 8000.0) -> float:
    """Mel width of one filter when d filters tile 0..f_high."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    return hz_to_mel(f_high) / d


def low_band_dim(d: int, f_high: float = 8000.0) -> int:
    """Number of mel rows covering the 8 kHz-audio band (0..f_high/2).

    The band edge in mel is 2595*log10(1 + f_high/1400), algebraically
    hz_to_mel(f_high/2); the count is the ceiling rule on half-offset
    filter centers, clamped into [1, d] (the raw rule can exceed d for
    tiny d).
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    m_l = 2595.0 * math.log10(1.0 + f_high / 1400.0)
    m_b = mel_bandwidth(d, f_high)
    n_l = math.ceil((m_l - m_b / 2.0) / m_b + 1.0)
    return min(max(n_l, 1), d)


def mel_filterbank(config: FbankConfig, fft_bins: int) -> np.ndarray:
    """Triangular mel filters evaluated on the padded-spectrum bin grid.

    Filter n (1-indexed) peaks at (n - 1/2)*m_b and falls to zero at
    +-m_b; bin k corresponds to frequency k * f_high / N for both
    sampling rates.
    """
    if fft_bins != config.fft_half + 1:
        raise ConfigError(
            f"expected {config.fft_half + 1} spectrum bins, got {fft_bins}"
        )
    m_b = mel_bandwidth(config.d, config.f_high)
    bin_freqs = np.arange(fft_bins) * (config.f_high / config.fft_half)
    bin_mels = 2595.0 * np.log10(1.0 + bin_freqs / 700.0)
    centers = (np.arange(1, config.d + 1) - 0.5) * m_b
    weights = 1.0 - np.abs(bin_mels[None, :] - centers[:, None]) / m_b
    weights = np.maximum(weights, 0.0)
    if np.any(weights.sum(axis=1) == 0.0):
        empty = int(np.flatnonzero(weights.sum(axis=1) == 0.0)[0])
        raise ConfigError(f"filter {empty} has no spectrum support")
    return weights


def _frame_signal(x: np.ndarray, window: int, shift: int) -> np.ndarray:
    num_frames = 1 + (x.size - window) // shift
    idx = np.arange(window)[None, :] + shift * np.arange(num_frames)[:, None]
    return x[idx]


def compute_fbank(audio: AudioBuffer, config: FbankConfig = FbankConfig()) -> FeatureMatrix:
    """Pre-emphasis, framing/windowing, power spectrum, mel filters, log."""
    rate = audio.sample_rate
    window = config.window_samples(rate)
    shift = config.shift_samples(rate)
    nfft = config.fft_size(rate)
    if nfft < window:
        raise ConfigError(
            f"FFT size {nfft} shorter than the {window}-sample window at {rate} Hz"
        )
    x = audio.samples
    if x.size < window:
        raise ValueError(
            f"audio too short: {x.size} samples < one {window}-sample window"
        )

    emphasized = np.empty_like(x)
    emphasized[0] = x[0] * (1.0 - config.preemphasis)
    emphasized[1:] = x[1:] - config.preemphasis * x[:-1]

    frames = _frame_signal(emphasized, window, shift) * np.hamming(window)
    spectrum = np.fft.rfft(frames, n=nfft, axis=1)
    power = np.abs(spectrum) ** 2  # (T, nfft//2 + 1)

    full_bins = config.fft_half + 1
    if power.shape[1] < full_bins:
        padded = np.zeros((power.shape[0], full_bins))
        padded[:, : power.shape[1]] = power
        power = padded

    weights = mel_filterbank(config, full_bins)
    energies = power @ weights.T  # (T, d)
    values = np.log(energies.T + config.log_floor)

    n_active = config.d if rate == 16000 else low_band_dim(config.d, config.f_high)
    return FeatureMatrix(values=values, n_active=n_active, sample_rate=rate)


def normalize(feat: FeatureMatrix) -> FeatureMatrix:
    """Standardize the active slice to scalar zero mean / unit std.

    One mean and one std are taken over the whole n_active x T submatrix;
    padded rows are set to exactly zero so they carry no information.
    """
    if feat.num_frames < 2:
        raise ValueError("need at least 2 frames to normalize")
    active = feat.values[: feat.n_active, :]
    mu = float(active.mean())
    sigma = float(active.std())
    if sigma == 0.0:
        raise DegenerateInputError("active feature slice has zero variance")
    values = np.zeros_like(feat.values)
    values[: feat.n_active, :] = (active - mu) / sigma
    return replace(feat, values=values, normalized=True)


@dataclass
class ArchiveEntry:
    audio: str
    offset: int
    d: int
    num_frames: int
    n_active: int
    sample_rate: int
    text: str = ""
    dataset: str = "default"


def default_index_path(archive_path) -> str:
    return str(archive_path) + ".index.jsonl"


def write_archive(archive_path, items, index_path=None) -> list[ArchiveEntry]:
    """Write (name, FeatureMatrix, text, dataset) tuples as a binary archive.

    Per utterance: a 16-byte little-endian int32 header (d, T, n_active,
    sample_rate) followed by d*T float32 values, row-major. The JSON Lines
    sidecar records one entry per utterance with its byte offset.
    """
    if index_path is None:
        index_path = default_index_path(archive_path)
    entries = []
    with open(archive_path, "wb") as fh:
        for name, feat, text, dataset in items:
            entry = ArchiveEntry(
                audio=name,
                offset=fh.tell(),
                d=feat.d,
                num_frames=feat.num_frames,
                n_active=feat.n_active,
                sample_rate=feat.sample_rate,
                text=text,
                dataset=dataset,
            )
            fh.write(
                struct.pack(
                    _HEADER_FMT, feat.d, feat.num_frames, feat.n_active,
                    feat.sample_rate,
                )
            )
            fh.write(feat.values.astype("<f4").tobytes(order="C"))
            entries.append(entry)
    with open(index_path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry.__dict__, ensure_ascii=False) + "\n")
    return entries


def read_archive(archive_path, index_path=None):
    """Yield (ArchiveEntry, FeatureMatrix) pairs from a feature archive."""
    if index_path is None:
        index_path = default_index_path(archive_path)
    with open(index_path, "r", encoding="utf-8") as fh:
        entries = [ArchiveEntry(**json.loads(line)) for line in fh if line.strip()]
    header_size = struct.calcsize(_HEADER_FMT)
    with open(archive_path, "rb") as fh:
        for entry in entries:
            fh.seek(entry.offset)
            d, num_frames, n_active, rate = struct.unpack(
                _HEADER_FMT, fh.read(header_size)
            )
            count = d * num_frames
            values = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(
                d, num_frames
            )
            yield entry, FeatureMatrix(
                values=values.astype(np.float64),
                n_active=n_active,
                sample_rate=rate,
                normalized=False,
            )
