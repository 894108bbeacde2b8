"""WAV ingestion, dataset manifests, and deterministic synthetic audio.

Only RIFF PCM 16-bit mono at 8 kHz or 16 kHz is accepted; mixed sampling
rates are reconciled downstream at the feature level, never by resampling.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ManifestError, UnsupportedRateError

SUPPORTED_RATES = (8000, 16000)
MAX_DURATION_S = 10.0
INT16_SCALE = 32768.0

# Synthetic utterances: seeded sinusoids below this band edge so the same
# underlying signal is representable at both sampling rates. Amplitudes are
# fixed at decisive ratios and each frequency sits near the center of a mel
# row of the default 80-bin filterbank, so the dominant mel row is
# unambiguous in both the 8 kHz and 16 kHz pipelines.
_SYNTH_FMIN_HZ = 200.0
_SYNTH_FMAX_HZ = 3400.0
_SYNTH_AMPS = (0.55, 0.2, 0.1)
_SYNTH_NOISE_AMP = 10.0 ** (-40.0 / 20.0)
_SYNTH_MEL_BANDWIDTH = (2595.0 * np.log10(1.0 + 8000.0 / 700.0)) / 80.0
_SYNTH_BOUNDARY_MARGIN = 0.3  # fraction of a mel row kept clear of edges
_SYNTH_MIN_SEPARATION_ROWS = 2.0


def _draw_synth_freqs(rng: np.random.Generator) -> np.ndarray:
    """Three frequencies, each well inside a mel row and mutually separated.

    Sorted descending: the dominant amplitude goes to the highest
    frequency, so pre-emphasis reinforces rather than reverses the
    dominance ordering.
    """
    freqs: list[float] = []
    positions: list[float] = []  # frequency in units of mel rows
    while len(freqs) < 3:
        f = float(rng.uniform(_SYNTH_FMIN_HZ, _SYNTH_FMAX_HZ))
        pos = 2595.0 * np.log10(1.0 + f / 700.0) / _SYNTH_MEL_BANDWIDTH
        if abs(pos - round(pos)) < _SYNTH_BOUNDARY_MARGIN:
            continue
        if positions and min(abs(pos - p) for p in positions) < _SYNTH_MIN_SEPARATION_ROWS:
            continue
        freqs.append(f)
        positions.append(pos)
    return np.asarray(sorted(freqs, reverse=True))


@dataclass
class AudioBuffer:
    """Mono PCM samples in [-1, 1] plus their sampling rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate not in SUPPORTED_RATES:
            raise UnsupportedRateError(
                f"sample rate {self.sample_rate} not in {SUPPORTED_RATES}"
            )
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if self.duration > MAX_DURATION_S:
            raise ValueError(
                f"duration {self.duration:.3f}s exceeds the {MAX_DURATION_S}s cap"
            )

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class Utterance:
    """One dataset manifest row."""

    audio_path: str
    sample_rate: int
    text: str
    dataset: str = field(default="default")


def read_wav(path) -> AudioBuffer:
    """Read a RIFF PCM16 mono WAV file into an AudioBuffer."""
    try:
        with wave.open(str(path), "rb") as wav:
            nchannels = wav.getnchannels()
            sampwidth = wav.getsampwidth()
            comptype = wav.getcomptype()
            rate = wav.getframerate()
            nframes = wav.getnframes()
            raw = wav.readframes(nframes)
    except wave.Error as exc:
        raise FormatError(f"{path}: not a readable WAV file ({exc})") from exc
    if comptype != "NONE":
        raise FormatError(f"{path}: compressed WAV ({comptype}) is unsupported")
    if nchannels != 1:
        raise FormatError(f"{path}: expected mono, got {nchannels} channels")
    if sampwidth != 2:
        raise FormatError(f"{path}: expected 16-bit PCM, got {8 * sampwidth}-bit")
    if rate not in SUPPORTED_RATES:
        raise UnsupportedRateError(
            f"{path}: sample rate {rate} not in {SUPPORTED_RATES}"
        )
    ints = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(ints.astype(np.float64) / INT16_SCALE, rate)


def write_wav(path, audio: AudioBuffer) -> None:
    """Write an AudioBuffer as RIFF PCM16 mono."""
    quantized = np.clip(
        np.rint(audio.samples * INT16_SCALE), -32768, 32767
    ).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(audio.sample_rate)
        wav.writeframes(quantized.tobytes())


def synth_utterance(seed: int, sample_rate: int, duration: float) -> AudioBuffer:
    """Deterministic test signal: 3 seeded sinusoids plus -40 dB uniform noise.

    The sinusoid parameters depend on the seed only, so the same seed
    rendered at 8 kHz and 16 kHz samples the same underlying signal.
    """
    if not 0.0 < duration <= MAX_DURATION_S:
        raise ValueError(f"duration must be in (0, {MAX_DURATION_S}], got {duration}")
    if sample_rate not in SUPPORTED_RATES:
        raise UnsupportedRateError(
            f"sample rate {sample_rate} not in {SUPPORTED_RATES}"
        )
    param_rng = np.random.default_rng(seed)
    freqs = _draw_synth_freqs(param_rng)
    phases = param_rng.uniform(0.0, 2.0 * np.pi, size=3)
    amps = np.asarray(_SYNTH_AMPS)

    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    signal = np.zeros(n)
    for f, ph, a in zip(freqs, phases, amps):
        signal += a * np.sin(2.0 * np.pi * f * t + ph)
    noise_rng = np.random.default_rng([seed, sample_rate])
    signal += _SYNTH_NOISE_AMP * noise_rng.uniform(-1.0, 1.0, size=n)
    return AudioBuffer(signal, sample_rate)


def load_manifest(path) -> list[Utterance]:
    """Load a JSON Lines manifest, preserving row order.

    Each row must carry `audio` (str), `sample_rate` (int), `text` (str);
    an optional `dataset` tag groups rows for scoring reports.
    """
    utterances = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(lineno, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(row, dict):
                raise ManifestError(lineno, "row is not a JSON object")
            missing = {"audio", "sample_rate", "text"} - row.keys()
            if missing:
                raise ManifestError(lineno, f"missing keys {sorted(missing)}")
            rate = row["sample_rate"]
            if rate not in SUPPORTED_RATES:
                raise ManifestError(
                    lineno, f"sample_rate {rate} not in {SUPPORTED_RATES}"
                )
            utterances.append(
                Utterance(
                    audio_path=str(row["audio"]),
                    sample_rate=int(rate),
                    text=str(row["text"]),
                    dataset=str(row.get("dataset", "default")),
                )
            )
    return utterances


def save_manifest(path, utterances) -> None:
    """Write utterances as a JSON Lines manifest (inverse of load_manifest)."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt in utterances:
            row = {
                "audio": utt.audio_path,
                "sample_rate": utt.sample_rate,
                "text": utt.text,
            }
            if utt.dataset != "default":
                row["dataset"] = utt.dataset
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def _resolve_audio_path(manifest_path, audio: str) -> Path:
    """Manifest audio paths are taken relative to the manifest file."""
    p = Path(audio)
    if p.is_absolute():
        return p
    return Path(manifest_path).parent / p
