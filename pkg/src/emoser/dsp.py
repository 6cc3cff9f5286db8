"""Log-mel spectrogram frontend.

Converts mono 16-bit PCM audio into normalized 128-channel log-mel
spectrograms. Conventions are fixed here so golden fixtures stay stable:

  - 25 ms Hamming window (numpy's symmetric ``np.hamming``), 10 ms hop,
    no pre-emphasis, no voice activity detection, no resampling.
  - power spectrum ``|rfft|^2`` of each zero-padded frame, default FFT
    size 1024 at 16 kHz.
  - HTK mel scale ``mel(f) = 2595 * log10(1 + f/700)``; 128 triangular
    filters spanning [f_min, f_max], built in the Hz domain, amplitude 1
    at the peak (no area normalization).
  - natural log of ``max(energy, log_floor)``.
  - per-segment, per-channel mean/variance normalization with population
    standard deviation (denominator T) floored at ``norm_epsilon``.

Spectrogram dumps come in two equivalent forms: a text form with header
line ``emoser-spec v1 T nu`` followed by T rows of nu decimal floats,
and a binary form with a 16-byte header (magic ``EMSP``, u32 version,
u32 T, u32 nu, all little-endian) followed by row-major little-endian
float32 values.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import AudioFormatError, ConfigError, DataError, SegmentTooShortError

DUMP_TEXT_MAGIC = "emoser-spec"
DUMP_BINARY_MAGIC = b"EMSP"
DUMP_VERSION = 1


@dataclass(frozen=True)
class FrontendConfig:
    """Feature extraction settings; defaults are the recorded ones."""

    window_ms: int = 25
    hop_ms: int = 10
    n_mels: int = 128
    fft_size: int = 1024
    f_min: float = 20.0
    f_max: float | None = None  # None means Nyquist
    log_floor: float = 1e-10
    norm_epsilon: float = 1e-5

    def window_length(self, sample_rate: int) -> int:
        return (self.window_ms * sample_rate) // 1000

    def hop_length(self, sample_rate: int) -> int:
        return (self.hop_ms * sample_rate) // 1000

    def resolved_f_max(self, sample_rate: int) -> float:
        return sample_rate / 2.0 if self.f_max is None else self.f_max

    def validate(self, sample_rate: int) -> None:
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise ConfigError("window_ms and hop_ms must be positive")
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")
        if self.norm_epsilon <= 0:
            raise ConfigError("norm_epsilon must be positive")
        win = self.window_length(sample_rate)
        if self.fft_size < win:
            raise ConfigError(
                f"fft_size {self.fft_size} is smaller than the "
                f"{win}-sample window at {sample_rate} Hz"
            )
        if self.fft_size & (self.fft_size - 1):
            raise ConfigError("fft_size must be a power of two")
        f_max = self.resolved_f_max(sample_rate)
        if not (0 <= self.f_min < f_max <= sample_rate / 2):
            raise ConfigError(
                f"need 0 <= f_min < f_max <= Nyquist, got "
                f"[{self.f_min}, {f_max}] at {sample_rate} Hz"
            )


@dataclass
class AudioSegment:
    """Mono waveform in [-1, 1] with its sample rate and an opaque id."""

    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def validate(self) -> None:
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size == 0:
            raise DataError(f"audio segment '{self.id}' is empty")
        if not np.all(np.isfinite(self.samples)):
            raise DataError(f"audio segment '{self.id}' contains non-finite samples")


@dataclass
class MelSpectrogram:
    """Time-major T x n_mels matrix of log-mel energies."""

    frames: np.ndarray
    normalized: bool = False

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


def load_wav(path: str | Path, segment_id: str | None = None) -> AudioSegment:
    """Read a RIFF/WAVE file: PCM, 16-bit, mono only.

    Samples are scaled to [-1, 1] by division by 32768. Anything else
    (8-bit, float, stereo, compressed) is rejected rather than coerced.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            comptype = wf.getcomptype()
            sample_rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        raise AudioFormatError(f"unsupported format in {path.name}: {exc}") from exc
    if comptype != "NONE":
        raise AudioFormatError(
            f"unsupported format in {path.name}: non-PCM encoding '{comptype}'"
        )
    if n_channels != 1:
        raise AudioFormatError(
            f"unsupported format in {path.name}: {n_channels} channels, expected mono"
        )
    if sampwidth != 2:
        raise AudioFormatError(
            f"unsupported format in {path.name}: {8 * sampwidth}-bit samples, "
            "expected 16-bit PCM"
        )
    pcm = np.frombuffer(raw, dtype="<i2")
    samples = pcm.astype(np.float64) / 32768.0
    segment = AudioSegment(samples, sample_rate, segment_id or path.stem)
    segment.validate()
    return segment


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """Write float samples in [-1, 1] as mono 16-bit PCM."""
    pcm = np.clip(np.rint(samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def frame_count(n_samples: int, config: FrontendConfig, sample_rate: int) -> int:
    """Number of full analysis windows: floor((n - win) / hop) + 1."""
    win = config.window_length(sample_rate)
    hop = config.hop_length(sample_rate)
    if n_samples < win:
        raise SegmentTooShortError(
            f"segment too short: {n_samples} samples < one {win}-sample window"
        )
    return (n_samples - win) // hop + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(config: FrontendConfig, sample_rate: int) -> np.ndarray:
    """Center frequencies (Hz) of the n_mels triangles."""
    f_max = config.resolved_f_max(sample_rate)
    mel_pts = np.linspace(hz_to_mel(config.f_min), hz_to_mel(f_max), config.n_mels + 2)
    return mel_to_hz(mel_pts[1:-1])


def mel_filterbank(config: FrontendConfig, sample_rate: int) -> np.ndarray:
    """(n_mels, fft_size//2 + 1) triangular filter matrix.

    Triangle m rises from edge m to edge m+1 and falls to edge m+2 of the
    n_mels + 2 equally-mel-spaced points; weights are evaluated at FFT
    bin center frequencies in the Hz domain.
    """
    config.validate(sample_rate)
    f_max = config.resolved_f_max(sample_rate)
    mel_pts = np.linspace(hz_to_mel(config.f_min), hz_to_mel(f_max), config.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(config.fft_size // 2 + 1) * (sample_rate / config.fft_size)

    left = hz_pts[:-2, None]
    center = hz_pts[1:-1, None]
    right = hz_pts[2:, None]
    rising = (bin_freqs[None, :] - left) / (center - left)
    falling = (right - bin_freqs[None, :]) / (right - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_mel(audio: AudioSegment, config: FrontendConfig) -> MelSpectrogram:
    """Waveform -> T x n_mels natural-log mel energies (unnormalized)."""
    audio.validate()
    config.validate(audio.sample_rate)
    win = config.window_length(audio.sample_rate)
    hop = config.hop_length(audio.sample_rate)
    n_frames = frame_count(audio.samples.size, config, audio.sample_rate)

    samples = np.ascontiguousarray(audio.samples, dtype=np.float64)
    frames = np.lib.stride_tricks.sliding_window_view(samples, win)[::hop][:n_frames]
    windowed = frames * np.hamming(win)
    spectrum = np.fft.rfft(windowed, n=config.fft_size, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    fb = mel_filterbank(config, audio.sample_rate)
    energies = power @ fb.T
    out = np.log(np.maximum(energies, config.log_floor))
    return MelSpectrogram(out, normalized=False)


def normalize_segment(
    spec: MelSpectrogram, norm_epsilon: float = FrontendConfig.norm_epsilon
) -> MelSpectrogram:
    """Per-channel mean/variance normalization over the segment's frames.

    Population standard deviation (denominator T), floored at
    norm_epsilon so constant channels come out exactly zero. Normalizing
    twice is treated as a pipeline wiring bug, not a no-op.
    """
    if spec.normalized:
        raise DataError("spectrogram is already normalized (reject double normalization)")
    mean = spec.frames.mean(axis=0)
    std = spec.frames.std(axis=0)  # ddof=0: population std
    out = (spec.frames - mean) / np.maximum(std, norm_epsilon)
    return MelSpectrogram(out, normalized=True)


def extract_features(
    audio: AudioSegment, config: FrontendConfig
) -> MelSpectrogram:
    """log_mel followed by segment normalization (the training frontend)."""
    return normalize_segment(log_mel(audio, config), config.norm_epsilon)


# ---------------------------------------------------------------------------
# Spectrogram dumps


def write_dump(
    spec: MelSpectrogram, path: str | Path, fmt: str = "text"
) -> None:
    if fmt == "text":
        _write_dump_text(spec, Path(path))
    elif fmt == "binary":
        _write_dump_binary(spec, Path(path))
    else:
        raise ConfigError(f"unknown dump format '{fmt}' (expected text|binary)")


def read_dump(path: str | Path, normalized: bool) -> MelSpectrogram:
    """Read either dump form; the caller states whether it holds
    normalized features (the format itself does not carry the flag)."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == DUMP_BINARY_MAGIC:
        frames = _read_dump_binary(path)
    else:
        frames = _read_dump_text(path)
    return MelSpectrogram(frames, normalized=normalized)


def _write_dump_text(spec: MelSpectrogram, path: Path) -> None:
    t, nu = spec.frames.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{DUMP_TEXT_MAGIC} v{DUMP_VERSION} {t} {nu}\n")
        for row in spec.frames:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


def _read_dump_text(path: Path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != DUMP_TEXT_MAGIC:
            raise DataError(f"not a spectrogram dump: {path}")
        if header[1] != f"v{DUMP_VERSION}":
            raise DataError(f"unsupported dump version {header[1]} in {path}")
        t, nu = int(header[2]), int(header[3])
        frames = np.empty((t, nu), dtype=np.float64)
        for i in range(t):
            row = fh.readline().split()
            if len(row) != nu:
                raise DataError(f"truncated dump {path}: row {i}")
            frames[i] = [float(v) for v in row]
    return frames


def _write_dump_binary(spec: MelSpectrogram, path: Path) -> None:
    t, nu = spec.frames.shape
    with open(path, "wb") as fh:
        fh.write(DUMP_BINARY_MAGIC)
        fh.write(struct.pack("<III", DUMP_VERSION, t, nu))
        fh.write(np.ascontiguousarray(spec.frames, dtype="<f4").tobytes())


def _read_dump_binary(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != DUMP_BINARY_MAGIC:
        raise DataError(f"not a spectrogram dump: {path}")
    version, t, nu = struct.unpack("<III", raw[4:16])
    if version != DUMP_VERSION:
        raise DataError(f"unsupported dump version {version} in {path}")
    expected = 16 + 4 * t * nu
    if len(raw) != expected:
        raise DataError(f"truncated dump {path}: {len(raw)} bytes, expected {expected}")
    frames = np.frombuffer(raw[16:], dtype="<f4").reshape(t, nu)
    return frames.astype(np.float64)


def default_config_for(sample_rate: int) -> FrontendConfig:
    """Recorded defaults, with fft_size bumped for high sample rates."""
    cfg = FrontendConfig()
    win = cfg.window_length(sample_rate)
    fft = cfg.fft_size
    while fft < win:
        fft *= 2
    return replace(cfg, fft_size=fft)
