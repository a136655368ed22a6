"""Sub-band LFCC front-end.

A waveform is blocked into Hamming-windowed frames, transformed to a power
spectrogram, passed through a triangular filterbank with linearly spaced
centre frequencies restricted to [f_min, f_max], log-compressed, and
projected onto an orthonormal DCT-II basis. Velocity and acceleration
coefficients computed by the usual regression formula are stacked onto the
static cepstra, so the feature dimension is 3 * n_ceps.

Band edges snap to FFT bin centres, which keeps sub-band boundaries
reproducible across configurations that share the same spectral grid.
"""

from dataclasses import dataclass, replace
import hashlib
import struct
import wave

import numpy as np

from .errors import ConfigurationError, DataError

LOG_FLOOR = 1e-30

_CACHE_MAGIC = b"BCMF1\n"


@dataclass(frozen=True)
class Waveform:
    """Mono audio with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise DataError("waveform must be a non-empty 1-D sequence")
        if self.sample_rate <= 0:
            raise DataError("sample rate must be positive")
        peak = np.max(np.abs(samples))
        if not np.isfinite(peak) or peak > 1.0 + 1e-9:
            raise DataError(f"samples exceed [-1, 1] (peak {peak:.4g})")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrontendConfig:
    """Parameters of the sub-band LFCC extractor.

    The defaults follow the high-resolution full-band setting: 30 ms
    windows with 15 ms shift, a 1024-point FFT and 70 linearly spaced
    filters, keeping 20 cepstra plus their deltas and double deltas.
    """

    window_ms: float = 30.0
    hop_ms: float = 15.0
    n_fft: int = 1024
    n_filters: int = 70
    f_min: float = 0.0
    f_max: float = 8000.0
    n_ceps: int = 20
    delta_context: int = 2

    def __post_init__(self):
        if not 0 < self.hop_ms <= self.window_ms:
            raise ConfigurationError("need 0 < hop_ms <= window_ms")
        if self.n_fft < 1:
            raise ConfigurationError("n_fft must be positive")
        if self.n_filters < 1:
            raise ConfigurationError("n_filters must be positive")
        if not 0 <= self.f_min < self.f_max:
            raise ConfigurationError("need 0 <= f_min < f_max")
        if not 1 <= self.n_ceps <= self.n_filters:
            raise ConfigurationError("need 1 <= n_ceps <= n_filters")
        if self.delta_context < 1:
            raise ConfigurationError("delta_context must be >= 1")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))

    @property
    def dims(self) -> int:
        return 3 * self.n_ceps

    def with_band(self, f_min: float, f_max: float, n_filters: int | None = None) -> "FrontendConfig":
        """Copy of this config restricted to [f_min, f_max].

        When n_filters is omitted it is scaled in proportion to the new
        bandwidth (floor of 10 filters), and n_ceps is clamped to stay
        within the filter count.
        """
        if n_filters is None:
            scale = (f_max - f_min) / (self.f_max - self.f_min)
            n_filters = max(10, int(round(self.n_filters * scale)))
        return replace(
            self,
            f_min=f_min,
            f_max=f_max,
            n_filters=n_filters,
            n_ceps=min(self.n_ceps, n_filters),
        )

    def config_hash(self) -> str:
        text = (
            f"window_ms={self.window_ms!r} hop_ms={self.hop_ms!r} n_fft={self.n_fft} "
            f"n_filters={self.n_filters} f_min={self.f_min!r} f_max={self.f_max!r} "
            f"n_ceps={self.n_ceps} delta_context={self.delta_context}"
        )
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def snap_to_bin(freq_hz: float, sample_rate: int, n_fft: int) -> float:
    """Snap a frequency to the nearest FFT bin centre."""
    bin_hz = sample_rate / n_fft
    return round(freq_hz / bin_hz) * bin_hz


def frame_signal(wave_in: Waveform, cfg: FrontendConfig) -> np.ndarray:
    """Split a waveform into overlapping Hamming-windowed frames.

    Returns an array of shape (n_frames, window_samples) with
    n_frames = floor((len - win) / hop) + 1.
    """
    win = cfg.window_samples(wave_in.sample_rate)
    hop = cfg.hop_samples(wave_in.sample_rate)
    n = wave_in.samples.size
    if n < win:
        raise DataError(
            f"utterance too short: {n} samples < one {win}-sample analysis window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(wave_in.samples, win)[::hop]
    return frames * np.hamming(win)


def power_spectrum(frames: np.ndarray, n_fft: int) -> np.ndarray:
    """Squared-magnitude FFT of each frame, zero-padded to n_fft points."""
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    if n_fft < frames.shape[1]:
        raise ConfigurationError(
            f"n_fft={n_fft} is shorter than the {frames.shape[1]}-sample frame"
        )
    spectrum = np.fft.rfft(frames, n=n_fft, axis=1)
    return np.abs(spectrum) ** 2


def filterbank_edges(cfg: FrontendConfig, sample_rate: int) -> np.ndarray:
    """The n_filters + 2 linearly spaced filter edges after band snapping."""
    if cfg.f_max > sample_rate / 2 + 1e-9:
        raise ConfigurationError(
            f"f_max={cfg.f_max} Hz exceeds Nyquist ({sample_rate / 2} Hz)"
        )
    f_lo = snap_to_bin(cfg.f_min, sample_rate, cfg.n_fft)
    f_hi = snap_to_bin(cfg.f_max, sample_rate, cfg.n_fft)
    if not 0 <= f_lo < f_hi:
        raise ConfigurationError("band collapsed after snapping to FFT bin centres")
    return np.linspace(f_lo, f_hi, cfg.n_filters + 2)


def linear_filterbank(cfg: FrontendConfig, sample_rate: int) -> np.ndarray:
    """Triangular filters on a linear frequency scale, (n_filters, n_fft//2 + 1).

    Filter i rises from edge i to its centre at edge i+1 and falls to edge
    i+2, evaluated at the FFT bin centres. Every filter must cover at least
    one bin; otherwise the band is too narrow for the requested filter count.
    """
    edges = filterbank_edges(cfg, sample_rate)
    bin_freqs = np.arange(cfg.n_fft // 2 + 1) * (sample_rate / cfg.n_fft)
    fb = np.zeros((cfg.n_filters, bin_freqs.size))
    for i in range(cfg.n_filters):
        left, centre, right = edges[i], edges[i + 1], edges[i + 2]
        rising = (bin_freqs - left) / (centre - left)
        falling = (right - bin_freqs) / (right - centre)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(fb.sum(axis=1) <= 0):
        raise ConfigurationError(
            f"band [{edges[0]:.6g}, {edges[-1]:.6g}] Hz too narrow for "
            f"{cfg.n_filters} distinct filters at n_fft={cfg.n_fft}"
        )
    return fb


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis, rows are basis vectors."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    mat = np.cos(np.pi * k * (2 * m + 1) / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] /= np.sqrt(2.0)
    return mat


def delta(features: np.ndarray, context: int = 2) -> np.ndarray:
    """Regression-based velocity features with edge frames replicated."""
    if context < 1:
        raise ConfigurationError("delta context must be >= 1")
    padded = np.pad(features, ((context, context), (0, 0)), mode="edge")
    num = np.zeros_like(features, dtype=float)
    for step in range(1, context + 1):
        num += step * (padded[context + step:padded.shape[0] - context + step]
                       - padded[context - step:padded.shape[0] - context - step])
    return num / (2.0 * sum(step**2 for step in range(1, context + 1)))


def power_spectrogram(wave_in: Waveform, cfg: FrontendConfig) -> np.ndarray:
    """Framing plus power spectrum; depends only on window, hop and n_fft."""
    return power_spectrum(frame_signal(wave_in, cfg), cfg.n_fft)


def cepstra_from_power(powspec: np.ndarray, cfg: FrontendConfig, sample_rate: int) -> np.ndarray:
    """Filterbank, log compression, DCT and delta stacking on a power spectrogram."""
    fb = linear_filterbank(cfg, sample_rate)
    energies = powspec @ fb.T
    log_energies = np.log(np.maximum(energies, LOG_FLOOR))
    dct = dct_matrix(cfg.n_filters)[: cfg.n_ceps]
    static = log_energies @ dct.T
    vel = delta(static, cfg.delta_context)
    acc = delta(vel, cfg.delta_context)
    return np.hstack([static, vel, acc])


def extract_lfcc(wave_in: Waveform, cfg: FrontendConfig) -> np.ndarray:
    """Full LFCC pipeline: (n_frames, 3 * n_ceps) feature matrix."""
    return cepstra_from_power(power_spectrogram(wave_in, cfg), cfg, wave_in.sample_rate)


# ---------------------------------------------------------------------------
# Feature cache and audio input
# ---------------------------------------------------------------------------

def save_features(path, features: np.ndarray, config_hash: str) -> None:
    """Write a feature matrix as header + row-major little-endian float32."""
    features = np.ascontiguousarray(features, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(f"{features.shape[1]} {features.shape[0]} {config_hash}\n".encode())
        fh.write(features.tobytes())


def load_features(path, expected_hash: str | None = None) -> np.ndarray:
    """Read a cached feature matrix, optionally checking its config hash."""
    with open(path, "rb") as fh:
        if fh.read(len(_CACHE_MAGIC)) != _CACHE_MAGIC:
            raise DataError(f"{path}: not a feature cache file")
        header = fh.readline().decode().split()
        if len(header) != 3:
            raise DataError(f"{path}: malformed feature header")
        dims, frames, config_hash = int(header[0]), int(header[1]), header[2]
        if expected_hash is not None and config_hash != expected_hash:
            raise DataError(
                f"{path}: cached with config {config_hash}, expected {expected_hash}"
            )
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != dims * frames:
        raise DataError(f"{path}: truncated feature payload")
    return data.reshape(frames, dims).astype(float)


def load_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file; the sample rate comes from the header."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise DataError(f"{path}: expected mono audio")
        if fh.getsampwidth() != 2:
            raise DataError(f"{path}: expected 16-bit PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, wave_out: Waveform) -> None:
    """Write a waveform as mono 16-bit PCM WAV."""
    quantized = np.clip(np.round(wave_out.samples * 32767.0), -32768, 32767)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wave_out.sample_rate)
        fh.writeframes(struct.pack(f"<{quantized.size}h", *quantized.astype(int)))
