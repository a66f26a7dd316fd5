"""Waveform/spectrogram conversion, acoustic features, VAD and SNR mixing."""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct

DEFAULT_SAMPLE_RATE = 8000
DEFAULT_WINDOW_LEN = 512   # 64 ms at 8 kHz
DEFAULT_HOP = 128          # 16 ms at 8 kHz
DEFAULT_MEL_FILTERS = 23
DEFAULT_MFCC_WINDOW_MS = 25.0
DEFAULT_MFCC_HOP_MS = 10.0
STD_FLOOR = 1e-6
COLA_TOL = 1e-6


@dataclass
class Waveform:
    """Mono audio signal with its sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self) -> None:
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    def energy(self) -> float:
        return float(np.sum(self.samples ** 2))


@dataclass
class Spectrogram:
    """Complex STFT matrix of shape (time_frames, freq_bins)."""

    bins: np.ndarray
    window_len: int
    hop: int
    analysis_window: np.ndarray
    n_samples: int
    sample_rate: int = DEFAULT_SAMPLE_RATE

    @property
    def n_frames(self) -> int:
        return self.bins.shape[0]

    @property
    def n_bins(self) -> int:
        return self.bins.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)


@dataclass
class FeatureMatrix:
    """Per-frame real features; kind is 'log-magnitude' or 'mfcc'."""

    rows: np.ndarray
    kind: str

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.size and not np.all(np.isfinite(self.rows)):
            raise ValueError("feature matrix contains non-finite entries")


@dataclass
class NormalizationStats:
    """Per-bin mean/std; std is floored to keep standardization finite."""

    mean: np.ndarray
    std: np.ndarray
    floor: float = STD_FLOOR

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), self.floor)


def sqrt_hann(window_len: int) -> np.ndarray:
    """Square-root of the periodic Hann window (COLA at hop = len/2, len/4, ...)."""
    n = np.arange(window_len)
    return np.sin(np.pi * n / window_len)


def _frame_count(n_samples: int, window_len: int, hop: int) -> int:
    if n_samples <= window_len:
        return 1
    return 1 + int(np.ceil((n_samples - window_len) / hop))


def stft(w: Waveform, window_len: int = DEFAULT_WINDOW_LEN, hop: int = DEFAULT_HOP,
         window: np.ndarray | None = None) -> Spectrogram:
    """Short-time Fourier transform keeping bins DC..window_len/2-1 (Nyquist dropped)."""
    if len(w) == 0:
        raise ValueError("empty input")
    if window_len <= 0 or hop <= 0 or hop > window_len or window_len % 2:
        raise ValueError("invalid framing")
    if window is None:
        window = sqrt_hann(window_len)
    window = np.asarray(window, dtype=np.float64)
    if window.size != window_len:
        raise ValueError("invalid framing")

    n_frames = _frame_count(len(w), window_len, hop)
    padded = np.zeros((n_frames - 1) * hop + window_len)
    padded[: len(w)] = w.samples
    offsets = np.arange(n_frames) * hop
    frames = padded[offsets[:, None] + np.arange(window_len)[None, :]] * window
    spec = np.fft.rfft(frames, axis=1)[:, : window_len // 2]
    return Spectrogram(bins=spec, window_len=window_len, hop=hop,
                       analysis_window=window, n_samples=len(w),
                       sample_rate=w.sample_rate)


def _ola_envelope(window: np.ndarray, hop: int, n_frames: int, out_len: int) -> np.ndarray:
    env = np.zeros(out_len)
    w2 = window ** 2
    for k in range(n_frames):
        env[k * hop : k * hop + window.size] += w2
    return env


def check_cola(window: np.ndarray, hop: int) -> bool:
    """True when the squared window overlap-adds to a constant at this hop."""
    window_len = window.size
    n_frames = 8 * max(window_len // hop, 1)
    env = _ola_envelope(window, hop, n_frames, (n_frames - 1) * hop + window_len)
    interior = env[window_len : -window_len]
    if interior.size == 0:
        return False
    lo, hi = interior.min(), interior.max()
    return lo > COLA_TOL and (hi - lo) <= COLA_TOL * hi


def istft(s: Spectrogram) -> Waveform:
    """Least-squares overlap-add inverse of stft.

    Overlapping frames observe more coefficients than there are samples, so
    the signal component aliased into the dropped Nyquist bin is recoverable
    from neighbouring frames. Solving the full normal equations (weighted OLA
    plus a banded Woodbury correction for the missing bin) makes this the
    exact pseudo-inverse: stft(istft(stft(w))) == stft(w).
    """
    if not check_cola(s.analysis_window, s.hop):
        raise ValueError("non-invertible framing")
    from scipy.linalg import solveh_banded

    window, hop, wl = s.analysis_window, s.hop, s.window_len
    n_frames = s.n_frames
    out_len = (n_frames - 1) * hop + wl
    full = np.concatenate([s.bins, np.zeros((n_frames, 1), dtype=complex)], axis=1)
    frames = np.fft.irfft(full, n=wl, axis=1)

    num = np.zeros(out_len)
    for k in range(n_frames):
        num[k * hop : k * hop + wl] += frames[k] * window
    den = _ola_envelope(window, hop, n_frames, out_len)
    observable = den > COLA_TOL * den.max()
    den_inv = np.where(observable, 1.0 / np.where(observable, den, 1.0), 0.0)

    # Normal equations: (D - U U^T) y = num, where column k of U is the
    # windowed Nyquist basis w[n]*(-1)^n/sqrt(wl) on frame k's span.
    wq = window * np.where(np.arange(wl) % 2 == 0, 1.0, -1.0) / np.sqrt(wl)
    bandwidth = (wl - 1) // hop
    ab = np.zeros((bandwidth + 1, n_frames))
    for d in range(bandwidth + 1):
        prod = wq[d * hop :] * wq[: wl - d * hop]
        for k in range(n_frames - d):
            seg = den_inv[k * hop + d * hop : k * hop + wl]
            ab[bandwidth - d, k + d] = -np.dot(prod, seg)
    ab[bandwidth, :] += 1.0
    b = np.array([np.dot(wq, den_inv[k * hop : k * hop + wl] * num[k * hop : k * hop + wl])
                  for k in range(n_frames)])
    z = solveh_banded(ab, b)
    for k in range(n_frames):
        num[k * hop : k * hop + wl] += z[k] * wq
    y = den_inv * num
    return Waveform(y[: s.n_samples], sample_rate=s.sample_rate)


def log_magnitude(s: Spectrogram, stats: NormalizationStats | None = None) -> FeatureMatrix:
    """Per-bin 20*log10(|X|+eps), optionally standardized with the given stats."""
    mag = s.magnitude()
    peak = float(mag.max()) if mag.size else 0.0
    eps = 1e-8 * peak if peak > 0.0 else 1e-8
    feat = 20.0 * np.log10(mag + eps)
    if stats is not None:
        feat = (feat - stats.mean) / stats.std
    return FeatureMatrix(rows=feat, kind="log-magnitude")


def compute_normalization_stats(features: list[FeatureMatrix],
                                floor: float = STD_FLOOR) -> NormalizationStats:
    """Per-bin mean/std pooled over all frames of all feature matrices."""
    if not features:
        raise ValueError("no features given")
    stacked = np.concatenate([f.rows for f in features], axis=0)
    return NormalizationStats(mean=stacked.mean(axis=0),
                              std=stacked.std(axis=0), floor=floor)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters on rfft bins, each normalized to unit sum."""
    n_bins = n_fft // 2 + 1
    freqs = np.arange(n_bins) * sample_rate / n_fft
    edges = _mel_to_hz(np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0),
                                   n_filters + 2))
    bank = np.zeros((n_filters, n_bins))
    for i in range(n_filters):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / max(center - lo, 1e-12)
        down = (hi - freqs) / max(hi - center, 1e-12)
        bank[i] = np.clip(np.minimum(up, down), 0.0, None)
        total = bank[i].sum()
        if total > 0:
            bank[i] /= total
    return bank


def mfcc(w: Waveform, n_coeffs: int = 13, window_len: int | None = None,
         hop: int | None = None, n_filters: int = DEFAULT_MEL_FILTERS) -> FeatureMatrix:
    """Mel filterbank -> log -> DCT-II, first n_coeffs coefficients per frame."""
    if n_coeffs < 1:
        raise ValueError("n_coeffs must be >= 1")
    if n_coeffs > n_filters:
        raise ValueError(f"n_coeffs {n_coeffs} exceeds filter count {n_filters}")
    if len(w) == 0:
        raise ValueError("empty input")
    if window_len is None:
        window_len = int(round(w.sample_rate * DEFAULT_MFCC_WINDOW_MS / 1000.0))
    if hop is None:
        hop = int(round(w.sample_rate * DEFAULT_MFCC_HOP_MS / 1000.0))
    if window_len <= 0 or hop <= 0 or hop > window_len:
        raise ValueError("invalid framing")

    n_frames = _frame_count(len(w), window_len, hop)
    padded = np.zeros((n_frames - 1) * hop + window_len)
    padded[: len(w)] = w.samples
    offsets = np.arange(n_frames) * hop
    frames = padded[offsets[:, None] + np.arange(window_len)[None, :]]
    frames = frames * np.hamming(window_len)

    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    bank = mel_filterbank(n_filters, window_len, w.sample_rate)
    energies = np.maximum(power @ bank.T, 1e-30)
    log_mel = np.log(energies)
    coeffs = dct(log_mel, type=2, norm="ortho", axis=1)[:, :n_coeffs]
    return FeatureMatrix(rows=coeffs, kind="mfcc")


def frame_energy_db(x: FeatureMatrix | Spectrogram) -> np.ndarray:
    """Per-frame energy in dB for a spectrogram or feature matrix."""
    if isinstance(x, Spectrogram):
        energy = np.sum(np.abs(x.bins) ** 2, axis=1)
        return 10.0 * np.log10(np.maximum(energy, 1e-300))
    if x.kind == "log-magnitude":
        return 10.0 * np.log10(np.sum(10.0 ** (x.rows / 10.0), axis=1))
    if x.kind == "mfcc":
        # c0 (ortho DCT-II) = sqrt(n)*mean(log mel); monotone energy proxy.
        n_filters = x.rows.shape[1]
        return (10.0 / np.log(10.0)) * x.rows[:, 0] / np.sqrt(n_filters)
    raise ValueError(f"unknown feature kind: {x.kind}")


def energy_vad(x: FeatureMatrix | Spectrogram, threshold_db: float = -40.0) -> np.ndarray:
    """Frame activity mask: energy within threshold_db of the loudest frame."""
    if threshold_db >= 0:
        raise ValueError("threshold_db must be negative (relative to max)")
    db = frame_energy_db(x)
    if db.size == 0:
        return np.zeros(0, dtype=bool)
    return db >= db.max() + threshold_db


def mix_at_snr(a: Waveform, b: Waveform, snr_db: float) -> tuple[Waveform, Waveform, Waveform]:
    """Mix two waveforms with b scaled so the a/b energy ratio meets snr_db."""
    if a.sample_rate != b.sample_rate:
        raise ValueError("sample rate mismatch")
    n = min(len(a), len(b))
    a_t = a.samples[:n]
    b_t = b.samples[:n]
    ea = float(np.sum(a_t ** 2))
    eb = float(np.sum(b_t ** 2))
    if ea <= 0.0 or eb <= 0.0:
        raise ValueError("zero-energy source")
    scale = np.sqrt(ea / (eb * 10.0 ** (snr_db / 10.0)))
    b_s = b_t * scale
    sr = a.sample_rate
    return (Waveform(a_t + b_s, sr), Waveform(a_t.copy(), sr), Waveform(b_s, sr))


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ValueError("only mono WAV is supported")
        if fh.getsampwidth() != 2:
            raise ValueError("only 16-bit PCM WAV is supported")
        sr = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, sample_rate=sr)


def write_wav(path, w: Waveform) -> None:
    """Write a mono 16-bit PCM WAV file (samples clipped to [-1, 1])."""
    clipped = np.clip(w.samples, -1.0, 32767.0 / 32768.0)
    pcm = np.round(clipped * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())
