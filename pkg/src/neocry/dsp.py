"""Short-time spectra, spectrogram images and cepstral features."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct

from .audio_io import AudioSignal
from .errors import DegenerateSignalError

LOG_EPS = 1e-10


@dataclass(frozen=True)
class SpectrogramConfig:
    window_ms: float = 30.0
    hop_ms: float = 10.0
    fft_size: int | None = None     # None: next power of two >= window
    db_floor: float = -80.0
    out_height: int = 120
    out_width: int = 120

    def __post_init__(self):
        if not 0 < self.hop_ms <= self.window_ms:
            raise ValueError(f"need 0 < hop_ms <= window_ms, got {self.hop_ms}, {self.window_ms}")
        if self.out_height < 8 or self.out_width < 8:
            raise ValueError("output image dimensions must be at least 8")
        if self.fft_size is not None and self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")

    def frame_params(self, sample_rate: int) -> tuple[int, int, int]:
        """(window, hop, fft_size) in samples for ``sample_rate``."""
        win = int(round(self.window_ms * sample_rate / 1000.0))
        hop = max(1, int(round(self.hop_ms * sample_rate / 1000.0)))
        nfft = self.fft_size if self.fft_size is not None else _next_pow2(win)
        if nfft < win:
            raise ValueError(f"fft_size {nfft} shorter than window of {win} samples")
        return win, hop, nfft

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def hamming_window(n: int) -> np.ndarray:
    """Symmetric Hamming window, 0.54 - 0.46 cos(2 pi k / (n - 1))."""
    if n < 2:
        raise ValueError(f"Hamming window needs n >= 2, got {n}")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def frame_count(n: int, win: int, hop: int) -> int:
    if n < win:
        raise DegenerateSignalError(f"signal of {n} samples shorter than one {win}-sample window")
    return (n - win) // hop + 1


def frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    """Frames as rows; frame t starts at sample t * hop. Trailing samples that
    do not fill a frame are dropped."""
    n_frames = frame_count(x.size, win, hop)
    return sliding_window_view(x, win)[::hop][:n_frames]


def stft_frames(x: np.ndarray, win: int, hop: int, nfft: int) -> np.ndarray:
    frames = frame_signal(np.asarray(x, dtype=np.float64), win, hop) * hamming_window(win)
    return np.abs(np.fft.rfft(frames, n=nfft, axis=1))


def stft_magnitude(signal: AudioSignal, config: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """Magnitude STFT, shape (frames, fft_size // 2 + 1)."""
    win, hop, nfft = config.frame_params(signal.sample_rate)
    return stft_frames(signal.samples, win, hop, nfft)


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Corner-aligned bilinear resize. Written as ``a + t * (b - a)`` so that
    constant regions stay exactly constant."""
    img = np.asarray(img, dtype=np.float64)

    def axis_coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, tr = axis_coords(img.shape[0], height)
    rows = img[r0] + tr[:, None] * (img[r1] - img[r0])
    c0, c1, tc = axis_coords(img.shape[1], width)
    return rows[:, c0] + tc[None, :] * (rows[:, c1] - rows[:, c0])


@dataclass(frozen=True)
class SpectrogramImage:
    pixels: np.ndarray      # (height, width); row 0 is the highest frequency
    source_id: str
    config: SpectrogramConfig

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.shape != (self.config.out_height, self.config.out_width):
            raise ValueError(f"image shape {p.shape} does not match config")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("pixels must lie in [0, 1]")
        object.__setattr__(self, "pixels", p)

    def save_png(self, path) -> None:
        from PIL import Image

        Image.fromarray(np.round(self.pixels * 255).astype(np.uint8), mode="L").save(path)

    def save_raw(self, path) -> None:
        """One JSON header line followed by little-endian float32 pixels."""
        header = {"height": self.pixels.shape[0], "width": self.pixels.shape[1],
                  "dtype": "<f4", "source_id": self.source_id,
                  "config_hash": self.config.digest(), "config": asdict(self.config)}
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            fh.write(self.pixels.astype("<f4").tobytes())


def load_raw_spectrogram(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        grid = np.frombuffer(fh.read(), dtype="<f4")
    return header, grid.reshape(header["height"], header["width"])


def spectrogram_grid(mag: np.ndarray, config: SpectrogramConfig) -> np.ndarray:
    """dB-scale, clamp, normalize and orient a (frames, bins) magnitude grid
    as an image with low frequencies on the bottom row."""
    db = 20.0 * np.log10(mag + LOG_EPS)
    top = db.max()
    db = np.clip(db, config.db_floor, max(top, config.db_floor))
    lo, hi = db.min(), db.max()
    if hi > lo:
        norm = (db - lo) / (hi - lo)
    else:
        norm = np.zeros_like(db)
    img = norm.T[::-1]
    out = resize_bilinear(img, config.out_height, config.out_width)
    return np.clip(out, 0.0, 1.0)


def render_spectrogram(signal: AudioSignal,
                       config: SpectrogramConfig = SpectrogramConfig()) -> SpectrogramImage:
    pixels = spectrogram_grid(stft_magnitude(signal, config), config)
    return SpectrogramImage(pixels, signal.source_id, config)


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray      # (frames, coefficients)
    kind: str               # "MFCC" or "LPCC"

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"{self.kind.lower()}{i}" for i in range(self.values.shape[1])])
            for row in self.values:
                w.writerow([repr(float(v)) for v in row])


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, nfft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters spaced evenly on the mel scale from 0 to Nyquist,
    shape (n_mels, nfft // 2 + 1)."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    fb = np.zeros((n_mels, freqs.size))
    for m in range(n_mels):
        left, centre, right = edges[m], edges[m + 1], edges[m + 2]
        rise = (freqs - left) / (centre - left)
        fall = (right - freqs) / (right - centre)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall))
    return fb


def mfcc(signal: AudioSignal, n_coeffs: int = 13, n_mels: int = 26,
         window_ms: float = 30.0, hop_ms: float = 10.0) -> FeatureMatrix:
    sr = signal.sample_rate
    win = int(round(window_ms * sr / 1000.0))
    hop = max(1, int(round(hop_ms * sr / 1000.0)))
    nfft = _next_pow2(win)
    power = stft_frames(signal.samples, win, hop, nfft) ** 2 / nfft
    energies = power @ mel_filterbank(n_mels, nfft, sr).T
    logs = np.log(np.maximum(energies, LOG_EPS))
    coeffs = dct(logs, type=2, norm="ortho", axis=1)[:, :n_coeffs]
    return FeatureMatrix(coeffs, "MFCC")


def autocorrelation(frame: np.ndarray, max_lag: int) -> np.ndarray:
    n = frame.size
    return np.array([np.dot(frame[:n - k], frame[k:]) for k in range(max_lag + 1)])


def levinson_durbin(r: np.ndarray, order: int) -> tuple[np.ndarray, float]:
    """Solve the normal equations for the predictor x[n] ~ sum_k a_k x[n-k].

    Returns (a_1..a_p, final prediction error). A zero-energy input gives
    all-zero coefficients.
    """
    a = np.zeros(order)
    err = float(r[0])
    if err <= 0.0:
        return a, 0.0
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        k = acc / err
        prev = a[:i].copy()
        a[i] = k
        a[:i] = prev - k * prev[::-1]
        err *= 1.0 - k * k
        if err <= 0.0:
            break
    return a, err


def lpc(frame: np.ndarray, order: int, window: bool = True) -> np.ndarray:
    x = np.asarray(frame, dtype=np.float64)
    if window:
        x = x * hamming_window(x.size)
    return levinson_durbin(autocorrelation(x, order), order)[0]


def lpc_to_cepstrum(a: np.ndarray, n_coeffs: int) -> np.ndarray:
    """c_n = a_n + sum_{k=1}^{n-1} (k/n) c_k a_{n-k}, with a_n = 0 for n > p."""
    p = a.size
    c = np.zeros(n_coeffs + 1)
    for n in range(1, n_coeffs + 1):
        acc = a[n - 1] if n <= p else 0.0
        for k in range(max(1, n - p), n):
            acc += (k / n) * c[k] * a[n - k - 1]
        c[n] = acc
    return c[1:]


def lpcc(signal: AudioSignal, lpc_order: int = 12, n_coeffs: int = 12,
         window_ms: float = 32.0, overlap_ms: float = 16.0) -> FeatureMatrix:
    sr = signal.sample_rate
    win = int(round(window_ms * sr / 1000.0))
    hop = max(1, win - int(round(overlap_ms * sr / 1000.0)))
    frames = frame_signal(signal.samples, win, hop)
    out = np.zeros((frames.shape[0], n_coeffs))
    for t, frame in enumerate(frames):
        a = lpc(frame, lpc_order)
        if np.any(a):
            out[t] = lpc_to_cepstrum(a, n_coeffs)
    return FeatureMatrix(out, "LPCC")
