"""WAV reading/writing and simple signal utilities.

Only uncompressed RIFF/WAVE is handled: 8/16/24-bit integer PCM and 32-bit
IEEE float, any channel count. Everything comes back as a mono float64
signal in [-1, 1].
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignalError, UnsupportedFormatError, WavFormatError

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioSignal:
    """Mono audio event.

    ``samples`` is stored as a read-only float64 array so a signal can be
    shared between threads without copying.
    """

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if x.size == 0:
            raise DegenerateSignalError(f"signal {self.source_id!r} has no samples")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"signal {self.source_id!r} contains non-finite samples")
        if np.max(np.abs(x)) > 1.0:
            raise ValueError(f"signal {self.source_id!r} exceeds [-1, 1]")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples, source_id: str | None = None) -> "AudioSignal":
        return AudioSignal(samples, self.sample_rate,
                           self.source_id if source_id is None else source_id)


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            name = cid.decode("latin-1")
            raise WavFormatError(f"chunk {name!r} truncated: declares {size} bytes, "
                                 f"{len(body)} present")
        yield cid, body
        pos += 8 + size + (size & 1)


def _parse_fmt(body: bytes):
    if len(body) < 16:
        raise WavFormatError(f"chunk 'fmt ' too short ({len(body)} bytes)")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", body, 0)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(body) < 40:
            raise WavFormatError("chunk 'fmt ' too short for WAVE_FORMAT_EXTENSIBLE")
        tag = struct.unpack_from("<H", body, 24)[0]
    if channels == 0 or rate == 0:
        raise WavFormatError(f"chunk 'fmt ' has channels={channels}, rate={rate}")
    return tag, channels, rate, block_align, bits


def _check_codec(tag: int, bits: int) -> None:
    if tag == WAVE_FORMAT_IEEE_FLOAT:
        if bits != 32:
            raise UnsupportedFormatError(f"float WAV with {bits} bits per sample")
    elif tag == WAVE_FORMAT_PCM:
        if bits not in (8, 16, 24, 32):
            raise UnsupportedFormatError(f"PCM WAV with {bits} bits per sample")
    else:
        raise UnsupportedFormatError(f"WAV format tag 0x{tag:04x} is not PCM or IEEE float")


def _decode(raw: bytes, tag: int, channels: int, bits: int) -> np.ndarray:
    _check_codec(tag, bits)
    width = bits // 8
    usable = len(raw) - len(raw) % (width * channels)
    raw = raw[:usable]
    if tag == WAVE_FORMAT_IEEE_FLOAT:
        x = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        x = np.clip(np.nan_to_num(x), -1.0, 1.0)
    elif tag == WAVE_FORMAT_PCM:
        if bits == 8:
            x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
        elif bits == 16:
            x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
        elif bits == 24:
            b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
            v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
            v = np.where(v >= 1 << 23, v - (1 << 24), v)
            x = v.astype(np.float64) / float(1 << 23)
        else:
            x = np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    return x.reshape(-1, channels).mean(axis=1)


def read_wav(path, source_id: str | None = None) -> AudioSignal:
    """Read a WAV file as a mono signal, averaging channels."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: missing 'RIFF'/'WAVE' header chunk")
    fmt = None
    raw = None
    for cid, body in _iter_chunks(data):
        if cid == b"fmt ":
            fmt = _parse_fmt(body)
        elif cid == b"data":
            raw = body
    if fmt is None:
        raise WavFormatError(f"{path}: no 'fmt ' chunk")
    if raw is None:
        raise WavFormatError(f"{path}: no 'data' chunk")
    tag, channels, rate, _, bits = fmt
    x = _decode(raw, tag, channels, bits)
    if x.size == 0:
        raise WavFormatError(f"{path}: 'data' chunk holds no complete frames")
    if source_id is None:
        source_id = os.path.splitext(os.path.basename(str(path)))[0]
    return AudioSignal(x, rate, source_id)


def encode_wav_pcm16(signal: AudioSignal) -> bytes:
    q = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = q.tobytes()
    header = struct.pack("<4sI4s", b"RIFF", 36 + len(payload), b"WAVE")
    fmt = struct.pack("<4sIHHIIHH", b"fmt ", 16, WAVE_FORMAT_PCM, 1,
                      signal.sample_rate, signal.sample_rate * 2, 2, 16)
    return header + fmt + struct.pack("<4sI", b"data", len(payload)) + payload


def write_wav(path, signal: AudioSignal, bit_depth: int = 16) -> None:
    """Write ``signal`` as 16-bit PCM mono.

    The file is written to a temporary sibling first and renamed into
    place, so a failed write never leaves a partial file behind.
    """
    if bit_depth != 16:
        raise UnsupportedFormatError(f"only 16-bit output is supported, got {bit_depth}")
    path = os.fspath(path)
    data = encode_wav_pcm16(signal)
    directory = os.path.dirname(os.path.abspath(path))
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(prefix=".wav-", dir=directory)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
        tmp = None
    except OSError as exc:
        raise OSError(f"cannot write WAV to {path}: {exc}") from exc
    finally:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)


def normalize_peak(signal: AudioSignal) -> AudioSignal:
    peak = np.max(np.abs(signal.samples))
    if peak == 0:
        return signal
    return signal.with_samples(np.clip(signal.samples / peak, -1.0, 1.0))


def resample_linear(signal: AudioSignal, factor: float) -> AudioSignal:
    """Read the signal at positions ``k * factor`` with linear interpolation.

    The sample rate is kept, so every frequency component f ends up at
    ``f * factor`` and the duration is divided by ``factor``.
    """
    if not factor > 0:
        raise ValueError(f"resample factor must be positive, got {factor}")
    n_in = signal.samples.size
    n_out = int(round(n_in / factor))
    if n_out < 2:
        raise DegenerateSignalError(
            f"resampling {n_in} samples by {factor} leaves {n_out} sample(s)")
    if factor == 1.0:
        return signal.with_samples(signal.samples)
    pos = np.arange(n_out) * float(factor)
    y = np.interp(pos, np.arange(n_in), signal.samples)
    return signal.with_samples(y)
