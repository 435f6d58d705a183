import numpy as np
import pytest

from neocry.audio_io import AudioSignal


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sine(freq, sr=8000, n=8000, amp=0.9, source_id="sine"):
    t = np.arange(n) / sr
    return AudioSignal(amp * np.sin(2 * np.pi * freq * t), sr, source_id)


def dominant_frequency(signal):
    """Frequency of the largest DFT bin of a whole signal (Hann-tapered)."""
    x = signal.samples * np.hanning(signal.samples.size)
    spec = np.abs(np.fft.rfft(x))
    return np.argmax(spec) * signal.sample_rate / x.size, signal.sample_rate / x.size


# -- acceptance verdicts ---------------------------------------------------
# test_acceptance records one line per criterion; they are repeated at the
# end of the run so they survive output capturing.

VERDICTS = []
NOTES = []


@pytest.fixture
def verdict(capsys):
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        VERDICTS.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS or NOTES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS) + NOTES:
            terminalreporter.write_line(line)
