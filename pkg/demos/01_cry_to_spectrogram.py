"""
From a cry recording to the network input
==========================================

Synthesize one pain and one calm cry, write them as WAV files, read them
back and turn each into the 120x120 spectrogram image the CNN consumes,
plus the 50 cepstral statistics the linear baseline uses.

Run:  python demos/01_cry_to_spectrogram.py [output_dir]
"""

import os
import sys

import numpy as np

from neocry.audio_io import read_wav, write_wav
from neocry.data import SynthConfig, synthetic_events
from neocry.dsp import mfcc, lpcc, render_spectrogram, stft_magnitude
from neocry.model import event_features

out = sys.argv[1] if len(sys.argv) > 1 else "demo_output"
os.makedirs(out, exist_ok=True)

# one subject, two events: the generator alternates labels so we get one of each
events = list(synthetic_events(SynthConfig(n_subjects=2, events_per_subject=2, seed=3)))[:2]
for row, sig in events:
    print(f"{row.event_id}: {row.label:8s} NIPS {row.nips_score}  {len(sig)} samples "
          f"at {sig.sample_rate} Hz")

# %%
# WAV round trip: 16-bit PCM, so the samples come back quantized to 1/32768
row, sig = events[0]
path = os.path.join(out, f"{row.event_id}.wav")
write_wav(path, sig)
back = read_wav(path)
print("max quantization error:", np.max(np.abs(back.samples - sig.samples)))

# %%
# STFT: 30 ms Hamming windows every 10 ms; at 8 kHz that is 240/80 samples
# and a 256-point FFT, so 129 frequency bins per frame
mag = stft_magnitude(back)
print("magnitude frames x bins:", mag.shape)

# A pain cry glides upwards and a calm one downwards. The spectral centroid
# of the late half against the early half shows it.
for row, sig in events:
    p = stft_magnitude(sig) ** 2
    bins = np.arange(p.shape[1])
    h = p.shape[0] // 2
    early = (p[:h].sum(0) @ bins) / p[:h].sum()
    late = (p[h:].sum(0) @ bins) / p[h:].sum()
    print(f"{row.label:8s} centroid drift {late - early:+.1f} bins")

# %%
# The image: log magnitude, clipped 80 dB below the peak, flipped so low
# frequencies sit at the bottom, resized bilinearly to 120x120
for row, sig in events:
    img = render_spectrogram(sig)
    img.save_png(os.path.join(out, f"{row.event_id}.png"))
    print(row.event_id, img.pixels.shape, f"range [{img.pixels.min():.2f}, {img.pixels.max():.2f}]")

# %%
# Baseline features: per-frame MFCCs (13) and LPCCs (12), summarized by
# their mean and standard deviation over time
print("MFCC frames:", mfcc(sig).values.shape, " LPCC frames:", lpcc(sig).values.shape)
print("feature vector length:", event_features(sig).size)
print("images written to", out)
