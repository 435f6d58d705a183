"""
Twenty-seven variants per cry
=============================

Each original event is pitch-scaled by 1/2, 1/3 and 2/3, noised at six
levels, and both transforms are combined: 3 + 6 + 3*6 = 27 variants.
Augmentation only ever touches the training side of a fold.

Run:  python demos/02_augmentation.py
"""

import numpy as np

from neocry.audio_io import AudioSignal
from neocry.augment import AugmentationSpec, expand, scale_frequency

sr = 8000
t = np.arange(sr) / sr
tone = AudioSignal(0.6 * np.sin(2 * np.pi * 600 * t), sr, "tone600")


def dominant(sig):
    spec = np.abs(np.fft.rfft(sig.samples * np.hanning(len(sig))))
    return np.argmax(spec) * sig.sample_rate / len(sig)


# %%
# Scaling the frequency by f resamples to len/f samples played at the same
# rate: the pitch drops by f and the event gets longer by 1/f
for factor in (1 / 2, 1 / 3, 2 / 3):
    s = scale_frequency(tone, factor)
    print(f"factor {factor:.3f}: {len(s)} samples, dominant {dominant(s):6.1f} Hz")

# %%
# The full expansion, in a fixed order so variant ids are stable
spec = AugmentationSpec(seed=0)
variants = expand(tone, spec)
print(len(variants), "variants")
for (tag, factor, level), v in list(zip(spec.variants(), variants))[::4]:
    print(f"  {v.source_id:22s} factor={factor}  noise={level}")

# %%
# Noise draws come from a generator keyed on (seed, event id, variant index),
# so a rerun reproduces every sample and a different seed only changes the
# noisy variants
again = expand(tone, spec)
other = expand(tone, AugmentationSpec(seed=1))
same = [a.samples.tobytes() == b.samples.tobytes() for a, b in zip(variants, again)]
changed = [a.samples.tobytes() != b.samples.tobytes() for a, b in zip(variants, other)]
print("identical on rerun:", all(same), " changed by another seed:", sum(changed), "of 27")
print("182 events would give", 182 * len(variants), "augmented rows")
