"""Pain detection from neonatal cry audio: WAV I/O, spectrograms, cepstral
features, augmentation, a small NumPy CNN engine, the three-branch N-CNN and
subject-wise evaluation.

Submodules are imported on demand so the command-line entry point can set
threading variables before NumPy loads.
"""

__version__ = "0.1.0"
