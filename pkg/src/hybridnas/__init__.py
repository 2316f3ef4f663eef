"""Hardware-aware evolutionary search over hybrid convolution / attention networks."""

__version__ = "0.1.0"
