"""Double-softmax cross-entropy and a desk-scale label-noise prompt-tuning lab."""

__version__ = "0.1.0"
