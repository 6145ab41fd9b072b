"""Zero-shot keyword spotting by audio/phoneme pattern matching."""

__version__ = "0.1.0"
