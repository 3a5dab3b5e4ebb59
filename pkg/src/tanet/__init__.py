"""TAnet: temporal-attention decoding of auditory spatial attention from EEG."""

__version__ = "0.1.0"
