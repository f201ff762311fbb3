"""U-shaped convolution/transformer model for time-step-level EEG event detection."""

__version__ = "0.1.0"
