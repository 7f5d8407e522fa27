"""Flow-guided mask propagation for video editing datasets, with a toy diffusion mask predictor."""

__version__ = "0.1.0"
