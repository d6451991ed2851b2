"""EM imputation of tabular data with a score-based diffusion model."""

__version__ = "0.1.0"
