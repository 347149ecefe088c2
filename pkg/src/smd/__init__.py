"""Shape-conditioned mesh motion diffusion on a truncated graph Fourier basis."""

__version__ = "0.1.0"
