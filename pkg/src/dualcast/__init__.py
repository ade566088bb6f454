"""Text-conditioned probabilistic forecasting with synthetic data and segment captioning."""

__version__ = "0.1.0"
