"""Multi-dataset self-supervised pretraining for time series classification."""

__version__ = "0.1.0"
