"""HRV features from rhythm-annotated beat streams and an NSR-to-AF Gaussian transfer model."""

__version__ = "0.1.0"
