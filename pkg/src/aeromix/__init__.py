"""Multi-sensor AOD fusion for surface PM2.5 estimation."""

__version__ = "0.1.0"
