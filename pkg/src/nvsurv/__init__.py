"""Event-camera surveillance pipeline: frames, region proposals, small CNNs, cost model."""

__version__ = "0.1.0"
