"""Continual multimodal learning lab: noise filtering, prototype memory, answer decoding."""

__version__ = "0.1.0"
