"""Bidirectional selective state-space audio-video classifier with video-steered audio generators."""

__version__ = "0.1.0"
