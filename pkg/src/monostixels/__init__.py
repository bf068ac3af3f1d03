"""Mono-stixel estimation from optical flow, semantic scores and camera motion."""

__version__ = "0.1.0"
