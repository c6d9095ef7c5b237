"""Retinal vessel segmentation with bi-level class-balanced patch sampling."""

__version__ = "0.1.0"
