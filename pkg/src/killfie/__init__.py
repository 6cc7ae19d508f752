"""Dangerous-selfie detection: incidents, corpus, geo/text features, statistics and classifiers."""
from __future__ import annotations

__version__ = "0.1.0"
