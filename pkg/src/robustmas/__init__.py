"""Robust distributed control synthesis, verification and simulation for multi-agent networks."""

from __future__ import annotations

__version__ = "0.1.0"
