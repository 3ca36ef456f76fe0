"""Interpreter sidecar package for the rvlm-proto/1 frame protocol."""

from .interpreter import PROTOCOL_VERSION, Sidecar, main

__version__ = "0.1.0"
