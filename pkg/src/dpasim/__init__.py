"""Link-level simulation of discrete-precoded multiuser downlinks with soft demapping."""
from __future__ import annotations

__version__ = "0.1.0"
