"""Low-latency peer-to-peer audio streaming over UDP.

Uncompressed PCM datagrams, an adaptive playout buffer that trades delay
against loss, deterministic offline simulation of whole sessions, and
tools to turn the resulting telemetry into latency budgets.
"""

__version__ = "0.1.0"
