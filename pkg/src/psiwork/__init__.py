"""Workbench for bicharacteristic sign-change geometry, truncated jet
algebra with Malgrange-type division, symbol calculus, WKB quasi-modes and
pairing-integral asymptotics."""

__version__ = "0.1.0"
