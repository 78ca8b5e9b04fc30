"""Human-readable quantity parsing with a strict bit/byte distinction.

The storage inequality mixes bitrates (Mb/s) and disk read speeds (MB/s);
a silent factor-of-8 confusion corrupts every downstream plan, so suffixes
are case-sensitive: lowercase b is bits, uppercase B is bytes. Decimal
prefixes (K, M, G, T) are powers of 1000; binary prefixes (Ki, Mi, Gi, Ti)
are powers of 1024.
"""

from __future__ import annotations

import re

from .errors import ConfigurationError

_PREFIX = {
    "": 1,
    "K": 10**3, "M": 10**6, "G": 10**9, "T": 10**12,
    "Ki": 2**10, "Mi": 2**20, "Gi": 2**30, "Ti": 2**40,
}

_QTY_RE = re.compile(
    r"^\s*([0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?)\s*"
    r"(K|M|G|T|Ki|Mi|Gi|Ti)?(b|B)?(/s)?\s*$")

_TIME_RE = re.compile(
    r"^\s*([0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?)\s*(ms|us|s|min|h)?\s*$")

_TIME_SCALE = {"us": 1e-6, "ms": 1e-3, "s": 1.0, "min": 60.0, "h": 3600.0,
               None: 1.0}


def _parse(text: str | float | int, want: str) -> float:
    """want is 'b' (bits) or 'B' (bytes); bare numbers pass through as the
    wanted unit, cross-unit suffixes convert by a factor of 8."""
    if isinstance(text, (int, float)):
        if text <= 0:
            raise ConfigurationError(f"quantity must be positive: {text}")
        return float(text)
    m = _QTY_RE.match(text)
    if not m:
        raise ConfigurationError(f"cannot parse quantity {text!r}")
    value = float(m.group(1)) * _PREFIX[m.group(2) or ""]
    unit = m.group(3)
    if unit == "b" and want == "B":
        value /= 8
    elif unit == "B" and want == "b":
        value *= 8
    if value <= 0:
        raise ConfigurationError(f"quantity must be positive: {text!r}")
    return value


def parse_bits(text: str | float | int) -> float:
    """'1Mb' -> 1e6; '500KB' -> 4e6 (converted to bits); bare number -> bits."""
    return _parse(text, "b")


def parse_bytes(text: str | float | int) -> float:
    """'500MB' -> 5e8; '24GiB' -> 24*2**30; '8Gb' -> 1e9 (converted)."""
    return _parse(text, "B")


def parse_seconds(text: str | float | int) -> float:
    """'4', '4s', '250ms', '2min' -> seconds."""
    if isinstance(text, (int, float)):
        return float(text)
    m = _TIME_RE.match(text)
    if not m:
        raise ConfigurationError(f"cannot parse duration {text!r}")
    return float(m.group(1)) * _TIME_SCALE[m.group(2)]


def format_bytes(n: float) -> str:
    for prefix, scale in (("G", 10**9), ("M", 10**6), ("K", 10**3)):
        if n >= scale:
            return f"{n / scale:.2f}{prefix}B"
    return f"{n:.0f}B"
