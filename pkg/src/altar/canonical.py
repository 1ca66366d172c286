"""Canonical JSON and timestamp helpers shared by every storage layer.

Canonical form: sorted keys, no insignificant whitespace, UTF-8, and
RFC 3339 millisecond timestamps ("2025-01-23T12:00:00.000Z"). Two equal
documents always serialize to identical bytes, which is what makes
journal replay, content hashing, and byte-level immutability checks
meaningful.
"""

from __future__ import annotations

import json
import re
from datetime import datetime, timezone

_TS_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})[Tt](\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,6}))?"
    r"(?:[Zz]|\+00:00)$"
)


def dumps(value) -> str:
    return json.dumps(
        value,
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
        allow_nan=False,
    )


def dumps_bytes(value) -> bytes:
    return dumps(value).encode("utf-8")


def loads(text):
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    return json.loads(text)


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def format_ts(dt: datetime) -> str:
    """Render a timezone-aware datetime as RFC 3339 with milliseconds."""
    if dt.tzinfo is None:
        raise ValueError("naive datetime cannot be formatted as a UTC timestamp")
    dt = dt.astimezone(timezone.utc)
    millis = dt.microsecond // 1000
    return f"{dt:%Y-%m-%dT%H:%M:%S}.{millis:03d}Z"


def parse_ts(text: str) -> datetime:
    """Parse an RFC 3339 UTC timestamp; accepts 0-6 fractional digits."""
    m = _TS_RE.match(text)
    if not m:
        raise ValueError(f"invalid timestamp: {text!r}")
    year, month, day, hour, minute, second = (int(g) for g in m.groups()[:6])
    frac = m.group(7) or "0"
    micros = int(frac.ljust(6, "0"))
    return datetime(year, month, day, hour, minute, second, micros, tzinfo=timezone.utc)


def now_ts() -> str:
    return format_ts(utc_now())
