"""128-bit entity identifiers.

Project, device, label, sample, and op ids are all 128-bit values rendered
canonically as lowercase hex with hyphens (the familiar 8-4-4-4-12 grouping).
Ids are never reused within a project; a DeviceId is stable for the lifetime
of its replica.

Production code draws ids from ``random_id`` (os entropy). Deterministic
harnesses (the script runner, fuzz tests) use a seeded ``IdSource`` so that
two runs of the same script produce byte-identical state.
"""

from __future__ import annotations

import random
import re
import secrets

_ID_RE = re.compile(r"^[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}$")

ProjectId = str
DeviceId = str
LabelId = str
SampleId = str
OpId = str


def format_id(value: int) -> str:
    """Render a 128-bit integer in canonical hyphenated lowercase hex."""
    if not 0 <= value < (1 << 128):
        raise ValueError("id out of 128-bit range")
    h = f"{value:032x}"
    return f"{h[:8]}-{h[8:12]}-{h[12:16]}-{h[16:20]}-{h[20:]}"


def random_id() -> str:
    return format_id(secrets.randbits(128))


def random_token() -> str:
    """128-bit unguessable invite token, same rendering as ids."""
    return format_id(secrets.randbits(128))


def is_valid_id(s: object) -> bool:
    return isinstance(s, str) and bool(_ID_RE.match(s))


def short_id(s: str) -> str:
    """First 8 hex chars; used for display-name disambiguation."""
    return s[:8]


class IdSource:
    """Id generator; seeded instances replay identically."""

    def __init__(self, seed: int | None = None):
        self._rng = random.Random(seed) if seed is not None else None

    def new_id(self) -> str:
        if self._rng is None:
            return random_id()
        return format_id(self._rng.getrandbits(128))
