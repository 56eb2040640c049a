"""Raw RGB8 image blobs and the binary PPM (P6) interchange codec.

Internally an image is raw RGB8 row-major bytes plus dimensions; on the wire
and on disk it is a binary PPM, chosen because every language can parse it
without an external decoder. The accepted grammar is exact: magic ``P6``,
ASCII width and height, maxval ``255``, each separated by a single whitespace
character, then ``3*width*height`` raw bytes.

The content digest is sha256 over the canonical PPM encoding
(``P6\\n{w} {h}\\n255\\n`` + pixels), which makes it a pure function of
(width, height, pixels): equal digests imply byte-equal canonical blobs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import MalformedImage

MAX_DIMENSION = 4096
_WHITESPACE = b" \t\n\r\x0b\x0c"


@dataclass(frozen=True)
class ImageBlob:
    width: int
    height: int
    pixels: bytes
    digest: str = field(init=False)

    def __post_init__(self):
        if not (1 <= self.width <= MAX_DIMENSION and 1 <= self.height <= MAX_DIMENSION):
            raise MalformedImage(f"dimensions {self.width}x{self.height} outside 1..{MAX_DIMENSION}")
        if len(self.pixels) != 3 * self.width * self.height:
            raise MalformedImage(
                f"pixel payload is {len(self.pixels)} bytes, expected {3 * self.width * self.height}"
            )
        object.__setattr__(self, "digest", compute_digest(self.width, self.height, self.pixels))

    def to_ppm(self) -> bytes:
        return _header(self.width, self.height) + self.pixels


def _header(width: int, height: int) -> bytes:
    return b"P6\n%d %d\n255\n" % (width, height)


def compute_digest(width: int, height: int, pixels: bytes) -> str:
    return hashlib.sha256(_header(width, height) + pixels).hexdigest()


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """One ASCII token followed by exactly one whitespace byte."""
    start = pos
    while pos < len(data) and data[pos] not in _WHITESPACE:
        pos += 1
    if start == pos:
        raise MalformedImage("empty header token")
    if pos >= len(data):
        raise MalformedImage("header token not terminated by whitespace")
    return data[start:pos], pos + 1


def parse_ppm(data: bytes) -> ImageBlob:
    """Decode a binary PPM, enforcing the exact grammar above."""
    if not data.startswith(b"P6"):
        raise MalformedImage("missing P6 magic")
    pos = 2
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise MalformedImage("magic not followed by whitespace")
    pos += 1
    values = []
    for name in ("width", "height", "maxval"):
        token, pos = _read_token(data, pos)
        if not token.isdigit():
            raise MalformedImage(f"non-numeric {name}")
        values.append(int(token))
    width, height, maxval = values
    if maxval != 255:
        raise MalformedImage(f"maxval {maxval}, only 255 supported")
    if not (1 <= width <= MAX_DIMENSION and 1 <= height <= MAX_DIMENSION):
        raise MalformedImage(f"dimensions {width}x{height} outside 1..{MAX_DIMENSION}")
    expected = 3 * width * height
    pixels = data[pos:]
    if len(pixels) != expected:
        raise MalformedImage(f"raster is {len(pixels)} bytes, expected {expected}")
    return ImageBlob(width, height, pixels)


def solid_color(width: int, height: int, rgb: tuple[int, int, int]) -> ImageBlob:
    """Uniform swatch; handy for fixtures and separable training sets."""
    return ImageBlob(width, height, bytes(rgb) * (width * height))
