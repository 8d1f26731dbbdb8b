"""8-bit PNG and binary PPM/PGM reading and writing.

Only what the pipeline needs: PNG bit depth 8 (grey, RGB, palette, and the
alpha variants, with alpha dropped), non-interlaced; PPM ``P6`` / PGM ``P5``
with maxval 255.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ImageFormatError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_PNG_CHANNELS = {0: 1, 2: 3, 3: 1, 4: 2, 6: 4}


@dataclass(frozen=True)
class Image:
    """Row-major interleaved 8-bit samples, shape ``(height, width, channels)``."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.dtype != np.uint8 or p.ndim != 3 or p.shape[2] not in (1, 3):
            raise ImageFormatError(f"Image needs uint8 (h, w, 1|3) pixels, got {p.dtype} {p.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = np.abs(p - a), np.abs(p - b), np.abs(p - c)
    return np.where((pa <= pb) & (pa <= pc), a, np.where(pb <= pc, b, c))


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    expected = height * (stride + 1)
    if len(raw) < expected:
        raise OSError(f"truncated PNG image data: {len(raw)} of {expected} bytes")
    buf = np.frombuffer(raw[:expected], dtype=np.uint8).reshape(height, stride + 1)
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int32)
    for y in range(height):
        ftype, line = buf[y, 0], buf[y, 1:].astype(np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            cur = line.copy()
            for x in range(0, stride, bpp):
                left = cur[x - bpp:x] if x else np.zeros(bpp, dtype=np.int32)
                up = prev[x:x + bpp]
                if ftype == 1:
                    pred = left
                elif ftype == 3:
                    pred = (left + up) >> 1
                else:
                    upleft = prev[x - bpp:x] if x else np.zeros(bpp, dtype=np.int32)
                    pred = _paeth(left, up, upleft)
                cur[x:x + bpp] = (cur[x:x + bpp] + pred) & 0xFF
        else:
            raise ImageFormatError(f"bad PNG filter type {ftype}")
        out[y] = cur
        prev = cur
    return out


def decode_png(blob: bytes) -> Image:
    if not blob.startswith(PNG_SIGNATURE):
        raise ImageFormatError("not a PNG file")
    pos, header, palette, idat = 8, None, None, []
    while True:
        if pos + 8 > len(blob):
            raise OSError("truncated PNG: missing IEND")
        length, ctype = struct.unpack(">I4s", blob[pos:pos + 8])
        body = blob[pos + 8:pos + 8 + length]
        crc = blob[pos + 8 + length:pos + 12 + length]
        if len(body) != length or len(crc) != 4:
            raise OSError(f"truncated PNG chunk {ctype!r}")
        if zlib.crc32(ctype + body) != struct.unpack(">I", crc)[0]:
            raise ImageFormatError(f"CRC mismatch in PNG chunk {ctype!r}")
        pos += 12 + length
        if ctype == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"PLTE":
            palette = np.frombuffer(body, dtype=np.uint8).reshape(-1, 3)
        elif ctype == b"IDAT":
            idat.append(body)
        elif ctype == b"IEND":
            break
    if header is None:
        raise ImageFormatError("PNG without IHDR")
    width, height, depth, color, _comp, _filt, interlace = header
    if depth != 8:
        raise ImageFormatError(f"unsupported PNG bit depth {depth} (only 8-bit)")
    if color not in _PNG_CHANNELS:
        raise ImageFormatError(f"unsupported PNG color type {color}")
    if interlace:
        raise ImageFormatError("interlaced PNG not supported")
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise OSError(f"corrupt PNG image data: {exc}") from exc
    nch = _PNG_CHANNELS[color]
    rows = _unfilter(raw, height, width * nch, nch).reshape(height, width, nch)
    if color == 3:
        if palette is None:
            raise ImageFormatError("palette PNG without PLTE")
        rows = palette[rows[..., 0]]
    elif color in (4, 6):
        rows = rows[..., :-1]
    return Image(np.ascontiguousarray(rows))


def _chunk(ctype: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + ctype + body + struct.pack(">I", zlib.crc32(ctype + body))


def encode_png(img: Image) -> bytes:
    color = 0 if img.channels == 1 else 2
    header = struct.pack(">IIBBBBB", img.width, img.height, 8, color, 0, 0, 0)
    rows = img.pixels.reshape(img.height, -1)
    raw = np.hstack([np.zeros((img.height, 1), dtype=np.uint8), rows]).tobytes()
    return (PNG_SIGNATURE + _chunk(b"IHDR", header)
            + _chunk(b"IDAT", zlib.compress(raw, 6)) + _chunk(b"IEND", b""))


# ---------------------------------------------------------------------------
# PPM / PGM
# ---------------------------------------------------------------------------

def decode_pnm(blob: bytes) -> Image:
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError("not a binary PGM/PPM file")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(blob):
            raise OSError("truncated PNM header")
        if blob[pos:pos + 1] == b"#":
            pos = blob.find(b"\n", pos)
            if pos < 0:
                raise OSError("truncated PNM header")
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace byte before the raster
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"unsupported PNM maxval {maxval} (only 255)")
    nch = 3 if magic == b"P6" else 1
    size = width * height * nch
    data = blob[pos:pos + size]
    if len(data) != size:
        raise OSError(f"truncated PNM raster: {len(data)} of {size} bytes")
    return Image(np.frombuffer(data, dtype=np.uint8).reshape(height, width, nch).copy())


def encode_pnm(img: Image) -> bytes:
    magic = b"P6" if img.channels == 3 else b"P5"
    return magic + f"\n{img.width} {img.height}\n255\n".encode() + img.pixels.tobytes()


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def load_image(path) -> Image:
    blob = Path(path).read_bytes()
    if blob.startswith(PNG_SIGNATURE):
        return decode_png(blob)
    if blob[:2] in (b"P5", b"P6"):
        return decode_pnm(blob)
    raise ImageFormatError(f"{path}: unrecognised image format")


def save_image(img: Image, path) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        blob = encode_png(img)
    elif suffix in (".ppm", ".pgm", ".pnm"):
        if suffix == ".ppm" and img.channels != 3 or suffix == ".pgm" and img.channels != 1:
            raise ImageFormatError(f"{suffix} cannot hold a {img.channels}-channel image")
        blob = encode_pnm(img)
    else:
        raise ImageFormatError(f"unsupported output format {suffix!r}")
    path.write_bytes(blob)


IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")
