"""PNG read/write and binary PPM/PGM read, on top of zlib.

Only 8-bit, non-interlaced images are supported. Gray, RGB and their alpha
variants decode; alpha is dropped. Every decode failure reports the byte
offset where the file stopped making sense.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from shadoc.errors import DecodeError, UnsupportedFormatError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_CHANNELS = {0: 1, 2: 3, 4: 2, 6: 4}


def _chunk(tag: bytes, payload: bytes) -> bytes:
    body = tag + payload
    return struct.pack(">I", len(payload)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)


def encode_png(pixels: np.ndarray) -> bytes:
    """Encode an H x W x C uint8 array (C in {1, 3}) as PNG bytes."""
    if pixels.dtype != np.uint8:
        raise UnsupportedFormatError(f"PNG encoder needs uint8 pixels, got {pixels.dtype}")
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    h, w, c = pixels.shape
    color_type = {1: 0, 3: 2}.get(c)
    if color_type is None:
        raise UnsupportedFormatError(f"PNG encoder supports 1 or 3 channels, got {c}")
    raw = np.zeros((h, 1 + w * c), dtype=np.uint8)  # filter byte 0 on every row
    raw[:, 1:] = pixels.reshape(h, w * c)
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    return (PNG_SIGNATURE + _chunk(b"IHDR", ihdr)
            + _chunk(b"IDAT", zlib.compress(raw.tobytes(), 6)) + _chunk(b"IEND", b""))


def _paeth(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    a16, b16, c16 = a.astype(np.int16), b.astype(np.int16), c.astype(np.int16)
    p = a16 + b16 - c16
    pa, pb, pc = np.abs(p - a16), np.abs(p - b16), np.abs(p - c16)
    return np.where((pa <= pb) & (pa <= pc), a, np.where(pb <= pc, b, c)).astype(np.uint8)


def _unfilter(data: bytes, h: int, w: int, bpp: int, offset: int) -> np.ndarray:
    stride = w * bpp
    need = h * (stride + 1)
    if len(data) < need:
        raise DecodeError(f"image data holds {len(data)} bytes, expected {need}", offset)
    rows = np.frombuffer(data[:need], dtype=np.uint8).reshape(h, stride + 1)
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    for y in range(h):
        ftype = rows[y, 0]
        line = rows[y, 1:]
        if ftype == 0:
            cur = line.copy()
        elif ftype == 1:
            # running sum per channel, modulo 256
            cur = (np.cumsum(line.reshape(w, bpp).astype(np.int64), axis=0) % 256).astype(np.uint8).reshape(-1)
        elif ftype == 2:
            cur = line + prev
        elif ftype in (3, 4):
            cur = np.zeros(stride, dtype=np.uint8)
            zero = np.zeros(bpp, dtype=np.uint8)
            for x in range(0, stride, bpp):
                left = cur[x - bpp:x] if x else zero
                up = prev[x:x + bpp]
                if ftype == 3:
                    pred = ((left.astype(np.uint16) + up) // 2).astype(np.uint8)
                else:
                    pred = _paeth(left, up, prev[x - bpp:x] if x else zero)
                cur[x:x + bpp] = line[x:x + bpp] + pred
        else:
            raise DecodeError(f"unknown PNG filter type {ftype} on row {y}", offset)
        out[y] = cur
        prev = cur
    return out.reshape(h, w, bpp)


def _check_header(header: tuple, offset: int) -> None:
    w, h, depth, color_type, _, _, interlace = header
    if depth != 8:
        raise UnsupportedFormatError(f"unsupported PNG bit depth {depth} (only 8 is supported)")
    if color_type not in _CHANNELS:
        raise UnsupportedFormatError(f"unsupported PNG color type {color_type} (paletted images are not supported)")
    if interlace:
        raise UnsupportedFormatError("interlaced PNG is not supported")
    if w == 0 or h == 0:
        raise DecodeError("zero image extent in IHDR", offset)


def decode_png(buf: bytes) -> np.ndarray:
    """Decode PNG bytes to an H x W x C uint8 array (C in {1, 3})."""
    if not buf.startswith(PNG_SIGNATURE):
        raise UnsupportedFormatError("not a PNG file (bad signature)")
    pos = len(PNG_SIGNATURE)
    header = None
    idat = []
    idat_offset = pos
    seen_end = False
    while pos < len(buf):
        if pos + 8 > len(buf):
            raise DecodeError("truncated chunk header", pos)
        length, tag = struct.unpack(">I4s", buf[pos:pos + 8])
        end = pos + 12 + length
        if end > len(buf):
            raise DecodeError(f"chunk {tag!r} runs past end of file", pos)
        body = buf[pos + 4:pos + 8 + length]
        (crc,) = struct.unpack(">I", buf[end - 4:end])
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise DecodeError(f"CRC mismatch in chunk {tag!r}", pos)
        payload = body[4:]
        if tag == b"IHDR":
            if length != 13:
                raise DecodeError("IHDR must be 13 bytes", pos)
            header = struct.unpack(">IIBBBBB", payload)
            _check_header(header, pos)
        elif tag == b"IDAT":
            if not idat:
                idat_offset = pos
            idat.append(payload)
        elif tag == b"IEND":
            seen_end = True
            break
        pos = end
    if header is None:
        raise DecodeError("missing IHDR chunk", len(PNG_SIGNATURE))
    if not seen_end:
        raise DecodeError("missing IEND chunk (file truncated)", pos)
    w, h, _, color_type = header[:4]
    try:
        data = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise DecodeError(f"corrupt image data: {exc}", idat_offset) from None
    px = _unfilter(data, h, w, _CHANNELS[color_type], idat_offset)
    if color_type == 4:
        px = px[:, :, :1]
    elif color_type == 6:
        px = px[:, :, :3]
    return np.ascontiguousarray(px)


def _pnm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while True:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise DecodeError("truncated PNM header", start)
    return buf[start:pos], pos


def decode_pnm(buf: bytes) -> np.ndarray:
    """Decode binary PPM (P6) or PGM (P5)."""
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormatError("not a binary PPM/PGM file")
    channels = 3 if magic == b"P6" else 1
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _pnm_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise DecodeError(f"non-numeric PNM header field {tok!r}", pos - len(tok)) from None
    w, h, maxval = fields
    if maxval != 255:
        raise UnsupportedFormatError(f"unsupported PNM maxval {maxval} (only 8-bit 255 is supported)")
    pos += 1  # single whitespace after maxval
    need = w * h * channels
    if len(buf) - pos < need:
        raise DecodeError(f"pixel data truncated: need {need} bytes, have {len(buf) - pos}", len(buf))
    return np.frombuffer(buf[pos:pos + need], dtype=np.uint8).reshape(h, w, channels).copy()


def encode_pnm(pixels: np.ndarray) -> bytes:
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    h, w, c = pixels.shape
    magic = {1: b"P5", 3: b"P6"}[c]
    return magic + f"\n{w} {h}\n255\n".encode() + pixels.astype(np.uint8).tobytes()


def read_pixels(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf.startswith(PNG_SIGNATURE):
        return decode_png(buf)
    if buf[:2] in (b"P5", b"P6"):
        return decode_pnm(buf)
    raise UnsupportedFormatError(f"{path}: magic bytes match neither PNG nor PPM/PGM")


def write_pixels(pixels: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm"):
        Path(path).write_bytes(encode_pnm(pixels))
    else:
        Path(path).write_bytes(encode_png(pixels))
