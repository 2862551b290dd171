"""Binary PGM (P5) and PPM (P6) reading and writing."""

from __future__ import annotations

import os

import numpy as np


class PNMError(ValueError):
    pass


_WHITESPACE = b" \t\n\r\v\f"


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping '#' comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        if pos >= len(buf):
            raise PNMError("truncated header")
        ch = buf[pos:pos + 1]
        if ch in _WHITESPACE and ch:
            pos += 1
        elif ch == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        else:
            start = pos
            while pos < len(buf) and buf[pos:pos + 1] not in _WHITESPACE + b"#":
                pos += 1
            tokens.append(buf[start:pos])
    return tokens, pos


def decode_pnm(buf: bytes) -> np.ndarray:
    """Decode a P5/P6 image to (H, W) or (H, W, 3), uint8 or uint16 (maxval > 255)."""
    tokens, pos = _header_tokens(buf, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"unsupported magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PNMError("malformed header") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise PNMError(f"bad dimensions or maxval: {width}x{height}, {maxval}")
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise PNMError("missing whitespace after maxval")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    n = width * height * channels
    if len(buf) - pos < n * dtype.itemsize:
        raise PNMError("truncated raster")
    arr = np.frombuffer(buf, dtype=dtype, count=n, offset=pos).astype(
        np.uint16 if maxval > 255 else np.uint8)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return arr.reshape(shape)


def read_pnm(path) -> tuple[np.ndarray, int]:
    """Return (pixels, maxval)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    img = decode_pnm(buf)
    maxval = int(_header_tokens(buf, 4)[0][3])
    return img, maxval


def encode_pnm(pixels: np.ndarray, maxval: int = 255) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise PNMError(f"cannot encode array of shape {pixels.shape}")
    h, w = pixels.shape[:2]
    if pixels.min() < 0 or pixels.max() > maxval:
        raise PNMError("pixel values outside [0, maxval]")
    dtype = ">u2" if maxval > 255 else np.uint8
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    return header + pixels.astype(dtype).tobytes()


def write_pnm(path, pixels: np.ndarray, maxval: int = 255) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(encode_pnm(pixels, maxval))


def to_float(pixels: np.ndarray, maxval: int) -> np.ndarray:
    """(H, W[, 3]) integer image -> (3, H, W) float32 in [0, 1]."""
    img = pixels.astype(np.float32) / float(maxval)
    if img.ndim == 2:
        img = np.repeat(img[None], 3, axis=0)
    else:
        img = img.transpose(2, 0, 1)
    return np.ascontiguousarray(img)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """(3, H, W) or (H, W) float in [0, 1] -> uint8 raster ready for encoding."""
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[0] if np.array_equal(img[0], img[1]) and np.array_equal(img[0], img[2]) \
            else img.transpose(1, 2, 0)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
