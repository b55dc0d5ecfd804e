"""8-bit RGB image reading and writing: binary PPM (P6) and a small PNG codec."""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Union

import numpy as np

from .errors import InputError, UnsupportedFormatError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
IMAGE_SUFFIXES = (".ppm", ".png")

PathLike = Union[str, Path]


def read_image(path: PathLike) -> np.ndarray:
    """Return an ``(H, W, 3)`` uint8 array."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    if data.startswith(PNG_SIGNATURE):
        return decode_png(data)
    if data[:2] == b"P6":
        return decode_ppm(data)
    if data[:2] in (b"P3", b"P5", b"P2", b"P1", b"P4"):
        raise UnsupportedFormatError(f"{path}: only binary RGB PPM (P6) is supported")
    raise InputError(f"{path}: not a PNG or PPM image")


def write_image(path: PathLike, image: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        path.write_bytes(encode_png(image))
    else:
        path.write_bytes(encode_ppm(image))


def _check_rgb8(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise UnsupportedFormatError(f"expected an (H, W, 3) uint8 image, got {image.dtype} {image.shape}")
    return image


# -- PPM -------------------------------------------------------------------------------

def _ppm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 2
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos] not in (10, 13):
                pos += 1
            continue
        start = pos
        while pos < n and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise InputError("malformed PPM header")
        tokens.append(int(data[start:pos]))
    if pos >= n or not data[pos : pos + 1].isspace():
        raise InputError("malformed PPM header")
    return tokens, pos + 1


def decode_ppm(data: bytes) -> np.ndarray:
    if data[:2] != b"P6":
        raise InputError("not a binary PPM")
    (w, h, maxval), offset = _ppm_tokens(data, 3)
    if maxval != 255:
        raise UnsupportedFormatError(f"PPM maxval {maxval}; only 8-bit images are supported")
    if w <= 0 or h <= 0:
        raise InputError("PPM has zero size")
    need = w * h * 3
    pixels = data[offset : offset + need]
    if len(pixels) != need:
        raise InputError("truncated PPM data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3).copy()


def encode_ppm(image: np.ndarray) -> bytes:
    image = _check_rgb8(image)
    h, w = image.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(image).tobytes()


# -- PNG -------------------------------------------------------------------------------

_CHANNELS = {0: 1, 2: 3, 4: 2, 6: 4}


def _chunks(data: bytes):
    pos = len(PNG_SIGNATURE)
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        kind = data[pos + 4 : pos + 8]
        body = data[pos + 8 : pos + 8 + length]
        if len(body) != length or pos + 12 + length > len(data):
            raise InputError("truncated PNG chunk")
        (crc,) = struct.unpack(">I", data[pos + 8 + length : pos + 12 + length])
        if zlib.crc32(kind + body) != crc:
            raise InputError(f"PNG chunk {kind!r} fails its CRC")
        yield kind, body
        pos += 12 + length


def _paeth_row(line: np.ndarray, prior: np.ndarray, bpp: int) -> np.ndarray:
    out = np.empty_like(line)
    a_row = out.astype(np.int16)
    b = prior.astype(np.int16)
    for i in range(line.size):
        a = int(a_row[i - bpp]) if i >= bpp else 0
        c = int(b[i - bpp]) if i >= bpp else 0
        p = a + int(b[i]) - c
        pa, pb, pc = abs(p - a), abs(p - int(b[i])), abs(p - c)
        if pa <= pb and pa <= pc:
            pred = a
        elif pb <= pc:
            pred = int(b[i])
        else:
            pred = c
        v = (int(line[i]) + pred) & 0xFF
        out[i] = v
        a_row[i] = v
    return out


def _unfilter(raw: bytes, h: int, stride: int, bpp: int) -> np.ndarray:
    if len(raw) != h * (stride + 1):
        raise InputError("PNG image data has the wrong length")
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(h, stride + 1)
    out = np.zeros((h, stride), dtype=np.uint8)
    prior = np.zeros(stride, dtype=np.uint8)
    for y in range(h):
        ftype, line = rows[y, 0], rows[y, 1:]
        if ftype == 0:
            cur = line.copy()
        elif ftype == 1:
            cur = line.copy()
            for i in range(bpp, stride, bpp):
                cur[i : i + bpp] += cur[i - bpp : i]
        elif ftype == 2:
            cur = line + prior
        elif ftype == 3:
            cur = line.copy()
            for i in range(0, stride, bpp):
                left = cur[i - bpp : i].astype(np.uint16) if i >= bpp else np.zeros(bpp, np.uint16)
                avg = ((left + prior[i : i + bpp]) >> 1).astype(np.uint8)
                cur[i : i + bpp] += avg
        elif ftype == 4:
            cur = _paeth_row(line, prior, bpp)
        else:
            raise InputError(f"unknown PNG filter type {ftype}")
        out[y] = cur
        prior = cur
    return out


def decode_png(data: bytes) -> np.ndarray:
    """Decode a non-interlaced 8-bit grey/RGB(A) PNG to RGB, dropping alpha."""
    if not data.startswith(PNG_SIGNATURE):
        raise InputError("not a PNG")
    header = None
    idat = []
    for kind, body in _chunks(data):
        if kind == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
        elif kind == b"IDAT":
            idat.append(body)
        elif kind == b"IEND":
            break
    if header is None:
        raise InputError("PNG has no IHDR")
    w, h, depth, color, _, _, interlace = header
    if depth != 8:
        raise UnsupportedFormatError(f"PNG bit depth {depth}; only 8-bit images are supported")
    if color not in _CHANNELS:
        raise UnsupportedFormatError("palette PNGs are not supported")
    if interlace:
        raise UnsupportedFormatError("interlaced PNGs are not supported")
    channels = _CHANNELS[color]
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise InputError(f"corrupt PNG image data: {exc}") from exc
    pixels = _unfilter(raw, h, w * channels, channels).reshape(h, w, channels)
    if channels in (1, 2):
        return np.repeat(pixels[:, :, :1], 3, axis=2)
    return np.ascontiguousarray(pixels[:, :, :3])


def _chunk(kind: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + kind + body + struct.pack(">I", zlib.crc32(kind + body))


def encode_png(image: np.ndarray) -> bytes:
    image = _check_rgb8(image)
    h, w = image.shape[:2]
    rows = np.concatenate([np.zeros((h, 1), np.uint8), image.reshape(h, w * 3)], axis=1)
    return (
        PNG_SIGNATURE
        + _chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
        + _chunk(b"IDAT", zlib.compress(rows.tobytes(), 9))
        + _chunk(b"IEND", b"")
    )


def list_images(directory: PathLike) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def to_tensor_layout(image: np.ndarray) -> np.ndarray:
    """uint8 HWC to float CHW on [0, 1]."""
    return image.transpose(2, 0, 1).astype(np.float32) / 255.0


def to_uint8(x: np.ndarray) -> np.ndarray:
    """Float CHW on [0, 1] to uint8 HWC."""
    return np.clip(np.round(np.asarray(x) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
