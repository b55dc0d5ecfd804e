"""Image compression to and from the ALIC container."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import rangecoder
from .entropy import (
    ClampCounter,
    GaussianParams,
    dequantize,
    gaussian_likelihood,
    gaussian_tables,
    index_symbol,
    quantize_symbols,
    rate_estimate,
    slice_params,
    split_slices,
    symbol_index,
    z_params,
)
from .errors import DecodingError, FormatError, InputError, UnsupportedFormatError, UsageError
from .imageio import to_tensor_layout, to_uint8
from .model import PAD_MULTIPLE, Model, analyze, synthesize
from .tensor import Tensor, concat, no_grad

MAGIC = b"ALIC"
VERSION = 1
HEADER = struct.Struct("<4sBHHBBII")


@dataclass(frozen=True)
class Bitstream:
    orig_h: int
    orig_w: int
    model_id: int
    lambda_index: int
    z_payload: bytes
    y_payload: bytes
    version: int = VERSION

    def to_bytes(self) -> bytes:
        head = HEADER.pack(
            MAGIC,
            self.version,
            self.orig_h,
            self.orig_w,
            self.model_id,
            self.lambda_index,
            len(self.z_payload),
            len(self.y_payload),
        )
        return head + self.z_payload + self.y_payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < HEADER.size:
            raise FormatError(f"stream is {len(data)} bytes, shorter than the {HEADER.size}-byte header")
        magic, version, h, w, model_id, lam, z_len, y_len = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise UnsupportedFormatError(f"container version {version} (supported: {VERSION})")
        body = data[HEADER.size :]
        if len(body) != z_len + y_len:
            raise DecodingError(f"header announces {z_len + y_len} payload bytes, found {len(body)}")
        return cls(h, w, model_id, lam, bytes(body[:z_len]), bytes(body[z_len:]), version)

    def __len__(self) -> int:
        return HEADER.size + len(self.z_payload) + len(self.y_payload)

    def bpp(self) -> float:
        return 8.0 * len(self) / (self.orig_h * self.orig_w)


@dataclass
class EncodeResult:
    bitstream: Bitstream
    y_hat: Tensor
    z_hat: Tensor
    reconstruction: np.ndarray
    estimated_bits: float
    clamped: int


def padded_size(h: int, w: int) -> tuple[int, int]:
    m = PAD_MULTIPLE
    return -(-h // m) * m, -(-w // m) * m


def prepare_image(image: np.ndarray) -> Tensor:
    """uint8 HWC to a reflect-padded ``(1, 3, H', W')`` tensor."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise UnsupportedFormatError(f"expected 8-bit samples, got {image.dtype}")
    if image.ndim != 3 or image.shape[2] != 3:
        raise InputError(f"expected an RGB image, got shape {image.shape}")
    h, w = image.shape[:2]
    if not (0 < h < 1 << 16 and 0 < w < 1 << 16):
        raise InputError(f"image size {w}x{h} not supported")
    ph, pw = padded_size(h, w)
    x = to_tensor_layout(image)
    x = np.pad(x, ((0, 0), (0, ph - h), (0, pw - w)), mode="reflect")
    return Tensor(x[None])


def _z_tables(model: Model, shape) -> tuple[GaussianParams, list]:
    prior = z_params(model)
    c = shape[1]
    per_channel = gaussian_tables(prior.sigma.data.reshape(c))
    spatial = int(np.prod(shape[2:]))
    tables = [per_channel[ch] for ch in range(c) for _ in range(spatial)]
    mu = Tensor(np.broadcast_to(prior.mu.data, shape), dtype=prior.mu.dtype)
    sigma = Tensor(np.broadcast_to(prior.sigma.data, shape), dtype=prior.sigma.dtype)
    return GaussianParams(mu, sigma), tables


def encode(image: np.ndarray, model: Model, model_id: Optional[int] = None, lambda_index: Optional[int] = None) -> EncodeResult:
    """Compress ``image`` and keep the encoder-side latents and reconstruction."""
    model_id = int(model.info.get("model_id", 0) if model_id is None else model_id)
    lambda_index = int(model.info.get("lambda_index", 255) if lambda_index is None else lambda_index)
    if not (0 <= model_id < 256 and 0 <= lambda_index < 256):
        raise UsageError("model_id and lambda_index must fit in one byte")
    h, w = image.shape[:2]
    counter = ClampCounter()
    with no_grad():
        x = prepare_image(image)
        y = analyze(model, x)
        z = model.h_a(y)
        zp, z_tables = _z_tables(model, z.shape)
        z_sym, z_hat = quantize_symbols(z, zp.mu, counter)
        z_payload = rangecoder.encode(symbol_index(z_sym), z_tables)
        liks = [gaussian_likelihood(z_hat, zp)]

        hf = model.h_s(z_hat)
        decoded: list[Tensor] = []
        y_symbols: list[int] = []
        y_tables: list = []
        for y_i in split_slices(y, model.f_c.slices):
            params = slice_params(model, hf, decoded)
            sym, y_hat_i = quantize_symbols(y_i, params.mu, counter)
            y_symbols += symbol_index(sym)
            y_tables += gaussian_tables(params.sigma.data)
            liks.append(gaussian_likelihood(y_hat_i, params))
            decoded.append(y_hat_i)
        y_payload = rangecoder.encode(y_symbols, y_tables)
        y_hat = concat(decoded, axis=1)
        x_hat = synthesize(model, y_hat)
        bits = float(rate_estimate(*liks).item())

    stream = Bitstream(h, w, model_id, lambda_index, z_payload.data, y_payload.data)
    recon = to_uint8(x_hat.data[0])[:h, :w]
    return EncodeResult(stream, y_hat, z_hat, recon, bits, counter.count)


def compress(image: np.ndarray, model: Model, model_id: Optional[int] = None, lambda_index: Optional[int] = None) -> Bitstream:
    return encode(image, model, model_id, lambda_index).bitstream


def _latent_shapes(model: Model, h: int, w: int):
    ph, pw = padded_size(h, w)
    m, hc = model.config.latent_channels, model.config.hyper_channels
    return (1, m, ph // 16, pw // 16), (1, hc, ph // 64, pw // 64)


def decode_latents(stream: Bitstream, model: Model) -> tuple[Tensor, Tensor]:
    """Recover ``(y_hat, z_hat)`` from a bitstream."""
    y_shape, z_shape = _latent_shapes(model, stream.orig_h, stream.orig_w)
    with no_grad():
        zp, z_tables = _z_tables(model, z_shape)
        z_dec = rangecoder.StreamDecoder(stream.z_payload)
        z_sym = index_symbol(z_dec.decode(z_tables), z_shape)
        z_dec.finish()
        z_hat = dequantize(z_sym, zp.mu)

        hf = model.h_s(z_hat)
        slices = model.f_c.slices
        slice_shape = (1, y_shape[1] // slices) + y_shape[2:]
        y_dec = rangecoder.StreamDecoder(stream.y_payload)
        decoded: list[Tensor] = []
        for _ in range(slices):
            params = slice_params(model, hf, decoded)
            sym = index_symbol(y_dec.decode(gaussian_tables(params.sigma.data)), slice_shape)
            decoded.append(dequantize(sym, params.mu))
        y_dec.finish()
    return concat(decoded, axis=1), z_hat


def decompress(data: Union[bytes, Bitstream], model: Model, model_id: Optional[int] = None) -> np.ndarray:
    """Decode to an ``(H, W, 3)`` uint8 image."""
    stream = data if isinstance(data, Bitstream) else Bitstream.from_bytes(data)
    if model_id is not None and stream.model_id != model_id:
        raise FormatError(f"stream was made with model {stream.model_id}, not {model_id}")
    y_hat, _ = decode_latents(stream, model)
    with no_grad():
        x_hat = synthesize(model, y_hat)
    return to_uint8(x_hat.data[0])[: stream.orig_h, : stream.orig_w]
