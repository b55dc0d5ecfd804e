"""Quantization, discretized Gaussian likelihoods and the slice-wise context model.

Latent elements are coded as integer offsets from a predicted mean. The
offset alphabet is ``[-127, 128]``; values outside are clamped and counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import UsageError
from .model import SIGMA_MIN, Model
from .rangecoder import TOTAL, FrequencyTable
from .tensor import Tensor, log2, tsum

P_MIN = 2.0**-16
SYMBOL_MIN = -127
SYMBOL_MAX = 128
ALPHABET = SYMBOL_MAX - SYMBOL_MIN + 1


@dataclass
class GaussianParams:
    mu: Tensor
    sigma: Tensor


class ClampCounter:
    """Counts latent offsets that fell outside the coding alphabet."""

    def __init__(self) -> None:
        self.count = 0


def quantize(y: Tensor, mu, mode: str, rng: Optional[np.random.Generator] = None) -> Tensor:
    """``noise``: add uniform(-0.5, 0.5) noise. ``round``: ``round(y - mu) + mu`` (no gradient)."""
    mu_data = mu.data if isinstance(mu, Tensor) else np.asarray(mu, dtype=y.dtype)
    try:
        fits = np.broadcast_shapes(y.shape, mu_data.shape) == y.shape
    except ValueError:
        fits = False
    if not fits:
        raise UsageError(f"mean shape {mu_data.shape} does not match latent {y.shape}")
    if mode == "noise":
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.uniform(-0.5, 0.5, size=y.shape).astype(y.dtype)
        return y + Tensor(noise, dtype=y.dtype)
    if mode == "round":
        return Tensor(np.round(y.data - mu_data) + mu_data, dtype=y.dtype)
    raise UsageError(f"unknown quantization mode {mode!r}")


def quantize_symbols(
    y: Tensor, mu: Tensor, counter: Optional[ClampCounter] = None
) -> tuple[np.ndarray, Tensor]:
    """Integer offsets within the coding alphabet and the matching dequantized values."""
    offsets = np.round(y.data - mu.data)
    clipped = np.clip(offsets, SYMBOL_MIN, SYMBOL_MAX)
    if counter is not None:
        counter.count += int(np.count_nonzero(clipped != offsets))
    symbols = clipped.astype(np.int64)
    return symbols, dequantize(symbols, mu)


def dequantize(symbols: np.ndarray, mu: Tensor) -> Tensor:
    return Tensor(symbols.astype(mu.dtype) + mu.data, dtype=mu.dtype)


def bin_mass(offset, sigma) -> np.ndarray:
    """Unfloored ``Phi((d + 1/2) / sigma) - Phi((d - 1/2) / sigma)``."""
    t = -np.abs(offset)
    return ndtr((t + 0.5) / sigma) - ndtr((t - 0.5) / sigma)


def gaussian_likelihood(y_hat: Tensor, params: GaussianParams) -> Tensor:
    """Probability mass of the unit bin centred on ``y_hat``, floored at ``P_MIN``.

    Evaluated on the negative half-line (the mass is symmetric) so both CDF
    values stay small and the difference keeps its precision.
    """
    mu, sigma = params.mu, params.sigma
    d = y_hat.data - mu.data
    s = sigma.data
    t = -np.abs(d)
    upper = (t + 0.5) / s
    lower = (t - 0.5) / s
    p = bin_mass(d, s)
    floored = p < P_MIN
    out = np.where(floored, P_MIN, p).astype(y_hat.dtype)

    def backward(g):
        inv_sqrt2pi = 1.0 / math.sqrt(2.0 * math.pi)
        phi_u = np.exp(-0.5 * upper * upper) * inv_sqrt2pi
        phi_l = np.exp(-0.5 * lower * lower) * inv_sqrt2pi
        live = np.where(floored, 0.0, g)
        dp_dt = (phi_u - phi_l) / s
        dp_dy = dp_dt * -np.sign(d)
        dp_ds = (-phi_u * upper + phi_l * lower) / s
        gy = (live * dp_dy).astype(g.dtype)
        return (
            _reduce_to(gy, y_hat.shape),
            _reduce_to(-gy, mu.shape),
            _reduce_to((live * dp_ds).astype(g.dtype), sigma.shape),
        )

    return Tensor.from_op(out, (y_hat, mu, sigma), backward)


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    from .tensor import _unbroadcast

    return _unbroadcast(g, tuple(shape))


def rate_estimate(*likelihoods: Tensor) -> Tensor:
    """Total self-information ``sum(-log2 p)`` in bits."""
    total = None
    for p in likelihoods:
        bits = -tsum(log2(p))
        total = bits if total is None else total + bits
    if total is None:
        raise UsageError("rate_estimate needs at least one likelihood tensor")
    return total


# -- model-level helpers -------------------------------------------------------------

def z_params(model: Model) -> GaussianParams:
    mu, sigma = model.h_s.prior.params()
    return GaussianParams(mu, sigma)


def hyper_path(
    model: Model,
    y: Tensor,
    mode: str = "round",
    rng: Optional[np.random.Generator] = None,
    counter: Optional[ClampCounter] = None,
):
    """Return ``(z, z_hat, hyper_features)``; rounding uses the coding alphabet."""
    z = model.h_a(y)
    prior = z_params(model)
    if mode == "round":
        _, z_hat = quantize_symbols(z, _broadcast_mu(prior.mu, z), counter)
    else:
        z_hat = quantize(z, prior.mu, mode, rng)
    return z, z_hat, model.h_s(z_hat)


def _broadcast_mu(mu: Tensor, like: Tensor) -> Tensor:
    return Tensor(np.broadcast_to(mu.data, like.shape), dtype=like.dtype)


def slice_params(model_or_fc, hyper_features: Tensor, decoded_slices: Sequence[Tensor]) -> GaussianParams:
    f_c = model_or_fc.f_c if isinstance(model_or_fc, Model) else model_or_fc
    mu, sigma = f_c(hyper_features, list(decoded_slices))
    return GaussianParams(mu, sigma)


def split_slices(y: Tensor, slices: int) -> list[Tensor]:
    w = y.shape[1] // slices
    return [y[:, i * w : (i + 1) * w] for i in range(slices)]


# -- frequency tables ------------------------------------------------------------------

def _edges() -> np.ndarray:
    return np.arange(SYMBOL_MIN, SYMBOL_MAX) + 0.5


_EDGES = _edges()


def gaussian_counts(sigma: np.ndarray) -> np.ndarray:
    """Integer counts (total 2**16, every entry >= 1) per sigma over the offset alphabet.

    Tail mass beyond the alphabet is folded into the two end symbols.
    """
    s = np.asarray(sigma, dtype=np.float64).reshape(-1, 1)
    cdf = ndtr(_EDGES[None, :] / s)
    n = s.shape[0]
    cdf = np.concatenate([np.zeros((n, 1)), cdf, np.ones((n, 1))], axis=1)
    p = np.diff(cdf, axis=1)
    budget = TOTAL - ALPHABET
    counts = np.floor(p * budget).astype(np.int64) + 1
    deficit = TOTAL - counts.sum(axis=1)
    counts[np.arange(n), np.argmax(p, axis=1)] += deficit
    return counts


def gaussian_tables(sigma: np.ndarray) -> list[FrequencyTable]:
    counts = gaussian_counts(sigma)
    cum = np.zeros((counts.shape[0], ALPHABET + 1), dtype=np.int64)
    np.cumsum(counts, axis=1, out=cum[:, 1:])
    return [FrequencyTable(tuple(row)) for row in cum.tolist()]


def symbol_index(symbols: np.ndarray) -> list[int]:
    return (np.asarray(symbols).reshape(-1) - SYMBOL_MIN).tolist()


def index_symbol(indices: Sequence[int], shape) -> np.ndarray:
    return (np.asarray(indices, dtype=np.int64) + SYMBOL_MIN).reshape(shape)
