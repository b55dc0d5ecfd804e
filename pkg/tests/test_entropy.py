import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymcodec import rangecoder
from asymcodec.entropy import (
    ALPHABET,
    P_MIN,
    SYMBOL_MAX,
    SYMBOL_MIN,
    ClampCounter,
    GaussianParams,
    bin_mass,
    gaussian_counts,
    gaussian_likelihood,
    gaussian_tables,
    index_symbol,
    quantize,
    quantize_symbols,
    rate_estimate,
    split_slices,
    symbol_index,
)
from asymcodec.errors import UsageError
from asymcodec.rangecoder import TOTAL
from asymcodec.tensor import Tensor, precision

from oracles import gaussian_bin_mass


@given(st.floats(-6, 6), st.floats(0.04, 20))
@settings(max_examples=200, deadline=None)
def test_bin_mass_matches_erf(d, sigma):
    assert abs(float(bin_mass(np.array(d), np.array(sigma))) - gaussian_bin_mass(d, sigma)) < 1e-12


def test_likelihood_is_floored():
    with precision("float64"):
        y = Tensor(np.array([0.0, 40.0]))
        p = gaussian_likelihood(y, GaussianParams(Tensor(np.zeros(2)), Tensor(np.full(2, 0.5))))
    assert p.data[1] == P_MIN
    assert abs(p.data[0] - gaussian_bin_mass(0.0, 0.5)) < 1e-12


def test_likelihood_sums_to_one_over_integers():
    with precision("float64"):
        ks = np.arange(-10, 11, dtype=np.float64) + 0.3
        p = gaussian_likelihood(Tensor(ks), GaussianParams(Tensor(0.3), Tensor(2.5)))
    assert p.data.min() > P_MIN
    tail = math.erfc(10.5 / (2.5 * math.sqrt(2)))
    assert abs(p.data.sum() - (1.0 - tail)) < 1e-12


def test_rate_estimate_is_self_information():
    probs = np.array([0.5, 0.25, 0.125])
    with precision("float64"):
        bits = rate_estimate(Tensor(probs[:2]), Tensor(probs[2:])).item()
    assert bits == pytest.approx(1 + 2 + 3)
    with pytest.raises(UsageError):
        rate_estimate()


def test_quantize_modes():
    rng = np.random.default_rng(0)
    y = Tensor(rng.standard_normal((2, 3)) * 4)
    mu = Tensor(rng.standard_normal((2, 3)))
    r = quantize(y, mu, "round")
    assert np.allclose(r.data - mu.data, np.round(r.data - mu.data), atol=1e-5)
    n = quantize(y, mu, "noise", rng)
    assert np.abs(n.data - y.data).max() <= 0.5
    with pytest.raises(UsageError):
        quantize(y, mu, "floor")
    with pytest.raises(UsageError):
        quantize(y, Tensor(np.zeros((3, 2))), "round")


def test_quantize_symbols_clamps_and_counts():
    counter = ClampCounter()
    y = Tensor(np.array([0.2, 300.0, -300.0, 1.6]))
    sym, yh = quantize_symbols(y, Tensor(np.zeros(4)), counter)
    assert sym.tolist() == [0, SYMBOL_MAX, SYMBOL_MIN, 2]
    assert counter.count == 2
    np.testing.assert_array_equal(yh.data, sym)


@given(st.floats(0.04, 200))
@settings(max_examples=200, deadline=None)
def test_counts_form_a_valid_table(sigma):
    counts = gaussian_counts(np.array([sigma]))[0]
    assert counts.sum() == TOTAL
    assert counts.min() >= 1
    assert counts.size == ALPHABET


def test_table_cost_close_to_model_probability():
    # integer tables should lose little against the continuous discretized Gaussian
    sigma = np.array([0.3, 1.0, 5.0, 30.0])
    counts = gaussian_counts(sigma)
    for s, row in zip(sigma, counts):
        p = np.array([gaussian_bin_mass(k, s) for k in range(SYMBOL_MIN, SYMBOL_MAX + 1)])
        q = row / TOTAL
        live = p > 1e-9
        kl = float(np.sum(p[live] * np.log2(p[live] / q[live])))
        assert kl < 0.01


def test_tables_round_trip_latents():
    rng = np.random.default_rng(4)
    sigma = rng.uniform(0.05, 10, 500)
    sym = np.clip(np.round(rng.standard_normal(500) * sigma), SYMBOL_MIN, SYMBOL_MAX).astype(np.int64)
    tables = gaussian_tables(sigma)
    payload = rangecoder.encode(symbol_index(sym), tables)
    back = index_symbol(rangecoder.decode(payload, tables), (500,))
    np.testing.assert_array_equal(back, sym)


def test_split_slices():
    y = Tensor(np.arange(2 * 10 * 1 * 1).reshape(2, 10, 1, 1))
    parts = split_slices(y, 5)
    assert [p.shape for p in parts] == [(2, 2, 1, 1)] * 5
    np.testing.assert_array_equal(np.concatenate([p.data for p in parts], axis=1), y.data)
