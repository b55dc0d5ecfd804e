import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asymcodec import checkpoint
from asymcodec import tensor as T
from asymcodec.errors import FormatError, UsageError
from asymcodec.optim import Adam
from asymcodec.tensor import Parameter, Tensor, count_macs, no_grad, precision

import gradcheck
from oracles import adam_closed_form


@pytest.mark.parametrize("op", gradcheck.OPS)
def test_gradient_matches_finite_differences(op):
    assert gradcheck.run_op(op, shapes=5, seed=7) < gradcheck.TOLERANCE


def test_default_precision_is_float32_and_switchable():
    assert Tensor([1.0]).dtype == np.float32
    with precision("float64"):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32
    with pytest.raises(UsageError):
        with precision("float16"):
            pass


def test_no_grad_records_nothing():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        b = a * 2
    assert not b.requires_grad


def test_gradient_accumulates_over_reuse():
    with precision("float64"):
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (a * a + a).sum().backward()
    np.testing.assert_allclose(a.grad, [3.0, 5.0])


def test_lower_bound_passes_upward_gradient_only():
    x = Tensor(np.array([-1.0, -1.0, 2.0]), requires_grad=True)
    y = T.lower_bound(x, 0.0)
    (y * Tensor(np.array([-1.0, 1.0, 1.0]))).sum().backward()
    # a negative upstream gradient pushes x upward and is let through below the bound
    np.testing.assert_array_equal(x.grad, [-1.0, 0.0, 1.0])


def test_frozen_parameter_gets_no_gradient():
    p = Parameter(np.ones(2), name="p", frozen=True)
    q = Parameter(np.ones(2), name="q")
    (p * q).sum().backward()
    assert p.grad is None
    np.testing.assert_array_equal(q.grad, [1.0, 1.0])


@given(arrays(np.float64, st.integers(2, 6), elements=st.floats(-5, 5)))
@settings(max_examples=30, deadline=None)
def test_softmax_rows_sum_to_one(x):
    with precision("float64"):
        s = T.softmax(Tensor(x)).data
    assert s.min() >= 0
    assert abs(s.sum() - 1.0) < 1e-12


def test_adam_matches_closed_form():
    rng = np.random.default_rng(3)
    theta0 = rng.standard_normal(5)
    grads = [rng.standard_normal(5) for _ in range(12)]
    with precision("float64"):
        p = Parameter(theta0, name="w")
        opt = Adam([p], lr=0.05)
        for g in grads:
            p.grad = g.copy()
            opt.step()
    np.testing.assert_allclose(p.data, adam_closed_form(grads, 0.05, 0.9, 0.999, 1e-8, theta0), rtol=1e-12)


def test_adam_skips_frozen_parameters():
    p = Parameter(np.ones(3), name="frozen", frozen=True)
    before = p.data.copy()
    Adam([p]).step()
    np.testing.assert_array_equal(p.data, before)


def test_matmul_reports_macs():
    with count_macs() as counter:
        T.matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((4, 5))))
    assert counter.total == 2 * 3 * 4 * 5


def test_checkpoint_round_trip_and_corruption():
    rng = np.random.default_rng(0)
    arrays_ = {"a": rng.standard_normal((2, 3)).astype(np.float32), "b.c": np.arange(4, dtype=np.float32)}
    blob = checkpoint.dumps(arrays_)
    back = checkpoint.loads(blob)
    assert list(back) == list(arrays_)
    for k in arrays_:
        np.testing.assert_array_equal(back[k], arrays_[k])
    assert checkpoint.digest(back) == checkpoint.digest(arrays_)
    with pytest.raises(FormatError):
        checkpoint.loads(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        checkpoint.loads(blob[:-3])
    with pytest.raises(FormatError):
        checkpoint.loads(blob + b"\0")
