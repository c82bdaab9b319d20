import numpy as np
import pytest

from landmark import tensor as T
from landmark.gradcheck import NonFiniteLossError, finite_diff_check
from landmark.tensor import Tensor


def test_quadratic_at_three():
    x = Tensor(np.array([3.0]), requires_grad=True)
    rep = finite_diff_check(lambda: (x * x).sum(), {"x": x}, h=1e-5, tol=1e-6)
    assert rep.passed
    assert abs(x.grad[0] - 6.0) < 1e-12


def test_corrupted_gradient_is_reported(rng):
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    x = rng.normal(size=(4, 3))
    f = lambda: T.square(T.matmul(Tensor(x), w)).sum()  # noqa: E731
    bad = 2 * (x.T @ (x @ w.data))
    bad[1, 0] += 0.5
    rep = finite_diff_check(f, {"w": w}, tape_grads={"w": bad})
    assert not rep.passed and rep.failures == ["w"]
    assert any("FAIL" in line for line in rep.lines())


def test_non_finite_loss_raises():
    x = Tensor(np.array([0.0]), requires_grad=True)
    with np.errstate(all="ignore"), pytest.raises(NonFiniteLossError):
        finite_diff_check(lambda: T.log_softmax(x * np.inf).sum(), {"x": x})


def test_h_must_be_positive():
    x = Tensor(np.array([1.0]), requires_grad=True)
    with pytest.raises(ValueError):
        finite_diff_check(lambda: x.sum(), {"x": x}, h=0.0)


def test_max_entries_sampling_is_seeded(rng):
    w = Tensor(rng.normal(size=50), requires_grad=True)
    f = lambda: T.exp(w).sum()  # noqa: E731
    a = finite_diff_check(f, {"w": w}, max_entries=7, seed=3)
    b = finite_diff_check(f, {"w": w}, max_entries=7, seed=3)
    assert a.blocks[0].checked == 7 and a.blocks[0].max_rel_error == b.blocks[0].max_rel_error


def test_kinked_coordinates_are_skipped_not_hidden():
    # a relu sitting exactly at its kink: central difference gives 0.5, tape gives 0
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    f = lambda: T.relu(x).sum()  # noqa: E731
    naive = finite_diff_check(f, {"x": x}, skip_kinks=False)
    assert not naive.passed
    guarded = finite_diff_check(f, {"x": x})
    assert guarded.passed
    assert guarded.blocks[0].kinked == 1 and guarded.blocks[0].checked == 1


def test_block_with_only_kinks_fails():
    x = Tensor(np.array([0.0]), requires_grad=True)
    rep = finite_diff_check(lambda: T.relu(x).sum(), {"x": x})
    assert not rep.passed
