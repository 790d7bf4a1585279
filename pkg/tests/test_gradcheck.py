import numpy as np
import pytest

from rafanet import tensor as T
from rafanet.errors import NumericError
from rafanet.gradcheck import gradient_check, numerical_gradient, relative_error
from rafanet.tensor import Tensor


def test_sigmoid_sum_at_zero():
    x = Tensor(np.zeros(4), requires_grad=True, name="x")
    report = gradient_check(lambda: T.sigmoid(x).sum(), [x], tol=1e-8)
    np.testing.assert_allclose(x.grad, 0.25)
    assert report.passed and report.errors["x"] <= 1e-8


def test_linear_function_exact_up_to_roundoff():
    a = np.array([1.5, -2.0, 0.25])
    x = Tensor(np.array([0.3, 0.1, -0.7]), requires_grad=True)
    num = numerical_gradient(lambda: (x * Tensor(a)).sum(), x)
    np.testing.assert_allclose(num, a, rtol=0, atol=1e-9)
    assert gradient_check(lambda: (x * Tensor(a)).sum(), {"x": x}, tol=1e-8).passed


def test_report_lists_failing_groups():
    x = Tensor(np.ones(2), requires_grad=True)

    def wrong():
        # forward is x^2 but the graph only sees the leaf once
        return (x * Tensor(x.data)).sum()

    report = gradient_check(wrong, {"x": x}, tol=1e-4)
    assert not report.passed
    assert report.failing == ["x"]


def test_non_finite_raises_with_name():
    x = Tensor(np.array([0.0]), requires_grad=True)
    with np.errstate(divide="ignore"), pytest.raises(NumericError):
        gradient_check(lambda: T.log(x).sum(), {"x": x})


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9]))[0] == pytest.approx(1e-4)
    assert relative_error(np.array([2.0]), np.array([1.0]))[0] == 0.5
