import numpy as np
import pytest
from hypothesis import settings

from rafanet.tensor import Tensor

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def central_diff(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Independent finite-difference oracle: ``f`` maps an ndarray to a float."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, dn = x.copy(), x.copy()
        up[i] += eps
        dn[i] -= eps
        grad[i] = (f(up) - f(dn)) / (2 * eps)
    return grad


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor), initial=0.0))


def leaf(arr) -> Tensor:
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    """The standard synthetic set: 4 classes x 100 images, 70/10/20 split."""
    from rafanet.data import generate_synthetic

    root = tmp_path_factory.mktemp("synth")
    generate_synthetic(root, num_classes=4, per_class=100, seed=1)
    return root


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    """``record(n, title, ok, detail)`` stores one verdict line per criterion."""

    def record(number, title, ok, detail=""):
        ACCEPTANCE_LINES[number] = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
