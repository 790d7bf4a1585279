"""Compare analytic gradients with central finite differences."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from rafanet.errors import ContractError, NumericError
from rafanet.tensor import Tensor


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)  # name -> max relative error
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(err <= self.tol for err in self.errors.values())

    @property
    def failing(self) -> list:
        return [name for name, err in self.errors.items() if err > self.tol]

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients from dominating."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numerical_gradient(f: Callable[[], Tensor], param: Tensor, eps: float = 1e-6) -> np.ndarray:
    param.data = np.array(param.data, dtype=np.float64)  # own, contiguous buffer
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = f().item()
        flat[i] = orig - eps
        minus = f().item()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2.0 * eps)
    return grad


def gradient_check(
    f: Callable[[], Tensor],
    params: Union[Mapping[str, Tensor], Sequence[Tensor]],
    eps: float = 1e-6,
    tol: float = 1e-4,
    floor: float = 1e-5,
) -> GradCheckReport:
    """Check ``f``'s analytic gradient w.r.t. each parameter.

    ``f`` takes no arguments and must be deterministic: it is re-evaluated
    with individual parameter entries nudged by ``±eps`` in place.
    """
    if not isinstance(params, Mapping):
        params = {p.name or f"param{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.requires_grad = True
        p.zero_grad()

    loss = f()
    if loss.ndim != 0:
        raise ContractError(f"gradient_check needs a scalar function, got shape {loss.shape}")
    if not np.isfinite(loss.data):
        raise NumericError("non-finite loss value")
    loss.backward()

    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        if not np.all(np.isfinite(analytic)):
            raise NumericError(f"non-finite analytic gradient for {name}")
        numeric = numerical_gradient(f, p, eps)
        if not np.all(np.isfinite(numeric)):
            raise NumericError(f"non-finite numerical gradient for {name}")
        report.errors[name] = float(relative_error(analytic, numeric, floor).max(initial=0.0))
    return report
