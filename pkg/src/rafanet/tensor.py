"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation that touches a tensor requiring gradients records its
parents and a closure mapping the upstream gradient to parent gradients.
``Tensor.backward`` walks that graph once in reverse topological order.

Batch dimensions are supported by letting ops work on trailing axes, so a
region sequence can be ``[R, c]`` or ``[N, R, c]`` interchangeably.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from rafanet.errors import ContractError, DimensionError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.asarray(data, dtype=np.float64)
        t.grad = None
        t.requires_grad = requires_grad
        t.name = None
        t._parents = ()
        t._backward = None
        return t

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- backpropagation --------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor that requires it.

        Gradients add into any existing ``grad`` buffer, so callers zero
        them between optimisation steps.
        """
        if self.data.ndim != 0:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that does not require grad")

        order = _topological_order(self)
        pending = {id(self): np.ones((), dtype=np.float64)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64), False)


def _node(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor._wrap(data, needs)
    if needs:
        out._parents = parents
        out._backward = backward
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, opname: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form avoids overflow in exp for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    mask = a.data > floor
    return _node(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


_ELEMENTWISE = {"add": add, "mul": mul, "tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def elementwise(op: str, a: ArrayLike, b: Optional[ArrayLike] = None) -> Tensor:
    """Dispatch one of ``add``, ``mul``, ``tanh``, ``sigmoid``, ``relu`` by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    if op in ("add", "mul"):
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return fn(a, b)
    if b is not None:
        raise ContractError(f"{op} is unary")
    return fn(as_tensor(a))


# ---------------------------------------------------------------------------
# shape and reductions


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(y, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis, keepdims), 1.0 / count)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _node(y, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[:-2] + (a.ndim - 1, a.ndim - 2) if a.ndim >= 2 else (0,)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def take(a: Tensor, index) -> Tensor:
    y = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(y, dtype=np.float64), (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product with numpy semantics for leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    inner_b = b.shape[-2] if b.ndim >= 2 else b.shape[0]
    if a.shape[-1] != inner_b:
        raise DimensionError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    try:
        y = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch dims incompatible, shapes {a.shape} and {b.shape}") from None

    def bw(g):
        A = a.data[None, :] if a.ndim == 1 else a.data
        B = b.data[:, None] if b.ndim == 1 else b.data
        if a.ndim == 1:
            g = np.expand_dims(g, -2)
        if b.ndim == 1:
            g = np.expand_dims(g, -1)
        ga = g @ np.swapaxes(B, -1, -2)
        gb = np.swapaxes(A, -1, -2) @ g
        if a.ndim == 1:
            ga = ga[..., 0, :]
        if b.ndim == 1:
            gb = gb[..., 0]
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _node(y, (a, b), bw)


def linear_along(a: Tensor, matrix: np.ndarray, axis: int) -> Tensor:
    """Apply a constant ``[out, in]`` matrix along one axis of ``a``.

    Used for every fixed linear resampling in the model (pooling windows,
    pyramid bins, bilinear upsampling), so they share one backward rule.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    axis = axis % a.ndim
    if matrix.ndim != 2 or matrix.shape[1] != a.shape[axis]:
        raise DimensionError(f"linear_along: matrix {matrix.shape} does not fit axis {axis} of {a.shape}")
    y = np.moveaxis(np.tensordot(matrix, a.data, axes=([1], [axis])), 0, axis)

    def bw(g):
        return (np.moveaxis(np.tensordot(matrix.T, g, axes=([1], [axis])), 0, axis),)

    return _node(y, (a,), bw)


# ---------------------------------------------------------------------------
# normalisation


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.ndim == 0 or a.shape[axis] < 1:
        raise DimensionError(f"softmax: empty axis in shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (a,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise the last axis to zero mean / unit population std, then scale and shift.

    ``eps`` sits inside the square root and only matters for (near-)constant
    vectors.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise DimensionError(f"layer_norm: input {x.shape} with gain {gain.shape}, bias {bias.shape}")
    xc = x.data - x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead)
        gb = g.sum(axis=lead)
        gx_hat = g * gain.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, gg, gb

    return _node(y, (x, gain, bias), bw)


# ---------------------------------------------------------------------------
# convolution and pooling


def depthwise_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel cross-correlation along axis -2 with zero "same" padding.

    ``x`` is ``[..., L, C]``, ``kernel`` is ``[K, C]`` with odd ``K``.
    """
    k = kernel.shape[0]
    if kernel.ndim != 2 or k % 2 == 0:
        raise DimensionError(f"depthwise_conv1d: kernel must be [odd K, C], got {kernel.shape}")
    if x.ndim < 2 or x.shape[-1] != kernel.shape[1]:
        raise DimensionError(f"depthwise_conv1d: input {x.shape} vs kernel {kernel.shape}")
    length, pad = x.shape[-2], k // 2
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, widths)
    y = sum(kernel.data[t] * xp[..., t : t + length, :] for t in range(k))

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        gk = np.stack([(g * xp[..., t : t + length, :]).sum(axis=lead) for t in range(k)])
        gxp = np.zeros_like(xp)
        for t in range(k):
            gxp[..., t : t + length, :] += g * kernel.data[t]
        return gxp[..., pad : pad + length, :], gk

    return _node(y, (x, kernel), bw)


def conv1d_separable(x: Tensor, depthwise_kernel: Tensor, pointwise: Tensor, bias: Tensor) -> Tensor:
    """Depthwise (kernel 3, zero same-padding) then pointwise mixing, bias and relu.

    ``x`` is ``[..., L, C]``; the sequence length is preserved.
    """
    c = x.shape[-1]
    if depthwise_kernel.shape != (3, c):
        raise DimensionError(f"conv1d_separable: input {x.shape} vs depthwise kernel {depthwise_kernel.shape}")
    if pointwise.ndim != 2 or pointwise.shape[0] != c:
        raise DimensionError(f"conv1d_separable: input {x.shape} vs pointwise {pointwise.shape}")
    if bias.shape != (pointwise.shape[1],):
        raise DimensionError(f"conv1d_separable: pointwise {pointwise.shape} vs bias {bias.shape}")
    return relu(depthwise_conv1d(x, depthwise_kernel) @ pointwise + bias)


def pooling_matrix(length: int, window: int, stride: int, padding: str = "same") -> np.ndarray:
    """Row-stochastic ``[L', L]`` matrix for 1-D average pooling.

    With ``same`` padding the pad cells are excluded from the average.
    """
    if window < 1 or stride < 1:
        raise ContractError(f"pooling window/stride must be >= 1, got {window}/{stride}")
    if padding == "same":
        left = (window - 1) // 2
        out_len = -(-length // stride)
        starts = [i * stride - left for i in range(out_len)]
    elif padding == "none":
        if window > length:
            raise DimensionError(f"avgpool1d: window {window} exceeds length {length} without padding")
        out_len = (length - window) // stride + 1
        starts = [i * stride for i in range(out_len)]
    else:
        raise ContractError(f"unknown padding {padding!r}")
    m = np.zeros((out_len, length))
    for row, s in enumerate(starts):
        lo, hi = max(s, 0), min(s + window, length)
        m[row, lo:hi] = 1.0 / (hi - lo)
    return m


def avgpool1d(x: Tensor, window: int, stride: int, padding: str = "same") -> Tensor:
    """Per-channel sliding mean along axis -2 of ``[..., L, C]``."""
    if x.ndim < 2:
        raise DimensionError(f"avgpool1d: need [..., L, C], got {x.shape}")
    return linear_along(x, pooling_matrix(x.shape[-2], window, stride, padding), axis=-2)


def conv2d(x: Tensor, weight: Tensor, stride: int = 1) -> Tensor:
    """3x3 convolution, zero padding 1, on ``[N, H, W, Cin]`` with ``[3, 3, Cin, Cout]`` weights."""
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[:2] != (3, 3) or weight.shape[2] != x.shape[3]:
        raise DimensionError(f"conv2d: input {x.shape} vs weight {weight.shape}")
    n, h, w, cin = x.shape
    cout = weight.shape[3]
    ho, wo = (h - 1) // stride + 1, (w - 1) // stride + 1
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    windows = [
        (i, j, (slice(None), slice(i, i + stride * (ho - 1) + 1, stride), slice(j, j + stride * (wo - 1) + 1, stride)))
        for i in range(3)
        for j in range(3)
    ]
    cols = np.stack([xp[sl] for _, _, sl in windows], axis=3).reshape(n, ho, wo, 9 * cin)
    w2 = weight.data.reshape(9 * cin, cout)
    y = cols @ w2

    def bw(g):
        gw = (cols.reshape(-1, 9 * cin).T @ g.reshape(-1, cout)).reshape(weight.shape)
        gcols = (g @ w2.T).reshape(n, ho, wo, 9, cin)
        gxp = np.zeros_like(xp)
        for idx, (_, _, sl) in enumerate(windows):
            gxp[sl] += gcols[:, :, :, idx, :]
        return gxp[:, 1:-1, 1:-1, :], gw

    return _node(y, (x, weight), bw)


def bin_max(x: Tensor, bins: Iterable[np.ndarray]) -> Tensor:
    """Max over each index set of axis -2; output ``[..., len(bins), C]``."""
    bins = [np.asarray(b, dtype=np.intp) for b in bins]
    picks = []
    for b in bins:
        sub = x.data[..., b, :]
        arg = sub.argmax(axis=-2)
        picks.append(b[arg])
    src = np.stack(picks, axis=-2)  # [..., B, C] indices into axis -2
    y = np.take_along_axis(x.data, src, axis=-2)

    def bw(g):
        full = np.zeros_like(x.data)
        lead = np.indices(src.shape)
        index = tuple(lead[:-2]) + (src, lead[-1])
        np.add.at(full, index, g)
        return (full,)

    return _node(y, (x,), bw)
