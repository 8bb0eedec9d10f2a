"""Dense float64 tensors with a reverse-mode gradient tape.

Operations only build a graph while a :class:`Tape` is active and at least one
input requires a gradient; everywhere else they are plain numpy evaluations.

    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> tape.backward(loss)[x]
    array([2., 4., 6.])
"""

from __future__ import annotations

import threading
import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "record",
    "as_tensor",
    "matmul",
    "softmax",
    "conv2d",
    "conv2d_transpose",
    "layer_norm",
    "leaky_relu",
    "softplus",
    "sigmoid",
    "exp",
    "log",
    "absolute",
]

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Immutable dense array of 64-bit floats.

    Parameters
    ----------
    data : array_like
        Values; copied and frozen.
    requires_grad : bool
        Whether :func:`backward` should deliver a gradient for this tensor.
    name : str, optional
        Label used by checkpoints and error messages.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: _Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # skips the defensive copy for freshly computed arrays
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis, keepdims)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def abs(self) -> "Tensor":
        return absolute(self)

    def argmax(self, axis: int = -1) -> np.ndarray:
        """Index of the maximum along ``axis`` (lowest index on ties); not differentiable."""
        return np.argmax(self.data, axis=axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


@dataclass(eq=False)
class _Node:
    kind: str
    # weak, so a tensor and its node do not form a reference cycle
    out: "weakref.ref[Tensor]"
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass(eq=False)
class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so inputs always precede the
    nodes that consume them. A tape belongs to a single thread.
    """

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        return backward(self, loss)

    def leaves(self) -> list[Tensor]:
        seen: dict[int, Tensor] = {}
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and t._node is None:
                    seen.setdefault(id(t), t)
        return list(seen.values())

    def zero_grad(self) -> None:
        for leaf in self.leaves():
            leaf.grad = None


def record(kind: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``out`` as a tensor and, when needed, register it on the active tape.

    ``backward_fn`` maps the output gradient to a sequence with one gradient
    (or ``None``) per entry of ``inputs``.
    """
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    t = Tensor._wrap(out, needs)
    if needs:
        node = _Node(kind, weakref.ref(t), tuple(inputs), backward_fn)
        t._node = node
        tape.nodes.append(node)
    return t


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(.) to every leaf that requires a gradient.

    Leaf gradients are accumulated into ``leaf.grad`` (repeated calls add
    up until :meth:`Tape.zero_grad`). Returns the gradients computed by this
    call keyed by leaf tensor.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad and loss._node is None:
        leaves[id(loss)] = loss
    for node in reversed(tape.nodes):
        out = node.out()
        g = None if out is None else grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if ig.shape != inp.shape:
                raise DimensionError(
                    f"{node.kind}: gradient shape {ig.shape} != input shape {inp.shape}"
                )
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
            if inp._node is None:
                leaves[key] = inp
    result: dict[Tensor, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        result[leaf] = g
    return result


# ---------------------------------------------------------------------------
# elementwise


def _check_binary(a: np.ndarray, b: np.ndarray) -> None:
    # equal shapes, scalars, or one shape a trailing suffix of the other
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    short, long_ = (a, b) if a.ndim < b.ndim else (b, a)
    if short.ndim < long_.ndim and long_.shape[long_.ndim - short.ndim:] == short.shape:
        return
    raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a.data, b.data)
    sa, sb = a.shape, b.shape
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a.data, b.data)
    sa, sb = a.shape, b.shape
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a.data, b.data)
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b),
                  lambda g: (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a.data, b.data)
    ad, bd = a.data, b.data
    out = ad / bd
    return record("div", out, (a, b),
                  lambda g: (_reduce_to(g / bd, ad.shape),
                             _reduce_to(-g * out / bd, bd.shape)))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return record("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise NumericError("log of a non-positive value")
    return record("log", np.log(xd), (x,), lambda g: (g / xd,))


def absolute(x: Tensor) -> Tensor:
    xd = x.data
    # subgradient sign(0) = 0
    return record("abs", np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    scale = np.where(xd > 0, 1.0, slope)
    return record("leaky_relu", xd * scale, (x,), lambda g: (g * scale,))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    return record("softplus", np.logaddexp(0.0, xd), (x,), lambda g: (g * expit(xd),))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


# ---------------------------------------------------------------------------
# shape and reductions


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return record("reshape", out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(int(a) % x.ndim for a in axes)
    inv = tuple(np.argsort(axes))
    return record("transpose", x.data.transpose(axes), (x,),
                  lambda g: (g.transpose(inv),))


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    src = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src).copy(),)

    return record("sum", out, (x,), bw)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(tsum(x, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes; ``b`` is either a single matrix shared
    across the batch or has exactly ``a``'s batch axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if bd.ndim > 2 and bd.shape[:-2] != ad.shape[:-2]:
        raise DimensionError(f"matmul batch extents differ: {a.shape} @ {b.shape}")
    out = ad @ bd

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            k = ad.shape[-1]
            gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return record("matmul", out, (a, b), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    if not np.all(np.isfinite(xd)):
        raise NumericError("softmax input contains non-finite values")
    z = np.exp(xd - xd.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data
    n = xd.shape[-1]

    def bw(g):
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).sum(axis=-1, keepdims=True) / n)
        flat = g.reshape(-1, n)
        return gx, (flat * xhat.reshape(-1, n)).sum(0), flat.sum(0)

    return record("layer_norm", out, (x, gain, bias), bw)


# ---------------------------------------------------------------------------
# convolution


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _to_padded_nhwc(x: np.ndarray, pad: int) -> np.ndarray:
    b, c, h, w = x.shape
    out = np.zeros((b, h + 2 * pad, w + 2 * pad, c))
    out[:, pad : pad + h, pad : pad + w, :] = x.transpose(0, 2, 3, 1)
    return out


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Padded NHWC (B,Hp,Wp,C) -> (B*Ho*Wo, K*K*C) patch matrix, taps outermost."""
    b, _, _, c = xp.shape
    cols = np.empty((b, ho, wo, k, k, c))
    he, we = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i : i + he : stride, j : j + we : stride, :]
    return cols.reshape(b * ho * wo, k * k * c)


def _col2im(cols: np.ndarray, shape, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add adjoint of :func:`_im2col` into a zero NHWC array of ``shape``."""
    b, _, _, c = shape
    out = np.zeros(shape)
    cols = cols.reshape(b, ho, wo, k, k, c)
    he, we = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            out[:, i : i + he : stride, j : j + we : stride, :] += cols[:, :, :, i, j, :]
    return out


def _kernel_matrix(kernel: np.ndarray) -> np.ndarray:
    # (O, C, K, K) -> (O, K*K*C) matching the tap-major patch layout
    o = kernel.shape[0]
    return kernel.transpose(0, 2, 3, 1).reshape(o, -1)


def _kernel_from_matrix(mat: np.ndarray, shape) -> np.ndarray:
    o, c, k, _ = shape
    return mat.reshape(o, k, k, c).transpose(0, 3, 1, 2)


def _check_conv_args(x, kernel, stride, pad):
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv expects 4-d input and kernel, got {x.shape}, {kernel.shape}")
    if kernel.shape[2] != kernel.shape[3]:
        raise DimensionError("only square kernels are supported")
    if stride < 1 or pad < 0:
        raise ContractError(f"invalid stride={stride} / pad={pad}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (B,C,H,W) with ``kernel`` (O,C,K,K)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv_args(x, kernel, stride, pad)
    b, c, h, w = x.shape
    o, ck, k, _ = kernel.shape
    if ck != c:
        raise DimensionError(f"kernel expects {ck} input channels, got {c}")
    if k > h + 2 * pad or k > w + 2 * pad:
        raise DimensionError(f"kernel {k} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    ho, wo = _conv_out(h, k, stride, pad), _conv_out(w, k, stride, pad)
    xp = _to_padded_nhwc(x.data, pad)
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = _kernel_matrix(kernel.data)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(b, ho, wo, o).transpose(0, 3, 1, 2)
    padded_shape = xp.shape
    kshape = kernel.shape

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = _kernel_from_matrix(g2.T @ cols, kshape)
        gxp = _col2im(g2 @ wmat, padded_shape, k, stride, ho, wo)
        gx = gxp[:, pad : pad + h, pad : pad + w, :].transpose(0, 3, 1, 2)
        gb = g2.sum(0) if bias is not None else None
        return gx, gw, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d", out, inputs, lambda g: bw(g)[: len(inputs)])


def conv2d_transpose(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
                     stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`; ``kernel`` is laid out (C_in, C_out, K, K).

    Output extent is ``(H - 1) * stride - 2 * pad + K``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv_args(x, kernel, stride, pad)
    b, c, h, w = x.shape
    ck, o, k, _ = kernel.shape
    if ck != c:
        raise DimensionError(f"kernel expects {ck} input channels, got {c}")
    hf, wf = (h - 1) * stride + k, (w - 1) * stride + k
    ho, wo = hf - 2 * pad, wf - 2 * pad
    if ho < 1 or wo < 1:
        raise DimensionError(f"padding {pad} leaves no output for kernel {k}")
    x2 = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    # viewed as a conv2d kernel (C_in, C_out, K, K) -> (C_in, K*K*C_out)
    wmat = _kernel_matrix(kernel.data)
    full = _col2im(x2 @ wmat, (b, hf, wf, o), k, stride, h, w)
    out = full[:, pad : pad + ho, pad : pad + wo, :]
    if bias is not None:
        out = out + bias.data
    out = out.transpose(0, 3, 1, 2)
    kshape = kernel.shape

    def bw(g):
        gfull = _to_padded_nhwc(g, pad)
        gcols = _im2col(gfull, k, stride, h, w)
        gx = (gcols @ wmat.T).reshape(b, h, w, c).transpose(0, 3, 1, 2)
        gw = _kernel_from_matrix(x2.T @ gcols, kshape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d_transpose", out, inputs, lambda g: bw(g)[: len(inputs)])
