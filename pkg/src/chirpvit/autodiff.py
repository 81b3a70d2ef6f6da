"""Small reverse-mode automatic differentiation engine on numpy arrays.

A :class:`Tensor` wraps an ndarray plus an optional gradient and a closure
that routes incoming gradients to its parents.  Calling ``backward()`` on a
scalar-valued tensor walks the recorded graph in reverse topological order
and accumulates ``grad`` on every tensor that requires it.  Graphs are only
recorded when some input requires a gradient, so pure inference carries no
bookkeeping.

The op set is exactly what the transformer needs: broadcasting arithmetic,
matmul, axis swaps and reshapes, row concatenation, softmax over the last
axis, GeLU / ReLU / tanh, layer normalization (without affine parameters;
scale and shift are expressed with ordinary mul/add so they get gradients
for free), reductions, and basic slicing.

Every forward result and every gradient is checked for NaN/Inf and a
``NumericError`` pinpoints the op that produced the first bad value.

A module-wide default dtype selects float32 (training) or float64
(verification against finite differences); set it with
:func:`set_default_dtype`.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from .errors import NumericError, ShapeError

_default_dtype = np.float32
_grad_enabled = True
_pass_sink = None  # set while a backward pass runs; receives (tensor, grad)


@contextmanager
def no_grad():
    """Suspend graph recording; forwards inside run as plain array math."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev

# builtin floats so numpy's weak scalar promotion keeps the array dtype
_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def set_default_dtype(dtype) -> None:
    """Switch the dtype used for new tensors (np.float32 or np.float64)."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ShapeError(f"unsupported dtype {dtype}, use float32 or float64")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


def _check(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {op}")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast up from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_default_dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ---- graph construction -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, op: str, parents: tuple, backward_fn):
        _check(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward_fn
        else:
            out._parents = ()
            out._backward = None
        return out

    def _accumulate(self, grad: np.ndarray, op: str) -> None:
        """Route a gradient contribution to this tensor.

        During a backward pass contributions go to the pass-local sink so a
        second ``backward()`` cannot re-propagate last pass's residue; outside
        a pass (manual seeding) they land on ``grad`` directly.
        """
        _check(grad, op + " backward")
        if _pass_sink is not None:
            _pass_sink(self, grad)
        elif self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    # ---- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = float(other)  # demote numpy scalars, keeping array dtype
            def bwd(g, a=self):
                a._accumulate(g, "add")
            return Tensor._result(self.data + other, "add", (self,), bwd)
        out_data = self.data + other.data
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape), "add")
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape), "add")
        return Tensor._result(out_data, "add", (self, other), bwd)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = float(other)
            def bwd(g, a=self):
                a._accumulate(g, "sub")
            return Tensor._result(self.data - other, "sub", (self,), bwd)
        out_data = self.data - other.data
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape), "sub")
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.data.shape), "sub")
        return Tensor._result(out_data, "sub", (self, other), bwd)

    def __rsub__(self, other):
        other = float(other)
        def bwd(g, a=self):
            a._accumulate(-g, "rsub")
        return Tensor._result(other - self.data, "rsub", (self,), bwd)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            other = float(other)
            def bwd(g, a=self, c=other):
                a._accumulate(g * c, "mul")
            return Tensor._result(self.data * other, "mul", (self,), bwd)
        out_data = self.data * other.data
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape), "mul")
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape), "mul")
        return Tensor._result(out_data, "mul", (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise ShapeError("tensor division is only supported by scalars")
        return self * (1.0 / other)

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ShapeError(
                f"matmul needs >= 2-D operands, got {a.data.shape} @ {b.data.shape}")
        out_data = np.matmul(a.data, b.data)
        def bwd(g, a=a, b=b):
            if a.requires_grad:
                ga = np.matmul(g, b.data.swapaxes(-1, -2))
                a._accumulate(_unbroadcast(ga, a.data.shape), "matmul")
            if b.requires_grad:
                gb = np.matmul(a.data.swapaxes(-1, -2), g)
                b._accumulate(_unbroadcast(gb, b.data.shape), "matmul")
        return Tensor._result(out_data, "matmul", (a, b), bwd)

    # ---- shape ops ----------------------------------------------------------

    def transpose(self, axis1: int = -2, axis2: int = -1):
        out_data = self.data.swapaxes(axis1, axis2)
        def bwd(g, a=self, i=axis1, j=axis2):
            a._accumulate(g.swapaxes(i, j), "transpose")
        return Tensor._result(out_data, "transpose", (self,), bwd)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        def bwd(g, a=self):
            a._accumulate(g.reshape(a.data.shape), "reshape")
        return Tensor._result(out_data, "reshape", (self,), bwd)

    def broadcast_to(self, shape):
        out_data = np.broadcast_to(self.data, shape).copy()
        def bwd(g, a=self):
            a._accumulate(_unbroadcast(g, a.data.shape), "broadcast_to")
        return Tensor._result(out_data, "broadcast_to", (self,), bwd)

    def __getitem__(self, idx):
        out_data = self.data[idx]
        if not isinstance(out_data, np.ndarray):
            out_data = np.asarray(out_data)
        else:
            out_data = out_data.copy()
        def bwd(g, a=self, idx=idx):
            full = np.zeros_like(a.data)
            full[idx] += g
            a._accumulate(full, "slice")
        return Tensor._result(out_data, "slice", (self,), bwd)

    # ---- reductions ---------------------------------------------------------

    def sum(self, axis=None):
        out_data = self.data.sum(axis=axis)
        if not isinstance(out_data, np.ndarray):
            out_data = np.asarray(out_data)
        def bwd(g, a=self, axis=axis):
            if axis is None:
                grad = np.broadcast_to(g, a.data.shape)
            else:
                grad = np.broadcast_to(np.expand_dims(g, axis), a.data.shape)
            a._accumulate(np.ascontiguousarray(grad), "sum")
        return Tensor._result(out_data, "sum", (self,), bwd)

    def mean(self, axis=None):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / count)

    # ---- nonlinearities -----------------------------------------------------

    def relu(self):
        out_data = np.maximum(self.data, 0.0)
        def bwd(g, a=self):
            a._accumulate(g * (a.data > 0.0), "relu")
        return Tensor._result(out_data, "relu", (self,), bwd)

    def tanh(self):
        out_data = np.tanh(self.data)
        def bwd(g, a=self, y=out_data):
            a._accumulate(g * (1.0 - y * y), "tanh")
        return Tensor._result(out_data, "tanh", (self,), bwd)

    def gelu(self):
        """Exact Gaussian-error-function form, 0.5 x (1 + erf(x / sqrt 2))."""
        x = self.data
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        out_data = x * cdf
        def bwd(g, a=self, cdf=cdf):
            x = a.data
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
            a._accumulate(g * (cdf + x * pdf), "gelu")
        return Tensor._result(out_data, "gelu", (self,), bwd)

    def softmax_lastdim(self):
        z = self.data - self.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        out_data = e / e.sum(axis=-1, keepdims=True)
        def bwd(g, a=self, y=out_data):
            inner = (g * y).sum(axis=-1, keepdims=True)
            a._accumulate(y * (g - inner), "softmax")
        return Tensor._result(out_data, "softmax", (self,), bwd)

    def layer_norm(self, eps: float = 1e-5):
        """Zero-mean unit-variance over the last axis; no learned affine here."""
        x = self.data
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        y = (x - mu) * inv
        def bwd(g, a=self, y=y, inv=inv):
            gm = g.mean(axis=-1, keepdims=True)
            gym = (g * y).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (g - gm - y * gym), "layer_norm")
        return Tensor._result(y, "layer_norm", (self,), bwd)

    # ---- backward pass ------------------------------------------------------

    def backward(self) -> None:
        """Reverse-accumulate gradients from this scalar into the graph.

        Calling it twice adds a second unit seed, so every ``grad`` in the
        graph accumulates; clear grads between passes if that is not wanted.
        """
        global _pass_sink
        if self.data.size != 1:
            raise ShapeError(
                f"backward() needs a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ShapeError("backward() on a tensor that requires no gradient")

        order = []
        seen = set()
        stack = [(self, False)]
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

        pass_grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}

        def sink(node, grad):
            prev = pass_grads.get(id(node))
            pass_grads[id(node)] = grad if prev is None else prev + grad

        _pass_sink = sink
        try:
            # reversed topological order: every consumer of a node runs first,
            # so its pass gradient is complete when we reach it
            for node in reversed(order):
                g = pass_grads.get(id(node))
                if g is None:
                    continue
                if node.grad is None:
                    node.grad = g.astype(node.data.dtype, copy=True)
                else:
                    node.grad = node.grad + g
                if node._backward is not None:
                    node._backward(g)
        finally:
            _pass_sink = None


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the second-to-last axis (token/row dimension)."""
    if a.data.shape[:-2] != b.data.shape[:-2] or a.data.shape[-1] != b.data.shape[-1]:
        raise ShapeError(
            f"concat_rows shapes {a.data.shape} and {b.data.shape} are incompatible")
    out_data = np.concatenate([a.data, b.data], axis=-2)
    na = a.data.shape[-2]
    def bwd(g, a=a, b=b, na=na):
        if a.requires_grad:
            a._accumulate(g[..., :na, :], "concat_rows")
        if b.requires_grad:
            b._accumulate(g[..., na:, :], "concat_rows")
    return Tensor._result(out_data, "concat_rows", (a, b), bwd)
