"""Dense tensor engine with reverse-mode automatic differentiation.

Design:

* Values are numpy arrays, float32 by default (float64 available through the
  ``default_dtype`` context for high-precision gradient verification).
* Each differentiable operation records its parents and a backward closure on
  the output tensor; ``backward()`` on a scalar loss topologically sorts the
  recorded graph and visits every node exactly once. The graph is rebuilt on
  every forward pass and consumed by backward.
* Shapes are checked eagerly at every op. There is no implicit broadcasting
  except tensor-with-scalar; mismatches raise ``ShapeError``.
* Every op verifies its output is finite. NaN/Inf raises ``NonFiniteError``
  instead of propagating silently.

Convolutions run internally in NHWC layout (channels last) because the
shift-and-accumulate GEMM formulation is markedly faster there on CPU; the
NCHW entry points wrap the NHWC core with differentiable permutes.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """Backward-pass misuse: non-scalar root, consumed graph, missing graph."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


_state = threading.local()


def _grad_on() -> bool:
    return getattr(_state, "grad_enabled", True)


def _default_dtype():
    return getattr(_state, "dtype", np.float32)


@contextmanager
def no_grad():
    """Disable graph recording in this thread for the duration."""
    prev = _grad_on()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextmanager
def default_dtype(dtype):
    """Set the dtype used for newly created tensors (f32 or f64)."""
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    prev = _default_dtype()
    _state.dtype = dtype.type
    try:
        yield
    finally:
        _state.dtype = prev


def _ensure_finite(arr: np.ndarray, op: str) -> None:
    # Single f64 reduction instead of isfinite().all(): any NaN poisons the
    # sum, any Inf survives it, and f32 inputs cannot overflow an f64 sum.
    if not math.isfinite(float(np.sum(arr, dtype=np.float64))):
        raise NonFiniteError(f"non-finite values produced by '{op}'")


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


class Tensor:
    """N-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _default_dtype())
        _ensure_finite(arr, "tensor")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._consumed = False

    # ---- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # ---- graph plumbing -----------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode pass from a scalar root.

        Populates ``grad`` on every reachable tensor with ``requires_grad``
        and consumes the graph; a second call on the same root raises.
        """
        if self._consumed:
            raise GraphError("graph already consumed; re-run the forward pass")
        if self.data.shape != ():
            raise GraphError(f"backward requires a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise GraphError("root does not require grad; nothing to differentiate")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                # Intermediate grads are not user-visible; free them and the
                # graph edges as we go so backward can only run once.
                node.grad = None if node is not self else node.grad
                node._parents = ()
                node._backward = None
        self._consumed = True


def _node(data: np.ndarray, op: str, parents: tuple, backward) -> Tensor:
    _ensure_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._consumed = False
    if _grad_on() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _as_scalar(x) -> float | None:
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return float(x)
    return None


# ---- elementwise arithmetic -------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        out_data = a.data + a.data.dtype.type(s)

        def bw(g):
            a._accumulate(g)

        return _node(out_data, "add", (a,), bw)
    _require(a.shape == b.shape, f"add: shape mismatch {a.shape} vs {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _node(a.data + b.data, "add", (a, b), bw)


def sub(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        def bw(g):
            a._accumulate(g)

        return _node(a.data - a.data.dtype.type(s), "sub", (a,), bw)
    _require(a.shape == b.shape, f"sub: shape mismatch {a.shape} vs {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _node(a.data - b.data, "sub", (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        c = a.data.dtype.type(s)

        def bw(g):
            a._accumulate(g * c)

        return _node(a.data * c, "mul", (a,), bw)
    _require(a.shape == b.shape, f"mul: shape mismatch {a.shape} vs {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _node(a.data * b.data, "mul", (a, b), bw)


def div(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        if abs(s) < 1e-12:
            raise ZeroDivisionError("div: scalar divisor below 1e-12")
        c = a.data.dtype.type(s)

        def bw(g):
            a._accumulate(g / c)

        return _node(a.data / c, "div", (a,), bw)
    _require(a.shape == b.shape, f"div: shape mismatch {a.shape} vs {b.shape}")
    if np.any(np.abs(b.data) < 1e-12):
        raise ZeroDivisionError("div: divisor element below 1e-12 in magnitude")
    inv = 1.0 / b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * inv)
        if b.requires_grad:
            b._accumulate(-g * a.data * inv * inv)

    return _node(a.data * inv, "div", (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(-g)

    return _node(-a.data, "neg", (a,), bw)


Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(self, other)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: add(neg(self), other)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(self, other)
Tensor.__truediv__ = lambda self, other: div(self, other)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)


# ---- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.ndim == 2 and b.data.ndim == 2,
             f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    _require(a.shape[1] == b.shape[0],
             f"matmul: inner dims differ, {a.shape} vs {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(a.data @ b.data, "matmul", (a, b), bw)


# ---- shape manipulation -------------------------------------------------------


def reshape(a: Tensor, shape: tuple) -> Tensor:
    _require(int(np.prod(shape)) == a.data.size,
             f"reshape: cannot view {a.shape} as {shape}")
    orig = a.shape

    def bw(g):
        a._accumulate(g.reshape(orig))

    return _node(a.data.reshape(shape), "reshape", (a,), bw)


def permute(a: Tensor, axes: tuple) -> Tensor:
    inv = np.argsort(axes)

    def bw(g):
        a._accumulate(np.ascontiguousarray(g.transpose(inv)))

    return _node(np.ascontiguousarray(a.data.transpose(axes)), "permute", (a,), bw)


def concat_last(parts: list[Tensor]) -> Tensor:
    base = parts[0].shape[:-1]
    for p in parts[1:]:
        _require(p.shape[:-1] == base,
                 f"concat_last: leading dims differ, {p.shape} vs {parts[0].shape}")
    widths = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(np.ascontiguousarray(g[..., lo:hi]))

    return _node(np.concatenate([p.data for p in parts], axis=-1),
                 "concat_last", tuple(parts), bw)


def tile_time(a: Tensor, t: int) -> Tensor:
    """(B, H, W, C) -> (B, T, H, W, C), repeating along a new frame axis."""
    _require(a.data.ndim == 4, f"tile_time: expected 4-D input, got {a.shape}")

    def bw(g):
        a._accumulate(g.sum(axis=1))

    return _node(np.repeat(a.data[:, None], t, axis=1), "tile_time", (a,), bw)


def tile_rows(a: Tensor, t: int) -> Tensor:
    """(B, C) -> (B*T, C), each row repeated T times consecutively."""
    _require(a.data.ndim == 2, f"tile_rows: expected 2-D input, got {a.shape}")
    b, c = a.shape

    def bw(g):
        a._accumulate(g.reshape(b, t, c).sum(axis=1))

    return _node(np.repeat(a.data, t, axis=0), "tile_rows", (a,), bw)


def add_rowwise_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-row channel bias: x (N, ..., C) + b (N, C)."""
    _require(x.data.ndim >= 2 and b.data.ndim == 2,
             f"add_rowwise_bias: bad ranks {x.shape}, {b.shape}")
    _require(x.shape[0] == b.shape[0] and x.shape[-1] == b.shape[-1],
             f"add_rowwise_bias: {x.shape} vs {b.shape}")
    expand = (slice(None),) + (None,) * (x.data.ndim - 2) + (slice(None),)
    mid_axes = tuple(range(1, x.data.ndim - 1))

    def bw(g):
        if x.requires_grad:
            x._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=mid_axes) if mid_axes else g.copy())

    return _node(x.data + b.data[expand], "add_rowwise_bias", (x, b), bw)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a shared channel bias: x (..., C) + b (C,)."""
    _require(b.data.ndim == 1 and x.shape[-1] == b.shape[0],
             f"add_channel_bias: {x.shape} vs {b.shape}")
    lead = tuple(range(x.data.ndim - 1))

    def bw(g):
        if x.requires_grad:
            x._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=lead) if lead else g.copy())

    return _node(x.data + b.data, "add_channel_bias", (x, b), bw)


# ---- reductions and activations ----------------------------------------------


def sum_(a: Tensor) -> Tensor:
    shape = a.shape

    def bw(g):
        a._accumulate(np.full(shape, g, dtype=a.data.dtype))

    return _node(np.asarray(a.data.sum(), dtype=a.data.dtype), "sum", (a,), bw)


def mean_(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.shape

    def bw(g):
        a._accumulate(np.full(shape, g / n, dtype=a.data.dtype))

    return _node(np.asarray(a.data.mean(), dtype=a.data.dtype), "mean", (a,), bw)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    _require(a.shape == b.shape, f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def bw(g):
        scale = 2.0 * g / n
        if a.requires_grad:
            a._accumulate(scale * diff)
        if b.requires_grad:
            b._accumulate(-scale * diff)

    return _node(np.asarray(np.mean(diff * diff), dtype=a.data.dtype), "mse", (a, b), bw)


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        a._accumulate(g * sig * (1.0 + a.data * (1.0 - sig)))

    return _node(a.data * sig, "silu", (a,), bw)


def detach(a: Tensor) -> Tensor:
    """Value-identical tensor that blocks gradient flow (stop-gradient)."""
    out = Tensor.__new__(Tensor)
    out.data = a.data
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out._consumed = False
    return out


# ---- normalization -------------------------------------------------------------


def group_norm_nhwc(x: Tensor, groups: int, gamma: Tensor | None = None,
                    beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Group normalization over (N, H, W, C) with optional per-channel affine."""
    _require(x.data.ndim == 4, f"group_norm: expected 4-D input, got {x.shape}")
    n, h, w, c = x.shape
    _require(groups >= 1 and c % groups == 0,
             f"group_norm: channels {c} not divisible by groups {groups}")
    cg = c // groups
    x5 = x.data.reshape(n, h, w, groups, cg)
    mu = x5.mean(axis=(1, 2, 4), keepdims=True)
    var = x5.var(axis=(1, 2, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat5 = (x5 - mu) * inv
    xhat = xhat5.reshape(n, h, w, c)
    if gamma is not None:
        _require(gamma.shape == (c,) and beta is not None and beta.shape == (c,),
                 "group_norm: affine parameters must have shape (C,)")
        out_data = xhat * gamma.data + beta.data
    else:
        out_data = xhat
    parents = (x,) if gamma is None else (x, gamma, beta)

    def bw(g):
        if gamma is not None:
            if gamma.requires_grad:
                gamma._accumulate((g * xhat).sum(axis=(0, 1, 2)))
            if beta.requires_grad:
                beta._accumulate(g.sum(axis=(0, 1, 2)))
            dxhat = g * gamma.data
        else:
            dxhat = g
        if x.requires_grad:
            d5 = dxhat.reshape(n, h, w, groups, cg)
            mean_d = d5.mean(axis=(1, 2, 4), keepdims=True)
            mean_dx = (d5 * xhat5).mean(axis=(1, 2, 4), keepdims=True)
            dx5 = inv * (d5 - mean_d - xhat5 * mean_dx)
            x._accumulate(dx5.reshape(n, h, w, c))

    return _node(out_data, "group_norm", parents, bw)


def group_norm(x: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Group normalization for NCHW input, (C, H, W) or (N, C, H, W)."""
    if x.data.ndim == 3:
        return reshape(group_norm(reshape(x, (1,) + x.shape), groups, eps), x.shape)
    _require(x.data.ndim == 4, f"group_norm: expected 3-D or 4-D input, got {x.shape}")
    y = group_norm_nhwc(permute(x, (0, 2, 3, 1)), groups, eps=eps)
    return permute(y, (0, 3, 1, 2))


# ---- convolution ----------------------------------------------------------------


def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    _require(span >= 0, f"conv: kernel {k} larger than padded input {size + 2 * pad}")
    _require(span % stride == 0,
             f"conv: output size not integral (in={size}, k={k}, stride={stride}, pad={pad})")
    return span // stride + 1


def conv2d_nhwc(x: Tensor, w: Tensor, bias: Tensor | None = None,
                stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation on (N, H, W, Cin) with kernel (k, k, Cin, Cout).

    Zero padding. Implemented as k*k shifted GEMMs, which is the fastest
    formulation for small kernels with BLAS on CPU.
    """
    _require(x.data.ndim == 4, f"conv2d_nhwc: expected 4-D input, got {x.shape}")
    _require(w.data.ndim == 4, f"conv2d_nhwc: expected 4-D kernel, got {w.shape}")
    n, h, wd, cin = x.shape
    k, k2, wcin, cout = w.shape
    _require(k == k2, f"conv2d_nhwc: kernel must be square, got {w.shape}")
    _require(k % 2 == 1, f"conv2d_nhwc: kernel size must be odd, got {k}")
    _require(wcin == cin, f"conv2d_nhwc: channel mismatch, input {cin} vs kernel {wcin}")
    _require(pad >= 0, "conv2d_nhwc: pad must be >= 0")
    _require(stride >= 1, "conv2d_nhwc: stride must be >= 1")
    if bias is not None:
        _require(bias.shape == (cout,), f"conv2d_nhwc: bias shape {bias.shape} != ({cout},)")
    ho = _conv_out_size(h, k, stride, pad)
    wo = _conv_out_size(wd, k, stride, pad)

    if pad:
        xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    else:
        xp = x.data
    out = np.zeros((n, ho, wo, cout), dtype=x.data.dtype)
    of = out.reshape(-1, cout)
    hi_h = stride * (ho - 1) + 1
    hi_w = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            sl = np.ascontiguousarray(xp[:, i:i + hi_h:stride, j:j + hi_w:stride, :])
            of += sl.reshape(-1, cin) @ w.data[i, j]
    if bias is not None:
        out += bias.data

    def bw(g):
        gf = np.ascontiguousarray(g).reshape(-1, cout)
        if bias is not None and bias.requires_grad:
            bias._accumulate(gf.sum(axis=0))
        need_x = x.requires_grad
        need_w = w.requires_grad
        gxp = np.zeros_like(xp) if need_x else None
        gw = np.zeros_like(w.data) if need_w else None
        for i in range(k):
            for j in range(k):
                if need_w:
                    sl = np.ascontiguousarray(
                        xp[:, i:i + hi_h:stride, j:j + hi_w:stride, :]).reshape(-1, cin)
                    gw[i, j] = sl.T @ gf
                if need_x:
                    contrib = (gf @ w.data[i, j].T).reshape(n, ho, wo, cin)
                    gxp[:, i:i + hi_h:stride, j:j + hi_w:stride, :] += contrib
        if need_w:
            w._accumulate(gw)
        if need_x:
            gx = gxp[:, pad:pad + h, pad:pad + wd, :] if pad else gxp
            x._accumulate(np.ascontiguousarray(gx))

    parents = (x, w) if bias is None else (x, w, bias)
    return _node(out, "conv2d", parents, bw)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0,
           bias: Tensor | None = None) -> Tensor:
    """Cross-correlation in NCHW layout.

    x is (Cin, H, W) or (N, Cin, H, W); w is (Cout, Cin, k, k). Output spatial
    size must be integral; zero padding.
    """
    squeeze = x.data.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    _require(x.data.ndim == 4, f"conv2d: expected 3-D or 4-D input, got {x.shape}")
    _require(w.data.ndim == 4, f"conv2d: expected 4-D kernel, got {w.shape}")
    xt = permute(x, (0, 2, 3, 1))
    wt = permute(w, (2, 3, 1, 0))
    y = conv2d_nhwc(xt, wt, bias=bias, stride=stride, pad=pad)
    y = permute(y, (0, 3, 1, 2))
    if squeeze:
        y = reshape(y, y.shape[1:])
    return y


def temporal_conv(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """1-D convolution over the frame axis of (B, T, H, W, Cin).

    Kernel is (k, Cin, Cout) with odd k; zero padding keeps T unchanged.
    Mixes information across frames at every pixel.
    """
    _require(x.data.ndim == 5, f"temporal_conv: expected 5-D input, got {x.shape}")
    _require(w.data.ndim == 3, f"temporal_conv: expected 3-D kernel, got {w.shape}")
    b, t, h, wd, cin = x.shape
    k, wcin, cout = w.shape
    _require(k % 2 == 1, f"temporal_conv: kernel size must be odd, got {k}")
    _require(wcin == cin, f"temporal_conv: channel mismatch {cin} vs {wcin}")
    if bias is not None:
        _require(bias.shape == (cout,), f"temporal_conv: bias shape {bias.shape}")
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0), (0, 0), (0, 0)))
    out = np.zeros((b, t, h, wd, cout), dtype=x.data.dtype)
    of = out.reshape(-1, cout)
    for i in range(k):
        sl = np.ascontiguousarray(xp[:, i:i + t])
        of += sl.reshape(-1, cin) @ w.data[i]
    if bias is not None:
        out += bias.data

    def bw(g):
        gf = np.ascontiguousarray(g).reshape(-1, cout)
        if bias is not None and bias.requires_grad:
            bias._accumulate(gf.sum(axis=0))
        need_x = x.requires_grad
        gxp = np.zeros_like(xp) if need_x else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for i in range(k):
            if gw is not None:
                sl = np.ascontiguousarray(xp[:, i:i + t]).reshape(-1, cin)
                gw[i] = sl.T @ gf
            if need_x:
                gxp[:, i:i + t] += (gf @ w.data[i].T).reshape(b, t, h, wd, cin)
        if gw is not None:
            w._accumulate(gw)
        if need_x:
            x._accumulate(np.ascontiguousarray(gxp[:, pad:pad + t]))

    parents = (x, w) if bias is None else (x, w, bias)
    return _node(out, "temporal_conv", parents, bw)
