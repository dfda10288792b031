"""Minimal dense-tensor library with tape-based reverse-mode autodiff.

Covers exactly the op set the super network and the architecture
controller need: conv2d, fully connected, relu/sigmoid, elementwise
add/mul, channel-wise scaling, pixel shuffle, mean/sum reductions,
l1 loss, and the straight-through binary gate.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A dense n-d array with an optional gradient.

    Data is row-major float32 by default; float64 is used by the
    gradient-check tests. Forward results must stay finite: ops that
    can overflow call ``_check_finite`` on their output.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor, in reverse topological order."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient requires a scalar")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    # operator sugar used throughout the network code
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")


def _result(data, parents, backward_fn):
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    data = a.data + b.data

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return _result(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")
    data = a.data * b.data

    def backward(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return _result(data, (a, b), backward)


def scale(a: Tensor, k: float) -> Tensor:
    data = a.data * k

    def backward(g):
        a._accumulate(g * k)

    return _result(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def backward(g):
        a._accumulate(g * (a.data > 0))

    return _result(data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a._accumulate(g * data * (1.0 - data))

    return _result(data, (a,), backward)


def ste_gate(a: Tensor) -> Tensor:
    """Binary gate: forward 1[z > 0] (strict, so z = 0 gates off);
    backward uses the sigmoid derivative as surrogate."""
    data = (a.data > 0).astype(a.data.dtype)

    def backward(g):
        s = 1.0 / (1.0 + np.exp(-a.data))
        a._accumulate(g * s * (1.0 - s))

    return _result(data, (a,), backward)


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """Broadcast-multiply a [N,C,1,1] tensor over a [N,C,H,W] tensor."""
    if x.data.ndim != 4 or s.data.ndim != 4 or s.shape[2:] != (1, 1):
        raise ShapeError(f"scale_channels: {x.shape} vs {s.shape}")
    if x.shape[:2] != s.shape[:2]:
        raise ShapeError(f"scale_channels: {x.shape} vs {s.shape}")
    data = x.data * s.data

    def backward(g):
        x._accumulate(g * s.data)
        s._accumulate((g * x.data).sum(axis=(2, 3), keepdims=True))

    return _result(data, (x, s), backward)


def mean(a: Tensor) -> Tensor:
    data = np.asarray(a.data.mean(), dtype=a.data.dtype)
    n = a.data.size

    def backward(g):
        a._accumulate(np.full_like(a.data, g / n))

    return _result(data, (a,), backward)


def tsum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward(g):
        a._accumulate(np.full_like(a.data, g))

    return _result(data, (a,), backward)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference; subgradient sign(pred - target)/numel with
    sign(0) = 0."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    data = np.asarray(np.abs(diff).mean(), dtype=pred.data.dtype)
    n = diff.size

    def backward(g):
        s = np.sign(diff) * (g / n)
        pred._accumulate(s)
        target._accumulate(-s)

    return _result(data, (pred, target), backward)


def _im2col(x, kh, kw, stride, padding):
    """[N,C,H,W] -> [N, C*kh*kw, Hout*Wout] patch matrix."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = x.shape[2], x.shape[3]
    hout = (hp - kh) // stride + 1
    wout = (wp - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]  # [N,C,Hout,Wout,kh,kw]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, hout * wout)
    return np.ascontiguousarray(cols), hout, wout


def _col2im(cols, x_shape, kh, kw, stride, padding):
    """Adjoint of _im2col: scatter-add patch columns back to image layout."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    hout = (hp - kh) // stride + 1
    wout = (wp - kw) // stride + 1
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, hout, wout)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * hout:stride, j:j + stride * wout:stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding:hp - padding, padding:wp - padding]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding, NCHW layout."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and weight")
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} != weight channels {cin_w}")
    if stride < 1:
        raise ShapeError("conv2d: stride must be >= 1")
    hout = (h + 2 * padding - kh) // stride + 1
    wout = (w + 2 * padding - kw) // stride + 1
    if hout < 1 or wout < 1:
        raise ShapeError("conv2d: empty output")
    cols, hout, wout = _im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out = np.matmul(wmat[None], cols)  # [N, Cout, Hout*Wout], batched gemm
    out = out.reshape(n, cout, hout, wout)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    _check_finite(out, "conv2d")

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gmat = g.reshape(n, cout, hout * wout)
        if weight.requires_grad or weight._parents:
            gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
            weight._accumulate(gw.reshape(weight.shape))
        if x.requires_grad or x._parents:
            gcols = np.matmul(wmat.T[None], gmat)
            x._accumulate(_col2im(gcols, x.shape, kh, kw, stride, padding))
        if bias is not None and (bias.requires_grad or bias._parents):
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    return _result(out, parents, backward)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map: x [N,Din] @ weight.T [Din,Dout] + bias."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError("fully_connected expects 2-d input and weight")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"fully_connected: {x.shape} vs {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    _check_finite(out, "fully_connected")
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if x.requires_grad or x._parents:
            x._accumulate(g @ weight.data)
        if weight.requires_grad or weight._parents:
            weight._accumulate(g.T @ x.data)
        if bias is not None and (bias.requires_grad or bias._parents):
            bias._accumulate(g.sum(axis=0))

    return _result(out, parents, backward)


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """Depth-to-space: [N, C*s*s, H, W] -> [N, C, H*s, W*s]."""
    n, c, h, w = x.shape
    if c % (s * s) != 0:
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by {s * s}")
    cout = c // (s * s)
    data = (x.data.reshape(n, cout, s, s, h, w)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, cout, h * s, w * s))

    def backward(g):
        gx = (g.reshape(n, cout, h, s, w, s)
              .transpose(0, 1, 3, 5, 2, 4)
              .reshape(n, c, h, w))
        x._accumulate(gx)

    return _result(data, (x,), backward)


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    """Space-to-depth, inverse of pixel_shuffle."""
    n, c, h, w = x.shape
    if h % s != 0 or w % s != 0:
        raise ShapeError(f"pixel_unshuffle: {h}x{w} not divisible by {s}")
    data = (x.data.reshape(n, c, h // s, s, w // s, s)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, c * s * s, h // s, w // s))

    def backward(g):
        gx = (g.reshape(n, c, s, s, h // s, w // s)
              .transpose(0, 1, 4, 2, 5, 3)
              .reshape(n, c, h, w))
        x._accumulate(gx)

    return _result(data, (x,), backward)


class AdamState:
    """First/second moment buffers and step counter for one parameter set."""

    def __init__(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.step = 0

    def state_dict(self):
        return {"m": [a.copy() for a in self.m],
                "v": [a.copy() for a in self.v],
                "step": self.step}

    def load_state_dict(self, d):
        self.m = [np.array(a) for a in d["m"]]
        self.v = [np.array(a) for a in d["v"]]
        self.step = int(d["step"])


def adam_step(params, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Standard Adam update with bias correction; params without a grad
    still decay their moments (gradient treated as zero)."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * (g * g)
        mhat = state.m[i] / bc1
        vhat = state.v[i] / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = total ** 0.5
    if norm > max_norm and norm > 0:
        k = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= k
    return norm
