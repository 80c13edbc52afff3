"""Reverse-mode autodiff on dense numpy arrays.

Every op builds the output tensor eagerly and wires a closure that pushes the
output adjoint back to its inputs; backward() replays the closures in reverse
topological order. float64 throughout unless the caller feeds float32.
"""

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """Raised on NaN/Inf inputs or non-finite results where finiteness is required."""


# When set to a list, kinked ops (abs, relu, shifted relu) append the smallest
# distance of their argument from the kink. Finite-difference checks use this
# to reject sample points too close to a non-differentiable point.
KINK_TRACE = None


def _note_kink(arr):
    if KINK_TRACE is not None:
        KINK_TRACE.append(float(np.min(np.abs(arr))) if arr.size else float("inf"))


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_prev", "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", prev=()):
        d = np.asarray(data)
        if d.dtype not in (np.float32, np.float64):
            d = d.astype(np.float64)
        self.data = d
        self.requires_grad = requires_grad
        self.grad = None
        self.op = op
        # only grad-carrying parents are kept; constants live in the closures
        self._prev = tuple(p for p in prev if p.requires_grad)
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        self.grad = g if self.grad is None else self.grad + g

    def _topo(self):
        order, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                stack.append((p, False))
        return order

    def backward(self, grad=None):
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        if grad is None:
            grad = np.ones_like(self.data)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(self._topo()):
            if node._backward is not None:
                node._backward()

    # ---- elementwise arithmetic -------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        out = Tensor(self.data + other.data,
                     self.requires_grad or other.requires_grad, "add", (self, other))

        def _bw():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad, other.shape))
        out._backward = _bw
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = _wrap(other)
        out = Tensor(self.data * other.data,
                     self.requires_grad or other.requires_grad, "mul", (self, other))

        def _bw():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad * self.data, other.shape))
        out._backward = _bw
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __truediv__(self, other):
        other = _wrap(other)
        out = Tensor(self.data / other.data,
                     self.requires_grad or other.requires_grad, "div", (self, other))

        def _bw():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-out.grad * self.data / other.data ** 2, other.shape))
        out._backward = _bw
        return out

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = Tensor(self.data ** p, self.requires_grad, "pow", (self,))

        def _bw():
            if self.requires_grad:
                self._accumulate(out.grad * p * self.data ** (p - 1))
        out._backward = _bw
        return out

    def abs(self):
        _note_kink(self.data)
        out = Tensor(np.abs(self.data), self.requires_grad, "abs", (self,))

        def _bw():
            if self.requires_grad:
                self._accumulate(out.grad * np.sign(self.data))
        out._backward = _bw
        return out

    def relu(self):
        _note_kink(self.data)
        out = Tensor(np.maximum(self.data, 0.0), self.requires_grad, "relu", (self,))

        def _bw():
            if self.requires_grad:
                self._accumulate(out.grad * (self.data > 0))
        out._backward = _bw
        return out

    def shifted_relu(self, t):
        """max(x - t, 0) with scalar threshold t."""
        _note_kink(self.data - t)
        out = Tensor(np.maximum(self.data - t, 0.0), self.requires_grad, "shifted_relu", (self,))

        def _bw():
            if self.requires_grad:
                self._accumulate(out.grad * (self.data > t))
        out._backward = _bw
        return out

    # ---- reductions -------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                     self.requires_grad, "sum", (self,))

        def _bw():
            if self.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.shape).copy())
        out._backward = _bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # ---- shape ops --------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), self.requires_grad, "reshape", (self,))
        src = self.shape

        def _bw():
            if self.requires_grad:
                self._accumulate(out.grad.reshape(src))
        out._backward = _bw
        return out

    def transpose(self, axes):
        out = Tensor(self.data.transpose(axes), self.requires_grad, "transpose", (self,))
        inv = np.argsort(axes)

        def _bw():
            if self.requires_grad:
                self._accumulate(out.grad.transpose(inv))
        out._backward = _bw
        return out

    # ---- matmul -----------------------------------------------------------

    def __matmul__(self, other):
        other = _wrap(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(f"matmul needs rank >= 2 operands, got {self.shape} x {other.shape}")
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(f"matmul inner extents differ: {self.shape} x {other.shape}")
        out = Tensor(np.matmul(self.data, other.data),
                     self.requires_grad or other.requires_grad, "matmul", (self, other))

        def _bw():
            if self.requires_grad:
                g = np.matmul(out.grad, np.swapaxes(other.data, -1, -2))
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                g = np.matmul(np.swapaxes(self.data, -1, -2), out.grad)
                other._accumulate(_unbroadcast(g, other.shape))
        out._backward = _bw
        return out


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---- free functions --------------------------------------------------------

def stop_gradient(x):
    """Identity forward, zero adjoint: the output is a constant leaf."""
    return Tensor(x.data, requires_grad=False, op="stop_gradient")


def softmax(x, axis=-1):
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, x.requires_grad, "softmax", (x,))

    def _bw():
        if x.requires_grad:
            inner = (out.grad * y).sum(axis=axis, keepdims=True)
            x._accumulate(y * (out.grad - inner))
    out._backward = _bw
    return out


def log_softmax(x, axis=-1):
    if np.isnan(x.data).any():
        raise NumericError("log_softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = Tensor(y, x.requires_grad, "log_softmax", (x,))

    def _bw():
        if x.requires_grad:
            sm = np.exp(y)
            x._accumulate(out.grad - sm * out.grad.sum(axis=axis, keepdims=True))
    out._backward = _bw
    return out


def concat(tensors, axis=-1):
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis),
                 any(t.requires_grad for t in tensors), "concat", tuple(tensors))
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def _bw():
        pieces = np.split(out.grad, splits, axis=axis)
        for t, g in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(g)
    out._backward = _bw
    return out


def broadcast_to(x, shape):
    out = Tensor(np.broadcast_to(x.data, shape).copy(), x.requires_grad, "broadcast", (x,))

    def _bw():
        if x.requires_grad:
            x._accumulate(_unbroadcast(out.grad, x.shape))
    out._backward = _bw
    return out


def global_avg_pool(x):
    """Mean over the two leading spatial axes of an H x W x C map -> [C]."""
    return x.mean(axis=(0, 1))


# ---- structured image ops --------------------------------------------------

def _same_pad(n, k, stride, dilation):
    out = -(-n // stride)  # ceil
    eff = dilation * (k - 1) + 1
    total = max((out - 1) * stride + eff - n, 0)
    return out, total // 2, total - total // 2


def conv2d(x, w, stride=1, dilation=1, groups=1):
    """2-D convolution on an H x W x Cin map with a k x k x Cin/g x Cout kernel.

    Same-padding with edge replication (constant fields stay constant);
    output is ceil(H/stride) x ceil(W/stride) x Cout.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects HxWxC input and kxkxCgxCout kernel, got {x.shape}, {w.shape}")
    H, W, cin = x.shape
    k, k2, cg, cout = w.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd extent, got {w.shape}")
    if cin % groups or cout % groups:
        raise ShapeError(f"channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cg != cin // groups:
        raise ShapeError(f"kernel input channels {cg} != {cin}/{groups}")

    Ho, ph0, _ = _same_pad(H, k, stride, dilation)
    Wo, pw0, _ = _same_pad(W, k, stride, dilation)
    r = stride * np.arange(Ho)[:, None] + dilation * np.arange(k)[None, :] - ph0
    c = stride * np.arange(Wo)[:, None] + dilation * np.arange(k)[None, :] - pw0
    r = np.clip(r, 0, H - 1)
    c = np.clip(c, 0, W - 1)
    patches = x.data[r[:, None, :, None], c[None, :, None, :], :]  # Ho,Wo,k,k,Cin
    p6 = patches.reshape(Ho, Wo, k, k, groups, cin // groups)
    w5 = w.data.reshape(k, k, cin // groups, groups, cout // groups)
    y = np.einsum("hwijgc,ijcgo->hwgo", p6, w5).reshape(Ho, Wo, cout)
    out = Tensor(y, x.requires_grad or w.requires_grad, "conv2d", (x, w))

    def _bw():
        g5 = out.grad.reshape(Ho, Wo, groups, cout // groups)
        if w.requires_grad:
            gw = np.einsum("hwijgc,hwgo->ijcgo", p6, g5)
            w._accumulate(gw.reshape(k, k, cin // groups, cout))
        if x.requires_grad:
            gp = np.einsum("hwgo,ijcgo->hwijgc", g5, w5).reshape(Ho, Wo, k, k, cin)
            gx = np.zeros_like(x.data)
            np.add.at(gx, (r[:, None, :, None], c[None, :, None, :]), gp)
            x._accumulate(gx)
    out._backward = _bw
    return out


def _lin_coords(n_in, n_out):
    s = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    s = np.clip(s, 0.0, n_in - 1.0)
    i0 = np.floor(s).astype(int)
    f = s - i0
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, f


def bilinear_resize(x, h_out, w_out):
    """Bilinear resample with half-pixel centers; exact identity at same size."""
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"target extent must be >= 1, got {h_out}x{w_out}")
    H, W, _ = x.shape
    r0, r1, fy = _lin_coords(H, h_out)
    c0, c1, fx = _lin_coords(W, w_out)
    wy0, wy1 = (1.0 - fy)[:, None, None], fy[:, None, None]
    wx0, wx1 = (1.0 - fx)[None, :, None], fx[None, :, None]
    xd = x.data
    y = (wy0 * (wx0 * xd[r0[:, None], c0[None, :]] + wx1 * xd[r0[:, None], c1[None, :]])
         + wy1 * (wx0 * xd[r1[:, None], c0[None, :]] + wx1 * xd[r1[:, None], c1[None, :]]))
    out = Tensor(y, x.requires_grad, "bilinear_resize", (x,))

    def _bw():
        if x.requires_grad:
            gx = np.zeros_like(xd)
            g = out.grad
            np.add.at(gx, (r0[:, None], c0[None, :]), wy0 * wx0 * g)
            np.add.at(gx, (r0[:, None], c1[None, :]), wy0 * wx1 * g)
            np.add.at(gx, (r1[:, None], c0[None, :]), wy1 * wx0 * g)
            np.add.at(gx, (r1[:, None], c1[None, :]), wy1 * wx1 * g)
            x._accumulate(gx)
    out._backward = _bw
    return out


# ---- label utilities (plain arrays, not differentiable) --------------------

IGNORE = 255


def one_hot(labels, n_class, ignore=IGNORE):
    """Flat int labels -> [M, n_class] float rows; ignored rows stay all-zero."""
    flat = np.asarray(labels).reshape(-1)
    bad = (flat != ignore) & (flat >= n_class)
    if bad.any():
        raise ShapeError(f"label {int(flat[bad][0])} out of range for {n_class} classes")
    y = np.zeros((flat.size, n_class))
    keep = flat != ignore
    y[np.nonzero(keep)[0], flat[keep]] = 1.0
    return y


def nearest_downsample(labels, h_out, w_out):
    """Nearest-neighbor resample of an integer label map. Never interpolates."""
    labels = np.asarray(labels)
    H, W = labels.shape
    r = np.minimum(((np.arange(h_out) + 0.5) * (H / h_out)).astype(int), H - 1)
    c = np.minimum(((np.arange(w_out) + 0.5) * (W / w_out)).astype(int), W - 1)
    return labels[r[:, None], c[None, :]]


def op_trace(t):
    """Op names of the graph below t in topological order (for overhead audits)."""
    return [n.op for n in t._topo() if n.op != "leaf"]
