"""Dense float64 tensors with reverse-mode automatic differentiation.

Every array in the project flows through :class:`Tensor`.  Operations build a
DAG of parents plus a vector-Jacobian closure; :meth:`Tensor.backward` walks
the graph once in reverse topological order and accumulates gradients into
every tensor flagged ``requires_grad``.  Tensors are immutable after
construction except for gradient accumulation; parameter updates happen
between steps by rewriting ``data`` in place (see ``trainer.Adam``).
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure forward)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._vjp = _vjp

    # ---------------------------------------------------------------- basics

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------- backward

    def backward(self):
        """Populate ``grad`` on every ``requires_grad`` ancestor.

        Repeated calls without resetting grads accumulate.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        order = _topo_order(self)
        upstream = {id(self): np.ones_like(self.data)}
        # Buffers this pass allocated itself; only those may be mutated in
        # place (vjps are allowed to pass the upstream gradient through).
        owned = set()
        for node in reversed(order):
            g = upstream.pop(id(node), None)
            if g is None:
                continue
            owned.discard(id(node))
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                acc = upstream.get(pid)
                if isinstance(pg, _Scatter):
                    if acc is None:
                        acc = np.zeros(pg.shape)
                        owned.add(pid)
                    elif pid not in owned:
                        acc = acc.copy()
                        owned.add(pid)
                    acc[pg.key] += pg.grad
                    upstream[pid] = acc
                elif acc is None:
                    upstream[pid] = pg
                elif pid in owned:
                    acc += pg
                else:
                    upstream[pid] = acc + pg

    # ------------------------------------------------------------ arithmetic

    def __add__(self, other):
        other = _ensure_tensor(other)
        return _node(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)),
        )

    __radd__ = __add__

    def __mul__(self, other):
        other = _ensure_tensor(other)
        return _node(
            self.data * other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            ),
        )

    __rmul__ = __mul__

    def __sub__(self, other):
        other = _ensure_tensor(other)
        return _node(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)),
        )

    def __rsub__(self, other):
        return _ensure_tensor(other) - self

    def __truediv__(self, other):
        other = _ensure_tensor(other)
        return _node(
            self.data / other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g / other.data, self.shape),
                _unbroadcast(-g * self.data / (other.data**2), other.shape),
            ),
        )

    def __rtruediv__(self, other):
        return _ensure_tensor(other) / self

    def __neg__(self):
        return _node(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = self.data**exponent
        return _node(
            out,
            (self,),
            lambda g: (g * exponent * self.data ** (exponent - 1),),
        )

    def __matmul__(self, other):
        other = _ensure_tensor(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ValueError(
                f"matmul expects 2-D operands, got {self.shape} @ {other.shape}"
            )
        return _node(
            self.data @ other.data,
            (self, other),
            lambda g: (g @ other.data.T, self.data.T @ g),
        )

    # ------------------------------------------------------------ reductions

    def sum(self, axis=None, keepdims=False):
        axes = _norm_axes(axis, self.ndim)

        def vjp(g):
            if not keepdims and axes is not None:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, self.shape),)

        return _node(np.sum(self.data, axis=axis, keepdims=keepdims), (self,), vjp)

    def mean(self, axis=None, keepdims=False):
        axes = _norm_axes(axis, self.ndim)
        if axes is None:
            n = self.data.size
        else:
            n = int(np.prod([self.data.shape[a] for a in axes]))

        def vjp(g):
            if not keepdims and axes is not None:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, self.shape) / n,)

        return _node(np.mean(self.data, axis=axis, keepdims=keepdims), (self,), vjp)

    # ------------------------------------------------------------ elementwise

    def exp(self):
        out = np.exp(self.data)
        return _node(out, (self,), lambda g: (g * out,))

    def log(self):
        with np.errstate(divide="ignore"):
            out = np.log(self.data)
        return _node(out, (self,), lambda g: (g / self.data,))

    def log10(self):
        with np.errstate(divide="ignore"):
            out = np.log10(self.data)
        return _node(out, (self,), lambda g: (g / (self.data * np.log(10.0)),))

    def tanh(self):
        out = np.tanh(self.data)
        return _node(out, (self,), lambda g: (g * (1.0 - out**2),))

    def sigmoid(self):
        out = 1.0 / (1.0 + np.exp(-self.data))
        return _node(out, (self,), lambda g: (g * out * (1.0 - out),))

    def relu(self):
        mask = self.data > 0
        return _node(self.data * mask, (self,), lambda g: (g * mask,))

    def clip(self, lo, hi):
        # Derivative outside (and exactly at) the bounds is 0.
        inside = (self.data > lo) & (self.data < hi)
        return _node(np.clip(self.data, lo, hi), (self,), lambda g: (g * inside,))

    # ----------------------------------------------------------------- shape

    def reshape(self, shape):
        return _node(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(self.shape),)
        )

    def transpose(self, axes):
        inverse = tuple(np.argsort(axes))
        return _node(
            np.transpose(self.data, axes),
            (self,),
            lambda g: (np.transpose(g, inverse),),
        )

    def __getitem__(self, key):
        _check_basic_key(key)
        out = self.data[key]
        shape = self.shape
        return _node(out, (self,), lambda g: (_Scatter(key, g, shape),))


# ------------------------------------------------------------------ helpers


class _Scatter:
    """Lazy gradient for a basic slice: materialized during accumulation.

    Avoids allocating one full-size zero array per slice node; ``backward``
    scatter-adds ``grad`` at ``key`` into a shared buffer of ``shape``.
    """

    __slots__ = ("key", "grad", "shape")

    def __init__(self, key, grad, shape):
        self.key = key
        self.grad = grad
        self.shape = shape


def _ensure_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data, parents, vjp):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp)
    return Tensor(data)


def _topo_order(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _norm_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _check_basic_key(key):
    parts = key if isinstance(key, tuple) else (key,)
    for part in parts:
        if not isinstance(part, (int, slice, type(Ellipsis))):
            raise TypeError("only basic int/slice indexing is differentiable")


# ------------------------------------------------------------ op functions


def relu(x):
    return _ensure_tensor(x).relu()


def sigmoid(x):
    return _ensure_tensor(x).sigmoid()


def tanh(x):
    return _ensure_tensor(x).tanh()


def prelu(x, slope):
    """Parametric ReLU; the slope broadcasts against ``x``.

    At exactly 0 the derivative is the negative-side slope.
    """
    x = _ensure_tensor(x)
    slope = _ensure_tensor(slope)
    pos = x.data > 0
    out = np.where(pos, x.data, slope.data * x.data)
    return _node(
        out,
        (x, slope),
        lambda g: (
            g * np.where(pos, 1.0, slope.data * np.ones_like(x.data)),
            _unbroadcast(g * np.where(pos, 0.0, x.data), slope.shape),
        ),
    )


def linear(x, weight, bias=None):
    """Affine map over the trailing axis: ``x [..., in] -> [..., out]``.

    ``weight`` has shape ``[out, in]``; ``bias`` is optional ``[out]``.
    """
    x = _ensure_tensor(x)
    weight = _ensure_tensor(weight)
    in_dim = weight.shape[1]
    if x.shape[-1] != in_dim:
        raise ValueError(
            f"linear: trailing extent {x.shape[-1]} of input {x.shape} does not "
            f"match weight in_dim {in_dim} (weight {weight.shape})"
        )
    if x.ndim == 2:
        out = _node(
            x.data @ weight.data.T,
            (x, weight),
            lambda g: (g @ weight.data, g.T @ x.data),
        )
    else:
        lead = x.shape[:-1]
        flat = x.reshape((-1, in_dim))
        out = _node(
            flat.data @ weight.data.T,
            (flat, weight),
            lambda g: (g @ weight.data, g.T @ flat.data),
        )
        out = out.reshape(lead + (weight.shape[0],))
    if bias is not None:
        out = out + bias
    return out


def conv1d(x, kernel, stride=1, padding=0):
    """1-D cross-correlation.

    ``x [batch, in_ch, time]``, ``kernel [out_ch, in_ch, k]`` ->
    ``[batch, out_ch, (time + 2*padding - k)//stride + 1]``.
    """
    x = _ensure_tensor(x)
    kernel = _ensure_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise ValueError("conv1d expects 3-D input and kernel")
    batch, in_ch, time = x.shape
    out_ch, k_in, k = kernel.shape
    if in_ch != k_in:
        raise ValueError(
            f"conv1d: input has {in_ch} channels (shape {x.shape}) but kernel "
            f"expects {k_in} (shape {kernel.shape})"
        )
    if k > time + 2 * padding:
        raise ValueError(
            f"conv1d: kernel length {k} exceeds padded time {time + 2 * padding}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    windows = _sliding_windows(xp, k, stride)  # [batch, in_ch, frames, k]
    out = np.einsum("bitk,oik->bot", windows, kernel.data)

    def vjp(g):
        dk = np.einsum("bot,bitk->oik", g, windows)
        dxp = np.zeros_like(xp)
        gk = np.einsum("bot,oik->bitk", g, kernel.data)
        frames = g.shape[2]
        for j in range(k):
            dxp[:, :, j : j + (frames - 1) * stride + 1 : stride] += gk[..., j]
        dx = dxp[:, :, padding : padding + time] if padding else dxp
        return (dx, dk)

    return _node(out, (x, kernel), vjp)


def conv_transpose1d(x, kernel, stride=1):
    """Transposed 1-D convolution (adjoint of :func:`conv1d`, padding 0).

    ``x [batch, ch, frames]``, ``kernel [ch, out_ch, k]`` ->
    ``[batch, out_ch, (frames - 1)*stride + k]``; overlaps summed.
    """
    x = _ensure_tensor(x)
    kernel = _ensure_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise ValueError("conv_transpose1d expects 3-D input and kernel")
    batch, ch, frames = x.shape
    k_ch, out_ch, k = kernel.shape
    if ch != k_ch:
        raise ValueError(
            f"conv_transpose1d: input has {ch} channels (shape {x.shape}) but "
            f"kernel expects {k_ch} (shape {kernel.shape})"
        )
    if frames < 1:
        raise ValueError("conv_transpose1d: frames must be >= 1")

    time = (frames - 1) * stride + k
    out = np.zeros((batch, out_ch, time))
    contrib = np.einsum("bcf,cok->bofk", x.data, kernel.data)
    for j in range(k):
        out[:, :, j : j + (frames - 1) * stride + 1 : stride] += contrib[..., j]

    def vjp(g):
        gw = _sliding_windows(g, k, stride)  # [batch, out_ch, frames, k]
        dx = np.einsum("bofk,cok->bcf", gw, kernel.data)
        dk = np.einsum("bcf,bofk->cok", x.data, gw)
        return (dx, dk)

    return _node(out, (x, kernel), vjp)


def avg_pool_time(x):
    """Mean over the time axis: ``[batch, ch, time] -> [batch, ch]``."""
    x = _ensure_tensor(x)
    if x.ndim != 3:
        raise ValueError("avg_pool_time expects [batch, ch, time]")
    if x.shape[2] < 1:
        raise ValueError("avg_pool_time: time must be >= 1")
    return x.mean(axis=2)


def concat(tensors, axis=0):
    tensors = [_ensure_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp
    )


def stack(tensors, axis=0):
    tensors = [_ensure_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def vjp(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _node(out, tuple(tensors), vjp)


def pad_axis(x, axis, before, after):
    """Zero-pad one axis; the adjoint crops."""
    x = _ensure_tensor(x)
    pads = [(0, 0)] * x.ndim
    pads[axis] = (before, after)
    key = [slice(None)] * x.ndim
    key[axis] = slice(before, before + x.shape[axis])
    key = tuple(key)
    return _node(np.pad(x.data, pads), (x,), lambda g: (g[key],))


def unfold_time(x, size, hop):
    """Slice ``[batch, time, ch]`` into ``[batch, n, size, ch]`` windows.

    Requires ``time >= size`` and ``(time - size) % hop == 0`` so the windows
    tile the axis exactly.
    """
    x = _ensure_tensor(x)
    batch, time, ch = x.shape
    if time < size or (time - size) % hop != 0:
        raise ValueError(
            f"unfold_time: time {time} does not tile with size {size}, hop {hop}"
        )
    n = (time - size) // hop + 1
    sb, st, sc = x.data.strides
    view = np.lib.stride_tricks.as_strided(
        x.data, (batch, n, size, ch), (sb, st * hop, st, sc), writeable=False
    )
    out = np.ascontiguousarray(view)

    def vjp(g):
        dx = np.zeros_like(x.data)
        for j in range(n):
            dx[:, j * hop : j * hop + size, :] += g[:, j]
        return (dx,)

    return _node(out, (x,), vjp)


def fold_time(x, hop, out_len):
    """Adjoint of :func:`unfold_time`: scatter-add windows back to the axis."""
    x = _ensure_tensor(x)
    batch, n, size, ch = x.shape
    if out_len != (n - 1) * hop + size:
        raise ValueError("fold_time: out_len inconsistent with window tiling")
    out = np.zeros((batch, out_len, ch))
    for j in range(n):
        out[:, j * hop : j * hop + size, :] += x.data[:, j]

    def vjp(g):
        sb, st, sc = g.strides
        view = np.lib.stride_tricks.as_strided(
            g, (batch, n, size, ch), (sb, st * hop, st, sc), writeable=False
        )
        return (np.ascontiguousarray(view),)

    return _node(out, (x,), vjp)


def _sliding_windows(a, k, stride):
    """Strided read-only view ``[b, c, frames, k]`` over the last axis."""
    b, c, t = a.shape
    frames = (t - k) // stride + 1
    sb, sc, st = a.strides
    return np.lib.stride_tricks.as_strided(
        a, (b, c, frames, k), (sb, sc, st * stride, st), writeable=False
    )
