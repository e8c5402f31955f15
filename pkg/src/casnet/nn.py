"""Layers and parameter containers built on the tensor engine.

Modules auto-register parameters and sub-modules through attribute
assignment; ``named_parameters`` yields dotted names that double as
checkpoint keys, so names are unique within a model by construction.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A tensor that always requires grad and is tracked by its module."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, (Module, ModuleList)):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def num_params(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self):
        self._set_training(True)
        return self

    def eval(self):
        self._set_training(False)
        return self

    def _set_training(self, flag):
        object.__setattr__(self, "training", flag)
        for m in self._modules.values():
            m._set_training(flag)

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, arr in self._buffers().items():
            state[name] = arr.copy()
        return state

    def load_state_dict(self, state):
        expected = {name for name, _ in self.named_parameters()}
        expected |= set(self._buffers())
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise ValueError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, p in self.named_parameters():
            if p.data.shape != state[name].shape:
                raise ValueError(
                    f"shape mismatch for {name}: {p.data.shape} vs {state[name].shape}"
                )
            p.data = np.array(state[name], dtype=np.float64)
        for name, arr in self._buffers().items():
            arr[...] = state[name]

    def _buffers(self, prefix=""):
        """Non-trainable state (running statistics) included in checkpoints."""
        out = {}
        if isinstance(self, BatchNorm1d):
            out[prefix + "running_mean"] = self.running_mean
            out[prefix + "running_var"] = self.running_var
        for name, m in self._modules.items():
            out.update(m._buffers(prefix + name + "."))
        return out

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList:
    def __init__(self, modules=()):
        self._items = list(modules)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def append(self, module):
        self._items.append(module)

    def named_parameters(self, prefix=""):
        for i, m in enumerate(self._items):
            yield from m.named_parameters(f"{prefix}{i}.")

    def _set_training(self, flag):
        for m in self._items:
            m._set_training(flag)

    def _buffers(self, prefix=""):
        out = {}
        for i, m in enumerate(self._items):
            out.update(m._buffers(f"{prefix}{i}."))
        return out


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True):
        super().__init__()
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Parameter(_uniform(rng, (out_dim, in_dim), bound))
        self.bias = Parameter(_uniform(rng, (out_dim,), bound)) if bias else None

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, in_ch, out_ch, k, rng, stride=1, padding=0, bias=True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        bound = 1.0 / np.sqrt(in_ch * k)
        self.weight = Parameter(_uniform(rng, (out_ch, in_ch, k), bound))
        self.bias = Parameter(_uniform(rng, (out_ch,), bound)) if bias else None

    def forward(self, x):
        out = T.conv1d(x, self.weight, self.stride, self.padding)
        if self.bias is not None:
            out = out + self.bias.reshape((1, -1, 1))
        return out


class ConvTranspose1d(Module):
    def __init__(self, in_ch, out_ch, k, rng, stride=1, bias=False):
        super().__init__()
        self.stride = stride
        bound = 1.0 / np.sqrt(in_ch * k)
        self.weight = Parameter(_uniform(rng, (in_ch, out_ch, k), bound))
        self.bias = Parameter(_uniform(rng, (out_ch,), bound)) if bias else None

    def forward(self, x):
        out = T.conv_transpose1d(x, self.weight, self.stride)
        if self.bias is not None:
            out = out + self.bias.reshape((1, -1, 1))
        return out


class PReLU(Module):
    """Learnable negative slope, one per feature map along ``channel_axis``."""

    def __init__(self, n_channels=1, init=0.25, channel_axis=1):
        super().__init__()
        self.channel_axis = channel_axis
        self.slope = Parameter(np.full(n_channels, init))

    def forward(self, x):
        shape = [1] * x.ndim
        shape[self.channel_axis] = self.slope.shape[0]
        return T.prelu(x, self.slope.reshape(tuple(shape)))


def instance_norm(x, eps=1e-5):
    """Zero-mean, unit-variance per (sample, feature map) over time.

    No learnable scale/shift, no running state.  Rejects time == 1 where the
    variance is undefined.
    """
    x = T._ensure_tensor(x)
    if x.ndim != 3:
        raise ValueError("instance_norm expects [batch, ch, time]")
    if x.shape[2] < 2:
        raise ValueError("instance_norm: time axis must have >= 2 elements")
    mu = x.mean(axis=2, keepdims=True)
    centered = x - mu
    var = (centered**2).mean(axis=2, keepdims=True)
    return centered / ((var + eps) ** 0.5)


class BatchNorm1d(Module):
    """Per-feature-map normalization over (batch, time) with running stats."""

    def __init__(self, ch, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.scale = Parameter(np.ones(ch))
        self.shift = Parameter(np.zeros(ch))
        self.running_mean = np.zeros(ch)
        self.running_var = np.ones(ch)

    def forward(self, x):
        if x.ndim != 3:
            raise ValueError("BatchNorm1d expects [batch, ch, time]")
        if self.training:
            batch, _, time = x.shape
            if batch * time < 2:
                raise ValueError(
                    "batch_norm in train mode needs batch*time >= 2 per feature map"
                )
            mu = x.mean(axis=(0, 2), keepdims=True)
            centered = x - mu
            var = (centered**2).mean(axis=(0, 2), keepdims=True)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data.reshape(-1)
            self.running_var = (1 - m) * self.running_var + m * var.data.reshape(-1)
            xhat = centered / ((var + self.eps) ** 0.5)
        else:
            mu = self.running_mean.reshape(1, -1, 1)
            sd = np.sqrt(self.running_var + self.eps).reshape(1, -1, 1)
            xhat = (x - Tensor(mu)) / Tensor(sd)
        return xhat * self.scale.reshape((1, -1, 1)) + self.shift.reshape((1, -1, 1))


class LayerNorm(Module):
    """Normalize over the trailing feature axis with learnable gain/bias."""

    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered**2).mean(axis=-1, keepdims=True)
        return centered / ((var + self.eps) ** 0.5) * self.gain + self.bias


class LSTM(Module):
    """Gated recurrent layer over ``[batch, frames, dim]`` sequences.

    Standard cell: input/forget/output gates plus a tanh candidate update the
    cell state; ``bidirectional`` concatenates a reversed pass, giving
    ``[batch, frames, hidden * dirs]``.
    """

    def __init__(self, in_dim, hidden, rng, bidirectional=False):
        super().__init__()
        self.hidden = hidden
        self.bidirectional = bidirectional
        bound = 1.0 / np.sqrt(hidden)
        self.w_ih = Parameter(_uniform(rng, (4 * hidden, in_dim), bound))
        self.w_hh = Parameter(_uniform(rng, (4 * hidden, hidden), bound))
        self.b = Parameter(_uniform(rng, (4 * hidden,), bound))
        if bidirectional:
            self.w_ih_rev = Parameter(_uniform(rng, (4 * hidden, in_dim), bound))
            self.w_hh_rev = Parameter(_uniform(rng, (4 * hidden, hidden), bound))
            self.b_rev = Parameter(_uniform(rng, (4 * hidden,), bound))

    def forward(self, x):
        if x.ndim != 3:
            raise ValueError("LSTM expects [batch, frames, dim]")
        fwd = self._run(x, self.w_ih, self.w_hh, self.b, reverse=False)
        if not self.bidirectional:
            return fwd
        bwd = self._run(x, self.w_ih_rev, self.w_hh_rev, self.b_rev, reverse=True)
        return T.concat([fwd, bwd], axis=2)

    def _run(self, x, w_ih, w_hh, b, reverse):
        batch, frames, _ = x.shape
        H = self.hidden
        # One big input projection for all steps; per step only h @ w_hh.
        proj = T.linear(x, w_ih, b)  # [batch, frames, 4H]
        h = Tensor(np.zeros((batch, H)))
        c = Tensor(np.zeros((batch, H)))
        steps = range(frames - 1, -1, -1) if reverse else range(frames)
        outputs = [None] * frames
        for t in steps:
            z = proj[:, t, :] + T.linear(h, w_hh)
            i = z[:, 0:H].sigmoid()
            f = z[:, H : 2 * H].sigmoid()
            g = z[:, 2 * H : 3 * H].tanh()
            o = z[:, 3 * H : 4 * H].sigmoid()
            c = f * c + i * g
            h = o * c.tanh()
            outputs[t] = h
        return T.stack(outputs, axis=1)
