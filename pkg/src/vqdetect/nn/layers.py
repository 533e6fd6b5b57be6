import math
from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Parameter


class Module:
    """Container that tracks parameters and submodules in assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(1.0 / fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape).astype(dtype))


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, k, stride=1, padding=0, rng=None, dtype=None, bias=True):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        dtype = dtype or T.DEFAULT_DTYPE
        fan_in = in_ch * k * k
        self.stride, self.padding = stride, padding
        self.weight = _uniform(rng, (out_ch, in_ch, k, k), fan_in, dtype)
        self.bias = _uniform(rng, (out_ch,), fan_in, dtype) if bias else None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    """Transposed convolution; the kernel is stored as ``[in_ch, out_ch, k, k]``."""

    def __init__(self, in_ch, out_ch, k, stride=1, padding=0, rng=None, dtype=None, bias=True):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        dtype = dtype or T.DEFAULT_DTYPE
        # fan-in of the equivalent forward conv seen from the output side
        fan_in = in_ch * k * k // (stride * stride) or 1
        self.stride, self.padding = stride, padding
        self.weight = _uniform(rng, (in_ch, out_ch, k, k), fan_in, dtype)
        self.bias = _uniform(rng, (out_ch,), fan_in, dtype) if bias else None

    def forward(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, in_f, out_f, rng=None, dtype=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        dtype = dtype or T.DEFAULT_DTYPE
        self.weight = _uniform(rng, (in_f, out_f), in_f, dtype)
        self.bias = _uniform(rng, (out_f,), in_f, dtype)

    def forward(self, x):
        return T.matmul(x, self.weight) + self.bias


class ResBlock(Module):
    """``x + conv1x1(relu(conv3x3(relu(x))))``."""

    def __init__(self, ch, hidden, rng=None, dtype=None):
        super().__init__()
        self.conv1 = Conv2d(ch, hidden, 3, padding=1, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(hidden, ch, 1, rng=rng, dtype=dtype)

    def forward(self, x):
        return x + self.conv2(T.relu(self.conv1(T.relu(x))))


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(layers):
            if isinstance(layer, Module):
                setattr(self, f"l{i}", layer)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class ReLU(Module):
    def forward(self, x):
        return T.relu(x)
