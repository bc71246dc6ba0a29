"""Parameter containers and the handful of layers the networks are built from."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, conv2d, linear, spectral_normalize


class Module:
    """Holds parameters (Tensor attributes), buffers and child modules.

    Traversal follows attribute insertion order, so parameter names and
    their order are stable across runs.
    """

    training = True

    def __init__(self):
        self.buffers: dict[str, np.ndarray] = {}

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            if isinstance(value, Tensor):
                out[prefix + key] = value
        for key, child in self._children():
            out.update(child.named_parameters(f"{prefix}{key}."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in getattr(self, "buffers", {}).items()}
        for key, child in self._children():
            out.update(child.named_buffers(f"{prefix}{key}."))
        return out

    def _buffer_slots(self, prefix: str = "") -> dict[str, tuple["Module", str]]:
        out = {prefix + k: (self, k) for k in getattr(self, "buffers", {})}
        for key, child in self._children():
            out.update(child._buffer_slots(f"{prefix}{key}."))
        return out

    def load_buffers(self, values: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, (module, key) in self._buffer_slots(prefix).items():
            if name in values:
                module.buffers[key] = np.array(values[name], dtype=np.float32)

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.named_parameters().values():
            p.requires_grad = flag
        return self

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())


# He-uniform gain for leaky-relu(0.2): keeps activation variance roughly
# constant through depth.  Biases start at zero.
LEAKY_GAIN = float(np.sqrt(2.0 / (1.0 + 0.2**2)))


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = LEAKY_GAIN * np.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1, sn: bool = False, bias: bool = True):
        super().__init__()
        fan_in = cin * k * k
        self.weight = _uniform(rng, (cout, cin, k, k), fan_in)
        if bias:
            self.bias = _zeros((cout,))
        self.stride = stride
        self.pad = k // 2
        self.sn = sn
        if sn:
            u = rng.standard_normal(cout)
            self.buffers["u"] = (u / np.linalg.norm(u)).astype(np.float32)

    def effective_weight(self) -> Tensor:
        if not self.sn:
            return self.weight
        w, u = spectral_normalize(self.weight, self.buffers["u"], iters=1 if self.training else 0)
        if self.training:
            self.buffers["u"] = u
        return w

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.effective_weight(), getattr(self, "bias", None), self.stride, self.pad)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator, bias: bool = True, sn: bool = False):
        super().__init__()
        self.weight = _uniform(rng, (dout, din), din)
        if bias:
            self.bias = _zeros((dout,))
        self.sn = sn
        if sn:
            u = rng.standard_normal(dout)
            self.buffers["u"] = (u / np.linalg.norm(u)).astype(np.float32)

    def effective_weight(self) -> Tensor:
        if not self.sn:
            return self.weight
        w, u = spectral_normalize(self.weight, self.buffers["u"], iters=1 if self.training else 0)
        if self.training:
            self.buffers["u"] = u
        return w

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.effective_weight(), getattr(self, "bias", None))
