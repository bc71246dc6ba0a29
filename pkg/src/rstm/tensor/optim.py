"""ADAM optimizer (no weight decay)."""

from __future__ import annotations

import numpy as np

from .core import Tensor


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        step_size = self.lr * np.sqrt(corr2) / corr1
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= (step_size * m / (np.sqrt(v) + self.eps * np.sqrt(corr2))).astype(p.dtype)

    def state_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        state = {f"{prefix}.t": np.array([self.t], dtype=np.float32)}
        for name in self.params:
            state[f"{prefix}.m.{name}"] = self.m[name]
            state[f"{prefix}.v.{name}"] = self.v[name]
        return state

    def load_state_tensors(self, prefix: str, state: dict[str, np.ndarray]) -> None:
        key = f"{prefix}.t"
        if key not in state:
            return
        self.t = int(state[key][0])
        for name in self.params:
            self.m[name] = state[f"{prefix}.m.{name}"].astype(np.float32).copy()
            self.v[name] = state[f"{prefix}.v.{name}"].astype(np.float32).copy()
