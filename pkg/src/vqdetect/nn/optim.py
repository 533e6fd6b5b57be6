from dataclasses import dataclass, asdict

import numpy as np


@dataclass
class OptimConfig:
    name: str = "adam"
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def to_dict(self):
        return asdict(self)


class SGD:
    def __init__(self, params, lr=0.01):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.grad is not None and p.trainable:
                p.data -= (self.lr * p.grad).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self):
        return {}

    def load_state_arrays(self, arrays):
        pass


class Adam:
    """Adam with bias-corrected first/second moment estimates."""

    def __init__(self, params, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None or not p.trainable:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self):
        out = {"adam.t": np.array([self.t], dtype=np.float32)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adam.m.{i}"] = m
            out[f"adam.v.{i}"] = v
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["adam.t"][0])
        for i in range(len(self.params)):
            self.m[i][...] = arrays[f"adam.m.{i}"]
            self.v[i][...] = arrays[f"adam.v.{i}"]


def make_optimizer(params, config=None):
    config = config or OptimConfig()
    if config.name == "adam":
        return Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    if config.name == "sgd":
        return SGD(params, config.lr)
    raise ValueError(f"unknown optimizer {config.name!r}")


def optimizer_step(params, grads, state, config):
    """Functional single step on raw arrays; returns ``(new_params, new_state)``.

    ``state`` is ``None`` on the first call. SGD ignores it.
    """
    if config.name == "sgd":
        return [p - config.lr * g for p, g in zip(params, grads)], state
    if config.name != "adam":
        raise ValueError(f"unknown optimizer {config.name!r}")
    if state is None:
        state = {"t": 0, "m": [np.zeros_like(p) for p in params], "v": [np.zeros_like(p) for p in params]}
    t = state["t"] + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m = config.beta1 * m + (1 - config.beta1) * g
        v = config.beta2 * v + (1 - config.beta2) * g * g
        mh = m / (1 - config.beta1 ** t)
        vh = v / (1 - config.beta2 ** t)
        new_p.append(p - config.lr * mh / (np.sqrt(vh) + config.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, {"t": t, "m": new_m, "v": new_v}
