"""Small ReLU multilayer perceptron for action values, with exact backprop and Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def init_params(sizes, rng: np.random.Generator) -> list[np.ndarray]:
    """He-uniform weights, zero biases; ``sizes = [in, hidden..., out]``."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / fan_in)
        params.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def check_finite(params):
    if not all(np.all(np.isfinite(p)) for p in params):
        raise FloatingPointError("non-finite network parameters")


def q_forward(params, X, return_cache: bool = False):
    """Action values for inputs ``X`` of shape ``(B, in)``."""
    check_finite(params)
    h = np.atleast_2d(np.asarray(X, dtype=float))
    cache = [h]
    n_layers = len(params) // 2
    for k in range(n_layers):
        z = h @ params[2 * k] + params[2 * k + 1]
        h = np.maximum(z, 0.0) if k < n_layers - 1 else z
        cache.append(z)
    return (h, cache) if return_cache else h


def bellman_loss_and_grad(params, X, actions, targets):
    """Mean of ``(y - Q(x, a))^2`` and its gradient with respect to every parameter."""
    Q, cache = q_forward(params, X, return_cache=True)
    B = Q.shape[0]
    rows = np.arange(B)
    err = Q[rows, actions] - targets
    loss = float(np.mean(err**2))
    dQ = np.zeros_like(Q)
    dQ[rows, actions] = 2.0 * err / B
    grads = [None] * len(params)
    n_layers = len(params) // 2
    delta = dQ
    for k in reversed(range(n_layers)):
        h_in = cache[0] if k == 0 else np.maximum(cache[k], 0.0)
        grads[2 * k] = h_in.T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params[2 * k].T) * (cache[k] > 0)
    return loss, grads


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if self.lr == 0.0:
            return
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class SGD:
    lr: float = 1e-3

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g
