"""Small fully-connected networks with hand-written reverse-mode gradients.

Forward returns a cache of layer inputs/pre-activations; backward consumes it
and produces per-parameter gradients plus the gradient w.r.t. the input (the
critic's input gradient is how the actor update reaches the action). Adam is
implemented alongside. Everything is plain numpy so the 64-bit test path and
the 32-bit training path share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    raise ValueError(f"unknown activation {name!r}")


class Mlp:
    """dims = (in, hidden..., out); hidden layers use `activation`, output is linear."""

    def __init__(self, dims, activation: str = "relu",
                 rng: np.random.Generator | None = None, dtype=np.float64):
        self.dims = tuple(int(d) for d in dims)
        self.activation = activation
        self.dtype = np.dtype(dtype)
        rng = rng or np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for d_in, d_out in zip(self.dims[:-1], self.dims[1:]):
            bound = 1.0 / np.sqrt(d_in)
            self.weights.append(rng.uniform(-bound, bound, (d_in, d_out)).astype(self.dtype))
            self.biases.append(rng.uniform(-bound, bound, d_out).astype(self.dtype))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x: np.ndarray):
        """Returns (output, cache). x is (B, in) or (in,)."""
        squeeze = x.ndim == 1
        h = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        inputs = []
        pre_acts = []
        for i in range(self.n_layers):
            inputs.append(h)
            z = h @ self.weights[i] + self.biases[i]
            if i < self.n_layers - 1:
                pre_acts.append(z)
                h = _act(self.activation, z)
            else:
                pre_acts.append(None)
                h = z
        out = h[0] if squeeze else h
        return out, (inputs, pre_acts, squeeze)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """grad_out: dL/d(output), shape (B, out). Returns (grads, grad_input)
        where grads is a list of (dW, db) matching the layers."""
        inputs, pre_acts, squeeze = cache
        delta = np.atleast_2d(np.asarray(grad_out, dtype=self.dtype))
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            if pre_acts[i] is not None:
                delta = delta * _act_grad(self.activation, pre_acts[i])
            dW = inputs[i].T @ delta
            db = delta.sum(axis=0)
            grads[i] = (dW, db)
            delta = delta @ self.weights[i].T
        grad_input = delta[0] if squeeze else delta
        return grads, grad_input

    # parameter plumbing -----------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy_from(self, other: "Mlp") -> None:
        for mine, theirs in zip(self.parameters(), other.parameters()):
            mine[...] = theirs

    def clone(self) -> "Mlp":
        twin = Mlp(self.dims, self.activation, dtype=self.dtype)
        twin.copy_from(self)
        return twin

    def polyak_from(self, online: "Mlp", tau: float) -> None:
        """target <- tau * online + (1 - tau) * target, elementwise exact."""
        for target_p, online_p in zip(self.parameters(), online.parameters()):
            target_p[...] = tau * online_p + (1.0 - tau) * target_p


def grads_as_list(grads) -> list[np.ndarray]:
    out = []
    for dW, db in grads:
        out.extend((dW, db))
    return out


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m[...] = b1 * m + (1.0 - b1) * g
            v[...] = b2 * v + (1.0 - b2) * g * g
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
