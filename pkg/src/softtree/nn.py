"""Small dense networks with ELU hidden activations, plus an Adam optimizer."""

from __future__ import annotations

import json
import math

import numpy as np


def elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad(z):
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


class Mlp:
    """Fully connected network: ELU on hidden layers, identity on the output."""

    def __init__(self, sizes, weights=None, biases=None, rng=None, out_scale=1.0):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2:
            raise ValueError("need at least an input and an output size")
        if weights is None:
            rng = np.random.default_rng(rng)
            weights, biases = [], []
            for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
                # He-style uniform bound
                limit = math.sqrt(6.0 / n_in)
                W = rng.uniform(-limit, limit, (n_in, n_out))
                if i == len(self.sizes) - 2:
                    W *= out_scale
                weights.append(W)
                biases.append(np.zeros(n_out))
        self.weights = [np.asarray(W, dtype=float) for W in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i} has incompatible shapes {W.shape}, {b.shape}")

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self):
        return Mlp(self.sizes, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def _check(self, x):
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.sizes[0]:
            raise ValueError(f"expected {self.sizes[0]} inputs, got shape {np.shape(x)}")
        return X, single

    def forward(self, x, return_cache=False):
        X, single = self._check(x)
        cache = [X]
        h = X
        n = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if i < n - 1:
                cache.append(z)
                h = elu(z)
            else:
                h = z
        out = h[0] if single else h
        if return_cache:
            return out, cache
        return out

    __call__ = forward

    def backward(self, x, upstream, cache=None):
        """Gradients of ``sum(upstream * forward(x))``, as ``params()`` order."""
        X, _ = self._check(x)
        if cache is None:
            _, cache = self.forward(X, return_cache=True)
        G = np.atleast_2d(np.asarray(upstream, dtype=float))
        if G.shape != (X.shape[0], self.sizes[-1]):
            raise ValueError(f"upstream shape {G.shape} does not match output")
        grads = []
        n = len(self.weights)
        for i in reversed(range(n)):
            h_in = X if i == 0 else elu(cache[i])
            grads.append(G.sum(axis=0))
            grads.append(h_in.T @ G)
            if i > 0:
                G = (G @ self.weights[i].T) * elu_grad(cache[i])
        return grads[::-1]

    def to_dict(self):
        return {
            "sizes": self.sizes,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["sizes"], d["weights"], d["biases"])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def mlp_forward(net, x):
    return net.forward(x)


class Adam:
    """Bias-corrected Adam; updates parameter arrays in place."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        if len(params) != len(self.m) or len(grads) != len(params):
            raise ValueError("parameter/gradient list does not match optimizer state")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient passed to Adam")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def adam_step(params, grads, state):
    state.step(params, grads)
    return params, state
