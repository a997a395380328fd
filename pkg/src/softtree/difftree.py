"""Differentiable soft decision trees.

A soft tree of depth ``d`` is a complete binary tree with ``2**(d-1) - 1``
internal nodes and ``2**(d-1)`` leaves.  Each internal node ``j`` holds a
weight vector ``w_j`` and bias ``b_j`` and routes an input to its right
child with probability ``sigmoid((w_j . x + b_j) / T)``.  Each leaf holds a
vector of class logits; the model output is the mixture of the leaf softmax
distributions weighted by the probability of reaching each leaf.

Nodes are stored in heap order: internal node ``i`` has children ``2i+1``
and ``2i+2``; leaves follow the internal nodes and are numbered left to
right.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

LOG_FLOOR = 1e-12


def temp_sigmoid(z, T):
    """Temperature-controlled sigmoid ``1 / (1 + exp(-z / T))``.

    Saturates to 0 or 1 without overflow for large ``|z / T|``.
    """
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    return expit(np.asarray(z, dtype=float) / T)


def anneal_temperature(T0, Tmin, S, s):
    """Exponential annealing ``T0 * (Tmin / T0) ** (s / S)`` at stage ``s``."""
    if not 0 < Tmin <= T0:
        raise ValueError(f"need 0 < Tmin <= T0, got T0={T0}, Tmin={Tmin}")
    if S <= 0:
        raise ValueError(f"number of stages must be positive, got {S}")
    if s < 0 or s > S:
        raise ValueError(f"stage {s} outside [0, {S}]")
    if s == S:
        return float(Tmin)
    return float(T0 * (Tmin / T0) ** (s / S))


@dataclass(frozen=True)
class AnnealSchedule:
    T0: float = 1.0
    Tmin: float = 0.01
    S: int = 100

    def __call__(self, s):
        return anneal_temperature(self.T0, self.Tmin, self.S, s)

    @classmethod
    def fixed(cls, T, S=1):
        return cls(T0=T, Tmin=T, S=S)


@dataclass
class GradientBundle:
    d_weights: np.ndarray
    d_biases: np.ndarray
    d_leaf_logits: np.ndarray

    def as_list(self):
        return [self.d_weights, self.d_biases, self.d_leaf_logits]


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class SoftTree:
    depth: int
    weights: np.ndarray  # (n_internal, n_features)
    biases: np.ndarray  # (n_internal,)
    leaf_logits: np.ndarray  # (n_leaves, n_classes)
    temperature: float = 1.0

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be at least 2 (one internal node)")
        self.weights = np.asarray(self.weights, dtype=float)
        self.biases = np.asarray(self.biases, dtype=float)
        self.leaf_logits = np.asarray(self.leaf_logits, dtype=float)
        n_int = 2 ** (self.depth - 1) - 1
        if self.weights.ndim != 2 or self.weights.shape[0] != n_int:
            raise ValueError(f"weights must have shape ({n_int}, n_features)")
        if self.biases.shape != (n_int,):
            raise ValueError(f"biases must have shape ({n_int},)")
        if self.leaf_logits.ndim != 2 or self.leaf_logits.shape[0] != n_int + 1:
            raise ValueError(f"leaf_logits must have shape ({n_int + 1}, n_classes)")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @classmethod
    def init(cls, depth, n_features, n_classes, rng=None, temperature=1.0):
        """Random weights/biases from U(-0.5, 0.5)/sqrt(F); zero leaf logits."""
        rng = np.random.default_rng(rng)
        n_int = 2 ** (depth - 1) - 1
        scale = 1.0 / math.sqrt(n_features)
        return cls(
            depth=depth,
            weights=rng.uniform(-0.5, 0.5, (n_int, n_features)) * scale,
            biases=rng.uniform(-0.5, 0.5, n_int) * scale,
            leaf_logits=np.zeros((n_int + 1, n_classes)),
            temperature=temperature,
        )

    @property
    def n_internal(self):
        return self.weights.shape[0]

    @property
    def n_leaves(self):
        return self.leaf_logits.shape[0]

    @property
    def n_features(self):
        return self.weights.shape[1]

    @property
    def n_classes(self):
        return self.leaf_logits.shape[1]

    @property
    def n_params(self):
        return self.weights.size + self.biases.size + self.leaf_logits.size

    def params(self):
        """Trainable arrays, in the order used by :class:`GradientBundle`."""
        return [self.weights, self.biases, self.leaf_logits]

    def copy(self):
        return dataclasses.replace(
            self,
            weights=self.weights.copy(),
            biases=self.biases.copy(),
            leaf_logits=self.leaf_logits.copy(),
        )

    def set_temperature(self, T):
        """Return a tree sharing all parameters but with temperature ``T``."""
        if not T > 0:
            raise ValueError(f"temperature must be positive, got {T}")
        return dataclasses.replace(self, temperature=float(T))

    def _check_input(self, x):
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"expected {self.n_features} features, got shape {np.shape(x)}"
            )
        return X, single

    def gate_inputs(self, X):
        return X @ self.weights.T + self.biases

    def _levels(self):
        for level in range(self.depth - 1):
            lo = 2**level - 1
            yield level, lo, 2 * lo + 1

    def _reach(self, X):
        """Per-level reach probabilities plus the gate values."""
        z = self.gate_inputs(X) / self.temperature
        right = expit(z)
        left = expit(-z)
        reach = [np.ones((X.shape[0], 1))]
        for _, lo, hi in self._levels():
            P = reach[-1]
            nxt = np.empty((X.shape[0], 2 * P.shape[1]))
            nxt[:, 0::2] = P * left[:, lo:hi]
            nxt[:, 1::2] = P * right[:, lo:hi]
            reach.append(nxt)
        return reach, left, right

    def path_probabilities(self, x):
        X, single = self._check_input(x)
        P = self._reach(X)[0][-1]
        return P[0] if single else P

    def leaf_distributions(self):
        return _softmax(self.leaf_logits)

    def forward(self, x):
        """Class probabilities: mixture of leaf softmaxes by path probability."""
        X, single = self._check_input(x)
        p = self._reach(X)[0][-1] @ self.leaf_distributions()
        return p[0] if single else p

    predict_proba = forward

    def predict(self, x):
        return np.argmax(self.forward(x), axis=-1)

    def log_proba(self, x):
        """Log class probabilities from floored path products.

        Each gate factor is floored at ``1e-12`` before its log is taken, so
        the result stays finite at very low temperatures.
        """
        X, single = self._check_input(x)
        z = self.gate_inputs(X) / self.temperature
        log_right = np.log(np.maximum(expit(z), LOG_FLOOR))
        log_left = np.log(np.maximum(expit(-z), LOG_FLOOR))
        logP = np.zeros((X.shape[0], 1))
        for _, lo, hi in self._levels():
            nxt = np.empty((X.shape[0], 2 * logP.shape[1]))
            nxt[:, 0::2] = logP + log_left[:, lo:hi]
            nxt[:, 1::2] = logP + log_right[:, lo:hi]
            logP = nxt
        out = logsumexp(logP[:, :, None] + _log_softmax(self.leaf_logits)[None], axis=1)
        return out[0] if single else out

    def l1_penalty(self):
        """Sum of absolute internal-node feature weights (biases excluded)."""
        return float(np.abs(self.weights).sum())

    def l1_grad(self):
        return np.sign(self.weights)

    def backward(self, x, upstream):
        """Gradient of ``sum(upstream * forward(x))`` w.r.t. all parameters.

        ``upstream`` has the shape of ``forward(x)``.  For a batch the
        contributions of all rows are summed.
        """
        X, single = self._check_input(x)
        G = np.atleast_2d(np.asarray(upstream, dtype=float))
        if G.shape != (X.shape[0], self.n_classes):
            raise ValueError(
                f"upstream shape {np.shape(upstream)} does not match output "
                f"({X.shape[0]}, {self.n_classes})"
            )
        reach, left, right = self._reach(X)
        Q = self.leaf_distributions()
        P = reach[-1]

        dQ = P.T @ G
        d_logits = Q * (dQ - (dQ * Q).sum(axis=1, keepdims=True))

        # v holds dL/d(reach) for the nodes of the current level
        v = G @ Q.T
        dz = np.empty((X.shape[0], self.n_internal))
        for level, lo, hi in reversed(list(self._levels())):
            gl, gr = left[:, lo:hi], right[:, lo:hi]
            vl, vr = v[:, 0::2], v[:, 1::2]
            dz[:, lo:hi] = reach[level] * (vr - vl) * gl * gr / self.temperature
            v = gl * vl + gr * vr
        return GradientBundle(
            d_weights=dz.T @ X,
            d_biases=dz.sum(axis=0),
            d_leaf_logits=d_logits,
        )

    def to_dict(self):
        return {
            "depth": self.depth,
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "leaf_logits": self.leaf_logits.tolist(),
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, d):
        n_int = 2 ** (d["depth"] - 1) - 1
        weights = np.asarray(d["weights"], dtype=float).reshape(n_int, d["n_features"])
        logits = np.asarray(d["leaf_logits"], dtype=float).reshape(n_int + 1, d["n_classes"])
        return cls(
            depth=int(d["depth"]),
            weights=weights,
            biases=np.asarray(d["biases"], dtype=float).reshape(n_int),
            leaf_logits=logits,
            temperature=float(d["temperature"]),
        )

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def n_params(depth, n_features, n_classes):
    n_int = 2 ** (depth - 1) - 1
    return n_int * (n_features + 1) + (n_int + 1) * n_classes
