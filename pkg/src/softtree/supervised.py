"""Synthetic four-class dataset and soft-tree classifier training."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from .difftree import AnnealSchedule, SoftTree
from .nn import Adam
from .oblique import Internal, Leaf, predict as oblique_predict

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")


@dataclass
class ClassDataset:
    features: np.ndarray  # (n, 2)
    labels: np.ndarray  # (n,)
    split: np.ndarray  # (n,) of "train" / "validation" / "test"

    def __len__(self):
        return len(self.labels)

    def subset(self, name):
        mask = self.split == name
        return self.features[mask], self.labels[mask]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "label", "split"])
            for (x1, x2), y, s in zip(self.features, self.labels, self.split):
                w.writerow([repr(float(x1)), repr(float(x2)), int(y), s])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no data rows")
        return cls(
            features=np.array([[float(r["x1"]), float(r["x2"])] for r in rows]),
            labels=np.array([int(r["label"]) for r in rows]),
            split=np.array([r["split"] for r in rows]),
        )


def generate_dataset(n=10_000, seed=0, fractions=(0.6, 0.2, 0.2)):
    """Correlated bivariate Gaussian features labelled by CDF quartile.

    ``x1 = 2 z1 - z2`` and ``x2 = 2 z1 + z2`` for independent standard normal
    ``z``; the label is the quartile bin of ``Phi(z1) * Phi(z2)`` using the
    empirical quartiles of the generated batch.
    """
    if n < 4:
        raise ValueError(f"need at least 4 samples, got {n}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 2))
    X = np.column_stack([2 * z[:, 0] - z[:, 1], 2 * z[:, 0] + z[:, 1]])
    cdf = ndtr(z[:, 0]) * ndtr(z[:, 1])
    # rank-based bins give exactly balanced classes
    ranks = np.empty(n, dtype=int)
    ranks[np.argsort(cdf, kind="stable")] = np.arange(n)
    labels = (4 * ranks) // n

    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    split = np.empty(n, dtype=object)
    order = rng.permutation(n)
    split[order[:n_train]] = "train"
    split[order[n_train : n_train + n_val]] = "validation"
    split[order[n_train + n_val :]] = "test"
    return ClassDataset(X, labels, split.astype(str))


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X):
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))

    def unscale_tree(self, node):
        """Rewrite a tree fitted on standardized inputs in raw coordinates."""
        if isinstance(node, Leaf):
            return node
        w = node.weights / self.std
        b = node.bias - float(w @ self.mean)
        return Internal(w, b, self.unscale_tree(node.left), self.unscale_tree(node.right))


@dataclass
class TrainConfig:
    depth: int = 7
    learning_rate: float = 0.002
    batch_size: int = 32
    iterations: int = 100
    l1: float = 0.0
    T0: float = 1.0
    Tmin: float = 0.01
    stages: int | None = None  # defaults to `iterations`
    seed: int = 0

    def __post_init__(self):
        for name in ("depth", "learning_rate", "batch_size", "iterations", "T0", "Tmin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.l1 < 0:
            raise ValueError("l1 must be non-negative")

    @property
    def schedule(self):
        return AnnealSchedule(self.T0, self.Tmin, self.stages or self.iterations)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    tree: SoftTree
    scaler: Standardizer
    history: list = field(default_factory=list)


def _stage(it, iterations, S):
    return min(S, (it * S) // iterations)


def train_classifier(data, config=None, log_every=0):
    """Fit a soft tree by Adam on cross-entropy plus ``l1 * sum|W|``.

    One training iteration is one shuffled pass over the training split in
    minibatches of ``batch_size``.  The temperature is advanced one annealing
    stage per iteration, reaching ``Tmin`` after the last one.
    """
    config = config or TrainConfig()
    rng = np.random.default_rng(config.seed)
    X_raw, y = data.subset("train")
    if len(y) == 0:
        raise ValueError("training split is empty")
    scaler = Standardizer.fit(X_raw)
    X = scaler(X_raw)
    n_classes = int(max(data.labels.max() + 1, 2))
    schedule = config.schedule
    tree = SoftTree.init(config.depth, X.shape[1], n_classes, rng, temperature=schedule.T0)
    opt = Adam(tree.params(), lr=config.learning_rate)
    history = []
    for it in range(config.iterations):
        tree.temperature = schedule(_stage(it, config.iterations, schedule.S))
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = X[idx], y[idx]
            p = tree.forward(xb)
            py = np.maximum(p[np.arange(len(yb)), yb], 1e-300)
            loss = -np.log(py).mean() + config.l1 * tree.l1_penalty()
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at iteration {it}, T={tree.temperature:g}"
                )
            total += loss * len(yb)
            G = np.zeros_like(p)
            G[np.arange(len(yb)), yb] = -1.0 / (py * len(yb))
            grads = tree.backward(xb, G)
            grads.d_weights += config.l1 * tree.l1_grad()
            opt.step(tree.params(), grads.as_list())
        tree.temperature = schedule(_stage(it + 1, config.iterations, schedule.S))
        record = {
            "iteration": it + 1,
            "loss": total / len(y),
            "temperature": tree.temperature,
            "train_accuracy": float(np.mean(tree.predict(X) == y)),
        }
        history.append(record)
        if log_every and (it + 1) % log_every == 0:
            log.info("iter %(iteration)d loss %(loss).4f T %(temperature).4g acc %(train_accuracy).4f", record)
    return TrainResult(tree, scaler, history)


def evaluate_accuracy(model, X, y, scaler=None):
    """Fraction of samples whose predicted class equals the label.

    ``model`` is a :class:`SoftTree` (argmax of the mixture) or an oblique
    tree root.  ``scaler`` maps raw features to the model's input space.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty split")
    if scaler is not None:
        X = scaler(X)
    if isinstance(model, SoftTree):
        pred = model.predict(X)
    else:
        pred = oblique_predict(model, X)
    return float(np.mean(pred == y))
