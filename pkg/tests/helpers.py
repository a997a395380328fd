import numpy as np

from softtree.difftree import SoftTree
from softtree.oblique import Internal, Leaf


def random_tree(rng, depth, n_features, n_classes, T=1.0, scale=1.0):
    n_int = 2 ** (depth - 1) - 1
    return SoftTree(
        depth=depth,
        weights=rng.normal(0, scale, (n_int, n_features)),
        biases=rng.normal(0, scale, n_int),
        leaf_logits=rng.normal(0, 1, (n_int + 1, n_classes)),
        temperature=T,
    )


def random_oblique(rng, depth, n_features=2, n_classes=3):
    if depth == 1:
        return Leaf(int(rng.integers(n_classes)))
    return Internal(rng.normal(size=n_features), rng.normal(),
                    random_oblique(rng, depth - 1, n_features, n_classes),
                    random_oblique(rng, depth - 1, n_features, n_classes))


def stump(w, b, left=0, right=1):
    return Internal(np.asarray(w, float), b, Leaf(left), Leaf(right))
