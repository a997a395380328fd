"""Hard oblique decision trees: prediction, freezing, pruning and export.

An internal node sends ``x`` left when ``w . x + b <= 0`` and right
otherwise.  Pruning routines never modify their input; they return new
trees (subtrees that are unchanged may be shared).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .lp import lp_feasible


@dataclass
class Leaf:
    label: int


@dataclass
class Internal:
    weights: np.ndarray
    bias: float
    left: "Node"
    right: "Node"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = float(self.bias)


Node = Union[Internal, Leaf]


@dataclass
class PathConstraints:
    """Rows of ``A x <= d`` collected along a decision path."""

    A: list = field(default_factory=list)
    d: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.A) != len(self.d):
            raise ValueError("A and d must have the same number of rows")

    def extend(self, row, bound):
        return PathConstraints(self.A + [np.asarray(row, dtype=float)], self.d + [float(bound)])

    def feasible(self):
        return lp_feasible(np.array(self.A), np.array(self.d))


def _route(node, X, idx, out):
    if isinstance(node, Leaf):
        out[idx] = node.label
        return
    if node.weights.shape[0] != X.shape[1]:
        raise ValueError(
            f"node expects {node.weights.shape[0]} features, input has {X.shape[1]}"
        )
    go_left = X[idx] @ node.weights + node.bias <= 0
    if np.any(go_left):
        _route(node.left, X, idx[go_left], out)
    if not np.all(go_left):
        _route(node.right, X, idx[~go_left], out)


def predict(root, x):
    """Label(s) reached by descending the tree for one input or a batch."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    out = np.empty(X.shape[0], dtype=int)
    _route(root, X, np.arange(X.shape[0]), out)
    return int(out[0]) if single else out


def freeze(tree):
    """Replace gates by hard splits and leaf logits by their argmax label."""

    def build(i):
        if i >= tree.n_internal:
            # np.argmax returns the first maximum: ties go to the lowest class
            return Leaf(int(np.argmax(tree.leaf_logits[i - tree.n_internal])))
        return Internal(tree.weights[i].copy(), tree.biases[i], build(2 * i + 1), build(2 * i + 2))

    return build(0)


def n_internal(node):
    if node is None or isinstance(node, Leaf):
        return 0
    return 1 + n_internal(node.left) + n_internal(node.right)


def n_leaves(node):
    if node is None:
        return 0
    if isinstance(node, Leaf):
        return 1
    return n_leaves(node.left) + n_leaves(node.right)


def tree_depth(node):
    """Number of levels including the leaf level (a single leaf has depth 1)."""
    if node is None:
        return 0
    if isinstance(node, Leaf):
        return 1
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def prune_trivial(root, epsilon=1e-4):
    """Zero small weights and bypass nodes left with no active weight.

    A weight is zeroed when ``|w_i| <= epsilon * max(|b|, 1)``.  A node whose
    weights are then all zero always takes the same branch, chosen by its
    bias: left when ``b <= 0``, right otherwise.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if isinstance(root, Leaf):
        return Leaf(root.label)
    left = prune_trivial(root.left, epsilon)
    right = prune_trivial(root.right, epsilon)
    w = root.weights.copy()
    w[np.abs(w) <= epsilon * max(abs(root.bias), 1.0)] = 0.0
    if not np.any(w):
        return left if root.bias <= 0 else right
    return Internal(w, root.bias, left, right)


def simplex_domain(n):
    """Constraints describing the probability simplex in ``n`` dimensions."""
    A = np.vstack([-np.eye(n), np.ones((1, n)), -np.ones((1, n))])
    d = np.concatenate([np.zeros(n), [1.0], [-1.0]])
    return PathConstraints(list(A), list(d))


def prune_infeasible(root, margin=0.0, domain=None):
    """Remove subtrees whose decision path has an empty feasible region.

    The left branch of ``(w, b)`` adds ``w . x <= -b``; the right branch adds
    ``-w . x <= b - margin``.  ``domain`` optionally restricts the input space
    (e.g. :func:`simplex_domain`).  Returns ``None`` when nothing is
    reachable.
    """

    def walk(node, cons):
        if cons.A and not cons.feasible():
            return None
        if isinstance(node, Leaf):
            return Leaf(node.label)
        left = walk(node.left, cons.extend(node.weights, -node.bias))
        right = walk(node.right, cons.extend(-node.weights, node.bias - margin))
        if left is None and right is None:
            return None
        if left is None:
            return right
        if right is None:
            return left
        return Internal(node.weights.copy(), node.bias, left, right)

    return walk(root, domain or PathConstraints())


def collapse_leaves(root):
    """Merge sibling leaves with equal labels, bottom-up, to a fixed point."""
    if root is None or isinstance(root, Leaf):
        return root
    left = collapse_leaves(root.left)
    right = collapse_leaves(root.right)
    if isinstance(left, Leaf) and isinstance(right, Leaf) and left.label == right.label:
        return Leaf(left.label)
    return Internal(root.weights.copy(), root.bias, left, right)


def prune_all(root, epsilon=1e-4, margin=0.0, domain=None):
    """Trivial nodes, then infeasible paths, then identical-leaf collapse."""
    node = prune_trivial(root, epsilon)
    node = prune_infeasible(node, margin=margin, domain=domain)
    return collapse_leaves(node)


# -- serialization ---------------------------------------------------------


def node_to_dict(node):
    if isinstance(node, Leaf):
        return {"label": int(node.label)}
    return {
        "weights": node.weights.tolist(),
        "bias": node.bias,
        "left": node_to_dict(node.left),
        "right": node_to_dict(node.right),
    }


def node_from_dict(d):
    if "label" in d:
        return Leaf(int(d["label"]))
    return Internal(d["weights"], d["bias"], node_from_dict(d["left"]), node_from_dict(d["right"]))


def tree_to_json(root, feature_names=None, class_names=None, **meta):
    doc = {"kind": "oblique_tree", "root": node_to_dict(root)}
    if feature_names is not None:
        doc["feature_names"] = list(feature_names)
    if class_names is not None:
        doc["class_names"] = list(class_names)
    doc.update(meta)
    return json.dumps(doc, indent=1)


def tree_from_json(text):
    """Parse a tree document (or a bare node record); returns ``(root, doc)``."""
    doc = json.loads(text)
    root = node_from_dict(doc["root"] if "root" in doc else doc)
    return root, doc


def _names(names, n, prefix):
    return list(names) if names is not None else [f"{prefix}{i + 1}" for i in range(n)]


def split_expression(weights, bias, feature_names=None, digits=3):
    """Human-readable ``sum w_i x_i + b`` with zero terms dropped."""
    names = _names(feature_names, len(weights), "x")
    terms = []
    for w, name in zip(weights, names):
        if w == 0:
            continue
        terms.append((w, f"{abs(w):.{digits}g}*{name}"))
    if bias != 0 or not terms:
        terms.append((bias, f"{abs(bias):.{digits}g}"))
    out = ("-" if terms[0][0] < 0 else "") + terms[0][1]
    for w, text in terms[1:]:
        out += (" - " if w < 0 else " + ") + text
    return out


def to_dot(root, feature_names=None, class_names=None, name="tree"):
    lines = [f"digraph {name} {{", "  node [fontname=Helvetica];"]
    counter = [0]

    def label_of(k):
        return class_names[k] if class_names is not None else f"class {k}"

    def visit(node):
        i = counter[0]
        counter[0] += 1
        if isinstance(node, Leaf):
            lines.append(f'  n{i} [shape=box, style=rounded, label="{label_of(node.label)}"];')
            return i
        expr = split_expression(node.weights, node.bias, feature_names)
        lines.append(f'  n{i} [shape=ellipse, label="{expr} <= 0"];')
        li = visit(node.left)
        ri = visit(node.right)
        lines.append(f'  n{i} -> n{li} [label="True"];')
        lines.append(f'  n{i} -> n{ri} [label="False"];')
        return i

    if root is not None:
        visit(root)
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_rule_text(root, feature_names=None, class_names=None, target="a"):
    """One case line per leaf; the last leaf reads 'otherwise'.

    A single split prints as::

        a = 2  if  5.72*s1 - 0.663*s2 - 3.88 <= 0
        a = 1  otherwise
    """

    def label_of(k):
        return class_names[k] if class_names is not None else str(k)

    if isinstance(root, Leaf):
        return f"{target} = {label_of(root.label)}\n"
    cases = []

    def visit(node, conds):
        if isinstance(node, Leaf):
            cases.append((node.label, conds))
            return
        expr = split_expression(node.weights, node.bias, feature_names)
        visit(node.left, conds + [f"{expr} <= 0"])
        visit(node.right, conds + [f"{expr} > 0"])

    visit(root, [])
    lines = [f"{target} = {label_of(k)}  if  " + " and ".join(c) for k, c in cases[:-1]]
    lines.append(f"{target} = {label_of(cases[-1][0])}  otherwise")
    return "\n".join(lines) + "\n"
