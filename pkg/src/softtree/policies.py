"""JSON persistence for every kind of maintenance policy.

Each document carries a ``kind`` tag: ``oblique_tree``, ``condition``,
``reliability``, ``constant``, ``soft_tree_actor`` or ``mlp_actor``.
"""

from __future__ import annotations

import json

import numpy as np

from . import envsim
from .baselines import ConditionPolicy, ReliabilityPolicy
from .oblique import tree_from_json, tree_to_json
from .rl import TreePolicy, actor_from_dict

STATE_NAMES = ["s1", "s2", "s3", "s4"]


class ConstantPolicy:
    """Always the same action (e.g. do-nothing)."""

    def __init__(self, action):
        if not 0 <= int(action) < envsim.N_ACTIONS:
            raise ValueError(f"action must be in 0..{envsim.N_ACTIONS - 1}")
        self.action = int(action)

    def __call__(self, states):
        return np.full(np.atleast_2d(states).shape[0], self.action)

    def to_dict(self):
        return {"kind": "constant", "action": self.action}


def policy_to_json(policy, **meta):
    if isinstance(policy, TreePolicy):
        return tree_to_json(policy.root, STATE_NAMES, envsim.ACTION_NAMES, **meta)
    doc = policy.to_dict()
    doc.update(meta)
    return json.dumps(doc, indent=1)


def policy_from_dict(doc, cfg=None):
    kind = doc.get("kind")
    if kind == "oblique_tree":
        root, _ = tree_from_json(json.dumps(doc))
        return TreePolicy(root)
    if kind == "condition":
        return ConditionPolicy(doc["table"])
    if kind == "reliability":
        return ReliabilityPolicy(doc["thresholds"]).bind(cfg or envsim.EnvConfig())
    if kind == "constant":
        return ConstantPolicy(doc["action"])
    if kind in ("soft_tree_actor", "mlp_actor"):
        return actor_from_dict(doc)
    raise ValueError(f"unknown policy kind {kind!r}")


def save_policy(policy, path, **meta):
    with open(path, "w") as fh:
        fh.write(policy_to_json(policy, **meta))


def load_policy(path, cfg=None):
    with open(path) as fh:
        return policy_from_dict(json.load(fh), cfg)
