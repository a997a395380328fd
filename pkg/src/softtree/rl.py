"""PPO with interchangeable soft-tree or MLP actors and an MLP critic."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import envsim
from .difftree import AnnealSchedule, SoftTree
from .nn import Adam, Mlp
from .oblique import (Internal, Leaf, collapse_leaves, freeze, prune_infeasible, prune_trivial,
                      simplex_domain)
from .supervised import Standardizer

log = logging.getLogger(__name__)


@dataclass
class PpoConfig:
    clip: float = 0.01
    entropy_coef: float = 0.05
    critic_coef: float = 0.5
    gae_lambda: float = 0.95
    batches: int = 100
    episodes_per_batch: int = 100
    minibatch_size: int = 200
    minibatches_per_batch: int = 100
    learning_rate: float = 0.001
    discount: float = 1 / 1.03
    actor: str = "tree"  # "tree" or "mlp"
    tree_depth: int = 11
    l1: float = 0.01
    T0: float = 1.0
    Tmin: float = 0.01
    stages: int | None = None  # defaults to `batches`
    actor_hidden: tuple = (64, 64)
    critic_hidden: tuple = (32, 32, 32)
    reward_scale: float = 1000.0
    l1_mode: str = "proximal"  # "proximal" (soft-threshold after each step) or "gradient"
    standardize: bool = True  # tree actor sees standardized CS vectors

    def __post_init__(self):
        if self.actor not in ("tree", "mlp"):
            raise ValueError(f"unknown actor kind {self.actor!r}")
        if self.l1_mode not in ("proximal", "gradient"):
            raise ValueError(f"unknown l1_mode {self.l1_mode!r}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and f.name != "l1" and v <= 0:
                raise ValueError(f"{f.name} must be positive")
        if self.l1 < 0:
            raise ValueError("l1 must be non-negative")
        self.actor_hidden = tuple(self.actor_hidden)
        self.critic_hidden = tuple(self.critic_hidden)

    @property
    def schedule(self):
        return AnnealSchedule(self.T0, self.Tmin, self.stages or self.batches)

    def to_dict(self):
        d = asdict(self)
        d["actor_hidden"] = list(self.actor_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown PpoConfig keys: {sorted(unknown)}")
        return cls(**d)


# -- actors ----------------------------------------------------------------


class TreeActor:
    """Soft-tree policy: action distribution is the tree's class mixture."""

    kind = "tree"

    def __init__(self, tree, scaler=None):
        self.tree = tree
        self.scaler = scaler

    @classmethod
    def init(cls, depth, n_states, n_actions, rng, scaler=None):
        return cls(SoftTree.init(depth, n_states, n_actions, rng), scaler)

    def _inputs(self, states):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return states if self.scaler is None else self.scaler(states)

    @property
    def temperature(self):
        return self.tree.temperature

    @temperature.setter
    def temperature(self, T):
        self.tree = self.tree.set_temperature(T)

    def params(self):
        return self.tree.params()

    @property
    def n_params(self):
        return self.tree.n_params

    def action_probs(self, states):
        return self.tree.forward(self._inputs(states))

    def log_probs(self, states):
        return self.tree.log_proba(self._inputs(states))

    def grad_log_probs(self, states, G, logp=None):
        """Parameter gradients of ``sum(G * log_probs(states))``."""
        if logp is None:
            logp = self.log_probs(states)
        return self.tree.backward(self._inputs(states), G / np.exp(logp)).as_list()

    def shrink(self, amount):
        """Proximal step for the L1 penalty: soft-threshold split weights."""
        w = self.tree.weights
        w[:] = np.sign(w) * np.maximum(np.abs(w) - amount, 0.0)

    def penalty(self):
        return self.tree.l1_penalty()

    def penalty_grads(self):
        return [self.tree.l1_grad(), np.zeros_like(self.tree.biases), np.zeros_like(self.tree.leaf_logits)]

    def to_dict(self):
        d = {"kind": "soft_tree_actor", "tree": self.tree.to_dict()}
        if self.scaler is not None:
            d["scaler"] = self.scaler.to_dict()
        return d


class MlpActor:
    """Dense policy network producing action logits."""

    kind = "mlp"

    def __init__(self, net):
        self.net = net

    @classmethod
    def init(cls, n_states, n_actions, hidden, rng):
        return cls(Mlp([n_states, *hidden, n_actions], rng=rng, out_scale=0.01))

    def params(self):
        return self.net.params()

    @property
    def n_params(self):
        return self.net.n_params

    def log_probs(self, states):
        z = np.atleast_2d(self.net.forward(states))
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def action_probs(self, states):
        return np.exp(self.log_probs(states))

    def grad_log_probs(self, states, G, logp=None):
        if logp is None:
            logp = self.log_probs(states)
        p = np.exp(logp)
        d_logits = G - p * G.sum(axis=1, keepdims=True)
        return self.net.backward(states, d_logits)

    def penalty(self):
        return 0.0

    def penalty_grads(self):
        return [np.zeros_like(p) for p in self.params()]

    def to_dict(self):
        return {"kind": "mlp_actor", "net": self.net.to_dict()}


def actor_from_dict(d):
    if d["kind"] == "soft_tree_actor":
        scaler = Standardizer.from_dict(d["scaler"]) if "scaler" in d else None
        return TreeActor(SoftTree.from_dict(d["tree"]), scaler)
    if d["kind"] == "mlp_actor":
        return MlpActor(Mlp.from_dict(d["net"]))
    raise ValueError(f"unknown actor kind {d['kind']!r}")


def entropy(p):
    """Shannon entropy (nats) of each row of ``p``; ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


# -- rollouts ----------------------------------------------------------------


@dataclass
class Trajectory:
    """One batch of equal-length episodes, arrays shaped ``(episodes, steps, ...)``."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    bootstrap: np.ndarray  # critic value of the state after the last step
    costs: np.ndarray  # unscaled step costs
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def n_steps(self):
        return self.actions.size

    def attach_advantages(self, gamma, lam):
        adv, ret = gae(self.rewards, self.values, self.bootstrap, gamma, lam)
        self.advantages, self.returns = adv, ret
        for name in ("states", "actions", "rewards", "values", "log_probs", "advantages", "returns"):
            getattr(self, name).flags.writeable = False
        return self

    def flat(self):
        n = self.n_steps
        return (
            self.states.reshape(n, -1),
            self.actions.reshape(n),
            self.log_probs.reshape(n),
            self.advantages.reshape(n),
            self.returns.reshape(n),
        )


def collect_batch(cfg, actor, critic, config, rng):
    """Run ``episodes_per_batch`` episodes of ``cfg.episode_length`` steps.

    Episodes start from Dirichlet restarts and sample actions from the
    actor.  Rewards are negative costs divided by ``config.reward_scale``.
    """
    n, L = config.episodes_per_batch, cfg.episode_length
    s = envsim.reset(rng, cfg.theta, size=n)
    states = np.empty((n, L, envsim.N_STATES))
    actions = np.empty((n, L), dtype=int)
    logps = np.empty((n, L))
    values = np.empty((n, L))
    costs = np.empty((n, L))
    for t in range(L):
        logp_all = actor.log_probs(s)
        p = np.exp(logp_all)
        p /= p.sum(axis=1, keepdims=True)
        u = rng.random(n)[:, None]
        a = np.minimum((p.cumsum(axis=1) < u).sum(axis=1), p.shape[1] - 1)
        states[:, t] = s
        actions[:, t] = a
        logps[:, t] = logp_all[np.arange(n), a]
        values[:, t] = critic.forward(s)[:, 0]
        out = envsim.step(s, a, cfg)
        costs[:, t] = out.cost
        s = out.next_state
    bootstrap = critic.forward(s)[:, 0]
    return Trajectory(states, actions, -costs / config.reward_scale, values, logps, bootstrap, costs)


def gae(rewards, values, bootstrap, gamma, lam):
    """Generalized advantage estimates and return targets.

    Works on the last axis; ``bootstrap`` is the value after the final step
    (episodes are truncated, never terminal).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must be aligned")
    next_values = np.concatenate([values[..., 1:], np.asarray(bootstrap, dtype=float)[..., None]], axis=-1)
    delta = rewards + gamma * next_values - values
    adv = np.empty_like(delta)
    running = np.zeros(delta.shape[:-1])
    for t in reversed(range(delta.shape[-1])):
        running = delta[..., t] + gamma * lam * running
        adv[..., t] = running
    return adv, adv + values


def normalize(x):
    sd = x.std()
    return (x - x.mean()) / (sd if sd > 0 else 1.0)


# -- PPO update --------------------------------------------------------------


@dataclass
class LossParts:
    total: float
    surrogate: float
    critic: float
    entropy: float
    penalty: float
    clip_fraction: float


def ppo_loss_and_grads(actor, critic, X, actions, old_logp, adv, returns, config):
    """PPO minibatch loss and gradients for actor and critic parameters.

    loss = -mean(min(r A, clip(r) A)) + c_v mean((V - R)^2)
           - c_e mean(H) + l1 * penalty(actor)
    """
    n = len(actions)
    rows = np.arange(n)
    logp = actor.log_probs(X)
    p = np.exp(logp)
    ratio = np.exp(logp[rows, actions] - old_logp)
    lo, hi = 1.0 - config.clip, 1.0 + config.clip
    unclipped = ratio * adv
    clipped = np.clip(ratio, lo, hi) * adv
    surrogate = np.minimum(unclipped, clipped)
    active = ((adv >= 0) & (ratio <= hi)) | ((adv < 0) & (ratio >= lo))
    H = -(p * logp).sum(axis=1)

    G = np.zeros_like(logp)
    G[rows, actions] = -np.where(active, ratio * adv, 0.0) / n
    G += config.entropy_coef / n * p * (logp + 1.0)
    actor_grads = actor.grad_log_probs(X, G, logp)
    penalty = 0.0
    if config.l1 and actor.kind == "tree" and config.l1_mode == "gradient":
        penalty = actor.penalty()
        for g, pg in zip(actor_grads, actor.penalty_grads()):
            g += config.l1 * pg

    V, cache = critic.forward(X, return_cache=True)
    err = V[:, 0] - returns
    critic_grads = critic.backward(X, (2.0 * config.critic_coef / n * err)[:, None], cache)

    parts = LossParts(
        total=float(-surrogate.mean() + config.critic_coef * np.mean(err**2)
                    - config.entropy_coef * H.mean() + config.l1 * penalty),
        surrogate=float(surrogate.mean()),
        critic=float(np.mean(err**2)),
        entropy=float(H.mean()),
        penalty=float(penalty),
        clip_fraction=float(np.mean(~active)),
    )
    return parts, actor_grads, critic_grads


def ppo_update(actor, critic, batch, config, actor_opt, critic_opt, rng):
    """One Adam step per minibatch; returns averaged loss diagnostics.

    Each of the ``minibatches_per_batch`` minibatches is an independent
    random draw of ``minibatch_size`` steps from the batch.
    """
    X, actions, old_logp, adv, returns = batch.flat()
    adv = normalize(adv)
    n = len(actions)
    size = min(config.minibatch_size, n)
    history = []
    for _ in range(config.minibatches_per_batch):
        idx = rng.choice(n, size=size, replace=False)
        parts, ga, gc = ppo_loss_and_grads(
            actor, critic, X[idx], actions[idx], old_logp[idx], adv[idx], returns[idx], config
        )
        if not np.isfinite(parts.total):
            raise FloatingPointError(f"non-finite PPO loss: {parts}")
        actor_opt.step(actor.params(), ga)
        if config.l1 and actor.kind == "tree" and config.l1_mode == "proximal":
            actor.shrink(config.learning_rate * config.l1)
            parts.penalty = actor.penalty()
            parts.total += config.l1 * parts.penalty
        critic_opt.step(critic.params(), gc)
        history.append(parts)
    return LossParts(*(float(np.mean([getattr(h, f.name) for h in history])) for f in fields(LossParts)))


@dataclass
class RlResult:
    actor: object
    critic: Mlp
    curve: list = field(default_factory=list)


def dirichlet_scaler(theta):
    """Standardizer from the exact mean and std of a Dirichlet(theta)."""
    theta = np.asarray(theta, dtype=float)
    m = theta / theta.sum()
    return Standardizer(m, np.sqrt(m * (1.0 - m) / (theta.sum() + 1.0)))


def make_actor(config, rng, cfg=None):
    if config.actor == "tree":
        scaler = dirichlet_scaler((cfg or envsim.EnvConfig()).theta) if config.standardize else None
        actor = TreeActor.init(config.tree_depth, envsim.N_STATES, envsim.N_ACTIONS, rng, scaler)
        actor.temperature = config.schedule.T0
        return actor
    return MlpActor.init(envsim.N_STATES, envsim.N_ACTIONS, config.actor_hidden, rng)


def train_rl(cfg, config=None, seed=0, callback=None):
    """Train an actor-critic pair with PPO; one annealing stage per batch."""
    config = config or PpoConfig()
    rng = np.random.default_rng(seed)
    actor = make_actor(config, rng, cfg)
    critic = Mlp([envsim.N_STATES, *config.critic_hidden, 1], rng=rng)
    actor_opt = Adam(actor.params(), lr=config.learning_rate)
    critic_opt = Adam(critic.params(), lr=config.learning_rate)
    schedule = config.schedule
    gamma = config.discount
    disc = gamma ** np.arange(1, cfg.episode_length + 1)
    curve = []
    for b in range(config.batches):
        if actor.kind == "tree":
            actor.temperature = schedule(min(schedule.S, b * schedule.S // config.batches))
        batch = collect_batch(cfg, actor, critic, config, rng)
        batch.attach_advantages(gamma, config.gae_lambda)
        parts = ppo_update(actor, critic, batch, config, actor_opt, critic_opt, rng)
        if actor.kind == "tree":
            actor.temperature = schedule(min(schedule.S, (b + 1) * schedule.S // config.batches))
        record = {
            "batch": b + 1,
            "mean_cost": float((batch.costs * disc).sum(axis=1).mean()),
            "temperature": actor.temperature if actor.kind == "tree" else None,
            **asdict(parts),
        }
        curve.append(record)
        log.info("batch %d cost %.1f loss %.4f", b + 1, record["mean_cost"], parts.total)
        if callback is not None:
            callback(record, actor, critic)
    return RlResult(actor, critic, curve)


# -- extracted policies ------------------------------------------------------


class TreePolicy:
    """Greedy policy backed by an oblique tree over CS vectors."""

    def __init__(self, root):
        self.root = root

    def __call__(self, states):
        from .oblique import predict

        return predict(self.root, np.atleast_2d(states))


def extract_policy(actor, epsilon=0.001, simplex=True):
    """Freeze a trained tree actor and prune it into an oblique policy tree.

    Trivial weights are judged in the coordinates the actor was trained
    in; the result is then expressed over raw CS proportions.  With
    ``simplex`` the infeasible-path check also uses the fact that CS
    vectors are non-negative and sum to one.
    """
    tree = actor.tree if isinstance(actor, TreeActor) else actor
    scaler = actor.scaler if isinstance(actor, TreeActor) else None
    root = prune_trivial(freeze(tree), epsilon)
    if scaler is not None:
        root = scaler.unscale_tree(root)
    domain = simplex_domain(tree.n_features) if simplex else None
    return collapse_leaves(prune_infeasible(root, domain=domain))


def augment_policy(root, weights, bias, action, position="", fire_on="right"):
    """Graft a fixed-action rule above the node reached by ``position``.

    ``position`` is a string of ``L``/``R`` moves from the root (empty for
    the root itself).  The rule fires on the right branch (``w.s + b > 0``)
    by default, routing the other branch to the existing subtree.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 1 or not np.all(np.isfinite(weights)) or not np.isfinite(bias):
        raise ValueError("rule weights must be a finite vector and bias a finite number")
    if fire_on not in ("left", "right"):
        raise ValueError("fire_on must be 'left' or 'right'")
    if any(c not in "LR" for c in position):
        raise ValueError(f"position must be a string of L/R moves, got {position!r}")

    def graft(node):
        if isinstance(node, Internal) and node.weights.shape != weights.shape:
            raise ValueError("rule dimension does not match the tree")
        fixed = Leaf(int(action))
        if fire_on == "right":
            return Internal(weights, bias, node, fixed)
        return Internal(weights, bias, fixed, node)

    def walk(node, path):
        if not path:
            return graft(node)
        if isinstance(node, Leaf):
            raise ValueError(f"position {position!r} runs past a leaf")
        if path[0] == "L":
            return Internal(node.weights, node.bias, walk(node.left, path[1:]), node.right)
        return Internal(node.weights, node.bias, node.left, walk(node.right, path[1:]))

    return walk(root, position)
