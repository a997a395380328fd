"""Markov deterioration model of a bridge element with life-cycle costs.

The state is the vector of proportions of condition states CS1..CS4.  Every
function accepts a single state of shape ``(4,)`` or a batch ``(n, 4)``.
Actions are 0 (do nothing), 1 (maintenance), 2 (repair), 3 (rehabilitation)
and 4 (replacement).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import digamma, ndtr, polygamma

log = logging.getLogger(__name__)

N_STATES = 4
N_ACTIONS = 5
ACTION_NAMES = ("do-nothing", "maintenance", "repair", "rehabilitation", "replacement")
STOCHASTIC_TOL = 1e-6

DO_NOTHING = [
    [0.9381, 0.0619, 0.0, 0.0],
    [0.0, 0.9356, 0.0644, 0.0],
    [0.0, 0.0, 0.8888, 0.1112],
    [0.0, 0.0, 0.0, 1.0],
]
MAINTENANCE = [
    [0.99, 0.01, 0.0, 0.0],
    [0.15, 0.975, 0.01, 0.0],
    [0.0, 0.03, 0.95, 0.02],
    [0.0, 0.0, 0.0, 1.0],
]
REPAIR = [
    [1.0, 0.0, 0.0, 0.0],
    [0.25, 0.725, 0.025, 0.0],
    [0.0, 0.5, 0.45, 0.05],
    [0.0, 0.0, 0.5, 0.5],
]
REHABILITATION = [
    [1.0, 0.0, 0.0, 0.0],
    [0.5, 0.5, 0.0, 0.0],
    [0.4, 0.5, 0.1, 0.0],
    [0.4, 0.5, 0.1, 0.0],
]
REPLACEMENT = [[1.0, 0.0, 0.0, 0.0]] * 4

DEFAULT_TRANSITIONS = [DO_NOTHING, MAINTENANCE, REPAIR, REHABILITATION, REPLACEMENT]


def load_transitions(matrices, repair=True):
    """Validate five 4x4 transition matrices.

    Rows whose sum is off by more than ``1e-6`` are renormalized
    proportionally (and a warning is logged) when ``repair`` is true;
    otherwise they raise.  Negative entries always raise.  Returns the
    validated ``(5, 4, 4)`` array and a list of warning messages.
    """
    T = np.array(matrices, dtype=float)
    if T.shape != (N_ACTIONS, N_STATES, N_STATES):
        raise ValueError(f"expected five 4x4 matrices, got shape {T.shape}")
    if np.any(T < 0) or not np.all(np.isfinite(T)):
        raise ValueError("transition matrices must be finite and non-negative")
    warnings = []
    sums = T.sum(axis=2)
    for a, i in zip(*np.nonzero(np.abs(sums - 1.0) > STOCHASTIC_TOL)):
        if not repair or sums[a, i] <= 0:
            raise ValueError(f"row {i} of action {a} sums to {sums[a, i]:.6g}")
        msg = f"action {a} row {i} sums to {sums[a, i]:.6g}; renormalized"
        log.warning(msg)
        warnings.append(msg)
    T = T / T.sum(axis=2, keepdims=True)
    return T, warnings


@dataclass
class EnvConfig:
    transitions: list = field(default_factory=lambda: [np.array(m).tolist() for m in DEFAULT_TRANSITIONS])
    action_costs: list = field(default_factory=lambda: [0.0, 10.0, 100.0, 1000.0, 2000.0])
    beta: list = field(default_factory=lambda: [4.2, 3.5, 3.0, 2.5])
    failure_cost: float = 100_000.0
    discount: float = 1 / 1.03
    dirichlet_theta: list = field(default_factory=lambda: [0.1496, 0.1114, 0.0500, 0.0393])
    horizon: int = 200
    episode_length: int = 20
    repair_rows: bool = True

    def __post_init__(self):
        # raw matrices are kept as given; the validated copy lives in ``T``
        self.transitions = np.asarray(self.transitions, dtype=float).tolist()
        self.T, self.warnings = load_transitions(self.transitions, repair=self.repair_rows)
        self.costs = np.asarray(self.action_costs, dtype=float)
        self.beta_arr = np.asarray(self.beta, dtype=float)
        self.theta = np.asarray(self.dirichlet_theta, dtype=float)
        if self.costs.shape != (N_ACTIONS,) or np.any(self.costs < 0):
            raise ValueError("action_costs must be five non-negative numbers")
        if self.beta_arr.shape != (N_STATES,):
            raise ValueError("beta must have four entries")
        if self.failure_cost < 0:
            raise ValueError("failure_cost must be non-negative")
        if not 0 <= self.discount <= 1:
            raise ValueError("discount must lie in [0, 1]")
        if self.horizon < 1 or self.episode_length < 1:
            raise ValueError("horizon and episode_length must be positive")
        # per-CS annual failure probabilities Phi(-beta_i)
        self.pf_states = ndtr(-self.beta_arr)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown EnvConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self):
        return json.dumps(asdict(self), indent=1)


def _check_states(s):
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != N_STATES:
        raise ValueError(f"state must have {N_STATES} components, got shape {s.shape}")
    return s


def _check_actions(a):
    a = np.asarray(a)
    if not np.issubdtype(a.dtype, np.integer) or np.any((a < 0) | (a >= N_ACTIONS)):
        raise ValueError(f"invalid action {a!r}; expected integers in 0..{N_ACTIONS - 1}")
    return a


def transition(s, a, cfg):
    """Next CS vector ``T(a)^T s``."""
    s = _check_states(s)
    a = _check_actions(a)
    return np.einsum("...i,...ij->...j", s, cfg.T[a])


def failure_prob(s, cfg):
    """Annual failure probability ``sum_i s_i Phi(-beta_i)``."""
    return _check_states(s) @ cfg.pf_states


def annual_risk(s, cfg):
    return cfg.failure_cost * failure_prob(s, cfg)


@dataclass
class StepOutcome:
    next_state: np.ndarray
    cost: np.ndarray
    action_cost: np.ndarray
    risk: np.ndarray


def step(s, a, cfg):
    """Charge action cost plus risk of the current state, then transition."""
    a = _check_actions(a)
    risk = annual_risk(s, cfg)
    action_cost = cfg.costs[a]
    return StepOutcome(transition(s, a, cfg), action_cost + risk, action_cost, risk)


def reset(rng, theta, size=None):
    """Dirichlet(theta) sample(s) drawn as normalized Gamma(theta_i, 1)."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise ValueError("Dirichlet parameters must be positive")
    shape = (theta.size,) if size is None else (size, theta.size)
    g = rng.gamma(theta, size=shape)
    total = g.sum(axis=-1, keepdims=True)
    # all-zero draws are possible in floating point for tiny shapes; redraw
    bad = np.flatnonzero(total.ravel() == 0)
    while bad.size:
        g2 = rng.gamma(theta, size=(bad.size, theta.size))
        g.reshape(-1, theta.size)[bad] = g2
        total.reshape(-1)[bad] = g2.sum(axis=1)
        bad = bad[total.reshape(-1)[bad] == 0]
    return g / total


# -- policies and rollouts ---------------------------------------------------


def policy_actions(policy, states, deterministic=True, rng=None):
    """Actions for a batch of states.

    ``policy`` is either a callable returning actions, or an actor exposing
    ``action_probs(states)``; actors act greedily when ``deterministic``.
    """
    if hasattr(policy, "action_probs"):
        p = policy.action_probs(states)
        if deterministic:
            return np.argmax(p, axis=1)
        u = rng.random(len(p))[:, None]
        return np.minimum((p.cumsum(axis=1) < u).sum(axis=1), p.shape[1] - 1)
    return np.asarray(policy(states), dtype=int)


@dataclass
class RolloutResult:
    cost: np.ndarray  # discounted life-cycle cost per episode
    states: np.ndarray | None = None  # (H + 1, n, 4)
    actions: np.ndarray | None = None  # (H, n)
    costs: np.ndarray | None = None  # (H, n) undiscounted step costs
    risks: np.ndarray | None = None

    def to_csv(self, path, episode=0):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "s1", "s2", "s3", "s4", "action", "cost", "risk"])
            for t in range(self.actions.shape[0]):
                s = self.states[t, episode]
                w.writerow([t + 1, *map(float, s), int(self.actions[t, episode]),
                            float(self.costs[t, episode]), float(self.risks[t, episode])])


def rollout(policy, start, cfg, horizon=None, gamma=None, deterministic=True, rng=None, record=False):
    """Discounted cost ``sum_{t=1..H} gamma^t cost(t)`` following ``policy``.

    ``start`` may be one state or a batch; every episode runs in lockstep.
    """
    horizon = cfg.horizon if horizon is None else horizon
    gamma = cfg.discount if gamma is None else gamma
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    s = np.atleast_2d(_check_states(start)).copy()
    n = s.shape[0]
    total = np.zeros(n)
    rec = {"states": [s], "actions": [], "costs": [], "risks": []} if record else None
    disc = 1.0
    for _ in range(horizon):
        disc *= gamma
        a = policy_actions(policy, s, deterministic, rng)
        out = step(s, a, cfg)
        total += disc * out.cost
        s = out.next_state
        if record:
            rec["states"].append(s)
            rec["actions"].append(a)
            rec["costs"].append(out.cost)
            rec["risks"].append(out.risk)
    if not record:
        return RolloutResult(total)
    return RolloutResult(
        total,
        np.array(rec["states"]),
        np.array(rec["actions"]),
        np.array(rec["costs"]),
        np.array(rec["risks"]),
    )


def sample_starts(n, seed, cfg):
    """Common random starting states: the same ``seed`` gives the same states."""
    return reset(np.random.default_rng(seed), cfg.theta, size=n)


def evaluate_policy(policy, episodes, seed, cfg, horizon=None):
    """Mean and std of life-cycle cost over Dirichlet restarts (greedy actions)."""
    if episodes < 1:
        raise ValueError("need at least one episode")
    costs = rollout(policy, sample_starts(episodes, seed, cfg), cfg, horizon=horizon).cost
    return float(costs.mean()), float(costs.std()), costs


# -- Dirichlet maximum likelihood ------------------------------------------


def inverse_digamma(y, iters=5):
    """Solve ``digamma(x) = y`` by Newton's method (Minka's initialization)."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        x = np.where(y >= -2.22, np.exp(y) + 0.5, -1.0 / (y - digamma(1.0)))
    for _ in range(iters):
        x = x - (digamma(x) - y) / polygamma(1, x)
    return x


class ConvergenceError(RuntimeError):
    pass


def fit_dirichlet(samples, zero_floor=1e-6, tol=1e-8, max_iter=10_000):
    """Maximum-likelihood Dirichlet parameters.

    Solves the stationarity conditions
    ``digamma(alpha_k) = digamma(sum alpha) + mean log s_k`` by Newton steps
    (the Hessian is diagonal plus rank one), falling back to the fixed-point
    update ``alpha_k <- digamma^{-1}(...)`` whenever a Newton step would
    leave the positive orthant.  Plain fixed-point iteration crawls when the
    concentration is large.  Stops when the largest change is below
    ``tol * max(1, alpha_k)``.  Non-positive proportions are raised to
    ``zero_floor`` and rows renormalized first.
    """
    S = np.atleast_2d(np.asarray(samples, dtype=float))
    if S.shape[0] < 2:
        raise ValueError("need at least two samples")
    if np.any(S < 0):
        raise ValueError("proportions must be non-negative")
    S = np.where(S > 0, S, zero_floor)
    S = S / S.sum(axis=1, keepdims=True)
    mean_log = np.log(S).mean(axis=0)
    # moment-matching start
    m = S.mean(axis=0)
    v = S[:, 0].var()
    conc = m[0] * (1 - m[0]) / v - 1 if v > 0 else 1.0
    alpha = m * max(conc, 1e-3)
    for _ in range(max_iter):
        total = alpha.sum()
        g = digamma(total) - digamma(alpha) + mean_log
        q = -polygamma(1, alpha)
        z = polygamma(1, total)
        b = np.sum(g / q) / (1.0 / z + np.sum(1.0 / q))
        new = alpha - (g - b) / q
        if np.any(new <= 0) or not np.all(np.isfinite(new)):
            new = inverse_digamma(digamma(total) + mean_log)
        if np.all(np.abs(new - alpha) < tol * np.maximum(1.0, alpha)):
            return new
        alpha = new
    raise ConvergenceError(f"Dirichlet fit did not converge in {max_iter} iterations")
