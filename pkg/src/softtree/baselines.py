"""Conventional interpretable maintenance policies used as benchmarks.

* a condition-based policy from value iteration on the four pure condition
  states, applied through the most prevalent CS of a state vector;
* a reliability-threshold policy whose four thresholds on the reliability
  index are tuned by a genetic algorithm.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtri

from . import envsim


@dataclass
class ConditionPolicy:
    """Action per dominant condition state (index 0 = CS1)."""

    table: list

    def __post_init__(self):
        self.table = [int(a) for a in self.table]
        if len(self.table) != envsim.N_STATES or any(not 0 <= a < envsim.N_ACTIONS for a in self.table):
            raise ValueError(f"invalid condition policy table {self.table}")

    def dominant_state(self, states):
        s = np.atleast_2d(states)
        # ties go to the worse (higher) condition state
        return s.shape[1] - 1 - np.argmax(s[:, ::-1], axis=1)

    def __call__(self, states):
        return np.asarray(self.table)[self.dominant_state(states)]

    def to_dict(self):
        return {"kind": "condition", "table": self.table}


def apply_condition_policy(policy, s):
    out = policy(s)
    return int(out[0]) if np.ndim(s) == 1 else out


@dataclass
class ValueIterationResult:
    policy: ConditionPolicy
    values: np.ndarray
    q: np.ndarray  # (actions, states)
    residuals: list


def pure_state_costs(cfg):
    """Cost of each action in each pure CS: action cost + C_f Phi(-beta_cs)."""
    risk = cfg.failure_cost * cfg.pf_states
    return cfg.costs[:, None] + risk[None, :]


def value_iteration(cfg, gamma=None, tol=1e-6, max_iter=100_000):
    """Bellman minimization over the four pure condition states.

    Stops when the sup-norm change falls below ``tol``; ties in the greedy
    policy go to the lowest action index.
    """
    gamma = cfg.discount if gamma is None else gamma
    if not 0 <= gamma < 1:
        raise ValueError("value iteration needs 0 <= gamma < 1")
    C = pure_state_costs(cfg)
    V = np.zeros(envsim.N_STATES)
    residuals = []
    for _ in range(max_iter):
        Q = C + gamma * np.einsum("aij,j->ai", cfg.T, V)
        V_new = Q.min(axis=0)
        residuals.append(float(np.max(np.abs(V_new - V))))
        V = V_new
        if residuals[-1] < tol:
            break
    Q = C + gamma * np.einsum("aij,j->ai", cfg.T, V)
    return ValueIterationResult(ConditionPolicy(np.argmin(Q, axis=0).tolist()), V, Q, residuals)


# -- reliability-based policy -----------------------------------------------


def reliability_index(s, cfg):
    """``-Phi^{-1}(p_f(s))``, clipped to the pure-state range."""
    beta = -ndtri(envsim.failure_prob(s, cfg))
    return np.clip(beta, cfg.beta_arr.min(), cfg.beta_arr.max())


@dataclass
class ReliabilityPolicy:
    """Action = number of thresholds at or above the reliability index.

    With thresholds ``t1 > t2 > t3 > t4``: ``beta > t1`` gives action 0,
    ``t2 < beta <= t1`` gives 1, ..., ``beta <= t4`` gives 4.
    """

    thresholds: list
    beta_range: tuple = (2.5, 4.2)

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        lo, hi = self.beta_range
        if t.shape != (4,) or np.any(np.diff(t) >= 0) or t.min() < lo or t.max() > hi:
            raise ValueError(f"thresholds must be strictly decreasing within {self.beta_range}: {t}")
        self.thresholds = t.tolist()
        self._cfg = None

    def bind(self, cfg):
        self._cfg = cfg
        return self

    def actions_from_index(self, beta):
        t = np.asarray(self.thresholds)
        return (np.asarray(beta)[..., None] <= t).sum(axis=-1)

    def __call__(self, states):
        cfg = self._cfg or envsim.EnvConfig()
        self._cfg = cfg
        return self.actions_from_index(reliability_index(np.atleast_2d(states), cfg))

    def to_dict(self):
        return {"kind": "reliability", "thresholds": self.thresholds}


def repair_thresholds(t, lo=2.5, hi=4.2, gap=1e-6):
    """Sort descending, clip into range and enforce a strict ``gap``."""
    t = np.sort(np.clip(np.asarray(t, dtype=float), lo, hi), axis=-1)[..., ::-1].copy()
    k = t.shape[-1]
    upper = hi - gap * np.arange(k)
    lower = lo + gap * np.arange(k)[::-1]
    t = np.clip(t, lower, upper)
    for i in range(1, k):
        t[..., i] = np.minimum(t[..., i], t[..., i - 1] - gap)
    # undo rounding below the floor; the lower bounds are themselves strictly decreasing
    return np.maximum(t, lower)


@dataclass
class GaConfig:
    population: int = 50
    generations: int = 100
    tournament: int = 3
    mutation_sigma: float = 0.05
    mutation_rate: float = 0.2
    elitism: int = 2
    episodes: int = 200
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class GaResult:
    policy: ReliabilityPolicy
    fitness: float  # negative mean LCC of the best individual
    history: list = field(default_factory=list)  # best-so-far fitness per generation
    population: np.ndarray | None = None


def population_lcc(thresholds, starts, cfg):
    """Mean discounted cost of every threshold vector on shared start states."""
    P, M = thresholds.shape[0], starts.shape[0]
    s = np.broadcast_to(starts, (P, M, envsim.N_STATES)).reshape(P * M, -1).copy()
    t_rep = np.repeat(thresholds, M, axis=0)
    lo, hi = cfg.beta_arr.min(), cfg.beta_arr.max()
    total = np.zeros(P * M)
    disc = 1.0
    for _ in range(cfg.horizon):
        disc *= cfg.discount
        beta = np.clip(-ndtri(s @ cfg.pf_states), lo, hi)
        a = (beta[:, None] <= t_rep).sum(axis=1)
        out = envsim.step(s, a, cfg)
        total += disc * out.cost
        s = out.next_state
    return total.reshape(P, M).mean(axis=1)


def ga_optimize(cfg, config=None, rng=None):
    """Evolve reliability thresholds to minimize mean life-cycle cost.

    Fitness is the negative mean LCC over ``config.episodes`` common random
    start states.  Tournament selection, uniform crossover, Gaussian
    mutation and elitism; offspring are repaired to stay strictly
    decreasing inside the reliability range.
    """
    config = config or GaConfig()
    rng = np.random.default_rng(config.seed if rng is None else rng)
    lo, hi = float(cfg.beta_arr.min()), float(cfg.beta_arr.max())
    starts = envsim.reset(rng, cfg.theta, size=config.episodes)
    pop = repair_thresholds(rng.uniform(lo, hi, (config.population, 4)), lo, hi)
    fit = -population_lcc(pop, starts, cfg)
    history = [float(fit.max())]
    for _ in range(config.generations):
        order = np.argsort(-fit)
        children = [pop[i] for i in order[: config.elitism]]
        while len(children) < config.population:
            parents = []
            for _ in range(2):
                cand = rng.integers(0, config.population, config.tournament)
                parents.append(pop[cand[np.argmax(fit[cand])]])
            mask = rng.random(4) < 0.5
            child = np.where(mask, parents[0], parents[1])
            mutate = rng.random(4) < config.mutation_rate
            child = child + mutate * rng.normal(0.0, config.mutation_sigma, 4)
            children.append(child)
        pop = repair_thresholds(np.array(children), lo, hi)
        fit = -population_lcc(pop, starts, cfg)
        history.append(max(history[-1], float(fit.max())))
    best = int(np.argmax(fit))
    return GaResult(ReliabilityPolicy(pop[best].tolist(), (lo, hi)).bind(cfg), float(fit[best]), history, pop)


# -- comparison ----------------------------------------------------------------


@dataclass
class PolicyRow:
    name: str
    mean: float
    std: float
    episodes: int


def compare_policies(policies, episodes, seed, cfg):
    """Evaluate named policies on identical Dirichlet start states."""
    if not policies:
        raise ValueError("need at least one policy")
    starts = envsim.sample_starts(episodes, seed, cfg)
    rows, costs = [], {}
    for name, policy in policies.items():
        c = envsim.rollout(policy, starts, cfg).cost
        costs[name] = c
        rows.append(PolicyRow(name, float(c.mean()), float(c.std()), episodes))
    return Report(rows, costs)


@dataclass
class Report:
    rows: list
    costs: dict

    def ordering(self):
        """Policy names from lowest to highest mean LCC."""
        return [r.name for r in sorted(self.rows, key=lambda r: r.mean)]

    def mean(self, name):
        return next(r.mean for r in self.rows if r.name == name)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["policy", "mean_lcc", "std_lcc", "episodes"])
        for r in self.rows:
            w.writerow([r.name, f"{r.mean:.2f}", f"{r.std:.2f}", r.episodes])
        return buf.getvalue()

    def to_text(self):
        width = max(len("Policy"), *(len(r.name) for r in self.rows))
        lines = [f"{'Policy':<{width}}  {'Average LCC':>12}  {'StD':>10}"]
        lines.append("-" * len(lines[0]))
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.mean:>12.2f}  {r.std:>10.2f}")
        lines.append("")
        lines.append("ordering: " + " < ".join(self.ordering()))
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps({"rows": [asdict(r) for r in self.rows], "ordering": self.ordering()}, indent=1)
