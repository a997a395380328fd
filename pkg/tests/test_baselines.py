import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from softtree import envsim
from softtree.baselines import (ConditionPolicy, GaConfig, ReliabilityPolicy, Report, apply_condition_policy,
                                compare_policies, ga_optimize, population_lcc, pure_state_costs, reliability_index,
                                repair_thresholds, value_iteration)
from softtree.envsim import EnvConfig
from softtree.policies import ConstantPolicy, load_policy, policy_from_dict, save_policy

EQ20 = ConditionPolicy([1, 2, 2, 3])


def best_table_bruteforce(cfg, gamma):
    """Optimal table and values by exact evaluation of all 5^4 tables."""
    C = pure_state_costs(cfg)
    best, best_v = None, None
    for table in itertools.product(range(5), repeat=4):
        P = np.array([cfg.T[a, i] for i, a in enumerate(table)])
        c = np.array([C[a, i] for i, a in enumerate(table)])
        v = np.linalg.solve(np.eye(4) - gamma * P, c)
        if best_v is None or np.all(v <= best_v + 1e-9) and np.any(v < best_v - 1e-9):
            best, best_v = table, v
    return list(best), best_v


class TestValueIteration:
    def test_matches_exhaustive_policy_evaluation(self, cfg):
        res = value_iteration(cfg)
        table, v = best_table_bruteforce(cfg, cfg.discount)
        assert res.policy.table == table
        np.testing.assert_allclose(res.values, v, atol=1e-3)

    def test_converges(self, cfg):
        res = value_iteration(cfg)
        assert res.residuals[-1] < 1e-6

    def test_contraction(self, cfg):
        r = np.array(value_iteration(cfg).residuals)
        assert np.all(r[1:] <= cfg.discount * r[:-1] + 1e-9)

    def test_monotone_table(self, cfg):
        t = value_iteration(cfg).policy.table
        assert all(a <= b for a, b in zip(t, t[1:]))

    def test_zero_costs(self):
        env = EnvConfig(failure_cost=0.0, action_costs=[0.0] * 5)
        res = value_iteration(env)
        np.testing.assert_array_equal(res.values, 0.0)
        assert res.policy.table == [0, 0, 0, 0]

    def test_myopic(self, cfg):
        res = value_iteration(cfg, gamma=0.0)
        assert res.policy.table == np.argmin(pure_state_costs(cfg), axis=0).tolist()
        assert res.policy.table == [0, 0, 0, 0]

    def test_bad_gamma(self, cfg):
        with pytest.raises(ValueError):
            value_iteration(cfg, gamma=1.0)

    def test_pure_state_costs(self, cfg):
        C = pure_state_costs(cfg)
        assert C[4, 3] == pytest.approx(2000 + 1e5 * norm.sf(2.5), rel=1e-12)
        assert C[0, 0] == pytest.approx(1e5 * norm.sf(4.2), rel=1e-12)


class TestConditionPolicy:
    def test_eq20_examples(self):
        assert apply_condition_policy(EQ20, np.array([0.9, 0.1, 0, 0])) == 1
        assert apply_condition_policy(EQ20, np.array([0, 0, 0, 1.0])) == 3

    def test_tie_goes_to_worse_state(self):
        assert apply_condition_policy(EQ20, np.array([0.5, 0.5, 0, 0])) == 2
        assert EQ20.dominant_state([[0.25] * 4])[0] == 3

    def test_batch(self):
        np.testing.assert_array_equal(EQ20([[1, 0, 0, 0], [0, 0, 1, 0]]), [1, 2])

    @pytest.mark.parametrize("table", [[1, 2, 3], [0, 0, 0, 5], [-1, 0, 0, 0]])
    def test_invalid(self, table):
        with pytest.raises(ValueError):
            ConditionPolicy(table)


class TestReliability:
    def test_pure_states(self, cfg):
        assert reliability_index(np.array([1.0, 0, 0, 0]), cfg) == pytest.approx(4.2, abs=1e-12)
        assert reliability_index(np.array([0, 0, 0, 1.0]), cfg) == pytest.approx(2.5, abs=1e-12)

    def test_uniform_state_oracle(self, cfg):
        expected = -norm.ppf(np.mean(norm.sf([4.2, 3.5, 3.0, 2.5])))
        assert reliability_index(np.full(4, 0.25), cfg) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(2.886, abs=1e-3)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda v: sum(v) > 1e-3))
    def test_bounds(self, cfg, v):
        s = np.array(v) / sum(v)
        assert 2.5 <= reliability_index(s, cfg) <= 4.2

    def test_actions(self):
        pol = ReliabilityPolicy([4.0, 3.5, 3.0, 2.7])
        np.testing.assert_array_equal(pol.actions_from_index([4.2, 4.0, 3.6, 3.2, 2.8, 2.6]), [0, 1, 1, 2, 3, 4])

    def test_top_threshold_collapses_do_nothing(self, cfg):
        pol = ReliabilityPolicy([4.2, 3.5, 3.0, 2.6]).bind(cfg)
        states = envsim.reset(np.random.default_rng(0), cfg.theta, size=2000)
        assert np.all(pol(states) >= 1)

    def test_call_matches_index(self, cfg, rng):
        pol = ReliabilityPolicy([4.1, 3.6, 3.1, 2.6]).bind(cfg)
        s = envsim.reset(rng, cfg.theta, size=50)
        np.testing.assert_array_equal(pol(s), pol.actions_from_index(reliability_index(s, cfg)))

    @pytest.mark.parametrize("t", [[3.0, 3.5, 2.8, 2.6], [4.5, 3.5, 3.0, 2.6], [4.0, 3.0, 3.0, 2.6], [4.0, 3.0]])
    def test_invalid_thresholds(self, t):
        with pytest.raises(ValueError):
            ReliabilityPolicy(t)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=4, max_size=4))
    def test_repair(self, t):
        r = repair_thresholds(t)
        assert np.all(np.diff(r) < 0)
        assert r.min() >= 2.5 and r.max() <= 4.2
        ReliabilityPolicy(r.tolist())

    def test_repair_keeps_valid_vector(self):
        np.testing.assert_array_equal(repair_thresholds([4.0, 3.5, 3.0, 2.7]), [4.0, 3.5, 3.0, 2.7])


class TestGa:
    def test_small_run(self, cfg):
        res = ga_optimize(cfg, GaConfig(population=10, generations=5, episodes=20, seed=1))
        assert len(res.history) == 6
        assert all(b >= a for a, b in zip(res.history, res.history[1:]))
        assert np.all(np.diff(res.population, axis=1) < 0)
        assert res.population.min() >= 2.5 and res.population.max() <= 4.2
        assert res.fitness == pytest.approx(res.history[-1])

    def test_fitness_matches_rollout(self, cfg):
        starts = envsim.reset(np.random.default_rng(0), cfg.theta, size=15)
        t = np.array([[4.1, 3.6, 3.1, 2.6], [4.2, 3.3, 2.9, 2.5]])
        lcc = population_lcc(t, starts, cfg)
        for i in range(2):
            pol = ReliabilityPolicy(t[i].tolist()).bind(cfg)
            assert lcc[i] == pytest.approx(envsim.rollout(pol, starts, cfg).cost.mean(), rel=1e-12)

    def test_deterministic(self, cfg):
        c = GaConfig(population=8, generations=3, episodes=10, seed=4)
        assert ga_optimize(cfg, c).policy.thresholds == ga_optimize(cfg, c).policy.thresholds

    def test_free_restorative_repair(self):
        # repair costs nothing and restores CS1: the GA learns to repair broadly
        T = np.array(envsim.DEFAULT_TRANSITIONS, dtype=object).tolist()
        T[1] = [[0.99, 0.01, 0, 0], [0.15 / 1.135, 0.975 / 1.135, 0.01 / 1.135, 0], [0, 0.03, 0.95, 0.02], [0, 0, 0, 1]]
        T[2] = [[1, 0, 0, 0]] * 4
        env = EnvConfig(transitions=T, action_costs=[0, 10, 0, 1000, 2000])
        res = ga_optimize(env, GaConfig(population=20, generations=15, episodes=30, seed=0))
        states = envsim.reset(np.random.default_rng(1), env.theta, size=500)
        actions = res.policy(states)
        assert np.mean(actions >= 2) > 0.5
        assert res.history[-1] >= res.history[0]


class TestCompare:
    def test_same_policy_twice(self, cfg):
        rep = compare_policies({"a": EQ20, "b": EQ20}, 50, 0, cfg)
        assert rep.rows[0].mean == rep.rows[1].mean and rep.rows[0].std == rep.rows[1].std

    def test_common_random_numbers(self, cfg):
        a = compare_policies({"x": EQ20}, 30, 5, cfg).costs["x"]
        b = compare_policies({"y": ConstantPolicy(0), "x": EQ20}, 30, 5, cfg).costs["x"]
        np.testing.assert_array_equal(a, b)

    def test_do_nothing_worst(self, cfg):
        pols = {"do-nothing": ConstantPolicy(0), "dp": EQ20, "rel": ReliabilityPolicy([4.2, 3.5, 3.0, 2.6]).bind(cfg)}
        assert compare_policies(pols, 200, 0, cfg).ordering()[-1] == "do-nothing"

    def test_empty(self, cfg):
        with pytest.raises(ValueError):
            compare_policies({}, 10, 0, cfg)

    def test_renderings(self, cfg):
        rep = compare_policies({"dp": EQ20, "none": ConstantPolicy(0)}, 20, 0, cfg)
        text = rep.to_text()
        assert text.splitlines()[0].split() == ["Policy", "Average", "LCC", "StD"]
        assert "ordering: dp < none" in text
        assert rep.to_csv().splitlines()[0] == "policy,mean_lcc,std_lcc,episodes"
        assert json.loads(rep.to_json())["ordering"] == ["dp", "none"]
        assert rep.mean("dp") == rep.rows[0].mean


class TestPersistence:
    @pytest.mark.parametrize("policy", [EQ20, ConstantPolicy(2), ReliabilityPolicy([4.1, 3.6, 3.1, 2.6])])
    def test_round_trip(self, cfg, tmp_path, policy):
        save_policy(policy, tmp_path / "p.json", note="x")
        back = load_policy(tmp_path / "p.json", cfg)
        s = envsim.reset(np.random.default_rng(0), cfg.theta, size=100)
        np.testing.assert_array_equal(back(s), policy(s))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            policy_from_dict({"kind": "lookup"})

    def test_bad_constant(self):
        with pytest.raises(ValueError):
            ConstantPolicy(7)
