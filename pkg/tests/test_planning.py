"""Sampling, weighting, the optimizers, and the MPC episode loop."""

import numpy as np
import pytest

from vfmpc import world as w
from vfmpc import tasks, costs, planning
from vfmpc.errors import ConfigurationError, InvalidInputError, PlannerError
from vfmpc.models import OracleModel
from vfmpc.planning import (
    MPCConfig,
    PlannerConfig,
    mppi_weights,
    optimize_step,
    plan_step,
    run_episode,
    sample_action_sequences,
)

CFG = w.WorldConfig()


class TestSampler:
    def test_beta_zero_reproduces_the_mean(self):
        config = PlannerConfig(n_samples=16, noise_beta=0.0, retain_mean=False)
        mean = np.random.default_rng(0).uniform(-0.05, 0.05, (10, 2))
        candidates = sample_action_sequences(mean, config, np.random.default_rng(1))
        expected = np.clip(mean, -0.08, 0.08).astype(np.float32)
        for c in candidates:
            assert np.array_equal(c, expected)

    def test_beta_one_noise_is_uncorrelated(self):
        config = PlannerConfig(
            n_samples=2000, noise_beta=1.0, action_bound=10.0, retain_mean=False,
            plan_horizon=10,
        )
        mean = np.zeros((10, 2))
        cands = sample_action_sequences(mean, config, np.random.default_rng(3))
        noise = cands.astype(np.float64)
        a = noise[:, :-1, :].ravel()
        b = noise[:, 1:, :].ravel()
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) < 0.02

    def test_beta_half_autocorrelation_matches_ar1_theory(self):
        # the filter n_t = b*u_t + (1-b)*n_{t-1} is AR(1) with coefficient
        # (1-b); its stationary lag-1 autocorrelation equals (1-b) = 0.5
        config = PlannerConfig(
            n_samples=5000, noise_beta=0.5, action_bound=10.0, retain_mean=False,
            plan_horizon=20,
        )
        mean = np.zeros((20, 2))
        cands = sample_action_sequences(mean, config, np.random.default_rng(4))
        noise = cands.astype(np.float64)[:, 8:, :]  # discard the burn-in
        a = noise[:, :-1, :].ravel()
        b = noise[:, 1:, :].ravel()
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr - 0.5) < 0.02

    def test_candidates_respect_bounds(self):
        config = PlannerConfig(n_samples=64, sample_stdev=1.0)
        cands = sample_action_sequences(np.zeros((10, 2)), config, np.random.default_rng(5))
        assert np.all(np.abs(cands) <= config.action_bound + 1e-7)

    def test_retained_mean_is_candidate_zero(self):
        config = PlannerConfig(n_samples=8, retain_mean=True)
        mean = np.full((10, 2), 0.03)
        cands = sample_action_sequences(mean, config, np.random.default_rng(6))
        assert np.array_equal(cands[0], np.full((10, 2), 0.03, np.float32))

    def test_non_finite_mean_rejected(self):
        config = PlannerConfig(n_samples=8)
        with pytest.raises(PlannerError):
            sample_action_sequences(np.full((10, 2), np.nan), config, np.random.default_rng(0))


class TestWeights:
    def test_closed_form_two_scores(self):
        weights = mppi_weights(np.array([0.0, -1.0]), 0.05)
        e = np.exp(-0.05)
        expected = np.array([1.0, e]) / (1.0 + e)
        assert np.allclose(weights, expected, atol=1e-12)
        assert abs(weights[0] - 0.5125) < 1e-4
        assert abs(weights[1] - 0.4875) < 1e-4

    def test_equal_scores_uniform(self):
        weights = mppi_weights(np.full(7, -3.3), 0.05)
        assert np.allclose(weights, 1.0 / 7, atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            scores = rng.normal(size=8) * rng.uniform(0.1, 100)
            shift = rng.normal() * 100
            a = mppi_weights(scores, 0.05)
            b = mppi_weights(scores + shift, 0.05)
            assert np.allclose(a, b, atol=1e-9)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=10)
        perm = rng.permutation(10)
        assert np.allclose(mppi_weights(scores, 0.5)[perm], mppi_weights(scores[perm], 0.5))

    def test_sums_to_one(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            weights = mppi_weights(rng.normal(size=32) * 100, 0.05)
            assert abs(weights.sum() - 1.0) < 1e-12
            assert np.all(weights >= 0)

    def test_all_minus_inf_rejected(self):
        with pytest.raises(PlannerError):
            mppi_weights(np.array([-np.inf, -np.inf]), 0.05)

    def test_partial_minus_inf_gets_zero_weight(self):
        weights = mppi_weights(np.array([0.0, -np.inf, -1.0]), 1.0)
        assert weights[1] == 0.0
        assert abs(weights.sum() - 1.0) < 1e-12


def toy_config(algorithm, rounds=1, n_samples=2000):
    return PlannerConfig(
        n_samples=n_samples,
        temperature=10.0,
        noise_beta=1.0,
        sample_stdev=0.5,
        plan_horizon=2,
        context_len=2,
        algorithm=algorithm,
        mppi_rounds=rounds,
        mppi_round_decay=1.0,
        retain_mean=False,
        action_bound=1.0,
        action_dim=1,
    )


def toy_evaluate(candidates):
    total = candidates.astype(np.float64).sum(axis=(1, 2))
    return -((total - 1.0) ** 2), None


class TestToyOptimum:
    """1-D integrator x' = x + a, quadratic terminal cost, optimum sum 1.0."""

    def _solve(self, algorithm, seed):
        config = toy_config(algorithm)
        rng = np.random.default_rng(seed)
        mean = np.zeros((2, 1))
        best = mean
        for _ in range(20):
            best, mean, _ = optimize_step(toy_evaluate, mean, config, rng)
        return float(best.sum())

    def test_mppi_reaches_the_optimum(self):
        sums = [self._solve("mppi", seed) for seed in range(20)]
        assert abs(np.mean(sums) - 1.0) <= 0.1

    def test_cem_reaches_the_optimum(self):
        sums = [self._solve("cem", seed) for seed in range(20)]
        assert abs(np.mean(sums) - 1.0) <= 0.1

    def test_random_shooting_close(self):
        sums = [self._solve("random_shooting", seed) for seed in range(20)]
        assert abs(np.mean(sums) - 1.0) <= 0.2

    def test_beats_a_random_sequence(self):
        # Monte-Carlo over 100 seeds: expected cost of the planned sequence
        # must not exceed the expected cost of a uniformly random one.
        planned, random_cost = [], []
        for seed in range(100):
            total = self._solve("mppi", seed)
            planned.append((total - 1.0) ** 2)
            rng = np.random.default_rng(10_000 + seed)
            rand_total = rng.uniform(-1, 1, size=2).sum()
            random_cost.append((rand_total - 1.0) ** 2)
        assert np.mean(planned) <= np.mean(random_cost)


class TestOptimizeStep:
    def test_uniform_scores_average_candidates(self):
        config = PlannerConfig(n_samples=50, algorithm="mppi", mppi_rounds=1, retain_mean=False)
        holder = {}

        def evaluate(cands):
            holder["cands"] = cands.copy()
            return np.zeros(cands.shape[0]), None

        best, new_mean, _ = optimize_step(evaluate, np.zeros((10, 2)), config, np.random.default_rng(0))
        expected = holder["cands"].astype(np.float64).mean(axis=0).astype(np.float32)
        assert np.allclose(new_mean, expected, atol=1e-7)
        assert np.array_equal(best, new_mean)

    def test_cem_single_elite_is_argmax(self):
        config = PlannerConfig(
            n_samples=10, algorithm="cem", cem_elite_frac=0.1, cem_iterations=1,
        )
        holder = {}

        def evaluate(cands):
            holder["cands"] = cands.copy()
            scores = np.arange(cands.shape[0], dtype=np.float64)
            return scores, None

        best, _, _ = optimize_step(evaluate, np.zeros((4, 2)), config, np.random.default_rng(1))
        assert np.allclose(best, holder["cands"][-1], atol=1e-7)

    def test_random_shooting_keeps_mean(self):
        config = PlannerConfig(n_samples=16, algorithm="random_shooting")
        mean = np.full((4, 2), 0.01)

        def evaluate(cands):
            return np.random.default_rng(0).normal(size=cands.shape[0]), None

        best, new_mean, _ = optimize_step(evaluate, mean, config, np.random.default_rng(2))
        assert np.allclose(new_mean, mean.astype(np.float32))

    def test_all_non_finite_costs_raise(self):
        config = PlannerConfig(n_samples=8)

        def evaluate(cands):
            return np.full(cands.shape[0], np.nan), None

        with pytest.raises(PlannerError):
            optimize_step(evaluate, np.zeros((4, 2)), config, np.random.default_rng(0))

    def test_partial_non_finite_tolerated(self):
        config = PlannerConfig(n_samples=8, algorithm="random_shooting", retain_mean=False)

        def evaluate(cands):
            scores = np.full(cands.shape[0], -np.inf)
            scores[3] = 1.0
            return scores, None

        best, _, info = optimize_step(evaluate, np.zeros((4, 2)), config, np.random.default_rng(0))
        assert info.best_score == 1.0

    def test_zero_cost_everywhere_keeps_mean_finite(self):
        config = PlannerConfig(n_samples=32)
        mean = np.zeros((10, 2))
        rng = np.random.default_rng(0)
        for _ in range(30):
            best, mean, _ = optimize_step(
                lambda c: (np.zeros(c.shape[0]), None), mean, config, rng
            )
            mean = np.concatenate([mean[1:], np.zeros((1, 2), np.float32)])
            assert np.all(np.isfinite(mean))
            assert np.all(np.abs(mean) <= config.action_bound + 1e-6)


class TestConfigValidation:
    def test_bad_values(self):
        with pytest.raises(ConfigurationError):
            PlannerConfig(n_samples=1)
        with pytest.raises(ConfigurationError):
            PlannerConfig(temperature=0.0)
        with pytest.raises(ConfigurationError):
            PlannerConfig(noise_beta=1.5)
        with pytest.raises(ConfigurationError):
            PlannerConfig(algorithm="gradient")
        with pytest.raises(ConfigurationError):
            PlannerConfig(algorithm="cem", cem_elite_frac=0.001)
        with pytest.raises(ConfigurationError):
            MPCConfig(episode_len=0)
        with pytest.raises(ConfigurationError):
            MPCConfig(replan_every=2)


@pytest.fixture(scope="module")
def small_task():
    return tasks.generate_task_instances(CFG, n_per_category=1, seed=3)[0]


class TestRunEpisode:
    def test_episode_shape_and_determinism(self, small_task):
        pcfg = PlannerConfig(n_samples=24)
        mcfg = MPCConfig(episode_len=4)
        model = OracleModel(CFG)
        cost_fn = costs.make_planning_cost(costs.CostSpec.pixel(), small_task.goal_frame)

        def run():
            return run_episode(
                CFG, model, cost_fn, small_task, pcfg, mcfg, np.random.default_rng(9)
            )

        a = run()
        b = run()
        assert len(a.actions) == 4
        assert len(a.states) == 5
        assert len(a.frames) == 5
        for x, y in zip(a.actions, b.actions):
            assert np.array_equal(x, y)
        assert a.success == b.success
        # frames always re-render from states
        for state, frame in zip(a.states, a.frames):
            assert np.array_equal(w.render(state, CFG), frame)

    def test_model_error_recorded_as_failure(self, small_task):
        class Exploding:
            requires_state = False
            name = "exploding"

            def predict(self, request, token=None):
                raise InvalidInputError("synthetic failure")

        pcfg = PlannerConfig(n_samples=8)
        mcfg = MPCConfig(episode_len=3)
        cost_fn = costs.make_planning_cost(costs.CostSpec.pixel(), small_task.goal_frame)
        result = run_episode(
            CFG, Exploding(), cost_fn, small_task, pcfg, mcfg, np.random.default_rng(0)
        )
        assert result.success is False
        assert result.diagnostics.error is not None
        assert "step 0" in result.diagnostics.error
        assert len(result.diagnostics.best_score) == 3  # sized to episode_len

    def test_episode_result_serializes(self, small_task):
        pcfg = PlannerConfig(n_samples=8)
        mcfg = MPCConfig(episode_len=2)
        cost_fn = costs.make_planning_cost(costs.CostSpec.pixel(), small_task.goal_frame)
        result = run_episode(
            CFG, OracleModel(CFG), cost_fn, small_task, pcfg, mcfg, np.random.default_rng(1)
        )
        doc = result.to_dict()
        assert doc["task_id"] == small_task.id
        assert len(doc["actions"]) == 2
        assert "wall_time" not in doc["diagnostics"]
