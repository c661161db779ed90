"""Evaluation machinery: batched/reference agreement, reports, heatmaps, calibration."""
import math

import numpy as np
import pytest

from hedgerl.agent import STATE_DIM, init_actor
from hedgerl.analytics import OptionSpec, bs_call_price, grid_delta
from hedgerl.env import CostModel, rollout
from hedgerl.evaluation import (
    action_pattern_slice,
    calibration_bins,
    collect_step_samples,
    compare_strategies,
    epistemic_heatmap,
    evaluate_policy,
    per_step_report,
    realized_variance_heatmap,
    run_policy,
    uncertainty_heatmap,
)
from hedgerl.market import GbmParams, HedgeEpisode, PricePath, generate_episodes
from hedgerl.policies import ActorPolicy, BsDeltaPolicy, ConstantPolicy, NoHedgePolicy

PARAMS = GbmParams(drift=0.05, vol=0.20, initial_price=100.0)


@pytest.fixture(scope="module")
def episodes():
    return generate_episodes(PARAMS, 30, 1, 200, master_seed=2024)


def fresh_actor_policy(seed=0):
    return ActorPolicy(init_actor(STATE_DIM, (16, 16), rng=np.random.default_rng(seed)))


class TestFastSlowAgreement:
    @pytest.mark.parametrize(
        "policy", [NoHedgePolicy(), ConstantPolicy(0.6), BsDeltaPolicy()], ids=["none", "const", "delta"]
    )
    def test_batched_matches_reference_rollout(self, episodes, policy):
        cost = CostModel(0.01)
        sample = episodes[:20]
        fast = run_policy(sample, policy, cost)
        for i, ep in enumerate(sample):
            transitions, total = rollout(ep, policy, cost)
            assert fast.totals[i] == pytest.approx(total, abs=1e-12)
            ref_rewards = np.array([t.reward for t in transitions])
            assert np.allclose(fast.rewards[i], ref_rewards, atol=1e-12, rtol=0)
            ref_actions = np.array([t.action for t in transitions])
            assert np.allclose(fast.positions[i], ref_actions, atol=1e-12, rtol=0)

    def test_actor_policy_agreement(self, episodes):
        policy = fresh_actor_policy(3)
        cost = CostModel(0.01)
        sample = episodes[:10]
        fast = run_policy(sample, policy, cost)
        for i, ep in enumerate(sample):
            _, total = rollout(ep, policy, cost)
            assert fast.totals[i] == pytest.approx(total, abs=1e-10)


class TestEvaluatePolicy:
    def test_no_hedge_matches_closed_form_per_episode(self, episodes):
        report = evaluate_policy(NoHedgePolicy(), episodes, CostModel(0.0))
        direct = np.array(
            [
                (ep.premium - max(ep.path.prices[-1] - 100.0, 0.0)) / ep.premium
                for ep in episodes
            ]
        )
        assert report.mean == pytest.approx(direct.mean(), abs=1e-12)
        assert report.variance == pytest.approx(direct.var(ddof=1), abs=1e-12)

    def test_histogram_counts_sum_to_n(self, episodes):
        report = evaluate_policy(NoHedgePolicy(), episodes, CostModel(0.0))
        assert report.histogram_counts.sum() == report.n_samples == len(episodes)

    def test_std_is_sqrt_variance(self, episodes):
        report = evaluate_policy(BsDeltaPolicy(), episodes, CostModel(0.01))
        assert report.std == pytest.approx(math.sqrt(report.variance))

    def test_raw_mode_scales_by_premium(self, episodes):
        norm = evaluate_policy(NoHedgePolicy(), episodes, CostModel(0.0), normalize=True)
        raw = evaluate_policy(
            NoHedgePolicy(), episodes, CostModel(0.0), normalize=False, hist_range=(-25.0, 5.0)
        )
        assert raw.mean == pytest.approx(norm.mean * episodes[0].premium, rel=1e-9)

    def test_too_few_episodes_rejected(self, episodes):
        with pytest.raises(ValueError):
            evaluate_policy(NoHedgePolicy(), episodes[:1], CostModel(0.0))


class TestPerStepReport:
    def test_flat_path_rewards_are_theta_decay(self):
        # constant stock price, no trades: every reward is C_t - C_{t+1} > 0
        n = 11
        taus = (10 - np.arange(n)) / 365.0
        prices = np.full(n, 100.0)
        options = np.array(
            [
                bs_call_price(100.0, OptionSpec(100.0, float(t)), 0.2) if t > 0 else 0.0
                for t in taus
            ]
        )
        ep = HedgeEpisode(
            path=PricePath(times=np.arange(n) / 365.0, prices=prices, seed=0),
            spec=OptionSpec(100.0, 10.0 / 365.0),
            option_prices=options,
            steps_per_day=1,
            premium=float(options[0]),
            taus=taus,
            sigma=0.2,
        )
        report = per_step_report(NoHedgePolicy(), [ep, ep], CostModel(0.0), normalize=False)
        decay = options[:-1] - options[1:]
        assert np.all(decay > 0)
        assert report.mean == pytest.approx(decay.mean())
        assert report.variance == pytest.approx(np.tile(decay, 2).var(ddof=1))

    def test_cost_increase_strictly_lowers_mean(self, episodes):
        base = per_step_report(BsDeltaPolicy(), episodes, CostModel(0.01))
        doubled = per_step_report(BsDeltaPolicy(), episodes, CostModel(0.02))
        assert doubled.mean < base.mean

    def test_sample_unit_is_step(self, episodes):
        report = per_step_report(BsDeltaPolicy(), episodes[:50], CostModel(0.01))
        assert report.n_samples == 50 * 30


class TestCompareStrategies:
    def test_delta_gain_zero(self, episodes):
        table = compare_strategies(
            [("delta", BsDeltaPolicy()), ("none", NoHedgePolicy())], episodes, CostModel(0.01)
        )
        by_name = {r.name: r for r in table.rows}
        assert by_name["delta"].gain_vs_delta == 0.0

    def test_identical_policies_identical_rows(self, episodes):
        table = compare_strategies(
            [("delta", BsDeltaPolicy()), ("again", BsDeltaPolicy())], episodes, CostModel(0.01)
        )
        a, b = table.rows
        assert a.mean == b.mean and a.variance == b.variance

    def test_missing_delta_rejected(self, episodes):
        with pytest.raises(ValueError):
            compare_strategies([("none", NoHedgePolicy())], episodes, CostModel(0.01))

    def test_row_order_preserved(self, episodes):
        table = compare_strategies(
            [("none", NoHedgePolicy()), ("delta", BsDeltaPolicy())], episodes, CostModel(0.0)
        )
        assert [r.name for r in table.rows] == ["none", "delta"]

    def test_statistics_invariant_to_row_order(self, episodes):
        forward_order = compare_strategies(
            [("delta", BsDeltaPolicy()), ("none", NoHedgePolicy())], episodes, CostModel(0.01)
        )
        reversed_order = compare_strategies(
            [("none", NoHedgePolicy()), ("delta", BsDeltaPolicy())], episodes, CostModel(0.01)
        )
        a = {r.name: (r.mean, r.variance, r.gain_vs_delta) for r in forward_order.rows}
        b = {r.name: (r.mean, r.variance, r.gain_vs_delta) for r in reversed_order.rows}
        assert a == b


class TestActionPattern:
    def test_delta_policy_curves_position_blind_and_match_phi_d1(self):
        grid = np.linspace(0.85, 1.15, 31)
        tau = 10.0 / 365.0
        pattern = action_pattern_slice(BsDeltaPolicy(), grid, tau, [0.0, 0.5, 1.0])
        expected = grid_delta(grid * 100.0, np.full(grid.size, tau), 100.0, 0.2)
        for pos in (0.0, 0.5, 1.0):
            assert np.allclose(pattern.curves[pos], expected, atol=1e-12)
        assert np.allclose(pattern.delta_reference, expected, atol=1e-12)

    def test_delta_curves_nondecreasing_in_moneyness(self):
        grid = np.linspace(0.8, 1.2, 41)
        pattern = action_pattern_slice(BsDeltaPolicy(), grid, 15.0 / 365.0, [0.3])
        curve = pattern.curves[0.3]
        assert np.all(np.diff(curve) >= -1e-15)

    def test_actor_policy_curves_exist_per_position(self):
        grid = np.linspace(0.9, 1.1, 11)
        pattern = action_pattern_slice(fresh_actor_policy(), grid, 0.05, [0.2, 0.8])
        assert set(pattern.curves) == {0.2, 0.8}
        for curve in pattern.curves.values():
            assert np.all((curve >= 0) & (curve <= 1))


class TestHeatmaps:
    def test_fresh_actor_model_grid_is_unit_sigma2(self):
        grid = uncertainty_heatmap(
            fresh_actor_policy(), np.linspace(0.9, 1.1, 5), np.arange(1.0, 6.0)
        )
        assert grid.values.shape == (5, 5)
        assert np.allclose(grid.values, 1.0)  # zero-initialized log-var head

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            uncertainty_heatmap(fresh_actor_policy(), np.array([]), np.arange(1.0, 5.0))

    def test_realized_grid_nonnegative_with_missing_flagged(self, episodes):
        m_edges = np.arange(0.80, 1.2001, 0.02)
        t_edges = np.arange(0.5, 30.6, 1.0)
        grid = realized_variance_heatmap(
            episodes, BsDeltaPolicy(), CostModel(0.0), m_edges, t_edges
        )
        present = ~np.isnan(grid.values)
        assert np.all(grid.values[present] >= 0.0)
        # extreme-moneyness cells early in the episode cannot be populated
        assert np.any(~present)
        assert np.all(grid.counts[~present] < 2)
        assert grid.counts.sum() <= len(episodes) * 30

    def test_realized_matches_manual_bucketing(self, episodes):
        sample = episodes[:50]
        m_edges = np.array([0.8, 1.0, 1.2])
        t_edges = np.array([0.0, 15.0, 31.0])
        grid = realized_variance_heatmap(sample, BsDeltaPolicy(), CostModel(0.0), m_edges, t_edges)
        rollouts = run_policy(sample, BsDeltaPolicy(), CostModel(0.0), keep_features=True)
        rewards = (rollouts.rewards / rollouts.premiums[:, None]).ravel()
        feats = rollouts.features.reshape(-1, 9)
        sel = (
            (feats[:, 1] >= 1.0) & (feats[:, 1] < 1.2)
            & (feats[:, 0] * 365.0 >= 0.0) & (feats[:, 0] * 365.0 < 15.0)
        )
        assert grid.values[0, 1] == pytest.approx(rewards[sel].var(ddof=1), rel=1e-9)
        assert grid.counts[0, 1] == int(sel.sum())

    def test_epistemic_heatmap_zero_without_dropout(self):
        from hedgerl.agent import make_critic

        critic = make_critic(STATE_DIM, (16, 16), 0.0, rng=np.random.default_rng(0))
        grid = epistemic_heatmap(
            critic, fresh_actor_policy(), np.linspace(0.95, 1.05, 3), np.array([5.0, 10.0]),
            passes=8,
        )
        assert np.all(grid.values == 0.0)


class TestCalibration:
    def test_perfectly_calibrated_synthetic_rho_one(self):
        rng = np.random.default_rng(0)
        sigma2 = rng.uniform(0.01, 2.0, size=7000)
        rewards = rng.normal(0.0, np.sqrt(sigma2))
        report = calibration_bins(sigma2, rewards, k=7)
        assert report.spearman_rho == pytest.approx(1.0)
        assert sum(b.n for b in report.bins) == 7000

    def test_bins_partition_ordered_by_sigma(self):
        rng = np.random.default_rng(1)
        sigma2 = rng.uniform(0.1, 1.0, size=100)
        rewards = rng.normal(size=100)
        report = calibration_bins(sigma2, rewards, k=5)
        for a, b in zip(report.bins, report.bins[1:]):
            assert a.hi <= b.lo + 1e-12
        assert sum(b.n for b in report.bins) == 100

    def test_constant_sigma_reported_missing(self):
        rewards = np.random.default_rng(2).normal(size=50)
        report = calibration_bins(np.full(50, 0.3), rewards, k=7)
        assert report.spearman_rho is None

    def test_fewer_samples_than_bins_rejected(self):
        with pytest.raises(ValueError):
            calibration_bins(np.ones(5), np.ones(5), k=7)

    def test_anticorrelated_rho_minus_one(self):
        rng = np.random.default_rng(3)
        sigma2 = rng.uniform(0.5, 2.0, size=700)
        rewards = rng.normal(0.0, 1.0 / np.sqrt(sigma2))
        report = calibration_bins(sigma2, rewards, k=7)
        assert report.spearman_rho == pytest.approx(-1.0)

    def test_collect_step_samples_shapes(self, episodes):
        policy = fresh_actor_policy(9)
        sigma2, rewards = collect_step_samples(policy, episodes[:30], CostModel(0.01))
        assert sigma2.shape == rewards.shape == (30 * 30,)
        assert np.all(sigma2 > 0)
