"""DDPG agent: action selection, TD targets, updates, MC-dropout variance, training."""
import copy
import math

import numpy as np
import pytest

from hedgerl.agent import (
    Actor,
    Batch,
    DdpgTrainer,
    ReplayBuffer,
    SimulatedEnvFactory,
    STATE_DIM,
    TrainConfig,
    actor_forward,
    actor_from_dict,
    actor_to_dict,
    actor_update,
    critic_gradients,
    critic_target,
    critic_update,
    encode_state,
    epistemic_q_variance,
    init_actor,
    init_adam,
    make_critic,
    select_action,
    soft_update,
    train,
    unbiased_variance,
)
from hedgerl.env import CostModel, build_state
from hedgerl.market import GbmParams, generate_episode
from hedgerl.nets import forward, init_net, sample_mask

PARAMS = GbmParams(drift=0.05, vol=0.20, initial_price=100.0)


def tiny_actor(seed=0, hidden=(8, 8)):
    return init_actor(STATE_DIM, hidden, rng=np.random.default_rng(seed))


def tiny_critic(seed=0, hidden=(8, 8), dropout=0.0):
    return make_critic(STATE_DIM, hidden, dropout, rng=np.random.default_rng(seed))


def random_batch(seed=0, n=16):
    rng = np.random.default_rng(seed)
    return Batch(
        states=rng.normal(size=(n, STATE_DIM)),
        actions=rng.uniform(0, 1, size=n),
        rewards=rng.normal(size=n),
        next_states=rng.normal(size=(n, STATE_DIM)),
        dones=(rng.random(n) < 0.1).astype(float),
    )


@pytest.fixture
def hedge_state():
    return build_state(generate_episode(PARAMS, 30, 1, seed=5), 3, 0.4)


class TestSelectAction:
    def test_deterministic_repeatable(self, hedge_state):
        actor = tiny_actor()
        a1, s1 = select_action(actor, hedge_state)
        a2, s2 = select_action(actor, hedge_state)
        assert a1 == a2 and s1 == s2

    def test_action_in_unit_interval_under_noise(self, hedge_state):
        actor = tiny_actor()
        rng = np.random.default_rng(0)
        for _ in range(200):
            a, _ = select_action(actor, hedge_state, explore=True, rng=rng, noise_std=2.0)
            assert 0.0 <= a <= 1.0

    def test_zero_noise_equals_deterministic(self, hedge_state):
        actor = tiny_actor()
        det, _ = select_action(actor, hedge_state)
        noisy, _ = select_action(
            actor, hedge_state, explore=True, rng=np.random.default_rng(1), noise_std=0.0
        )
        assert noisy == det

    def test_sigma2_in_clipped_range(self, hedge_state):
        actor = tiny_actor()
        _, sigma2 = select_action(actor, hedge_state)
        assert math.exp(-10.0) <= sigma2 <= math.exp(10.0)

    def test_fresh_actor_sigma2_is_one(self, hedge_state):
        # log-var head starts at zero
        _, sigma2 = select_action(tiny_actor(), hedge_state)
        assert sigma2 == 1.0


class TestCriticTarget:
    def test_terminal_bootstrap_off(self):
        batch = random_batch(1)
        batch.dones[:] = 1.0
        y = critic_target(batch, tiny_actor(), tiny_critic(), 0.9)
        assert np.allclose(y, batch.rewards)

    def test_gamma_zero(self):
        batch = random_batch(2)
        y = critic_target(batch, tiny_actor(), tiny_critic(), 0.0)
        assert np.allclose(y, batch.rewards)

    def test_frozen_target_oracle(self):
        batch = random_batch(3)
        batch.rewards[:] = 0.0
        batch.dones[:] = 0.0
        target_actor, target_critic = tiny_actor(7), tiny_critic(8)
        next_a, _ = actor_forward(target_actor, batch.next_states)
        q_bar = forward(target_critic, np.column_stack([batch.next_states, next_a]))[:, 0]
        y = critic_target(batch, target_actor, target_critic, 0.9)
        assert np.allclose(y, 0.9 * q_bar)


class TestCriticUpdate:
    def test_per_sample_gradient_formula(self):
        # dL/dQ_i = -sigma_i^-2 (y_i - Q_i) / n, via finite differences on Q
        rng = np.random.default_rng(4)
        n = 8
        y = rng.normal(size=n)
        q = rng.normal(size=n)
        lv = rng.uniform(-2, 2, size=n)

        def loss(qv):
            return np.mean(0.5 * np.exp(-lv) * (y - qv) ** 2 + 0.5 * lv)

        for i in range(n):
            qp, qm = q.copy(), q.copy()
            qp[i] += 1e-6
            qm[i] -= 1e-6
            fd = (loss(qp) - loss(qm)) / 2e-6
            analytic = -np.exp(-lv[i]) * (y[i] - q[i]) / n
            assert analytic == pytest.approx(fd, rel=1e-4, abs=1e-10)

    def test_critic_parameter_gradients_match_fd(self):
        critic = tiny_critic(5, dropout=0.25)
        batch = random_batch(6, n=4)
        targets = np.random.default_rng(7).normal(size=4)
        lv = np.random.default_rng(8).uniform(-1, 1, size=4)
        mask = sample_mask(critic, seed=99, batch_size=4)

        _, grads, _ = critic_gradients(critic, batch, targets, lv, mask)

        h = 1e-6
        x = np.column_stack([batch.states, batch.actions])
        for p, g in zip(critic.parameters(), grads.parameters()):
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + h
                up = np.mean(0.5 * np.exp(-lv) * (targets - forward(critic, x, mask)[:, 0]) ** 2)
                p[idx] = orig - h
                dn = np.mean(0.5 * np.exp(-lv) * (targets - forward(critic, x, mask)[:, 0]) ** 2)
                p[idx] = orig
                fd = (up - dn) / (2 * h)
                assert g[idx] == pytest.approx(fd, rel=1e-3, abs=1e-8)

    def test_unit_variance_reduces_to_plain_mse(self):
        batch = random_batch(9)
        targets = np.random.default_rng(10).normal(size=batch.states.shape[0])
        critic_a, critic_b = tiny_critic(11), tiny_critic(11)
        actor_a, actor_b = tiny_actor(12), tiny_actor(12)  # fresh log-var head == 0
        opt_a = init_adam(critic_a.parameters(), 1e-3)
        opt_b = init_adam(critic_b.parameters(), 1e-3)
        stats_a = critic_update(
            critic_a, actor_a, batch, targets, opt_a, init_adam(actor_a.logvar_parameters(), 1e-3),
            uncertainty=True, freeze_logvar=True,
        )
        stats_b = critic_update(
            critic_b, actor_b, batch, targets, opt_b, None, uncertainty=False,
        )
        assert stats_a["critic_loss"] == stats_b["critic_loss"]
        for pa, pb in zip(critic_a.parameters(), critic_b.parameters()):
            assert np.array_equal(pa, pb)  # bit-identical

    def test_perfect_fit_leaves_log_loss_only(self):
        batch = random_batch(13)
        critic = tiny_critic(14)
        actor = tiny_actor(15)
        x = np.column_stack([batch.states, batch.actions])
        targets = forward(critic, x)[:, 0]  # y == Q
        stats = critic_update(
            critic, actor, batch, targets,
            init_adam(critic.parameters(), 1e-3),
            init_adam(actor.logvar_parameters(), 1e-3),
            uncertainty=True,
        )
        # TD term zero, log sigma^2 = 0 at the fresh head
        assert stats["critic_loss"] == pytest.approx(0.0, abs=1e-12)

    def test_logvar_head_gradient_matches_fd(self):
        batch = random_batch(16, n=6)
        critic = tiny_critic(17)
        targets = np.random.default_rng(18).normal(size=6)

        def total_loss(actor_obj):
            x = np.column_stack([batch.states, batch.actions])
            q = forward(critic, x)[:, 0]
            resid = targets - q
            h_t = forward(actor_obj.trunk, batch.states)
            lv = np.clip((h_t @ actor_obj.w_logvar + actor_obj.b_logvar)[:, 0], -10, 10)
            return float(np.mean(0.5 * np.exp(-lv) * resid**2 + 0.5 * lv))

        actor = tiny_actor(19)
        # analytic head gradient replicated from the update rule
        h_t = forward(actor.trunk, batch.states)
        lv_raw = (h_t @ actor.w_logvar + actor.b_logvar)[:, 0]
        x = np.column_stack([batch.states, batch.actions])
        resid = targets - forward(critic, x)[:, 0]
        g_lv = (-0.5 * np.exp(-np.clip(lv_raw, -10, 10)) * resid**2 + 0.5) / 6
        grad_w = h_t.T @ g_lv[:, None]
        h = 1e-6
        for i in range(actor.w_logvar.shape[0]):
            orig = actor.w_logvar[i, 0]
            actor.w_logvar[i, 0] = orig + h
            up = total_loss(actor)
            actor.w_logvar[i, 0] = orig - h
            dn = total_loss(actor)
            actor.w_logvar[i, 0] = orig
            fd = (up - dn) / (2 * h)
            assert grad_w[i, 0] == pytest.approx(fd, rel=1e-3, abs=1e-9)

    def test_empty_batch_rejected(self):
        empty = Batch(
            states=np.zeros((0, STATE_DIM)),
            actions=np.zeros(0),
            rewards=np.zeros(0),
            next_states=np.zeros((0, STATE_DIM)),
            dones=np.zeros(0),
        )
        with pytest.raises(ValueError):
            critic_update(
                tiny_critic(), tiny_actor(), empty, np.zeros(0),
                init_adam(tiny_critic().parameters(), 1e-3), None, uncertainty=False,
            )


class TestActorUpdate:
    def test_constant_critic_zero_gradient(self):
        critic = tiny_critic(20)
        for w in critic.weights:
            w[:] = 0.0
        critic.biases[-1][:] = 3.0  # Q == 3 everywhere
        actor = tiny_actor(21)
        before = [p.copy() for p in actor.policy_parameters()]
        actor_update(actor, critic, random_batch(22), init_adam(actor.policy_parameters(), 1e-2))
        for b, a in zip(before, actor.policy_parameters()):
            assert np.array_equal(b, a)

    def test_quadratic_critic_pulls_action_to_optimum(self):
        # Q(s, a) = -(a - 0.7)^2 has its maximum at a* = 0.7; drive the same
        # head/trunk backprop path with the quadratic's analytic dQ/da
        rng = np.random.default_rng(23)
        state = rng.normal(size=STATE_DIM)
        actor = tiny_actor(24)
        opt = init_adam(actor.policy_parameters(), 5e-3)
        batch_states = np.tile(state, (8, 1))
        from hedgerl import agent as agent_mod

        for _ in range(600):
            h, cache = agent_mod._trunk_forward_cached(actor, batch_states)
            z = h @ actor.w_action + actor.b_action
            a = 1.0 / (1.0 + np.exp(-z))
            g_action = -2.0 * (a[:, 0] - 0.7) / 8  # dQ/da of the quadratic, /batch
            g_za = g_action[:, None] * a * (1.0 - a)
            grads = agent_mod._trunk_backward(actor.trunk, cache, g_za @ actor.w_action.T)
            grads += [h.T @ g_za, g_za.sum(axis=0)]
            actor.set_policy_parameters(
                agent_mod.adam_step(actor.policy_parameters(), [-g for g in grads], opt)
            )
        final_action, _ = actor_forward(actor, state)
        assert final_action[0] == pytest.approx(0.7, abs=0.02)

    def test_update_moves_toward_higher_q(self):
        # with a live critic, one update should not decrease mean Q at the new actions
        critic = tiny_critic(25)
        actor = tiny_actor(26)
        batch = random_batch(27)
        opt = init_adam(actor.policy_parameters(), 1e-3)

        def mean_q():
            a, _ = actor_forward(actor, batch.states)
            return float(np.mean(forward(critic, np.column_stack([batch.states, a]))[:, 0]))

        before = mean_q()
        for _ in range(20):
            actor_update(actor, critic, batch, opt)
        assert mean_q() > before

    def test_logvar_head_untouched(self):
        critic = tiny_critic(28)
        actor = tiny_actor(29)
        before_w = actor.w_logvar.copy()
        actor_update(actor, critic, random_batch(30), init_adam(actor.policy_parameters(), 1e-2))
        assert np.array_equal(before_w, actor.w_logvar)


class TestSoftUpdate:
    def test_rate_one_copies_source(self):
        target, source = tiny_critic(31), tiny_critic(32)
        soft_update(target, source, 1.0)
        for t, s in zip(target.parameters(), source.parameters()):
            assert np.array_equal(t, s)

    def test_rate_zero_keeps_target(self):
        target, source = tiny_critic(33), tiny_critic(34)
        before = [p.copy() for p in target.parameters()]
        soft_update(target, source, 0.0)
        for b, t in zip(before, target.parameters()):
            assert np.array_equal(b, t)

    def test_scalar_arithmetic(self):
        target = init_net([1, 1], ["identity"], rng=np.random.default_rng(0))
        source = init_net([1, 1], ["identity"], rng=np.random.default_rng(1))
        target.weights[0][:] = 0.0
        source.weights[0][:] = 2.0
        soft_update(target, source, 0.005)
        assert target.weights[0][0, 0] == pytest.approx(0.01)

    def test_contraction_toward_source(self):
        target, source = tiny_actor(35), tiny_actor(36)
        gaps = [np.abs(t - s).max() for t, s in zip(target.all_parameters(), source.all_parameters())]
        soft_update(target, source, 0.1)
        new_gaps = [np.abs(t - s).max() for t, s in zip(target.all_parameters(), source.all_parameters())]
        for old, new in zip(gaps, new_gaps):
            assert new == pytest.approx(0.9 * old, rel=1e-9)

    def test_architecture_mismatch_rejected(self):
        a = init_net([2, 3, 1], ["relu", "identity"], rng=np.random.default_rng(2))
        b = init_net([2, 4, 1], ["relu", "identity"], rng=np.random.default_rng(3))
        with pytest.raises(ValueError):
            soft_update(a, b, 0.5)


class TestEpistemicVariance:
    def test_no_dropout_exactly_zero(self):
        critic = tiny_critic(37, dropout=0.0)
        vec = np.random.default_rng(38).normal(size=STATE_DIM)
        assert epistemic_q_variance(critic, vec, 0.5, passes=16, seed=1) == 0.0

    def test_hand_variance_of_two_passes(self):
        assert unbiased_variance(np.array([1.0, 3.0])) == 2.0

    def test_variance_nonnegative_and_positive_with_dropout(self):
        critic = tiny_critic(39, dropout=0.2)
        vec = np.random.default_rng(40).normal(size=STATE_DIM)
        v = epistemic_q_variance(critic, vec, 0.5, passes=64, seed=2)
        assert v > 0.0

    def test_estimator_concentration_across_seeds(self):
        critic = tiny_critic(41, dropout=0.1)
        vec = np.random.default_rng(42).normal(size=STATE_DIM)
        estimates = np.array(
            [epistemic_q_variance(critic, vec, 0.5, passes=1000, seed=s) for s in range(20)]
        )
        assert estimates.std(ddof=1) < 0.2 * estimates.mean()

    def test_too_few_passes_rejected(self):
        with pytest.raises(ValueError):
            epistemic_q_variance(tiny_critic(), np.zeros(STATE_DIM), 0.5, passes=1, seed=0)

    def test_deterministic_given_seed(self):
        critic = tiny_critic(43, dropout=0.3)
        vec = np.zeros(STATE_DIM)
        a = epistemic_q_variance(critic, vec, 0.2, passes=32, seed=77)
        b = epistemic_q_variance(critic, vec, 0.2, passes=32, seed=77)
        assert a == b


class TestReplayBuffer:
    def test_capacity_ring(self):
        buf = ReplayBuffer(capacity=4, state_dim=2)
        for i in range(10):
            buf.push(np.array([i, i]), 0.5, float(i), np.array([i, i]), False)
        assert len(buf) == 4

    def test_sample_without_replacement(self):
        buf = ReplayBuffer(capacity=100, state_dim=1)
        for i in range(50):
            buf.push(np.array([float(i)]), 0.0, float(i), np.array([0.0]), False)
        batch = buf.sample(50, np.random.default_rng(0))
        assert np.unique(batch.rewards).size == 50  # every element distinct

    def test_sample_reproducible(self):
        buf = ReplayBuffer(capacity=100, state_dim=1)
        for i in range(60):
            buf.push(np.array([float(i)]), 0.0, float(i), np.array([0.0]), False)
        a = buf.sample(8, np.random.default_rng(5)).rewards
        b = buf.sample(8, np.random.default_rng(5)).rewards
        assert np.array_equal(a, b)

    def test_oversampling_rejected(self):
        buf = ReplayBuffer(capacity=10, state_dim=1)
        buf.push(np.zeros(1), 0.0, 0.0, np.zeros(1), False)
        with pytest.raises(ValueError):
            buf.sample(2, np.random.default_rng(0))


def small_factory(master_seed=0, risk_lambda=0.0):
    return SimulatedEnvFactory(
        gbm=PARAMS,
        maturity_days=10,
        steps_per_day=1,
        cost=CostModel(0.01),
        risk_lambda=risk_lambda,
        master_seed=master_seed,
    )


def small_config(**overrides):
    defaults = dict(
        episodes=12,
        warmup_steps=32,
        batch_size=16,
        hidden=(16, 16),
        buffer_capacity=1000,
        noise_std_start=0.2,
        noise_std_final=0.05,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TestTraining:
    def test_zero_episodes_leaves_networks_at_init(self):
        cfg = small_config(episodes=0)
        trainer = DdpgTrainer(small_factory(), cfg, seed=1)
        before = trainer.snapshot()
        result = trainer.train()
        assert np.array_equal(before, trainer.snapshot())
        assert result.log == []

    def test_same_seed_bit_identical_checkpoints(self):
        cfg = small_config()
        r1 = train(small_factory(3), cfg, seed=9)
        r2 = train(small_factory(3), cfg, seed=9)
        for a, b in zip(r1.actor.all_parameters(), r2.actor.all_parameters()):
            assert np.array_equal(a, b)
        for a, b in zip(r1.critic.parameters(), r2.critic.parameters()):
            assert np.array_equal(a, b)
        assert [row.total_reward for row in r1.log] == [row.total_reward for row in r2.log]

    def test_different_seeds_differ(self):
        cfg = small_config()
        r1 = train(small_factory(3), cfg, seed=1)
        r2 = train(small_factory(3), cfg, seed=2)
        assert not np.array_equal(
            r1.actor.w_action, r2.actor.w_action
        ) or not np.array_equal(r1.critic.weights[0], r2.critic.weights[0])

    def test_log_schema(self):
        result = train(small_factory(4), small_config(), seed=11)
        assert len(result.log) == 12
        for row in result.log:
            assert math.isfinite(row.total_reward)

    def test_baseline_equivalence_short(self):
        # sigma^2 frozen at 1 + p = 0 + beta = 0 must match plain DDPG bit-for-bit
        cfg_u = small_config(uncertainty=True, freeze_logvar=True, dropout=0.0)
        cfg_p = small_config(uncertainty=False, dropout=0.0)
        t_u = DdpgTrainer(small_factory(5), cfg_u, seed=21)
        t_p = DdpgTrainer(small_factory(5), cfg_p, seed=21)
        for e in range(cfg_u.episodes):
            t_u.run_episode(e)
            t_p.run_episode(e)
            assert np.array_equal(t_u.snapshot(), t_p.snapshot()), f"diverged at episode {e}"
        assert t_u.update_count == t_p.update_count > 0


class TestActorSerialization:
    def test_round_trip_bit_exact(self):
        actor = tiny_actor(50)
        clone = actor_from_dict(actor_to_dict(actor))
        for a, b in zip(actor.all_parameters(), clone.all_parameters()):
            assert np.array_equal(a, b)

    def test_bad_document_rejected(self):
        with pytest.raises(ValueError):
            actor_from_dict({"format_version": 0, "kind": "actor"})
