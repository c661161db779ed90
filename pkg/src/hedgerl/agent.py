"""Uncertainty-aware DDPG for the hedging MDP.

The actor maps the state to a deterministic position in [0, 1] (sigmoid
head) and to a log-variance head estimating the aleatoric reward noise at
that state.  The critic is a dropout-regularized Q network; keeping dropout
active at inference and re-sampling masks yields the epistemic Q variance.
The critic trains on the precision-weighted TD loss

    0.5 * sigma(s)^-2 * (y - Q(s, a))^2 + 0.5 * log sigma(s)^2,

where the first term updates the critic (residual weighted by the actor's
variance head) and the full expression updates the variance head with the
TD residual treated as a constant.  With sigma^2 frozen at 1, dropout 0 and
epistemic penalty 0 the update sequence is exactly classical DDPG.
"""
from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Protocol

import numpy as np

from . import nets
from .env import (
    CostModel,
    HedgeState,
    build_state,
    initial_account,
    risk_adjusted_reward,
    state_features,
    step as env_step,
)
from .market import GbmParams, HedgeEpisode, episode_seed, generate_episode
from .nets import (
    AdamState,
    DenseNet,
    LOG_VAR_MAX,
    LOG_VAR_MIN,
    adam_step,
    backward,
    forward,
    init_adam,
    init_net,
    net_from_dict,
    net_to_dict,
    sample_mask,
)

STATE_DIM = 9

# affine feature normalization (x - offset) / scale, in STATE_FIELDS order:
# tau, moneyness, position, sigma_impl, sigma_20, sigma_30, gamma, theta, vega
FEATURE_OFFSET = np.array([0.0, 1.0, 0.0, 0.2, 0.2, 0.2, 0.0, 0.0, 0.0])
FEATURE_SCALE = np.array([30.0 / 365.0, 0.05, 1.0, 0.1, 0.1, 0.1, 0.1, 20.0, 15.0])

ACTOR_FORMAT_VERSION = 1

__all__ = [
    "STATE_DIM",
    "Actor",
    "ReplayBuffer",
    "Batch",
    "TrainConfig",
    "EnvFactory",
    "SimulatedEnvFactory",
    "EpisodeListFactory",
    "TrainResult",
    "DdpgTrainer",
    "encode_state",
    "encode_features",
    "init_actor",
    "make_critic",
    "actor_forward",
    "select_action",
    "critic_target",
    "critic_gradients",
    "critic_update",
    "actor_update",
    "soft_update",
    "unbiased_variance",
    "epistemic_q_variance",
    "train",
    "save_bundle",
    "load_bundle",
    "actor_to_dict",
    "actor_from_dict",
]


def encode_features(features: np.ndarray) -> np.ndarray:
    """Normalize raw feature rows (last axis in STATE_FIELDS order)."""
    return (np.asarray(features, dtype=float) - FEATURE_OFFSET) / FEATURE_SCALE


def encode_state(state: HedgeState) -> np.ndarray:
    """Normalized network input for one state."""
    return encode_features(state_features(state))


@dataclass
class Actor:
    """Policy network: shared trunk, sigmoid action head, identity log-var head."""

    trunk: DenseNet
    w_action: np.ndarray
    b_action: np.ndarray
    w_logvar: np.ndarray
    b_logvar: np.ndarray

    def policy_parameters(self) -> list[np.ndarray]:
        """Parameters trained by the policy objective (trunk + action head)."""
        return self.trunk.parameters() + [self.w_action, self.b_action]

    def set_policy_parameters(self, params: list[np.ndarray]) -> None:
        self.trunk.set_parameters(params[:-2])
        self.w_action = params[-2]
        self.b_action = params[-1]

    def logvar_parameters(self) -> list[np.ndarray]:
        return [self.w_logvar, self.b_logvar]

    def set_logvar_parameters(self, params: list[np.ndarray]) -> None:
        self.w_logvar, self.b_logvar = params

    def all_parameters(self) -> list[np.ndarray]:
        return self.policy_parameters() + self.logvar_parameters()


def init_actor(state_dim: int, hidden: tuple[int, ...], *, rng: np.random.Generator) -> Actor:
    """Fan-in init for trunk and action head; log-var head starts at zero (sigma^2 = 1)."""
    trunk = init_net([state_dim, *hidden], ["relu"] * len(hidden), rng=rng)
    bound = 1.0 / math.sqrt(hidden[-1])
    return Actor(
        trunk=trunk,
        w_action=rng.uniform(-bound, bound, size=(hidden[-1], 1)),
        b_action=np.zeros(1),
        w_logvar=np.zeros((hidden[-1], 1)),
        b_logvar=np.zeros(1),
    )


def make_critic(
    state_dim: int, hidden: tuple[int, ...], dropout: float, *, rng: np.random.Generator
) -> DenseNet:
    """Q network over (state, action) with dropout on the hidden layers."""
    dims = [state_dim + 1, *hidden, 1]
    activations = ["relu"] * len(hidden) + ["identity"]
    return init_net(dims, activations, [dropout] * len(hidden), rng=rng)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _actor_trunk_out(actor: Actor, states: np.ndarray) -> np.ndarray:
    return forward(actor.trunk, states)


def actor_forward(actor: Actor, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Actions in [0, 1] and clipped log-variances for a batch of encoded states."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    h = _actor_trunk_out(actor, states)
    actions = _sigmoid(h @ actor.w_action + actor.b_action)[:, 0]
    log_var = np.clip((h @ actor.w_logvar + actor.b_logvar)[:, 0], LOG_VAR_MIN, LOG_VAR_MAX)
    return actions, log_var


def select_action(
    actor: Actor,
    state: HedgeState | np.ndarray,
    explore: bool = False,
    rng: np.random.Generator | None = None,
    noise_std: float = 0.0,
) -> tuple[float, float]:
    """Deterministic action (plus clipped Gaussian noise when exploring) and sigma^2."""
    vec = encode_state(state) if isinstance(state, HedgeState) else np.asarray(state, dtype=float)
    actions, log_var = actor_forward(actor, vec)
    action = float(actions[0])
    if explore:
        if rng is None:
            raise ValueError("explore=True requires an rng")
        action = float(np.clip(action + noise_std * rng.standard_normal(), 0.0, 1.0))
    return action, float(np.exp(log_var[0]))


@dataclass
class Batch:
    """A sampled minibatch of encoded transitions."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform no-replacement sampling."""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros(capacity)
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, state_dim))
        self._dones = np.zeros(capacity)
        self._size = 0
        self._cursor = 0

    def __len__(self) -> int:
        return self._size

    def push(
        self, state: np.ndarray, action: float, reward: float, next_state: np.ndarray, done: bool
    ) -> None:
        i = self._cursor
        self._states[i] = state
        self._actions[i] = action
        self._rewards[i] = reward
        self._next_states[i] = next_state
        self._dones[i] = 1.0 if done else 0.0
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if batch_size < 1 or batch_size > self._size:
            raise ValueError(f"cannot sample {batch_size} of {self._size} transitions")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return Batch(
            states=self._states[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_states=self._next_states[idx],
            dones=self._dones[idx],
        )


@dataclass
class TrainConfig:
    """Hyperparameters of the DDPG trainer (uncertainty-aware by default)."""

    discount: float = 0.99
    soft_update_rate: float = 0.005
    batch_size: int = 128
    noise_std_start: float = 0.15
    noise_std_final: float = 0.02
    dropout: float = 0.1
    mc_passes: int = 30
    episodes: int = 8000
    warmup_steps: int = 1000
    epistemic_penalty: float = 0.0
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    hidden: tuple[int, ...] = (64, 64)
    buffer_capacity: int = 200_000
    uncertainty: bool = True
    freeze_logvar: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError(f"discount must be in [0, 1], got {self.discount}")
        if not 0.0 < self.soft_update_rate <= 1.0:
            raise ValueError(f"soft_update_rate must be in (0, 1], got {self.soft_update_rate}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.mc_passes < 2:
            raise ValueError("mc_passes must be >= 2")
        if self.epistemic_penalty < 0.0:
            raise ValueError("epistemic_penalty must be >= 0")
        if self.episodes < 0 or self.warmup_steps < 0:
            raise ValueError("episodes and warmup_steps must be >= 0")

    @property
    def variant(self) -> str:
        return "ddpg-uncertainty" if self.uncertainty else "ddpg"


class EnvFactory(Protocol):
    """Episode source plus the reward conventions the trainer applies."""

    cost: CostModel
    risk_lambda: float
    normalize_rewards: bool

    def episode(self, index: int) -> HedgeEpisode: ...


@dataclass
class SimulatedEnvFactory:
    """GBM episodes with per-index seeds split off a master seed."""

    gbm: GbmParams
    maturity_days: int = 30
    steps_per_day: int = 1
    cost: CostModel = field(default_factory=CostModel)
    risk_lambda: float = 0.0
    normalize_rewards: bool = True
    master_seed: int = 0
    days_per_year: float = 365.0

    def episode(self, index: int) -> HedgeEpisode:
        return generate_episode(
            self.gbm,
            self.maturity_days,
            self.steps_per_day,
            episode_seed(self.master_seed, index),
            self.days_per_year,
        )


@dataclass
class EpisodeListFactory:
    """Cycle through pre-built episodes (market-data training)."""

    episodes: list[HedgeEpisode]
    cost: CostModel = field(default_factory=CostModel)
    risk_lambda: float = 0.0
    normalize_rewards: bool = True

    def episode(self, index: int) -> HedgeEpisode:
        return self.episodes[index % len(self.episodes)]


def critic_target(
    batch: Batch, target_actor: Actor, target_critic: DenseNet, discount: float
) -> np.ndarray:
    """Bootstrap targets y = r + gamma (1 - done) Q'(s', pi'(s')); no dropout."""
    if batch.states.shape[0] == 0:
        raise ValueError("empty batch")
    next_actions, _ = actor_forward(target_actor, batch.next_states)
    x = np.column_stack([batch.next_states, next_actions])
    q_next = forward(target_critic, x)[:, 0]
    return batch.rewards + discount * (1.0 - batch.dones) * q_next


def critic_gradients(
    critic: DenseNet,
    batch: Batch,
    targets: np.ndarray,
    log_var: np.ndarray | None,
    mask=None,
) -> tuple[float, "nets.Gradients", np.ndarray]:
    """Loss and parameter gradients of the (weighted) TD objective.

    Per sample the critic-side gradient w.r.t. the Q output is
    -sigma^-2 (y - Q); log_var=None means the plain unweighted TD loss.
    Returns (batch loss, critic gradients, weighted residual).
    """
    n = batch.states.shape[0]
    x = np.column_stack([batch.states, batch.actions])
    q = forward(critic, x, mask)[:, 0]
    resid = targets - q
    if log_var is not None:
        weighted = np.exp(-log_var) * resid
        loss = float(np.mean(0.5 * weighted * resid + 0.5 * log_var))
    else:
        weighted = resid
        loss = float(np.mean(0.5 * resid * resid))
    upstream = (-weighted / n)[:, None]
    grads = backward(critic, x, upstream, mask)
    return loss, grads, resid


def critic_update(
    critic: DenseNet,
    actor: Actor,
    batch: Batch,
    targets: np.ndarray,
    critic_opt: AdamState,
    logvar_opt: AdamState | None,
    *,
    uncertainty: bool,
    freeze_logvar: bool = False,
    mask_seed: int | None = None,
) -> dict[str, float]:
    """One gradient step on the (precision-weighted) TD loss.

    The critic sees only the weighted TD term; the actor's log-variance
    head sees the full heteroscedastic loss with the residual detached.
    With uncertainty=False this is the plain mean-squared TD update.
    """
    n = batch.states.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    mask = None
    if mask_seed is not None and any(p > 0.0 for p in critic.dropout_rates):
        mask = sample_mask(critic, mask_seed, batch_size=n)

    log_var_raw = None
    log_var = None
    h_trunk = None
    if uncertainty:
        h_trunk = _actor_trunk_out(actor, batch.states)
        log_var_raw = (h_trunk @ actor.w_logvar + actor.b_logvar)[:, 0]
        log_var = np.clip(log_var_raw, LOG_VAR_MIN, LOG_VAR_MAX)

    loss, grads, resid = critic_gradients(critic, batch, targets, log_var, mask)
    critic.set_parameters(adam_step(critic.parameters(), grads.parameters(), critic_opt))
    mean_sigma2 = float(np.mean(np.exp(log_var))) if uncertainty else 1.0

    if uncertainty and not freeze_logvar:
        if logvar_opt is None:
            raise ValueError("uncertainty training requires a log-var optimizer")
        in_range = (log_var_raw > LOG_VAR_MIN) & (log_var_raw < LOG_VAR_MAX)
        g_lv = ((-0.5 * np.exp(-log_var) * resid * resid + 0.5) * in_range / n)[:, None]
        grad_w = h_trunk.T @ g_lv
        grad_b = g_lv.sum(axis=0)
        actor.set_logvar_parameters(
            adam_step(actor.logvar_parameters(), [grad_w, grad_b], logvar_opt)
        )

    return {"critic_loss": loss, "mean_sigma2": mean_sigma2}


def _critic_action_grad(
    critic: DenseNet, states: np.ndarray, actions: np.ndarray, upstream: np.ndarray
) -> np.ndarray:
    """d(upstream . Q)/d action, evaluated without dropout."""
    x = np.column_stack([states, actions])
    grads = backward(critic, x, upstream)
    return grads.wrt_input[:, -1]


def actor_update(
    actor: Actor,
    critic: DenseNet,
    batch: Batch,
    actor_opt: AdamState,
    *,
    beta: float = 0.0,
    mc_passes: int = 30,
    mask_seed: int | None = None,
) -> dict[str, float]:
    """Ascend mean_b Q(s, pi(s)) - beta sqrt(Var Q); log-var head untouched."""
    n = batch.states.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    states = batch.states
    h, trunk_cache = _trunk_forward_cached(actor, states)
    z_a = h @ actor.w_action + actor.b_action
    actions = _sigmoid(z_a)[:, 0]

    ones = np.ones((n, 1)) / n
    g_action = _critic_action_grad(critic, states, actions, ones)
    q_mean = float(np.mean(forward(critic, np.column_stack([states, actions]))[:, 0]))

    penalty = 0.0
    if beta > 0.0:
        if any(p > 0.0 for p in critic.dropout_rates):
            if mask_seed is None:
                raise ValueError("epistemic penalty with dropout requires a mask seed")
            g_pen, penalty = _sqrt_qvar_grad(critic, states, actions, mc_passes, mask_seed)
            g_action = g_action - beta * g_pen / n
        # p == 0: Var(Q) is identically 0, no penalty gradient

    # backprop the ascent direction through the sigmoid head and trunk
    a_col = actions[:, None]
    g_za = g_action[:, None] * a_col * (1.0 - a_col)
    grad_w_action = h.T @ g_za
    grad_b_action = g_za.sum(axis=0)
    g_h = g_za @ actor.w_action.T
    trunk_grads = _trunk_backward(actor.trunk, trunk_cache, g_h)

    grads = trunk_grads + [grad_w_action, grad_b_action]
    descent = [-g for g in grads]
    actor.set_policy_parameters(adam_step(actor.policy_parameters(), descent, actor_opt))
    return {"actor_objective": q_mean - beta * penalty}


def _trunk_forward_cached(actor: Actor, states: np.ndarray):
    out, cache = nets._forward_cached(actor.trunk, np.atleast_2d(states), None)
    return out, cache


def _trunk_backward(trunk: DenseNet, cache, upstream: np.ndarray) -> list[np.ndarray]:
    g = upstream
    w_grads: list[np.ndarray] = [None] * trunk.n_layers  # type: ignore[list-item]
    b_grads: list[np.ndarray] = [None] * trunk.n_layers  # type: ignore[list-item]
    for i in reversed(range(trunk.n_layers)):
        hin, z, a = cache[i]
        gz = g * nets._activation_grad(trunk.activations[i], z, a)
        w_grads[i] = hin.T @ gz
        b_grads[i] = gz.sum(axis=0)
        g = gz @ trunk.weights[i].T
    out: list[np.ndarray] = []
    for w, b in zip(w_grads, b_grads):
        out.append(w)
        out.append(b)
    return out


def _sqrt_qvar_grad(
    critic: DenseNet, states: np.ndarray, actions: np.ndarray, passes: int, seed: int
) -> tuple[np.ndarray, float]:
    """Per-sample gradient of sqrt(Var Q) w.r.t. the action, via MC-dropout passes."""
    n = states.shape[0]
    x = np.column_stack([states, actions])
    qs = np.empty((passes, n))
    dq = np.empty((passes, n))
    for t in range(passes):
        mask = sample_mask(critic, _pass_seed(seed, t), batch_size=n)
        qs[t] = forward(critic, x, mask)[:, 0]
        grads = backward(critic, x, np.ones((n, 1)), mask)
        dq[t] = grads.wrt_input[:, -1]
    centered = qs - qs.mean(axis=0)
    var = (centered**2).sum(axis=0) / (passes - 1)
    dvar = 2.0 / (passes - 1) * (centered * dq).sum(axis=0)
    std = np.sqrt(np.maximum(var, 1e-16))
    return dvar / (2.0 * std), float(np.mean(std))


def soft_update(target, source, rate: float) -> None:
    """Exponential blend theta' <- rate * theta + (1 - rate) * theta', in place."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    t_params = target.all_parameters() if isinstance(target, Actor) else target.parameters()
    s_params = source.all_parameters() if isinstance(source, Actor) else source.parameters()
    if len(t_params) != len(s_params):
        raise ValueError("target/source parameter counts differ")
    for tp, sp in zip(t_params, s_params):
        if tp.shape != sp.shape:
            raise ValueError(f"shape mismatch {tp.shape} vs {sp.shape}")
        tp *= 1.0 - rate
        tp += rate * sp


def unbiased_variance(values: np.ndarray) -> float:
    """Sample variance with the n-1 divisor; requires at least two values."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("unbiased variance requires at least two values")
    return float(np.var(values, ddof=1))


def _pass_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def epistemic_q_variance(
    critic: DenseNet,
    state: HedgeState | np.ndarray,
    action: float,
    passes: int,
    seed: int,
) -> float:
    """Unbiased variance of Q over MC-dropout passes with independent masks."""
    if passes < 2:
        raise ValueError(f"need at least 2 passes, got {passes}")
    vec = encode_state(state) if isinstance(state, HedgeState) else np.asarray(state, dtype=float)
    x = np.concatenate([vec, [action]])
    qs = np.empty(passes)
    for t in range(passes):
        mask = sample_mask(critic, _pass_seed(seed, t))
        qs[t] = forward(critic, x, mask)[0]
    return unbiased_variance(qs)


@dataclass
class EpisodeLogRow:
    episode: int
    total_reward: float
    critic_loss: float
    mean_sigma2: float


@dataclass
class TrainResult:
    actor: Actor
    critic: DenseNet
    target_actor: Actor
    target_critic: DenseNet
    config: TrainConfig
    log: list[EpisodeLogRow]


class DdpgTrainer:
    """Sequential DDPG training loop; deterministic given (factory, config, seed)."""

    def __init__(self, factory: EnvFactory, config: TrainConfig, seed: int):
        self.factory = factory
        self.config = config
        self.seed = int(seed)
        ss = np.random.SeedSequence(self.seed)
        s_init, s_explore, s_sample, s_mask = ss.spawn(4)
        init_rng = np.random.default_rng(s_init)
        self.explore_rng = np.random.default_rng(s_explore)
        self.sample_rng = np.random.default_rng(s_sample)
        self.mask_rng = np.random.default_rng(s_mask)

        dropout = config.dropout if config.uncertainty else 0.0
        self.actor = init_actor(STATE_DIM, config.hidden, rng=init_rng)
        self.critic = make_critic(STATE_DIM, config.hidden, dropout, rng=init_rng)
        self.target_actor = copy.deepcopy(self.actor)
        self.target_critic = copy.deepcopy(self.critic)

        self.actor_opt = init_adam(self.actor.policy_parameters(), config.actor_lr)
        self.logvar_opt = init_adam(self.actor.logvar_parameters(), config.critic_lr)
        self.critic_opt = init_adam(self.critic.parameters(), config.critic_lr)

        self.buffer = ReplayBuffer(config.buffer_capacity, STATE_DIM)
        self.update_count = 0
        self.log: list[EpisodeLogRow] = []

    def noise_std(self, episode_index: int) -> float:
        cfg = self.config
        if cfg.episodes <= 1:
            return cfg.noise_std_final
        frac = min(episode_index / (cfg.episodes - 1), 1.0)
        return cfg.noise_std_start + frac * (cfg.noise_std_final - cfg.noise_std_start)

    def update_once(self) -> dict[str, float]:
        cfg = self.config
        batch = self.buffer.sample(cfg.batch_size, self.sample_rng)
        targets = critic_target(batch, self.target_actor, self.target_critic, cfg.discount)
        has_dropout = any(p > 0.0 for p in self.critic.dropout_rates)
        mask_seed = int(self.mask_rng.integers(0, 2**63)) if has_dropout else None
        freeze = cfg.freeze_logvar or not cfg.uncertainty
        stats = critic_update(
            self.critic,
            self.actor,
            batch,
            targets,
            self.critic_opt,
            self.logvar_opt,
            uncertainty=cfg.uncertainty,
            freeze_logvar=freeze,
            mask_seed=mask_seed,
        )
        pen_seed = None
        if cfg.epistemic_penalty > 0.0 and has_dropout:
            pen_seed = int(self.mask_rng.integers(0, 2**63))
        actor_update(
            self.actor,
            self.critic,
            batch,
            self.actor_opt,
            beta=cfg.epistemic_penalty,
            mc_passes=cfg.mc_passes,
            mask_seed=pen_seed,
        )
        soft_update(self.target_actor, self.actor, cfg.soft_update_rate)
        soft_update(self.target_critic, self.critic, cfg.soft_update_rate)
        self.update_count += 1
        return stats

    def run_episode(self, index: int) -> EpisodeLogRow:
        cfg = self.config
        factory = self.factory
        episode = factory.episode(index)
        account = initial_account(episode)
        state_vec = encode_state(build_state(episode, 0, account.position))
        noise = self.noise_std(index)
        total = 0.0
        losses: list[float] = []
        sigmas: list[float] = []
        for t in range(episode.n_steps):
            action, _ = select_action(
                self.actor, state_vec, explore=True, rng=self.explore_rng, noise_std=noise
            )
            reward, account, done = env_step(episode, account, t, action, factory.cost)
            shaped = reward / episode.premium if factory.normalize_rewards else reward
            shaped = risk_adjusted_reward(shaped, factory.risk_lambda)
            next_vec = encode_state(build_state(episode, t + 1, account.position))
            self.buffer.push(state_vec, action, shaped, next_vec, done)
            total += shaped
            state_vec = next_vec
            if len(self.buffer) >= max(cfg.warmup_steps, cfg.batch_size):
                stats = self.update_once()
                losses.append(stats["critic_loss"])
                sigmas.append(stats["mean_sigma2"])
        row = EpisodeLogRow(
            episode=index,
            total_reward=total,
            critic_loss=float(np.mean(losses)) if losses else math.nan,
            mean_sigma2=float(np.mean(sigmas)) if sigmas else math.nan,
        )
        self.log.append(row)
        return row

    def snapshot(self) -> np.ndarray:
        """Concatenated copy of all learnable parameters (for trajectory tests)."""
        parts = [p.ravel() for p in self.actor.all_parameters()]
        parts += [p.ravel() for p in self.critic.parameters()]
        return np.concatenate(parts).copy()

    def result(self) -> TrainResult:
        return TrainResult(
            actor=self.actor,
            critic=self.critic,
            target_actor=self.target_actor,
            target_critic=self.target_critic,
            config=self.config,
            log=self.log,
        )

    def train(self) -> TrainResult:
        for e in range(self.config.episodes):
            self.run_episode(e)
        return self.result()


def train(factory: EnvFactory, config: TrainConfig, seed: int) -> TrainResult:
    """Train a DDPG agent; bit-reproducible for identical (factory, config, seed)."""
    return DdpgTrainer(factory, config, seed).train()


# ---------------------------------------------------------------------------
# Checkpoint bundle
# ---------------------------------------------------------------------------

def actor_to_dict(actor: Actor) -> dict:
    return {
        "format_version": ACTOR_FORMAT_VERSION,
        "kind": "actor",
        "trunk": net_to_dict(actor.trunk),
        "action_head": {"w": actor.w_action.tolist(), "b": actor.b_action.tolist()},
        "logvar_head": {"w": actor.w_logvar.tolist(), "b": actor.b_logvar.tolist()},
    }


def actor_from_dict(d: dict) -> Actor:
    if d.get("format_version") != ACTOR_FORMAT_VERSION or d.get("kind") != "actor":
        raise ValueError("not a supported actor checkpoint")
    return Actor(
        trunk=net_from_dict(d["trunk"]),
        w_action=np.array(d["action_head"]["w"], dtype=float),
        b_action=np.array(d["action_head"]["b"], dtype=float),
        w_logvar=np.array(d["logvar_head"]["w"], dtype=float),
        b_logvar=np.array(d["logvar_head"]["b"], dtype=float),
    )


def save_bundle(directory: str | Path, result: TrainResult, extra: dict | None = None) -> None:
    """Write actor/critic/target checkpoints, the train config and the log CSV."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "actor.json").write_text(
        json.dumps(actor_to_dict(result.actor), sort_keys=True), encoding="utf-8"
    )
    (directory / "target_actor.json").write_text(
        json.dumps(actor_to_dict(result.target_actor), sort_keys=True), encoding="utf-8"
    )
    (directory / "critic.json").write_text(
        json.dumps(net_to_dict(result.critic), sort_keys=True), encoding="utf-8"
    )
    (directory / "target_critic.json").write_text(
        json.dumps(net_to_dict(result.target_critic), sort_keys=True), encoding="utf-8"
    )
    cfg = asdict(result.config)
    cfg["hidden"] = list(result.config.hidden)
    cfg["variant"] = result.config.variant
    cfg["feature_offset"] = FEATURE_OFFSET.tolist()
    cfg["feature_scale"] = FEATURE_SCALE.tolist()
    if extra:
        cfg.update(extra)
    (directory / "train_config.json").write_text(
        json.dumps(cfg, sort_keys=True, indent=2), encoding="utf-8"
    )
    with open(directory / "train_log.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "total_reward", "critic_loss", "mean_sigma2"])
        for row in result.log:
            writer.writerow([row.episode, repr(row.total_reward), repr(row.critic_loss), repr(row.mean_sigma2)])


def load_bundle(directory: str | Path) -> tuple[Actor, DenseNet, dict]:
    """Load the actor, critic and train-config dict from a bundle directory."""
    directory = Path(directory)
    actor = actor_from_dict(json.loads((directory / "actor.json").read_text(encoding="utf-8")))
    critic = net_from_dict(json.loads((directory / "critic.json").read_text(encoding="utf-8")))
    cfg = json.loads((directory / "train_config.json").read_text(encoding="utf-8"))
    return actor, critic, cfg
