"""Clipped-surrogate PPO baseline on the same offloading environment.

Gaussian actor with learned per-dimension log-std and a tanh squash onto the
normalized action box; value baseline network; one-step advantages
(reward minus value, no discounting or GAE, since episodes are single-step).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import (
    Action,
    EnvConfig,
    NetworkState,
    denormalize_action,
    evaluate,
    normalize_state,
    sample_state,
)
from .nn import AdamState, MlpNetwork, adam_step, backward, forward, init_adam, init_mlp
from .protocol import CurvePoint, EvalProtocol, score_actions

STATE_DIM = 6
ACTION_DIM = 2
LOG_STD_BOUNDS = (-5.0, 1.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class TrainingDivergedError(RuntimeError):
    """Raised when a PPO loss stops being finite."""


@dataclass
class GaussianPolicy:
    """Tanh-squashed diagonal Gaussian: u ~ N(mean_net(s), exp(log_std))."""

    mean_net: MlpNetwork
    log_std: np.ndarray

    def parameters(self) -> list[np.ndarray]:
        return self.mean_net.parameters() + [self.log_std]


def make_gaussian_policy(
    rng: np.random.Generator,
    hidden: tuple[int, ...] = (128, 128),
    init_log_std: float = math.log(0.5),
    state_dim: int = STATE_DIM,
    action_dim: int = ACTION_DIM,
) -> GaussianPolicy:
    net = init_mlp([state_dim, *hidden, action_dim], rng,
                   hidden_activation="relu", output_activation="tanh")
    return GaussianPolicy(net, np.full(action_dim, float(init_log_std)))


def make_value_net(
    rng: np.random.Generator, hidden: tuple[int, ...] = (128, 128), state_dim: int = STATE_DIM
) -> MlpNetwork:
    return init_mlp([state_dim, *hidden, 1], rng, hidden_activation="relu")


def tanh_log_jacobian(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), numerically stable for large |u|."""
    a = np.abs(u)
    return 2.0 * (math.log(2.0) - a - np.log1p(np.exp(-2.0 * a)))


def log_prob_of_pre_squash(policy: GaussianPolicy, means: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Log density of a = tanh(u) under the policy, per row.

    Gaussian log pdf of u minus the tanh change-of-variables term.
    """
    std = np.exp(policy.log_std)
    z = (u - means) / std
    gaussian = np.sum(-0.5 * z * z - policy.log_std - _HALF_LOG_2PI, axis=1)
    return gaussian - np.sum(tanh_log_jacobian(u), axis=1)


def ppo_sample(
    policy: GaussianPolicy, state_vec: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """Sample one normalized action in [-1, 1]^2 and its log-probability."""
    a, log_prob, _ = _sample_batch(policy, np.atleast_2d(state_vec), rng)
    return a[0], float(log_prob[0])


def _sample_batch(policy: GaussianPolicy, state_matrix: np.ndarray, rng: np.random.Generator):
    means = forward(policy.mean_net, state_matrix)
    std = np.exp(policy.log_std)
    u = means + std * rng.standard_normal(means.shape)
    return np.tanh(u), log_prob_of_pre_squash(policy, means, u), u


@dataclass
class RolloutBatch:
    """Parallel arrays of one-step transitions collected under one policy."""

    states: np.ndarray           # (m, STATE_DIM) normalized
    actions: np.ndarray          # (m, ACTION_DIM) normalized, tanh-squashed
    pre_squash: np.ndarray       # (m, ACTION_DIM) the Gaussian draws u
    log_probs: np.ndarray        # (m,)
    rewards: np.ndarray          # (m,)
    value_estimates: np.ndarray  # (m,)

    def __post_init__(self):
        m = len(self.states)
        arrays = (self.actions, self.pre_squash, self.log_probs, self.rewards, self.value_estimates)
        if any(len(a) != m for a in arrays):
            raise ValueError("rollout arrays must have equal length")

    def __len__(self) -> int:
        return len(self.states)


def collect_rollout(
    policy: GaussianPolicy,
    value_net: MlpNetwork,
    env_config: EnvConfig,
    n: int,
    rng: np.random.Generator,
) -> RolloutBatch:
    states = [sample_state(rng, env_config) for _ in range(n)]
    matrix = np.stack([normalize_state(s, env_config) for s in states])
    actions, log_probs, u = _sample_batch(policy, matrix, rng)
    values = forward(value_net, matrix)[:, 0]
    rewards = np.array([
        evaluate(s, denormalize_action(a, env_config), env_config).reward
        for s, a in zip(states, actions)
    ])
    return RolloutBatch(matrix, actions, u, log_probs, rewards, values)


def clipped_surrogate(ratios: np.ndarray, advantages: np.ndarray, clip_epsilon: float) -> float:
    """mean over samples of min(ratio * A, clip(ratio) * A)."""
    clipped = np.clip(ratios, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return float(np.mean(np.minimum(ratios * advantages, clipped * advantages)))


def entropy_bonus(policy: GaussianPolicy) -> float:
    """Entropy of the pre-squash Gaussian (the squash term has no parameters)."""
    return float(np.sum(policy.log_std + 0.5 * (1.0 + math.log(2.0 * math.pi))))


@dataclass
class PpoConfig:
    """Hyperparameters of the PPO trainer."""

    rounds: int = 40
    rollout_size: int = 512
    epochs: int = 4
    minibatch_size: int = 64
    clip_epsilon: float = 0.2
    entropy_weight: float = 1e-3
    learning_rate: float = 3e-4
    hidden_units: int = 128
    hidden_layers: int = 2
    eval_interval: int = 2
    init_log_std: float = math.log(0.5)


def ppo_update(
    policy: GaussianPolicy,
    value_net: MlpNetwork,
    opt_policy: AdamState,
    opt_value: AdamState,
    batch: RolloutBatch,
    config: PpoConfig,
    rng: np.random.Generator,
) -> dict:
    """K epochs of minibatch clipped-surrogate updates on one rollout.

    Advantages are one-step: reward minus the collected value estimate. The
    log-std is clamped back into its bounds after every Adam step.
    """
    advantages = batch.rewards - batch.value_estimates
    m = len(batch)
    eps = config.clip_epsilon
    surrogate_sum = value_loss_sum = 0.0
    n_minibatches = 0
    for _ in range(config.epochs):
        perm = rng.permutation(m)
        for lo in range(0, m, config.minibatch_size):
            idx = perm[lo:lo + config.minibatch_size]
            s, u = batch.states[idx], batch.pre_squash[idx]
            adv, lp_old = advantages[idx], batch.log_probs[idx]
            k = len(idx)

            means = forward(policy.mean_net, s)
            lp_new = log_prob_of_pre_squash(policy, means, u)
            ratio = np.exp(lp_new - lp_old)
            surrogate = clipped_surrogate(ratio, adv, eps)

            # gradient flows only where the min() picks the unclipped term or
            # the ratio sits inside the clip band
            blocked = ((ratio > 1.0 + eps) & (adv > 0.0)) | ((ratio < 1.0 - eps) & (adv < 0.0))
            coeff = np.where(blocked, 0.0, -ratio * adv / k)  # d(-surrogate)/d lp_new

            std = np.exp(policy.log_std)
            z = (u - means) / std
            mean_gout = coeff[:, None] * z / std
            net_grads, _ = backward(policy.mean_net, s, mean_gout)
            log_std_grad = (coeff[:, None] * (z * z - 1.0)).sum(axis=0) - config.entropy_weight
            adam_step(policy.parameters(), net_grads.parameters() + [log_std_grad], opt_policy)
            np.clip(policy.log_std, *LOG_STD_BOUNDS, out=policy.log_std)

            verr = forward(value_net, s) - batch.rewards[idx][:, None]
            value_loss = float(np.mean(verr * verr))
            vgrads, _ = backward(value_net, s, 2.0 * verr / k)
            adam_step(value_net.parameters(), vgrads.parameters(), opt_value)

            surrogate_sum += surrogate
            value_loss_sum += value_loss
            n_minibatches += 1
    return {
        "policy_loss": -surrogate_sum / n_minibatches,
        "value_loss": value_loss_sum / n_minibatches,
        "entropy": entropy_bonus(policy),
    }


def deterministic_actions(
    policy: GaussianPolicy, protocol: EvalProtocol, config: EnvConfig
) -> list[Action]:
    """Zero-noise actions tanh(mean) for every protocol state."""
    means = forward(policy.mean_net, protocol.state_matrix)
    return [denormalize_action(np.tanh(row), config) for row in means]


@dataclass
class PpoTrainResult:
    policy: GaussianPolicy
    value_net: MlpNetwork
    curve: list[CurvePoint]


def train_ppo(
    env_config: EnvConfig,
    config: PpoConfig,
    train_seed: int,
    protocol: EvalProtocol,
) -> PpoTrainResult:
    """Rollout/update rounds with the same evaluation protocol and curve
    schema as the diffusion trainer."""
    rng = np.random.default_rng(train_seed)
    hidden = (config.hidden_units,) * config.hidden_layers
    policy = make_gaussian_policy(rng, hidden, config.init_log_std)
    value_net = make_value_net(rng, hidden)
    opt_policy = init_adam(policy.parameters(), config.learning_rate)
    opt_value = init_adam(value_net.parameters(), config.learning_rate)

    def record(round_index: int) -> CurvePoint:
        score = score_actions(protocol, deterministic_actions(policy, protocol, env_config), env_config)
        return CurvePoint(round_index, round_index * config.rollout_size,
                          score.mean_reward, score.mean_carbon_g)

    curve = [record(0)]
    for rnd in range(1, config.rounds + 1):
        batch = collect_rollout(policy, value_net, env_config, config.rollout_size, rng)
        losses = ppo_update(policy, value_net, opt_policy, opt_value, batch, config, rng)
        if not all(math.isfinite(v) for v in losses.values()):
            raise TrainingDivergedError(f"non-finite loss at round {rnd}: {losses}")
        if rnd % config.eval_interval == 0 or rnd == config.rounds:
            curve.append(record(rnd))
    return PpoTrainResult(policy, value_net, curve)
