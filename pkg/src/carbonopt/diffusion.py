"""Denoising-diffusion policy trained against a learned reward critic.

The policy is a conditional reverse-diffusion chain: starting from Gaussian
noise, a small MLP denoiser iteratively removes predicted noise, conditioned
on the normalized network state and the chain position. The final chain
output is tanh-squashed and mapped onto the action box, so actions are
bounded by construction whether the policy is trained or not.

Training is one-step (contextual bandit): twin critics regress the observed
reward directly, and the policy ascends the first critic with gradients
propagated through every denoising step and the tanh squash. Exploration
comes only from the stochastic chain noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

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
from .nn import (
    AdamState,
    MlpNetwork,
    adam_step,
    backward,
    clone_network,
    forward,
    init_adam,
    init_mlp,
    soft_update,
)
from .protocol import CurvePoint, EvalProtocol, score_actions

STATE_DIM = 6
ACTION_DIM = 2


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss stops being finite."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule of the diffusion chain."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)


def linear_schedule(steps: int = 6, beta_start: float = 1e-4, beta_end: float = 0.2) -> NoiseSchedule:
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    betas = np.linspace(beta_start, beta_end, steps)
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ValueError("betas must lie in (0, 1)")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(betas, alphas, alpha_bars)


@dataclass
class DiffusionPolicy:
    """Noise-prediction MLP plus its schedule.

    Denoiser input layout: [normalized state | noisy action x_t | t/N].
    """

    denoiser: MlpNetwork
    schedule: NoiseSchedule
    state_dim: int = STATE_DIM
    action_dim: int = ACTION_DIM


def make_policy(
    rng: np.random.Generator,
    steps: int = 6,
    beta_start: float = 1e-4,
    beta_end: float = 0.2,
    hidden: tuple[int, ...] = (128, 128),
    state_dim: int = STATE_DIM,
    action_dim: int = ACTION_DIM,
) -> DiffusionPolicy:
    sizes = [state_dim + action_dim + 1, *hidden, action_dim]
    denoiser = init_mlp(sizes, rng, hidden_activation="mish", output_activation="identity")
    return DiffusionPolicy(denoiser, linear_schedule(steps, beta_start, beta_end), state_dim, action_dim)


def draw_chain_noise(rng: np.random.Generator, steps: int, m: int, action_dim: int = ACTION_DIM):
    """Per-step reverse noise z_t for t = N..2 (no noise is added at t = 1)."""
    return [rng.standard_normal((m, action_dim)) for _ in range(steps - 1)]


def denoise(
    policy: DiffusionPolicy,
    state_matrix: np.ndarray,
    x_init: np.ndarray,
    step_noise: list[np.ndarray] | None = None,
    collect: bool = False,
):
    """Run the reverse chain from x_N = x_init down to x_0.

    step_noise is None for the deterministic chain, otherwise the list from
    :func:`draw_chain_noise`. With collect=True also returns the per-step
    caches needed for backpropagation through the chain.
    """
    sched = policy.schedule
    n = sched.steps
    if step_noise is not None and len(step_noise) != n - 1:
        raise ValueError(f"expected {n - 1} noise arrays, got {len(step_noise)}")
    m = state_matrix.shape[0]
    x = np.asarray(x_init, dtype=float)
    caches = []
    for t in range(n, 0, -1):
        i = t - 1
        coef = float(sched.betas[i] / math.sqrt(1.0 - sched.alpha_bars[i]))
        scale = float(math.sqrt(sched.alphas[i]))
        inp = np.concatenate([state_matrix, x, np.full((m, 1), t / n)], axis=1)
        eps_hat = forward(policy.denoiser, inp)
        if collect:
            caches.append((inp, coef, scale))
        x = (x - coef * eps_hat) / scale
        if t > 1 and step_noise is not None:
            x = x + math.sqrt(sched.betas[i]) * step_noise[n - t]
    return (x, caches) if collect else x


def sample_action(
    policy: DiffusionPolicy,
    state: NetworkState,
    config: EnvConfig,
    rng: np.random.Generator,
    deterministic: bool = False,
) -> Action:
    """Generate one bounded action from Gaussian noise, conditioned on state."""
    s = normalize_state(state, config)[None, :]
    x_init = rng.standard_normal((1, policy.action_dim))
    noise = None if deterministic else draw_chain_noise(rng, policy.schedule.steps, 1, policy.action_dim)
    x0 = denoise(policy, s, x_init, noise)
    return denormalize_action(np.tanh(x0[0]), config)


def deterministic_actions(
    policy: DiffusionPolicy, protocol: EvalProtocol, config: EnvConfig
) -> list[Action]:
    """Deterministic chain on the frozen protocol noise, one action per state."""
    x0 = denoise(policy, protocol.state_matrix, protocol.chain_noise)
    return [denormalize_action(np.tanh(row), config) for row in x0]


@dataclass
class Critic:
    """Twin reward critics with soft-updated target copies."""

    q1: MlpNetwork
    q2: MlpNetwork
    q1_target: MlpNetwork
    q2_target: MlpNetwork
    tau: float = 0.005


def make_critic(
    rng: np.random.Generator,
    hidden: tuple[int, ...] = (128, 128),
    tau: float = 0.005,
    state_dim: int = STATE_DIM,
    action_dim: int = ACTION_DIM,
) -> Critic:
    sizes = [state_dim + action_dim, *hidden, 1]
    q1 = init_mlp(sizes, rng, hidden_activation="relu")
    q2 = init_mlp(sizes, rng, hidden_activation="relu")
    return Critic(q1, q2, clone_network(q1), clone_network(q2), tau)


def critic_update(
    critic: Critic,
    opt1: AdamState,
    opt2: AdamState,
    states: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
) -> float:
    """Regress both critics onto the observed one-step rewards; returns the
    mean of the two MSE losses. Targets are soft-updated afterwards."""
    if len(states) == 0:
        raise ValueError("batch must be nonempty")
    qin = np.concatenate([states, actions], axis=1)
    target = np.asarray(rewards, dtype=float)[:, None]
    losses = []
    for q, opt in ((critic.q1, opt1), (critic.q2, opt2)):
        err = forward(q, qin) - target
        losses.append(float(np.mean(err * err)))
        grads, _ = backward(q, qin, 2.0 * err / err.shape[0])
        adam_step(q.parameters(), grads.parameters(), opt)
    soft_update(critic.q1_target, critic.q1, critic.tau)
    soft_update(critic.q2_target, critic.q2, critic.tau)
    return float(np.mean(losses))


def critic_q_fn(critic: Critic) -> Callable:
    """Adapter exposing Q1 values and action gradients to the policy update."""

    def q_fn(states: np.ndarray, actions: np.ndarray):
        qin = np.concatenate([states, actions], axis=1)
        q = forward(critic.q1, qin)[:, 0]
        m = len(q)
        _, gin = backward(critic.q1, qin, np.full((m, 1), 1.0 / m))
        # gin carries the 1/m mean weight; callers get d(mean Q)/d action
        return q, gin[:, states.shape[1]:]

    return q_fn


def policy_loss_and_grads(
    policy: DiffusionPolicy,
    q_fn: Callable,
    state_matrix: np.ndarray,
    x_init: np.ndarray,
    step_noise: list[np.ndarray] | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Loss -mean Q(s, a(theta)) and its exact denoiser-parameter gradients.

    Gradients flow through every reverse-chain step and the tanh squash;
    chain noise (when present) is treated as a constant (reparameterization).
    """
    x0, caches = denoise(policy, state_matrix, x_init, step_noise, collect=True)
    a = np.tanh(x0)
    q, dq_da = q_fn(state_matrix, a)
    loss = -float(np.mean(q))
    gx = -dq_da * (1.0 - a * a)  # d loss / d x_0, mean weight included by q_fn
    grads = [np.zeros_like(p) for p in policy.denoiser.parameters()]
    lo = policy.state_dim
    hi = lo + policy.action_dim
    for inp, coef, scale in reversed(caches):
        g, gin = backward(policy.denoiser, inp, (-coef / scale) * gx)
        for acc, val in zip(grads, g.parameters()):
            acc += val
        gx = gx / scale + gin[:, lo:hi]
    return loss, grads


def policy_update(
    policy: DiffusionPolicy,
    critic: Critic,
    opt: AdamState,
    state_matrix: np.ndarray,
    rng: np.random.Generator,
    deterministic: bool = False,
) -> float:
    m = state_matrix.shape[0]
    x_init = rng.standard_normal((m, policy.action_dim))
    noise = None if deterministic else draw_chain_noise(rng, policy.schedule.steps, m, policy.action_dim)
    loss, grads = policy_loss_and_grads(policy, critic_q_fn(critic), state_matrix, x_init, noise)
    adam_step(policy.denoiser.parameters(), grads, opt)
    return loss


class ReplayBuffer:
    """Fixed-capacity FIFO ring over (state, action, reward) transitions."""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM, action_dim: int = ACTION_DIM):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.size = 0
        self.pos = 0

    def __len__(self) -> int:
        return self.size

    def push(self, state: np.ndarray, action: np.ndarray, reward: float) -> None:
        self.states[self.pos] = state
        self.actions[self.pos] = action
        self.rewards[self.pos] = reward
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, self.size, size=n)
        return self.states[idx], self.actions[idx], self.rewards[idx]


@dataclass
class GdmConfig:
    """Hyperparameters of the diffusion-policy trainer.

    The critic regresses per-state reward differences an order of magnitude
    smaller than the across-state spread, so it gets larger minibatches than
    the policy, and the replay ring is kept short enough that late training
    focuses on the current policy's neighborhood.
    """

    iterations: int = 10_000
    batch_size: int = 64
    critic_batch_size: int = 256
    buffer_capacity: int = 4_000
    policy_lr: float = 3e-4
    critic_lr: float = 3e-4
    tau: float = 0.005
    denoise_steps: int = 6
    beta_start: float = 1e-4
    beta_end: float = 0.2
    hidden_units: int = 128
    hidden_layers: int = 2
    eval_interval: int = 500


@dataclass
class GdmTrainResult:
    policy: DiffusionPolicy
    critic: Critic
    curve: list[CurvePoint]


def train(
    env_config: EnvConfig,
    config: GdmConfig,
    train_seed: int,
    protocol: EvalProtocol,
) -> GdmTrainResult:
    """Interleaved data collection and critic/policy updates.

    One environment sample per iteration; updates start once the buffer can
    fill a batch. Held-out evaluation (deterministic chain on the protocol's
    frozen noise) is recorded every eval_interval iterations; the curve is
    raw data, never smoothed here.
    """
    rng = np.random.default_rng(train_seed)
    hidden = (config.hidden_units,) * config.hidden_layers
    policy = make_policy(
        rng, config.denoise_steps, config.beta_start, config.beta_end, hidden
    )
    critic = make_critic(rng, hidden, config.tau)
    opt_policy = init_adam(policy.denoiser.parameters(), config.policy_lr)
    opt_q1 = init_adam(critic.q1.parameters(), config.critic_lr)
    opt_q2 = init_adam(critic.q2.parameters(), config.critic_lr)
    buffer = ReplayBuffer(config.buffer_capacity)

    def record(epoch: int) -> CurvePoint:
        score = score_actions(protocol, deterministic_actions(policy, protocol, env_config), env_config)
        return CurvePoint(epoch, epoch, score.mean_reward, score.mean_carbon_g)

    curve = [record(0)]
    for it in range(1, config.iterations + 1):
        state = sample_state(rng, env_config)
        s_norm = normalize_state(state, env_config)
        x0 = denoise(
            policy,
            s_norm[None, :],
            rng.standard_normal((1, policy.action_dim)),
            draw_chain_noise(rng, policy.schedule.steps, 1, policy.action_dim),
        )
        a_norm = np.tanh(x0[0])
        outcome = evaluate(state, denormalize_action(a_norm, env_config), env_config)
        buffer.push(s_norm, a_norm, outcome.reward)

        if len(buffer) >= config.batch_size:
            s, a, r = buffer.sample(rng, config.critic_batch_size)
            critic_loss = critic_update(critic, opt_q1, opt_q2, s, a, r)
            s_pi, _, _ = buffer.sample(rng, config.batch_size)
            policy_loss = policy_update(policy, critic, opt_policy, s_pi, rng)
            if not (math.isfinite(critic_loss) and math.isfinite(policy_loss)):
                raise TrainingDivergedError(
                    f"non-finite loss at iteration {it}: critic={critic_loss}, policy={policy_loss}"
                )
        if it % config.eval_interval == 0 or it == config.iterations:
            curve.append(record(it))
    return GdmTrainResult(policy, critic, curve)
