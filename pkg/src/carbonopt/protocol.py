"""Shared held-out evaluation protocol for policy training runs.

Both optimizers are scored on the same frozen set of sampled states (and,
for the diffusion policy, the same frozen chain-start noise), so curves and
strategy tables are comparable across algorithms. The state set is content
hashed; run manifests record the hash so parity is checkable.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .env import Action, EnvConfig, NetworkState, evaluate, normalize_state, sample_state


@dataclass(frozen=True)
class CurvePoint:
    """One evaluation of a training run, in both epoch and sample units."""

    epoch: int
    step: int
    mean_reward: float
    mean_carbon_g: float


@dataclass(frozen=True)
class EvalProtocol:
    states: tuple[NetworkState, ...]
    state_matrix: np.ndarray   # (n, 6) normalized states
    chain_noise: np.ndarray    # (n, action_dim) frozen x_N for deterministic sampling
    state_hash: str

    def __len__(self) -> int:
        return len(self.states)


def hash_states(states: tuple[NetworkState, ...]) -> str:
    digest = hashlib.sha256()
    for s in states:
        digest.update(s.as_vector().tobytes())
    return digest.hexdigest()


def build_eval_protocol(
    config: EnvConfig, eval_seed: int, n_states: int = 64, action_dim: int = 2
) -> EvalProtocol:
    rng = np.random.default_rng(eval_seed)
    states = tuple(sample_state(rng, config) for _ in range(n_states))
    matrix = np.stack([normalize_state(s, config) for s in states])
    chain_noise = rng.standard_normal((n_states, action_dim))
    return EvalProtocol(states, matrix, chain_noise, hash_states(states))


@dataclass(frozen=True)
class EvalScore:
    mean_reward: float
    mean_carbon_g: float


def score_actions(
    protocol: EvalProtocol, actions: list[Action], config: EnvConfig
) -> EvalScore:
    """Evaluate one chosen action per protocol state; reduce by stable mean."""
    if len(actions) != len(protocol):
        raise ValueError(f"expected {len(protocol)} actions, got {len(actions)}")
    outcomes = [evaluate(s, a, config) for s, a in zip(protocol.states, actions)]
    return EvalScore(
        mean_reward=float(np.mean([o.reward for o in outcomes])),
        mean_carbon_g=float(np.mean([o.carbon for o in outcomes])),
    )
