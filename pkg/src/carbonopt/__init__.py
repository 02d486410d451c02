"""Carbon-aware AIGC task-offloading optimizer.

A desk-scale toolkit: a simulated one-user/one-edge-server offloading
environment whose objective is minimal CO2, a diffusion-model policy
optimizer with a PPO baseline and a brute-force grid oracle, a
retrieval-augmented assistant that formulates optimization problems via a
chat-completion backend, and a config-driven experiment CLI with energy and
emission telemetry.
"""

__version__ = "0.1.0"

from .env import (
    Action,
    EnvConfig,
    NetworkState,
    Outcome,
    denormalize_action,
    evaluate,
    normalize_action,
    normalize_state,
    oracle_best,
    sample_state,
)
from .telemetry import EmissionEstimate, PowerMeter, estimate_emissions, meter_run

__all__ = [
    "Action",
    "EnvConfig",
    "NetworkState",
    "Outcome",
    "EmissionEstimate",
    "PowerMeter",
    "denormalize_action",
    "estimate_emissions",
    "evaluate",
    "meter_run",
    "normalize_action",
    "normalize_state",
    "oracle_best",
    "sample_state",
    "__version__",
]
