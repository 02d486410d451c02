"""Config-driven experiment orchestration with reproducible artifacts.

Every run writes into one output directory, guarded by a lock file:

    <algo>_curve.csv       reward curve (epoch, step, mean_reward, mean_carbon_g)
    <algo>_strategy.csv    per held-out state: chosen action/carbon/latency
                           next to the grid-oracle action/carbon
    <algo>_checkpoint.json every parameter tensor + schedule + config hash
    manifest.json          resolved config, seeds, version, eval-state hash,
                           metered emission estimate, summary metrics
    rag_transcript_*.json  one transcript per formulation request

CSV cells are written with repr() so identical configs and seeds reproduce
byte-identical files; the manifest carries the only timestamps.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, diffusion, llm, ppo, rag
from .env import Action, EnvConfig, evaluate, oracle_best
from .nn import MlpNetwork
from .protocol import CurvePoint, EvalProtocol, build_eval_protocol, score_actions
from .telemetry import PowerMeter, estimate_emissions

# grams CO2 per kWh; derived from a published training-footprint pair of
# 8.148 Wh and 1.672 g, not an authoritative grid figure
DEFAULT_CARBON_INTENSITY = 205.2


class ConfigValidationError(ValueError):
    """Carries the full list of configuration problems."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


class OutputDirLockedError(RuntimeError):
    """Another experiment currently owns the output directory."""


@dataclass
class ExperimentConfig:
    """Flat experiment settings; JSON keys and CLI flags mirror field names."""

    algorithm: str = "gdm"                  # gdm | ppo | oracle
    output_dir: str = "runs/latest"
    train_seed: int = 7
    eval_seed: int = 2024
    eval_states: int = 64
    env_config: str | None = None           # path to an EnvConfig JSON file
    checkpoint: str | None = None           # evaluated by the eval verb
    oracle_grid_bandwidth: int = 101
    oracle_grid_power: int = 101
    device_power_watts: float = 60.0
    carbon_intensity_g_per_kwh: float = DEFAULT_CARBON_INTENSITY

    gdm_iterations: int = 10_000
    gdm_batch_size: int = 64
    gdm_critic_batch_size: int = 256
    gdm_buffer_capacity: int = 4_000
    gdm_policy_lr: float = 3e-4
    gdm_critic_lr: float = 3e-4
    gdm_tau: float = 0.005
    gdm_denoise_steps: int = 6
    gdm_beta_start: float = 1e-4
    gdm_beta_end: float = 0.2
    gdm_hidden_units: int = 128
    gdm_hidden_layers: int = 2
    gdm_eval_interval: int = 500

    ppo_rounds: int = 40
    ppo_rollout_size: int = 512
    ppo_epochs: int = 4
    ppo_minibatch_size: int = 64
    ppo_clip_epsilon: float = 0.2
    ppo_entropy_weight: float = 1e-3
    ppo_learning_rate: float = 3e-4
    ppo_hidden_units: int = 128
    ppo_hidden_layers: int = 2
    ppo_eval_interval: int = 2

    corpus_dir: str = "corpus"
    rag_index_path: str | None = None       # default: <output_dir>/rag_index.json
    rag_memory_path: str | None = None      # default: <output_dir>/memory.jsonl
    rag_chunk_size: int = 1000
    rag_chunk_overlap: int = 200
    rag_top_k: int = 4
    rag_token_budget: int = 4000
    rag_memory_recall: int = 4

    llm_backend: str = "mock"               # mock | live
    llm_model: str = "gpt-4"
    llm_endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    llm_api_key_env_var: str = "OPENAI_API_KEY"
    llm_timeout: float = 30.0
    llm_max_retries: int = 3
    llm_backoff_base: float = 1.0
    llm_temperature: float = 0.0
    llm_max_tokens: int = 1024
    llm_mock_responses: str | None = None   # JSON file: prompt hash -> response

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigValidationError([f"unknown config key: {k}" for k in unknown])
        return cls(**data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Built-in defaults, overridden by the config file, overridden by flags."""
    data = ExperimentConfig().to_dict()
    if path is not None:
        file_data = json.loads(Path(path).read_text())
        unknown = sorted(set(file_data) - set(data))
        if unknown:
            raise ConfigValidationError([f"unknown config key: {k}" for k in unknown])
        data.update(file_data)
    if overrides:
        data.update(overrides)
    cfg = ExperimentConfig.from_dict(data)
    problems = validate_config(cfg)
    if problems:
        raise ConfigValidationError(problems)
    return cfg


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Every problem, not just the first."""
    problems = []
    if cfg.algorithm not in ("gdm", "ppo", "oracle"):
        problems.append(f"algorithm must be gdm, ppo, or oracle, got {cfg.algorithm!r}")
    if cfg.eval_states < 1:
        problems.append("eval_states must be >= 1")
    if cfg.oracle_grid_bandwidth < 2 or cfg.oracle_grid_power < 2:
        problems.append("oracle grid must be at least 2x2")
    if cfg.device_power_watts <= 0:
        problems.append("device_power_watts must be > 0")
    if cfg.carbon_intensity_g_per_kwh < 0:
        problems.append("carbon_intensity_g_per_kwh must be >= 0")
    for name in ("gdm_iterations", "gdm_batch_size", "gdm_critic_batch_size",
                 "gdm_buffer_capacity", "gdm_denoise_steps", "gdm_hidden_units",
                 "gdm_hidden_layers", "gdm_eval_interval", "ppo_rounds",
                 "ppo_rollout_size", "ppo_epochs", "ppo_minibatch_size",
                 "ppo_eval_interval", "rag_top_k", "rag_token_budget",
                 "rag_memory_recall", "llm_max_tokens"):
        if getattr(cfg, name) < 1:
            problems.append(f"{name} must be >= 1")
    for name in ("gdm_policy_lr", "gdm_critic_lr", "gdm_tau", "gdm_beta_start",
                 "gdm_beta_end", "ppo_clip_epsilon", "ppo_learning_rate",
                 "llm_timeout", "llm_backoff_base"):
        if getattr(cfg, name) <= 0:
            problems.append(f"{name} must be > 0")
    if cfg.ppo_entropy_weight < 0:
        problems.append("ppo_entropy_weight must be >= 0")
    if cfg.llm_max_retries < 0:
        problems.append("llm_max_retries must be >= 0")
    if cfg.rag_chunk_overlap < 0 or cfg.rag_chunk_overlap >= cfg.rag_chunk_size:
        problems.append("need 0 <= rag_chunk_overlap < rag_chunk_size")
    if cfg.llm_backend not in ("mock", "live"):
        problems.append(f"llm_backend must be mock or live, got {cfg.llm_backend!r}")
    for name in ("env_config", "checkpoint", "llm_mock_responses"):
        path = getattr(cfg, name)
        if path is not None and not Path(path).exists():
            problems.append(f"{name} references a missing path: {path}")
    return problems


def resolve_env(cfg: ExperimentConfig) -> EnvConfig:
    if cfg.env_config is None:
        return EnvConfig()
    return EnvConfig.load(cfg.env_config)


def config_hash(cfg: ExperimentConfig, env: EnvConfig) -> str:
    payload = json.dumps({"experiment": cfg.to_dict(), "env": env.to_dict()}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def gdm_config_from(cfg: ExperimentConfig) -> diffusion.GdmConfig:
    return diffusion.GdmConfig(
        iterations=cfg.gdm_iterations,
        batch_size=cfg.gdm_batch_size,
        critic_batch_size=cfg.gdm_critic_batch_size,
        buffer_capacity=cfg.gdm_buffer_capacity,
        policy_lr=cfg.gdm_policy_lr,
        critic_lr=cfg.gdm_critic_lr,
        tau=cfg.gdm_tau,
        denoise_steps=cfg.gdm_denoise_steps,
        beta_start=cfg.gdm_beta_start,
        beta_end=cfg.gdm_beta_end,
        hidden_units=cfg.gdm_hidden_units,
        hidden_layers=cfg.gdm_hidden_layers,
        eval_interval=cfg.gdm_eval_interval,
    )


def ppo_config_from(cfg: ExperimentConfig) -> ppo.PpoConfig:
    return ppo.PpoConfig(
        rounds=cfg.ppo_rounds,
        rollout_size=cfg.ppo_rollout_size,
        epochs=cfg.ppo_epochs,
        minibatch_size=cfg.ppo_minibatch_size,
        clip_epsilon=cfg.ppo_clip_epsilon,
        entropy_weight=cfg.ppo_entropy_weight,
        learning_rate=cfg.ppo_learning_rate,
        hidden_units=cfg.ppo_hidden_units,
        hidden_layers=cfg.ppo_hidden_layers,
        eval_interval=cfg.ppo_eval_interval,
    )


class OutputLock:
    """Exclusive lock file so one experiment at a time owns a directory."""

    def __init__(self, output_dir: Path):
        self.path = output_dir / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OutputDirLockedError(
                f"lock file {self.path} exists; another run owns this directory"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, exc_type, exc, tb):
        self.path.unlink(missing_ok=True)


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


CURVE_HEADER = ["epoch", "step", "mean_reward", "mean_carbon_g"]
STRATEGY_HEADER = [
    "state_index", "channel_gain", "renewable_fraction", "grid_intensity",
    "intermediate_size_bits", "edge_cycles", "user_cycles",
    "chosen_bandwidth_hz", "chosen_power_w", "chosen_carbon_g", "chosen_latency_s",
    "oracle_bandwidth_hz", "oracle_power_w", "oracle_carbon_g",
]


def curve_rows(curve: list[CurvePoint]) -> list[list]:
    return [[p.epoch, p.step, p.mean_reward, p.mean_carbon_g] for p in curve]


def strategy_rows(
    protocol: EvalProtocol,
    actions: list[Action],
    oracle: list[tuple],
    env: EnvConfig,
) -> list[list]:
    rows = []
    for i, (state, action, (o_action, o_outcome)) in enumerate(zip(protocol.states, actions, oracle)):
        outcome = evaluate(state, action, env)
        rows.append([
            i, state.channel_gain, state.renewable_fraction, state.grid_intensity,
            state.intermediate_size, state.edge_cycles, state.user_cycles,
            action.bandwidth, action.power, outcome.carbon, outcome.total_latency,
            o_action.bandwidth, o_action.power, o_outcome.carbon,
        ])
    return rows


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_FORMAT_VERSION = 1


def _net_to_dict(net: MlpNetwork) -> dict:
    return {
        "layer_sizes": net.layer_sizes,
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _net_from_dict(data: dict) -> MlpNetwork:
    return MlpNetwork(
        layer_sizes=list(data["layer_sizes"]),
        weights=[np.array(w, dtype=float) for w in data["weights"]],
        biases=[np.array(b, dtype=float) for b in data["biases"]],
        hidden_activation=data["hidden_activation"],
        output_activation=data["output_activation"],
    )


def save_gdm_checkpoint(path: Path, result: diffusion.GdmTrainResult, cfg_hash: str) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "algorithm": "gdm",
        "config_hash": cfg_hash,
        "schedule": {"betas": result.policy.schedule.betas.tolist()},
        "denoiser": _net_to_dict(result.policy.denoiser),
        "critic": {
            name: _net_to_dict(net)
            for name, net in (
                ("q1", result.critic.q1), ("q2", result.critic.q2),
                ("q1_target", result.critic.q1_target), ("q2_target", result.critic.q2_target),
            )
        },
        "critic_tau": result.critic.tau,
    }
    path.write_text(json.dumps(payload))


def save_ppo_checkpoint(path: Path, result: ppo.PpoTrainResult, cfg_hash: str) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "algorithm": "ppo",
        "config_hash": cfg_hash,
        "mean_net": _net_to_dict(result.policy.mean_net),
        "log_std": result.policy.log_std.tolist(),
        "value_net": _net_to_dict(result.value_net),
    }
    path.write_text(json.dumps(payload))


def load_checkpoint(path: str | Path):
    """Returns ("gdm", DiffusionPolicy) or ("ppo", GaussianPolicy)."""
    payload = json.loads(Path(path).read_text())
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format: {version}")
    if payload["algorithm"] == "gdm":
        betas = np.array(payload["schedule"]["betas"], dtype=float)
        schedule = diffusion.NoiseSchedule(betas, 1.0 - betas, np.cumprod(1.0 - betas))
        denoiser = _net_from_dict(payload["denoiser"])
        action_dim = denoiser.output_dim
        state_dim = denoiser.input_dim - action_dim - 1
        return "gdm", diffusion.DiffusionPolicy(denoiser, schedule, state_dim, action_dim)
    if payload["algorithm"] == "ppo":
        policy = ppo.GaussianPolicy(
            _net_from_dict(payload["mean_net"]),
            np.array(payload["log_std"], dtype=float),
        )
        return "ppo", policy
    raise ValueError(f"unknown checkpoint algorithm {payload['algorithm']!r}")


# -- experiment verbs --------------------------------------------------------

def _manifest(
    cfg: ExperimentConfig,
    env: EnvConfig,
    protocol: EvalProtocol,
    energy_joules: float,
    metrics: dict,
    artifacts: dict[str, str],
) -> dict:
    emission = estimate_emissions(energy_joules, cfg.carbon_intensity_g_per_kwh)
    return {
        "tool_version": f"carbonopt {__version__}",
        "algorithm": cfg.algorithm,
        "config": cfg.to_dict(),
        "env_config": env.to_dict(),
        "config_hash": config_hash(cfg, env),
        "seeds": {"train": cfg.train_seed, "eval": cfg.eval_seed},
        "eval_state_hash": protocol.state_hash,
        "emission": {
            "energy_joules": energy_joules,
            "energy_wh": emission.energy_wh,
            "carbon_g": emission.carbon_g,
            "intensity_g_per_kwh": emission.intensity_g_per_kwh,
        },
        "metrics": metrics,
        "artifacts": artifacts,
        "created_unix": time.time(),
    }


def run_experiment(cfg: ExperimentConfig) -> dict[str, str]:
    """Train/evaluate per cfg.algorithm and write all artifacts; returns the
    artifact name -> path map that also lands in the manifest."""
    problems = validate_config(cfg)
    if problems:
        raise ConfigValidationError(problems)
    env = resolve_env(cfg)
    env_problems = env.validate()
    if env_problems:
        raise ConfigValidationError(env_problems)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = (cfg.oracle_grid_bandwidth, cfg.oracle_grid_power)
    cfg_hash = config_hash(cfg, env)

    with OutputLock(out):
        protocol = build_eval_protocol(env, cfg.eval_seed, cfg.eval_states)
        curve = None
        checkpoint_path = None
        with PowerMeter(cfg.device_power_watts) as meter:
            oracle = [oracle_best(s, env, grid) for s in protocol.states]
            if cfg.algorithm == "gdm":
                result = diffusion.train(env, gdm_config_from(cfg), cfg.train_seed, protocol)
                actions = diffusion.deterministic_actions(result.policy, protocol, env)
                curve = result.curve
                checkpoint_path = out / "gdm_checkpoint.json"
                save_gdm_checkpoint(checkpoint_path, result, cfg_hash)
            elif cfg.algorithm == "ppo":
                result = ppo.train_ppo(env, ppo_config_from(cfg), cfg.train_seed, protocol)
                actions = ppo.deterministic_actions(result.policy, protocol, env)
                curve = result.curve
                checkpoint_path = out / "ppo_checkpoint.json"
                save_ppo_checkpoint(checkpoint_path, result, cfg_hash)
            else:
                actions = [action for action, _ in oracle]

        artifacts: dict[str, str] = {}
        if curve is not None:
            curve_path = out / f"{cfg.algorithm}_curve.csv"
            write_csv(curve_path, CURVE_HEADER, curve_rows(curve))
            artifacts["curve"] = str(curve_path)
        strategy_path = out / f"{cfg.algorithm}_strategy.csv"
        write_csv(strategy_path, STRATEGY_HEADER, strategy_rows(protocol, actions, oracle, env))
        artifacts["strategy"] = str(strategy_path)
        if checkpoint_path is not None:
            artifacts["checkpoint"] = str(checkpoint_path)

        score = score_actions(protocol, actions, env)
        oracle_mean_reward = float(np.mean([o.reward for _, o in oracle]))
        oracle_mean_carbon = float(np.mean([o.carbon for _, o in oracle]))
        metrics = {
            "mean_reward": score.mean_reward,
            "mean_carbon_g": score.mean_carbon_g,
            "oracle_mean_reward": oracle_mean_reward,
            "oracle_mean_carbon_g": oracle_mean_carbon,
            "reward_shortfall_vs_oracle": (
                (oracle_mean_reward - score.mean_reward) / abs(oracle_mean_reward)
                if oracle_mean_reward != 0.0 else 0.0
            ),
        }
        if curve is not None:
            metrics["final_eval_reward"] = curve[-1].mean_reward
        manifest_path = out / "manifest.json"
        manifest_path.write_text(json.dumps(
            _manifest(cfg, env, protocol, meter.energy_joules, metrics, artifacts), indent=2
        ) + "\n")
        artifacts["manifest"] = str(manifest_path)
    return artifacts


def run_eval(cfg: ExperimentConfig) -> dict[str, str]:
    """Evaluate a stored checkpoint on the held-out protocol; writes the same
    strategy table and manifest as a training run."""
    problems = validate_config(cfg)
    if cfg.checkpoint is None:
        problems.append("eval requires a checkpoint path")
    if problems:
        raise ConfigValidationError(problems)
    env = resolve_env(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    algorithm, policy = load_checkpoint(cfg.checkpoint)
    cfg = dataclasses.replace(cfg, algorithm=algorithm)

    with OutputLock(out):
        protocol = build_eval_protocol(env, cfg.eval_seed, cfg.eval_states)
        grid = (cfg.oracle_grid_bandwidth, cfg.oracle_grid_power)
        with PowerMeter(cfg.device_power_watts) as meter:
            oracle = [oracle_best(s, env, grid) for s in protocol.states]
            if algorithm == "gdm":
                actions = diffusion.deterministic_actions(policy, protocol, env)
            else:
                actions = ppo.deterministic_actions(policy, protocol, env)

        strategy_path = out / f"{algorithm}_strategy.csv"
        write_csv(strategy_path, STRATEGY_HEADER, strategy_rows(protocol, actions, oracle, env))
        score = score_actions(protocol, actions, env)
        oracle_mean_reward = float(np.mean([o.reward for _, o in oracle]))
        metrics = {
            "mean_reward": score.mean_reward,
            "mean_carbon_g": score.mean_carbon_g,
            "oracle_mean_reward": oracle_mean_reward,
        }
        artifacts = {"strategy": str(strategy_path)}
        manifest_path = out / "manifest.json"
        manifest_path.write_text(json.dumps(
            _manifest(cfg, env, protocol, meter.energy_joules, metrics, artifacts), indent=2
        ) + "\n")
        artifacts["manifest"] = str(manifest_path)
    return artifacts


# -- RAG verb ----------------------------------------------------------------

def _corpus_hash(docs: list[tuple[str, str]]) -> str:
    digest = hashlib.sha256()
    for doc_id, text in docs:
        digest.update(doc_id.encode())
        digest.update(b"\x00")
        digest.update(text.encode())
        digest.update(b"\x00")
    return digest.hexdigest()


def load_corpus(corpus_dir: str | Path) -> list[tuple[str, str]]:
    root = Path(corpus_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {root}")
    docs = []
    for path in sorted(root.rglob("*.txt")):
        docs.append((path.relative_to(root).as_posix(), path.read_text()))
    if not docs:
        raise FileNotFoundError(f"no .txt documents under {root}")
    return docs


def build_or_load_index(cfg: ExperimentConfig, out: Path) -> rag.ChunkIndex:
    docs = load_corpus(cfg.corpus_dir)
    want_hash = _corpus_hash(docs)
    index_path = Path(cfg.rag_index_path) if cfg.rag_index_path else out / "rag_index.json"
    if index_path.exists():
        try:
            index, stored_hash = rag.load_index(index_path)
        except ValueError:
            stored_hash = None
            index = None
        if index is not None and stored_hash == want_hash:
            return index
    chunks = []
    for doc_id, text in docs:
        chunks.extend(rag.chunk_document(doc_id, text, cfg.rag_chunk_size, cfg.rag_chunk_overlap))
    index = rag.build_index(chunks)
    index_path.parent.mkdir(parents=True, exist_ok=True)
    rag.save_index(index, index_path, corpus_hash=want_hash)
    return index


def _make_backend_caller(cfg: ExperimentConfig):
    if cfg.llm_backend == "mock":
        seed_table = {}
        if cfg.llm_mock_responses:
            seed_table = json.loads(Path(cfg.llm_mock_responses).read_text())
        backend = llm.mock_backend(seed_table)
        return backend.complete
    client_config = llm.ClientConfig(
        endpoint_url=cfg.llm_endpoint_url,
        api_key_env_var=cfg.llm_api_key_env_var,
        timeout=cfg.llm_timeout,
        max_retries=cfg.llm_max_retries,
        backoff_base=cfg.llm_backoff_base,
    )
    return lambda request: llm.complete(client_config, request)


def run_rag(cfg: ExperimentConfig, request_text: str) -> tuple[dict, Path]:
    """Retrieve, assemble, complete, remember, and write one transcript."""
    problems = validate_config(cfg)
    if not request_text:
        problems.append("request text must be nonempty")
    if problems:
        raise ConfigValidationError(problems)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    index = build_or_load_index(cfg, out)
    memory_path = Path(cfg.rag_memory_path) if cfg.rag_memory_path else out / "memory.jsonl"
    memory = rag.MemoryRepository(memory_path, index.embed_terms)

    recalled = memory.recall(request_text, cfg.rag_memory_recall)
    results = rag.retrieve(index, request_text, cfg.rag_top_k)
    chunks = [index.chunk_by_id(r.chunk_id) for r in results]
    context = rag.assemble_prompt(
        request_text, chunks, recalled, budget=cfg.rag_token_budget
    )
    request = llm.ChatRequest(
        model_name=cfg.llm_model,
        messages=(
            llm.ChatMessage("system", context.system_preamble),
            llm.ChatMessage("user", context.user_content()),
        ),
        temperature=cfg.llm_temperature,
        max_tokens=cfg.llm_max_tokens,
    )
    response = _make_backend_caller(cfg)(request)
    memory.record(request_text, response.content)

    transcript = {
        "request": request_text,
        "retrieved": [
            {"chunk_id": r.chunk_id, "score": r.score, "doc_id": c.doc_id,
             "start": c.start, "end": c.end}
            for r, c in zip(results, chunks)
        ],
        "memory_recalled": [
            {"request": m.request, "response": m.response, "timestamp": m.timestamp}
            for m in context.memory_entries
        ],
        "prompt": context.render(),
        "prompt_tokens": context.total_tokens,
        "token_budget": context.token_budget,
        "response": response.content,
        "response_tokens": response.completion_tokens,
        "backend_id": response.backend_id,
        "created_unix": time.time(),
    }
    transcript_path = out / f"rag_transcript_{len(memory):04d}.json"
    transcript_path.write_text(json.dumps(transcript, indent=2) + "\n")
    return transcript, transcript_path
