"""Render figures from a run directory's CSV outputs.

The CSVs are the contract; figures are derived views written alongside them:
reward curves for every algorithm with a curve file, and per-algorithm
strategy panels comparing chosen against oracle actions and carbon.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

ALGORITHM_LABELS = {"gdm": "Diffusion policy", "ppo": "PPO", "oracle": "Grid oracle"}
ALGORITHM_COLORS = {"gdm": "tab:green", "ppo": "tab:blue", "oracle": "tab:gray"}

plt.rcParams.update({
    "figure.dpi": 150,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
})


def _read_csv(path: Path) -> list[dict]:
    with path.open() as fh:
        return [
            {k: float(v) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def render_reward_curves(run_dir: Path) -> Path | None:
    curves = {}
    for algo in ("gdm", "ppo"):
        path = run_dir / f"{algo}_curve.csv"
        if path.exists():
            curves[algo] = _read_csv(path)
    if not curves:
        return None
    fig, (ax_r, ax_c) = plt.subplots(1, 2, figsize=(9, 3.4))
    for algo, rows in curves.items():
        steps = [r["step"] for r in rows]
        color = ALGORITHM_COLORS[algo]
        label = ALGORITHM_LABELS[algo]
        ax_r.plot(steps, [r["mean_reward"] for r in rows], color=color, label=label)
        ax_c.plot(steps, [r["mean_carbon_g"] * 1e3 for r in rows], color=color, label=label)
    ax_r.set_xlabel("environment samples")
    ax_r.set_ylabel("mean held-out reward")
    ax_r.legend()
    ax_c.set_xlabel("environment samples")
    ax_c.set_ylabel("mean held-out carbon (mg CO2)")
    ax_c.legend()
    fig.tight_layout()
    out = run_dir / "reward_curves.png"
    fig.savefig(out)
    plt.close(fig)
    return out


def render_strategy_panel(run_dir: Path, algorithm: str) -> Path | None:
    path = run_dir / f"{algorithm}_strategy.csv"
    if not path.exists():
        return None
    rows = _read_csv(path)
    order = sorted(range(len(rows)), key=lambda i: rows[i]["oracle_carbon_g"])
    chosen_c = [rows[i]["chosen_carbon_g"] * 1e3 for i in order]
    oracle_c = [rows[i]["oracle_carbon_g"] * 1e3 for i in order]
    color = ALGORITHM_COLORS.get(algorithm, "tab:red")
    label = ALGORITHM_LABELS.get(algorithm, algorithm)

    fig, (ax_carbon, ax_actions) = plt.subplots(1, 2, figsize=(9, 3.4))
    xs = range(len(rows))
    ax_carbon.plot(xs, oracle_c, color="black", lw=1.2, label="oracle")
    ax_carbon.plot(xs, chosen_c, color=color, lw=0, marker="o", ms=3, label=label)
    ax_carbon.set_xlabel("held-out state (sorted by oracle carbon)")
    ax_carbon.set_ylabel("carbon per task (mg CO2)")
    ax_carbon.legend()

    ax_actions.scatter(
        [r["oracle_bandwidth_hz"] / 1e6 for r in rows],
        [r["oracle_power_w"] for r in rows],
        s=14, facecolors="none", edgecolors="black", label="oracle",
    )
    ax_actions.scatter(
        [r["chosen_bandwidth_hz"] / 1e6 for r in rows],
        [r["chosen_power_w"] for r in rows],
        s=8, color=color, label=label,
    )
    ax_actions.set_xlabel("bandwidth (MHz)")
    ax_actions.set_ylabel("transmit power (W)")
    ax_actions.legend()
    fig.tight_layout()
    out = run_dir / f"strategy_{algorithm}.png"
    fig.savefig(out)
    plt.close(fig)
    return out


def render_report(run_dir: str | Path) -> list[Path]:
    """Render every figure the directory's CSVs support; returns the paths."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    written = []
    curve_fig = render_reward_curves(run_dir)
    if curve_fig is not None:
        written.append(curve_fig)
    for algo in ("gdm", "ppo", "oracle"):
        panel = render_strategy_panel(run_dir, algo)
        if panel is not None:
            written.append(panel)
    if not written:
        raise FileNotFoundError(f"no curve or strategy CSVs under {run_dir}")
    return written
