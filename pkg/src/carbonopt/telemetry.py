"""Energy metering and energy-to-CO2 accounting.

Metering is wall-clock time times a configured constant device power, which
keeps runs reproducible across machines; no OS power sensors are read.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

JOULES_PER_WH = 3600.0


class NestedMeterError(RuntimeError):
    """A PowerMeter was started while another one was running."""


@dataclass(frozen=True)
class EmissionEstimate:
    """Energy in watt-hours paired with CO2 grams at a carbon intensity."""

    energy_wh: float
    carbon_g: float
    intensity_g_per_kwh: float


def estimate_emissions(energy_joules: float, intensity_g_per_kwh: float) -> EmissionEstimate:
    """Exact arithmetic: Wh = J / 3600, grams = Wh * intensity / 1000."""
    if energy_joules < 0.0:
        raise ValueError(f"energy_joules must be >= 0, got {energy_joules}")
    if intensity_g_per_kwh < 0.0:
        raise ValueError(f"intensity_g_per_kwh must be >= 0, got {intensity_g_per_kwh}")
    energy_wh = energy_joules / JOULES_PER_WH
    carbon_g = energy_wh * intensity_g_per_kwh / 1000.0
    return EmissionEstimate(energy_wh, carbon_g, intensity_g_per_kwh)


_active_meter: "PowerMeter | None" = None


class PowerMeter:
    """Context manager accumulating watts times elapsed wall-clock seconds."""

    def __init__(self, device_power_watts: float):
        if device_power_watts <= 0.0:
            raise ValueError(f"device_power_watts must be > 0, got {device_power_watts}")
        self.device_power_watts = device_power_watts
        self.elapsed_seconds = 0.0
        self.energy_joules = 0.0
        self._start = None

    def __enter__(self) -> "PowerMeter":
        global _active_meter
        if _active_meter is not None:
            raise NestedMeterError("a PowerMeter is already running")
        _active_meter = self
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _active_meter
        self.elapsed_seconds = time.perf_counter() - self._start
        self.energy_joules = self.device_power_watts * self.elapsed_seconds
        self._start = None
        _active_meter = None


def meter_run(workload: Callable[[], object], device_power_watts: float) -> float:
    """Run the workload under a meter and return the energy in joules."""
    with PowerMeter(device_power_watts) as meter:
        workload()
    return meter.energy_joules
