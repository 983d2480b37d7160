"""
Acoustic channel: practical-loss propagation with Thorp absorption, SINR,
propagation delay and receive arbitration (half duplex, first capture).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np

from .errors import ContractViolation

# Calibrated links sit exactly on the threshold; float noise must not flip them.
SINR_TOLERANCE_DB = 1e-9
MIN_DISTANCE_M = 1.0


@dataclass(frozen=True)
class ChannelParams:
    frequency_khz: float = 25.0
    spreading_k: float = 1.5
    sound_speed_mps: float = 1500.0
    noise_db: float = 50.0
    threshold_db: float = 10.0

    def __post_init__(self) -> None:
        if not self.frequency_khz > 0:
            raise ValueError("frequency_khz must be > 0")
        if not 1.0 <= self.spreading_k <= 2.0:
            raise ValueError("spreading_k must be within [1, 2]")
        if not self.sound_speed_mps > 0:
            raise ValueError("sound_speed_mps must be > 0")
        if not (math.isfinite(self.noise_db) and math.isfinite(self.threshold_db)):
            raise ValueError("noise_db and threshold_db must be finite")


@dataclass(frozen=True)
class ActiveTransmission:
    tx_node: int
    tx_position: tuple[float, float, float]
    source_level_db: float
    start: float
    duration: float
    frame: Any = None
    tf: int = 0
    tx_gain_db: float = 0.0

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise ValueError("transmission duration must be > 0")

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass
class Arrival:
    """One transmission as seen by one receiver."""

    arrival_id: int
    transmission: ActiveTransmission
    level_db: float
    start: float
    end: float
    detectable: bool

    @property
    def tx_node(self) -> int:
        return self.transmission.tx_node

    @property
    def frame(self) -> Any:
        return self.transmission.frame

    def overlaps(self, start: float, end: float) -> bool:
        return self.start < end and start < self.end


class LossReason(Enum):
    HALF_DUPLEX = "half_duplex"
    CAPTURE_BUSY = "capture_busy"
    LOW_SINR = "low_sinr"
    SCRIPTED = "scripted"


@dataclass(frozen=True)
class ReceiverView:
    """What the receiver did while an arrival was on the water."""

    tx_intervals: tuple[tuple[float, float], ...] = ()
    captured_by: Optional[int] = None


@dataclass(frozen=True)
class DecodeOutcome:
    decoded: bool
    sinr_db: float
    reason: Optional[LossReason] = field(default=None)


def thorp_absorption(f_khz):
    """Seawater absorption in dB/km, f in kHz."""
    f = np.asarray(f_khz, dtype=float)
    if np.any(f <= 0):
        raise ValueError("frequency must be > 0 kHz")
    f2 = f * f
    alpha = 0.11 * f2 / (1.0 + f2) + 44.0 * f2 / (4100.0 + f2) + 2.75e-4 * f2 + 0.003
    return float(alpha) if alpha.ndim == 0 else alpha


def transmission_loss(distance_m, params: ChannelParams):
    """10·k·log10(d) + α(f)·d/1000 with d clamped to 1 m. Accepts arrays."""
    d = np.maximum(np.asarray(distance_m, dtype=float), MIN_DISTANCE_M)
    tl = 10.0 * params.spreading_k * np.log10(d) + thorp_absorption(params.frequency_khz) * d / 1000.0
    return float(tl) if tl.ndim == 0 else tl


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def received_level(
    tx: ActiveTransmission,
    rx_position: Sequence[float],
    rx_gain_db: float,
    params: ChannelParams,
) -> float:
    d = distance(tx.tx_position, rx_position)
    return tx.source_level_db + tx.tx_gain_db + rx_gain_db - transmission_loss(d, params)


def sinr(rl_signal_db: float, interferer_levels_db: Sequence[float], noise_db: float) -> float:
    if len(interferer_levels_db) == 0:
        return rl_signal_db - noise_db
    power = 10.0 ** (noise_db / 10.0) + float(np.sum(10.0 ** (np.asarray(interferer_levels_db) / 10.0)))
    return rl_signal_db - 10.0 * math.log10(power)


def propagation_delay(distance_m: float, params: ChannelParams) -> float:
    if distance_m < 0:
        raise ValueError("distance must be >= 0")
    return distance_m / params.sound_speed_mps


def min_sinr_over(arrival: Arrival, concurrent: Sequence[Arrival], noise_db: float) -> float:
    """Lowest instantaneous SINR across the arrival's duration.

    Interference is piecewise constant and only grows at interferer starts,
    so evaluating at the arrival start and every interferer start inside it
    covers every maximum.
    """
    others = [a for a in concurrent if a is not arrival and a.overlaps(arrival.start, arrival.end)]
    if not others:
        return arrival.level_db - noise_db
    starts = np.array([a.start for a in others])
    ends = np.array([a.end for a in others])
    lin = 10.0 ** (np.array([a.level_db for a in others]) / 10.0)
    inside = starts[(starts > arrival.start) & (starts < arrival.end)]
    points = np.concatenate(([arrival.start], inside))
    active = (starts[None, :] <= points[:, None]) & (ends[None, :] > points[:, None])
    interference = active.astype(float) @ lin
    worst = float(np.max(interference))
    return arrival.level_db - 10.0 * math.log10(10.0 ** (noise_db / 10.0) + worst)


def decode_outcome(
    arrival: Arrival,
    concurrent_arrivals: Sequence[Arrival],
    rx_state: ReceiverView,
    params: ChannelParams,
    threshold_db: Optional[float] = None,
) -> DecodeOutcome:
    if arrival.end <= arrival.start:
        raise ContractViolation("arrival must have end > start")
    threshold = params.threshold_db if threshold_db is None else threshold_db
    level = min_sinr_over(arrival, concurrent_arrivals, params.noise_db)
    if any(s < arrival.end and arrival.start < e for s, e in rx_state.tx_intervals):
        return DecodeOutcome(False, level, LossReason.HALF_DUPLEX)
    if level < threshold - SINR_TOLERANCE_DB:
        return DecodeOutcome(False, level, LossReason.LOW_SINR)
    if rx_state.captured_by is not None and rx_state.captured_by != arrival.arrival_id:
        return DecodeOutcome(False, level, LossReason.CAPTURE_BUSY)
    return DecodeOutcome(True, level)
