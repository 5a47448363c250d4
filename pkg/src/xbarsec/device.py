"""Single-cell resistive device model.

A device carries fixed sampled parameters (device-to-device variation) and
a mutable resistive state.  Binary-mode switching is pulse driven and
stochastic: a pulse switches the cell iff its amplitude exceeds the
per-event effective threshold, which is the sampled threshold perturbed by
the cycle-to-cycle spread.  Multi-state programming uses a gradual-RESET
abstraction that lands on a deterministic level-to-resistance map plus
programming noise.

Devices are single-owner mutable state: safe to hand between threads, not
to share mutably.  All randomness is drawn from explicitly passed streams
(the owning crossbar spawns one per device).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibrationProfile
from .errors import ModeMisuseError, ProgramOrderError, RangeError
from .streams import RandomStream

MODE_BINARY = "binary"
MODE_MULTISTATE = "multistate"

LEVEL_MAP_GEOMETRIC = "geometric"
LEVEL_MAP_LINEAR_G = "linear-conductance"


@dataclass(frozen=True)
class DeviceParams:
    """Sampled per-device physical parameters.

    ``c2c_sigma`` is the relative spread applied to a threshold on every
    switching event; the thresholds themselves are fixed at sampling time.
    ``programming_noise_sigma`` is the relative spread of a gradual-RESET
    landing resistance.
    """

    hrs_resistance: float
    lrs_resistance: float
    set_threshold: float
    reset_threshold: float
    c2c_sigma: float
    programming_noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.hrs_resistance > self.lrs_resistance:
            raise ValueError("hrs_resistance must exceed lrs_resistance strictly")
        if self.set_threshold <= 0 or self.reset_threshold <= 0:
            raise ValueError("thresholds must be positive")
        if self.c2c_sigma < 0 or self.programming_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")


@dataclass(frozen=True)
class DeviceMode:
    """Routing mode of one cell: binary or multistate(L) with a level map."""

    kind: str
    levels: int
    level_map: str = LEVEL_MAP_GEOMETRIC

    def __post_init__(self):
        if self.kind not in (MODE_BINARY, MODE_MULTISTATE):
            raise ValueError(f"unknown device mode {self.kind!r}")
        if self.kind == MODE_BINARY and self.levels != 2:
            raise ValueError("binary mode implies exactly 2 levels")
        if self.levels < 2:
            raise ValueError("need at least 2 levels")
        if self.level_map not in (LEVEL_MAP_GEOMETRIC, LEVEL_MAP_LINEAR_G):
            raise ValueError(f"unknown level map {self.level_map!r}")


BINARY = DeviceMode(MODE_BINARY, 2)


def multistate(levels: int, level_map: str = LEVEL_MAP_GEOMETRIC) -> DeviceMode:
    return DeviceMode(MODE_MULTISTATE, levels, level_map)


@dataclass
class DeviceState:
    """Current resistive state: level 0 is HRS, level L-1 is LRS."""

    resistance: float
    level: int
    mode: DeviceMode


@dataclass(frozen=True)
class PulseSpec:
    """Programming pulse.  Positive amplitude is SET polarity (targets LRS).

    Rise/fall time is carried for completeness but does not affect
    switching in this model.
    """

    amplitude: float
    width_ns: float = 150.0
    rise_fall_ns: float = 10.0

    def __post_init__(self):
        if self.width_ns <= 0:
            raise ValueError("pulse width must be positive")
        if self.rise_fall_ns < 0:
            raise ValueError("rise/fall time must be non-negative")


@dataclass
class DeviceInstance:
    """One cell: sampled parameters plus mutable state plus its own stream."""

    params: DeviceParams
    state: DeviceState
    rng: RandomStream = field(repr=False, default=None)


def level_resistance(params: DeviceParams, level: int, mode: DeviceMode) -> float:
    """Deterministic level-to-resistance map.

    ``geometric``: log-spaced resistances between HRS and LRS (the
    resistance span covers ~1.5 decades, so log spacing keeps levels
    separable).  ``linear-conductance``: conductance affine in the level
    index, which makes stored integers contribute proportionally to read
    currents.  Both are strictly decreasing in level.
    """
    levels = mode.levels
    if not 0 <= level < levels:
        raise RangeError(f"level {level} outside [0, {levels})")
    hrs, lrs = params.hrs_resistance, params.lrs_resistance
    t = level / (levels - 1)
    if mode.level_map == LEVEL_MAP_GEOMETRIC:
        return hrs * (lrs / hrs) ** t
    g = (1.0 / hrs) + t * (1.0 / lrs - 1.0 / hrs)
    return 1.0 / g


def sample_device(calibration: CalibrationProfile, rng: RandomStream,
                  mode: DeviceMode = BINARY) -> DeviceParams:
    """Draw one device's parameters from the calibration distributions.

    Rejects calibrations whose LRS and HRS ranges overlap (the population
    would not have distinguishable states).  Identical stream state yields
    identical parameters.
    """
    calibration.validate()
    hrs = calibration.draw_hrs(rng)
    lrs = calibration.draw_lrs(rng)
    set_t = calibration.draw_threshold(rng, "set")
    reset_t = calibration.draw_threshold(rng, "reset")
    return DeviceParams(hrs, lrs, set_t, reset_t, calibration.c2c_sigma,
                        calibration.programming_noise_sigma)


def new_device(calibration: CalibrationProfile, rng: RandomStream,
               mode: DeviceMode = BINARY) -> DeviceInstance:
    """Sample parameters and construct a fresh cell at HRS (level 0)."""
    params = sample_device(calibration, rng, mode)
    state = DeviceState(resistance=level_resistance(params, 0, mode), level=0, mode=mode)
    return DeviceInstance(params=params, state=state, rng=rng)


def _effective_threshold(base: float, c2c_sigma: float, rng: RandomStream) -> float:
    if c2c_sigma == 0.0:
        return base
    return base * (1.0 + c2c_sigma * rng.standard_normal())


def apply_pulse(device: DeviceInstance, pulse: PulseSpec, rng: RandomStream) -> DeviceState:
    """Apply one binary-mode pulse; stochastic via the per-event threshold.

    SET polarity (positive amplitude) targets LRS, RESET polarity targets
    HRS.  A pulse toward the state the cell is already in is a no-op and
    consumes no randomness.  Switching lands exactly on the endpoint
    resistance.
    """
    state = device.state
    if state.mode.kind != MODE_BINARY:
        raise ModeMisuseError("pulse programming requires binary mode (got multistate)")
    target_level = 1 if pulse.amplitude > 0 else 0
    if state.level == target_level or pulse.amplitude == 0.0:
        return state
    base = device.params.set_threshold if target_level == 1 else device.params.reset_threshold
    threshold = _effective_threshold(base, device.params.c2c_sigma, rng)
    if abs(pulse.amplitude) > threshold:
        state.level = target_level
        state.resistance = (device.params.lrs_resistance if target_level == 1
                            else device.params.hrs_resistance)
    return state


def force_state(device: DeviceInstance, level: int) -> DeviceState:
    """Program-and-verify to a binary endpoint, abstracted as deterministic.

    Models the verified write sequence used before TRNG batches and weight
    programming: pulses repeat until the read-back confirms the endpoint,
    so the outcome is certain and no stream draws are consumed.
    """
    state = device.state
    if state.mode.kind != MODE_BINARY:
        raise ModeMisuseError("endpoint forcing requires binary mode")
    if level not in (0, 1):
        raise RangeError("binary level must be 0 or 1")
    state.level = level
    state.resistance = (device.params.lrs_resistance if level == 1
                        else device.params.hrs_resistance)
    return state


def set_device_mode(device: DeviceInstance, mode: DeviceMode) -> None:
    """Re-route the cell (binary <-> multistate), snapping to the map endpoint.

    The cell keeps HRS/LRS identity: level 0 stays level 0; any other level
    becomes LRS (the multistate programming flow always re-SETs first).
    """
    state = device.state
    new_level = 0 if state.level == 0 else mode.levels - 1
    state.mode = mode
    state.level = new_level
    state.resistance = level_resistance(device.params, new_level, mode)


def gradual_reset(device: DeviceInstance, target_level: int, rng: RandomStream) -> DeviceState:
    """Incremental RESET from the current level down to ``target_level``.

    Only downward moves (toward HRS) are reachable; asking for a level above
    the current one signals that SET-first reinitialization is required.
    The landing resistance follows the device's level map, perturbed by the
    relative programming noise and clamped to the physical range.
    """
    state = device.state
    if state.mode.kind != MODE_MULTISTATE:
        raise ModeMisuseError("gradual RESET requires multistate mode (got binary)")
    levels = state.mode.levels
    if not 0 <= target_level < levels:
        raise RangeError(f"target level {target_level} outside [0, {levels})")
    if target_level > state.level:
        raise ProgramOrderError(
            f"target level {target_level} above current {state.level}: SET-first required")
    resistance = level_resistance(device.params, target_level, state.mode)
    sigma = device.params.programming_noise_sigma
    if sigma > 0.0:
        resistance *= 1.0 + sigma * rng.standard_normal()
        resistance = float(np.clip(resistance, device.params.lrs_resistance,
                                   device.params.hrs_resistance))
    state.level = target_level
    state.resistance = resistance
    return state


def read_conductance(device: DeviceInstance, read_noise_sigma: float = 0.0) -> float:
    """Non-destructive conductance read: 1/R times a mean-1 noise factor.

    A zero-sigma read consumes no randomness, so repeated clean reads are
    bit-identical and leave the device stream untouched.
    """
    if read_noise_sigma < 0:
        raise ValueError("read_noise_sigma must be non-negative")
    g = 1.0 / device.state.resistance
    if read_noise_sigma == 0.0:
        return g
    return g * (1.0 + read_noise_sigma * device.rng.standard_normal())
