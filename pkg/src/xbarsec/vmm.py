"""Quantized in-memory vector-matrix multiplication.

Integer weights are programmed as multi-state conductances with the
linear-conductance level map, so a stored weight ``w`` contributes
``g_hrs + w * dg`` siemens (``dg`` the per-unit-weight conductance step).
Weight 0 maps to HRS, a finite conductance, not an open circuit; the
decode step therefore subtracts the known HRS baseline current
``sum_i v_i * g_hrs_nominal`` before quantizing, after which an ideal
(zero-variation, zero-noise, zero-line-resistance) pipeline recovers the
integer mat-vec product exactly in the ``exact`` ADC resolution mode.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .crossbar import (ADC_MODE_EXACT, ColumnCurrents, Crossbar, DacLevels,
                       MODE_VMM, adc_bit_depth, adc_quantize, column_currents_ideal,
                       column_currents_nodal, dac_map, default_dac_levels)
from .device import (BINARY, LEVEL_MAP_LINEAR_G, force_state, gradual_reset,
                     multistate, set_device_mode)
from .errors import DimensionError, FormatError
from .streams import RandomStream


@dataclass
class WeightMatrix:
    """``n x m`` grid of unsigned ``w``-bit integers."""

    values: np.ndarray
    w: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.ndim != 2:
            raise DimensionError("weights must form a 2-D matrix")
        if self.w < 1:
            raise ValueError("weight bit-width must be >= 1")
        if np.any(self.values < 0) or np.any(self.values >= 2 ** self.w):
            raise ValueError(f"weights must lie in [0, {2 ** self.w})")

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass
class VmmResult:
    """Decoded column outputs plus the analog intermediates for diagnostics."""

    codes: np.ndarray
    adc_bits: int
    analog_currents: ColumnCurrents


def program_weights(xbar: Crossbar, weights: WeightMatrix,
                    rng: RandomStream | None = None) -> None:
    """Store a weight matrix: per device, SET to LRS then gradual-RESET down
    to the level equal to its weight (row-major order).

    Devices are re-routed to ``multistate(2**w)`` with the
    linear-conductance map so read currents are proportional to weights.
    """
    xbar.require_mode(MODE_VMM, "weight programming")
    if weights.shape != (xbar.n, xbar.m):
        raise DimensionError(
            f"weight matrix {weights.shape} does not match crossbar {(xbar.n, xbar.m)}")
    levels = 2 ** weights.w
    mode = multistate(levels, LEVEL_MAP_LINEAR_G)
    for i in range(xbar.n):
        for j in range(xbar.m):
            dev = xbar.device(i, j)
            if dev.state.mode.kind != "binary":
                set_device_mode(dev, BINARY)
            force_state(dev, 1)                       # verified SET to LRS
            set_device_mode(dev, mode)                # now at level L-1
            gradual_reset(dev, int(weights.values[i, j]), rng or dev.rng)


def nominal_level_conductances(xbar: Crossbar, w: int) -> tuple[float, float]:
    """(g_hrs, dg) of the linear level map at the calibration's nominal values."""
    g_hrs = 1.0 / xbar.profile.hrs_mean
    g_lrs = 1.0 / xbar.profile.lrs_mean
    return g_hrs, (g_lrs - g_hrs) / (2 ** w - 1)


def vmm(xbar: Crossbar, input_codes, w: int, levels: DacLevels | None = None,
        resolution_mode: str = ADC_MODE_EXACT, readout: str = "ideal",
        read_noise_sigma: float = 0.0) -> VmmResult:
    """Full digital-in/digital-out pipeline: DAC, column currents, ADC.

    The ADC least significant bit is calibrated to the current produced by
    one unit of (weight x input-step), and the HRS baseline current for the
    applied input is cancelled ahead of quantization.
    """
    xbar.require_mode(MODE_VMM, "VMM readout")
    codes = np.asarray(input_codes, dtype=np.int64)
    if codes.shape != (xbar.n,):
        raise DimensionError(f"expected {xbar.n} input codes, got {codes.shape}")
    if levels is None:
        levels = default_dac_levels(k=2)
    levels.validate_against(xbar.profile)
    voltages = dac_map(codes, levels)
    if readout == "ideal":
        currents = column_currents_ideal(xbar, voltages, read_noise_sigma)
    elif readout == "nodal":
        currents = column_currents_nodal(xbar, voltages, read_noise_sigma=read_noise_sigma)
    else:
        raise ValueError(f"unknown readout {readout!r}")

    g_hrs, dg = nominal_level_conductances(xbar, w)
    baseline = float(np.sum(voltages)) * g_hrs
    lsb_current = levels.step * dg
    bits = adc_bit_depth(w, levels.k, xbar.n, resolution_mode)
    corrected = ColumnCurrents(currents.amperes - baseline, currents.readout_mode)
    out = adc_quantize(corrected, w, levels.k, xbar.n,
                       full_scale=lsb_current * (2 ** bits - 1),
                       resolution_mode=resolution_mode)
    return VmmResult(codes=out, adc_bits=bits, analog_currents=currents)


# ---------------------------------------------------------------------------
# weights file format: plain integer CSV with a one-line width header
# ---------------------------------------------------------------------------

def save_weights(weights: WeightMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"w={weights.w}\n")
        writer = csv.writer(fh)
        for row in weights.values:
            writer.writerow([int(x) for x in row])


def load_weights(path) -> WeightMatrix:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("w="):
                raise FormatError(f"weights file must start with 'w=<bits>', got {header!r}")
            w = int(header[2:])
            rows = [[int(cell) for cell in row] for row in csv.reader(fh) if row]
    except (ValueError, OSError) as exc:
        raise FormatError(f"malformed weights file: {path}") from exc
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise FormatError("weights file rows are empty or ragged")
    return WeightMatrix(np.array(rows, dtype=np.int64), w)
