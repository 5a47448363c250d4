"""True random number generation from stochastic switching.

A batch applies a calibrated 50%-switching-probability pulse to every cell
of a fully RESET crossbar; the cells whose per-event effective threshold
falls below the pulse amplitude land in LRS and read out as 1.  The
device-to-device threshold spread dominates which cells "lean" 0 or 1;
the cycle-to-cycle spread refreshes each event, so repeated batches on one
array differ but inherit the array's fixed bias pattern.  Unbiased long
streams therefore want wide arrays (many devices), not many batches.

Quality checks implemented here: monobit bias, longest run, and lag-1
autocorrelation.  Raw bits can be packed and exported for external test
batteries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationProfile
from .crossbar import MODE_TRNG, Crossbar
from .device import PulseSpec, apply_pulse, force_state
from .errors import ConvergenceError, ModeMisuseError
from .streams import RandomStream

P50_DEFAULT_TOLERANCE = 0.002
P50_DEFAULT_POPULATION = 4_000_000
P50_MAX_ITERATIONS = 64
P50_AMPLITUDE_RESOLUTION = 1e-9
CSA_READ_VOLTAGE = 0.2


@dataclass
class TrngBatch:
    """One harvest: the post-pulse state pattern of the whole array."""

    bits: np.ndarray
    pulse_used: PulseSpec
    generation_index: int


@dataclass
class P50CalibrationInfo:
    iterations: int
    final_fraction: float
    amplitude: float


def calibrate_p50_pulse(calibration: CalibrationProfile, tolerance: float,
                        rng: RandomStream, population: int = P50_DEFAULT_POPULATION,
                        width_ns: float = 150.0, rise_fall_ns: float = 10.0,
                        with_info: bool = False):
    """Bisect for the pulse amplitude that switches half a fresh population.

    Each step Monte-Carlo samples ``population`` per-event effective SET
    thresholds and counts the fraction below the candidate amplitude.
    Terminates when the fraction is within ``0.5 +/- tolerance``; for
    (near-)degenerate threshold distributions the fraction is a step
    function that never enters the window, in which case bisection runs the
    bracket down to an amplitude resolution and returns its upper end (the
    median plus an infinitesimal).
    """
    if not 0 < tolerance < 0.5:
        raise ValueError("tolerance must lie in (0, 0.5)")
    calibration.validate()
    hi = 2.0 * (calibration.set_threshold_mean_v + 6 * calibration.set_threshold_sigma_v)
    lo = 0.0
    fraction = math.nan
    for iteration in range(1, P50_MAX_ITERATIONS + 1):
        amplitude = 0.5 * (lo + hi)
        sample = calibration.effective_threshold_sample(population, rng)
        fraction = float(np.mean(sample < amplitude))
        if abs(fraction - 0.5) <= tolerance:
            break
        if hi - lo < P50_AMPLITUDE_RESOLUTION:
            amplitude = hi
            break
        if fraction > 0.5:
            hi = amplitude
        else:
            lo = amplitude
    else:
        raise ConvergenceError(
            f"p50 calibration did not converge in {P50_MAX_ITERATIONS} steps "
            f"(last fraction {fraction:.4f})")
    pulse = PulseSpec(amplitude=amplitude, width_ns=width_ns, rise_fall_ns=rise_fall_ns)
    if with_info:
        return pulse, P50CalibrationInfo(iteration, fraction, amplitude)
    return pulse


def generate_batch(xbar: Crossbar, pulse: PulseSpec,
                   generation_index: int = 0) -> TrngBatch:
    """RESET everything, fire the pulse once per cell, read the pattern.

    The RESET step is a verified (deterministic) write, so each batch
    consumes exactly one threshold draw per cell and batches are
    exchangeable: bits depend on thresholds and that batch's draws, never
    on the previous batch's pattern.
    """
    xbar.require_mode(MODE_TRNG, "TRNG batch generation")
    for dev in xbar.iter_devices():
        if dev.state.mode.kind != "binary":
            raise ModeMisuseError("TRNG batches require all devices in binary mode")
    bits = np.empty(xbar.n * xbar.m, dtype=np.uint8)
    csa_threshold = CSA_READ_VOLTAGE * _midscale_conductance(xbar.profile)
    idx = 0
    for dev in xbar.iter_devices():
        force_state(dev, 0)
        apply_pulse(dev, pulse, dev.rng)
        current = CSA_READ_VOLTAGE / dev.state.resistance
        bits[idx] = 1 if current > csa_threshold else 0
        idx += 1
    return TrngBatch(bits=bits, pulse_used=pulse, generation_index=generation_index)


def _midscale_conductance(profile: CalibrationProfile) -> float:
    # geometric mean of the worst-case state conductances: maximal margin
    g_lrs_min = 1.0 / profile.lrs_max
    g_hrs_max = 1.0 / profile.hrs_min
    return math.sqrt(g_lrs_min * g_hrs_max)


def harvest_stream(xbar: Crossbar, pulse: PulseSpec, n_bits: int,
                   xor_fold: bool = False) -> np.ndarray:
    """Concatenate as many batches as needed, truncated to ``n_bits``.

    ``xor_fold`` harvests twice as much and XORs the halves (optional
    whitening; off by default since the raw source is the point).
    """
    if n_bits < 1:
        raise ValueError("n_bits must be >= 1")
    take = 2 * n_bits if xor_fold else n_bits
    per_batch = xbar.n * xbar.m
    chunks = []
    for index in range(math.ceil(take / per_batch)):
        chunks.append(generate_batch(xbar, pulse, generation_index=index).bits)
    raw = np.concatenate(chunks)[:take]
    if xor_fold:
        return raw[:n_bits] ^ raw[n_bits:]
    return raw


# ---------------------------------------------------------------------------
# stream statistics and packing
# ---------------------------------------------------------------------------

def ones_fraction(bits: np.ndarray) -> float:
    return float(np.mean(bits))


def longest_run(bits: np.ndarray) -> int:
    """Length of the longest run of identical bits (either value)."""
    bits = np.asarray(bits)
    if bits.size == 0:
        return 0
    change = np.flatnonzero(np.diff(bits) != 0)
    edges = np.concatenate([[-1], change, [bits.size - 1]])
    return int(np.max(np.diff(edges)))


def lag1_autocorrelation(bits: np.ndarray) -> float:
    """Pearson correlation between the stream and itself shifted by one."""
    x = np.asarray(bits, dtype=float)
    if x.size < 2 or np.std(x) == 0:
        return 0.0
    a, b = x[:-1], x[1:]
    sa, sb = np.std(a), np.std(b)
    if sa == 0 or sb == 0:
        return 0.0
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def stream_report(bits: np.ndarray) -> str:
    lines = [
        f"bits                 {bits.size}",
        f"ones-fraction        {ones_fraction(bits):.6f}",
        f"longest-run          {longest_run(bits)}",
        f"lag1-autocorrelation {lag1_autocorrelation(bits):+.6f}",
    ]
    return "\n".join(lines) + "\n"


def pack_bits(bits: np.ndarray) -> bytes:
    """Little-endian-within-byte packing, zero padded to a byte boundary."""
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def unpack_bits(data: bytes, n_bits: int) -> np.ndarray:
    out = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    return out[:n_bits]
