"""Challenge-response function rooted in a TRNG-initialized entropy array.

The crossbar is first initialized to a random HRS/LRS pattern (one TRNG
batch, retained).  A challenge drives rows with bit 1 at the read voltage
and leaves bit-0 rows floating, maximizing sneak-path participation; all
columns are sensed at virtual ground through their CSAs, the ADC path
being bypassed in this mode.  Response bit j is 1 iff column j's current
exceeds its reference.

References are enrolled per column and per device: the median column
current over a fixed set of half-weight calibration challenges (a protocol
constant, identical on every device so lock and unlock agree).  At
evaluation time the reference scales with the challenge's Hamming weight,
which cancels the common-mode current that the number of driven rows would
otherwise impose on every device at once.

Evaluation is non-destructive and, at zero read noise, a pure function of
(device states, challenge).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .crossbar import MODE_PUF, MODE_TRNG, Crossbar
from .device import PulseSpec
from .errors import DimensionError, UninitializedEntropyError
from .nodal import CachedReadSolver, solve_crossbar_network
from .trng import generate_batch
from .streams import RandomStream

READ_VOLTAGE = 0.2
ENROLL_CHALLENGE_COUNT = 63          # odd: the sample median is an order statistic
_ENROLL_STREAM_TAG = 0x707566       # protocol constant for the calibration challenge set


@dataclass(frozen=True)
class Challenge:
    """One bit per crossbar row; bit 1 drives the row, bit 0 floats it."""

    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8))
        if self.bits.ndim != 1 or not np.all((self.bits == 0) | (self.bits == 1)):
            raise ValueError("challenge must be a 1-D bit vector")

    @property
    def weight(self) -> int:
        return int(self.bits.sum())

    def hex(self) -> str:
        return np.packbits(self.bits, bitorder="little").tobytes().hex()


@dataclass(frozen=True)
class Response:
    """One bit per crossbar column."""

    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8))
        if self.bits.ndim != 1 or not np.all((self.bits == 0) | (self.bits == 1)):
            raise ValueError("response must be a 1-D bit vector")

    def hex(self) -> str:
        return np.packbits(self.bits, bitorder="little").tobytes().hex()


def challenge_from_hex(text: str, n: int) -> Challenge:
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    return Challenge(np.unpackbits(raw, bitorder="little")[:n])


@dataclass(frozen=True)
class ChallengeResponsePair:
    challenge: Challenge
    response: Response
    device_id: str


@dataclass(frozen=True)
class PufMetricsReport:
    """The four standard quality metrics, all in percent."""

    reliability: float
    uniqueness: float
    uniformity: float
    bit_aliasing: float

    def __post_init__(self):
        for name in ("reliability", "uniqueness", "uniformity", "bit_aliasing"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} = {v} outside [0, 100]")


# ---------------------------------------------------------------------------
# entropy initialization and enrollment
# ---------------------------------------------------------------------------

def initialize_entropy(xbar: Crossbar, p50_pulse: PulseSpec) -> None:
    """Run one TRNG batch and retain the resulting state pattern.

    The crossbar must be routed to TRNG mode; afterwards it can be switched
    to PUF mode for evaluation.  A degenerate (constant) pattern is allowed
    but flagged, since it carries no entropy.
    """
    xbar.require_mode(MODE_TRNG, "entropy initialization")
    batch = generate_batch(xbar, p50_pulse)
    xbar.entropy_pattern = batch.bits.reshape(xbar.n, xbar.m).copy()
    xbar.csa_reference = None
    xbar.csa_reference_weight = None
    _invalidate_solver(xbar)
    if batch.bits.min() == batch.bits.max():
        warnings.warn("entropy pattern is constant (all %d): pulse amplitude is "
                      "far from the 50%% switching point" % int(batch.bits[0]),
                      stacklevel=2)


def enrollment_challenges(n: int, count: int = ENROLL_CHALLENGE_COUNT) -> list[Challenge]:
    """The fixed half-weight calibration challenge set for ``n`` rows.

    A protocol constant: derived from a tagged seed so every device, every
    process, and both ends of the locking protocol use the same set.
    """
    rng = np.random.default_rng(np.random.SeedSequence([_ENROLL_STREAM_TAG, n]))
    k0 = max(1, n // 2)
    out = []
    for _ in range(count):
        bits = np.zeros(n, dtype=np.uint8)
        bits[rng.choice(n, size=k0, replace=False)] = 1
        out.append(Challenge(bits))
    return out


def enroll_thresholds(xbar: Crossbar) -> np.ndarray:
    """Per-column CSA references: median current over the calibration set.

    Deterministic in the device states (clean reads), so re-enrolling the
    same state reproduces the same references.
    """
    if xbar.entropy_pattern is None:
        raise UninitializedEntropyError("initialize the entropy pattern before enrollment")
    challenges = enrollment_challenges(xbar.n)
    currents = np.array([_clean_read(xbar, ch) for ch in challenges])
    xbar.csa_reference = np.median(currents, axis=0)
    xbar.csa_reference_weight = max(1, xbar.n // 2)
    return xbar.csa_reference


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _invalidate_solver(xbar: Crossbar) -> None:
    if hasattr(xbar, "_read_solver"):
        del xbar._read_solver


def _cached_solver(xbar: Crossbar) -> CachedReadSolver:
    g = 1.0 / xbar.resistances()
    cached = getattr(xbar, "_read_solver", None)
    if cached is not None:
        fingerprint, solver = cached
        if np.array_equal(fingerprint, g):
            return solver
    solver = CachedReadSolver(g, xbar.line_resistance)
    xbar._read_solver = (g, solver)
    return solver


def _clean_read(xbar: Crossbar, challenge: Challenge) -> np.ndarray:
    """Zero-noise column currents for a challenge drive (cached factorization)."""
    drive = np.where(challenge.bits == 1, READ_VOLTAGE, np.nan)
    return _cached_solver(xbar).read(drive)


def _noisy_read(xbar: Crossbar, challenge: Challenge, sigma: float) -> np.ndarray:
    drive = np.where(challenge.bits == 1, READ_VOLTAGE, np.nan)
    g = xbar.conductances(sigma)
    solution = solve_crossbar_network(g, xbar.line_resistance, drive,
                                      np.ones(xbar.m, dtype=bool))
    return solution.column_currents


def evaluate(xbar: Crossbar, challenge: Challenge,
             read_noise_sigma: float = 0.0) -> Response:
    """Collect the response to one challenge (rows driven/floating, columns
    sensed through per-column CSAs).  Never mutates device state."""
    xbar.require_mode(MODE_PUF, "PUF evaluation")
    if xbar.entropy_pattern is None:
        raise UninitializedEntropyError("PUF evaluated before entropy initialization")
    if challenge.bits.shape != (xbar.n,):
        raise DimensionError(f"challenge has {challenge.bits.size} bits, crossbar has "
                             f"{xbar.n} rows")
    if xbar.csa_reference is None:
        enroll_thresholds(xbar)
    weight = challenge.weight
    if weight == 0:
        return Response(np.zeros(xbar.m, dtype=np.uint8))
    currents = (_clean_read(xbar, challenge) if read_noise_sigma == 0.0
                else _noisy_read(xbar, challenge, read_noise_sigma))
    reference = xbar.csa_reference * (weight / xbar.csa_reference_weight)
    return Response((currents > reference).astype(np.uint8))


def random_challenges(n: int, count: int, rng: RandomStream) -> list[Challenge]:
    """Uniform random challenges (each bit a fair coin)."""
    return [Challenge((rng.random(n) < 0.5).astype(np.uint8)) for _ in range(count)]


# ---------------------------------------------------------------------------
# metrics engine
# ---------------------------------------------------------------------------

def compute_metrics(population: list[Crossbar], challenges: list[Challenge],
                    repeats: int, read_noise_sigma: float = 0.0) -> PufMetricsReport:
    """Reliability / uniqueness / uniformity / bit-aliasing over a population.

    Every crossbar must be entropy-initialized and in PUF mode.  Reliability
    compares each repeat against the first evaluation of the same
    (device, challenge); uniqueness is the mean pairwise inter-device
    fractional Hamming distance on reference responses; uniformity the mean
    ones-fraction; bit-aliasing the mean per-bit-position ones-fraction
    across devices.
    """
    if len(population) < 2:
        raise ValueError("need at least 2 crossbars for inter-device metrics")
    if len(challenges) < 1:
        raise ValueError("need at least 1 challenge")
    if repeats < 2:
        raise ValueError("need at least 2 repeats for reliability")
    m = population[0].m
    if any(x.m != m or x.n != population[0].n for x in population):
        raise DimensionError("population crossbars must share dimensions")

    references = np.empty((len(population), len(challenges), m), dtype=np.uint8)
    intra_distances = []
    for d, xbar in enumerate(population):
        for c, challenge in enumerate(challenges):
            reference = evaluate(xbar, challenge, read_noise_sigma).bits
            references[d, c] = reference
            for _ in range(repeats - 1):
                again = evaluate(xbar, challenge, read_noise_sigma).bits
                intra_distances.append(np.mean(again != reference))

    pair_distances = []
    for a in range(len(population)):
        for b in range(a + 1, len(population)):
            pair_distances.append(np.mean(references[a] != references[b]))

    return PufMetricsReport(
        reliability=100.0 - 100.0 * float(np.mean(intra_distances)),
        uniqueness=100.0 * float(np.mean(pair_distances)),
        uniformity=100.0 * float(np.mean(references)),
        bit_aliasing=100.0 * float(np.mean(references.mean(axis=0))),
    )


# ---------------------------------------------------------------------------
# CRP store: append-only enrollment records
# ---------------------------------------------------------------------------

class CrpStore:
    """Append-only record file: one line per CRP.

    Record layout (space separated):
    ``device_id challenge_hex response_hex timestamp``
    """

    def __init__(self, path):
        self.path = path

    def append(self, pair: ChallengeResponsePair, timestamp: int) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(f"{pair.device_id} {pair.challenge.hex()} "
                     f"{pair.response.hex()} {int(timestamp)}\n")

    def records(self) -> list[tuple[str, str, str, int]]:
        out = []
        try:
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    device_id, chal, resp, ts = line.split()
                    out.append((device_id, chal, resp, int(ts)))
        except FileNotFoundError:
            pass
        return out
