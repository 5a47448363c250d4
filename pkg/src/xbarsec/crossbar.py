"""Passive crossbar assembly and peripherals.

A crossbar is an ``n x m`` grid of devices plus the peripheral models that
surround it: per-row DACs, column current summation (ideal Kirchhoff or
full nodal analysis), per-column ADC quantization, and the current sense
amplifiers.  A routing mode (``vmm`` / ``trng`` / ``puf``, the DeMUX
setting) gates which readout paths the higher-level operations may use:
``puf`` routes CSA outputs directly and bypasses the ADC.

The crossbar owns a deterministic randomness tree: seed -> one child
stream per device plus one crossbar-level stream, so rebuilding from the
same seed reproduces the device population and every later stochastic
trajectory.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibrationProfile, get_profile, profile_to_text, parse_profile_text
from .device import (BINARY, DeviceInstance, DeviceMode, DeviceParams, DeviceState,
                     level_resistance, multistate, new_device, read_conductance)
from .errors import DimensionError, FormatError, ModeMisuseError, RangeError
from .streams import RandomStream, generator_state, restore_generator
from . import nodal

XBAR_FORMAT_VERSION = 1

MODE_VMM = "vmm"
MODE_TRNG = "trng"
MODE_PUF = "puf"
_MODES = (MODE_VMM, MODE_TRNG, MODE_PUF)

TERMINATION_VIRTUAL_GROUND = "virtual_ground"
TERMINATION_FLOATING_UNSELECTED = "floating_unselected"

READOUT_IDEAL = "ideal"
READOUT_NODAL = "nodal"

ADC_MODE_PAPER = "paper"
ADC_MODE_EXACT = "exact"

DAC_FULL_SCALE_V = 0.3


@dataclass
class Crossbar:
    """Device grid plus geometry, routing mode, and randomness streams."""

    n: int
    m: int
    devices: list  # n lists of m DeviceInstance
    line_resistance: float
    profile: CalibrationProfile
    rng: RandomStream = field(repr=False)
    seed: int = 0
    mode: str = MODE_VMM
    entropy_pattern: np.ndarray | None = None  # set by the PUF entropy init
    csa_reference: np.ndarray | None = None    # per-column enrollment medians
    csa_reference_weight: int | None = None    # challenge weight the medians refer to

    @property
    def device_id(self) -> str:
        return f"xbar-{self.seed & 0xFFFFFFFFFFFFFFFF:016x}-{self.n}x{self.m}"

    def device(self, i: int, j: int) -> DeviceInstance:
        return self.devices[i][j]

    def iter_devices(self):
        for row in self.devices:
            yield from row

    def resistances(self) -> np.ndarray:
        return np.array([[d.state.resistance for d in row] for row in self.devices])

    def levels(self) -> np.ndarray:
        return np.array([[d.state.level for d in row] for row in self.devices], dtype=np.int64)

    def conductances(self, read_noise_sigma: float = 0.0) -> np.ndarray:
        """Read conductance of every device (one read each)."""
        return np.array([[read_conductance(d, read_noise_sigma) for d in row]
                         for row in self.devices])

    def require_mode(self, mode: str, operation: str) -> None:
        if self.mode != mode:
            raise ModeMisuseError(
                f"{operation} requires {mode!r} mode but crossbar is routed to {self.mode!r}")

    def state_snapshot(self) -> tuple:
        """Immutable view of all device states, for non-destructiveness checks."""
        return tuple((d.state.resistance, d.state.level, d.state.mode)
                     for d in self.iter_devices())


def build_crossbar(n: int, m: int, calibration: CalibrationProfile | str,
                   line_resistance: float = 0.0, seed: int = 0) -> Crossbar:
    """Sample an ``n x m`` device population, deterministic in ``seed``.

    Stream layout: ``SeedSequence(seed)`` spawns ``n*m + 1`` children;
    child ``i*m + j`` belongs to device ``(i, j)``, the last one is the
    crossbar-level operation stream.
    """
    if n < 1 or m < 1:
        raise DimensionError(f"crossbar dimensions must be >= 1, got {n}x{m}")
    if line_resistance < 0:
        raise ValueError("line_resistance must be >= 0")
    profile = get_profile(calibration) if isinstance(calibration, str) else calibration
    profile.validate()
    children = np.random.SeedSequence(seed).spawn(n * m + 1)
    devices = []
    for i in range(n):
        row = []
        for j in range(m):
            rng = np.random.default_rng(children[i * m + j])
            row.append(new_device(profile, rng))
        devices.append(row)
    return Crossbar(n=n, m=m, devices=devices, line_resistance=float(line_resistance),
                    profile=profile, rng=np.random.default_rng(children[n * m]), seed=seed)


def set_mode(xbar: Crossbar, mode: str) -> None:
    """Route the crossbar (1x4 DeMUX model).  Device states are untouched."""
    if mode not in _MODES:
        raise ValueError(f"unknown crossbar mode {mode!r}; expected one of {_MODES}")
    xbar.mode = mode


def set_all_device_modes(xbar: Crossbar, mode: DeviceMode) -> None:
    from .device import set_device_mode
    for dev in xbar.iter_devices():
        set_device_mode(dev, mode)


# ---------------------------------------------------------------------------
# DAC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DacLevels:
    """Input DAC: ``2**k`` strictly increasing voltage levels, v0 = 0."""

    k: int
    voltages: tuple

    def __post_init__(self):
        if len(self.voltages) != 2 ** self.k:
            raise ValueError(f"need {2 ** self.k} voltage levels for k={self.k}")
        if self.voltages[0] != 0.0:
            raise ValueError("v0 must be exactly 0 V")
        if any(b <= a for a, b in zip(self.voltages, self.voltages[1:])):
            raise ValueError("voltage levels must be strictly increasing")

    @property
    def step(self) -> float:
        return self.voltages[1] - self.voltages[0]

    def validate_against(self, profile: CalibrationProfile) -> None:
        """Read-disturb check: max drive stays far below the switching range."""
        margin = min(
            profile.set_threshold_mean_v - 5 * profile.set_threshold_sigma_v,
            profile.reset_threshold_mean_v - 5 * profile.reset_threshold_sigma_v)
        if max(self.voltages) >= margin:
            raise ValueError(
                f"max DAC level {max(self.voltages):g} V would disturb devices "
                f"(population threshold floor ~{margin:g} V)")


def default_dac_levels(k: int, full_scale: float = DAC_FULL_SCALE_V) -> DacLevels:
    """Linearly spaced levels over ``[0, full_scale]``."""
    count = 2 ** k
    return DacLevels(k, tuple(full_scale * i / (count - 1) for i in range(count)))


def dac_map(codes, levels: DacLevels) -> np.ndarray:
    """Map digital input codes to row voltages: ``voltage[i] = levels[code[i]]``."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 1:
        raise DimensionError("input codes must be a 1-D sequence")
    if np.any(codes < 0) or np.any(codes >= 2 ** levels.k):
        bad = codes[(codes < 0) | (codes >= 2 ** levels.k)][0]
        raise RangeError(f"input code {bad} outside [0, {2 ** levels.k})")
    table = np.asarray(levels.voltages)
    return table[codes]


# ---------------------------------------------------------------------------
# column readout
# ---------------------------------------------------------------------------

@dataclass
class ColumnCurrents:
    """Per-column currents (amperes) and which readout produced them."""

    amperes: np.ndarray
    readout_mode: str


def column_currents_ideal(xbar: Crossbar, row_voltages,
                          read_noise_sigma: float = 0.0) -> ColumnCurrents:
    """Exact Kirchhoff summation ``I_j = sum_i g_ij v_i`` (no wire effects)."""
    v = np.asarray(row_voltages, dtype=float)
    if v.shape != (xbar.n,):
        raise DimensionError(f"expected {xbar.n} row voltages, got {v.shape}")
    g = xbar.conductances(read_noise_sigma)
    return ColumnCurrents(g.T @ v, READOUT_IDEAL)


def column_currents_nodal(xbar: Crossbar, row_voltages,
                          column_termination: str = TERMINATION_VIRTUAL_GROUND,
                          sensed_columns=None,
                          read_noise_sigma: float = 0.0) -> ColumnCurrents:
    """Full nodal solve over the wire network; floating lines included.

    ``virtual_ground`` pins every column's sense terminal at 0 V.  With
    ``floating_unselected``, only the columns flagged in ``sensed_columns``
    are pinned (default: all), the rest float and contribute only as sneak
    paths.  Rows with voltage ``NaN`` float likewise.
    """
    v = np.asarray(row_voltages, dtype=float)
    if v.shape != (xbar.n,):
        raise DimensionError(f"expected {xbar.n} row voltages, got {v.shape}")
    if column_termination == TERMINATION_VIRTUAL_GROUND:
        sensed = np.ones(xbar.m, dtype=bool)
    elif column_termination == TERMINATION_FLOATING_UNSELECTED:
        sensed = (np.ones(xbar.m, dtype=bool) if sensed_columns is None
                  else np.asarray(sensed_columns, dtype=bool))
    else:
        raise ValueError(f"unknown column termination {column_termination!r}")
    g = xbar.conductances(read_noise_sigma)
    solution = nodal.solve_crossbar_network(g, xbar.line_resistance, v, sensed)
    return ColumnCurrents(solution.column_currents, READOUT_NODAL)


# ---------------------------------------------------------------------------
# ADC / CSA
# ---------------------------------------------------------------------------

def adc_bit_depth(w: int, k: int, m: int, resolution_mode: str) -> int:
    """ADC resolution. ``paper``: ceil(log2(w*m)). ``exact``: enough bits for
    the largest possible dot product ``(2^w - 1)(2^k - 1) m``."""
    if resolution_mode == ADC_MODE_PAPER:
        return math.ceil(math.log2(w * m))
    if resolution_mode == ADC_MODE_EXACT:
        return math.ceil(math.log2((2 ** w - 1) * (2 ** k - 1) * m + 1))
    raise ValueError(f"unknown resolution mode {resolution_mode!r}")


def adc_quantize(currents: ColumnCurrents, w: int, k: int, m: int,
                 full_scale: float, resolution_mode: str = ADC_MODE_EXACT) -> np.ndarray:
    """Uniform quantization: ``code = round(I / LSB)`` clamped to range.

    ``LSB = full_scale / (2**bits - 1)``; clamping is the overflow contract.
    """
    if full_scale <= 0:
        raise ValueError("full_scale must be positive")
    bits = adc_bit_depth(w, k, m, resolution_mode)
    lsb = full_scale / (2 ** bits - 1)
    codes = np.rint(currents.amperes / lsb).astype(np.int64)
    return np.clip(codes, 0, 2 ** bits - 1)


def csa_compare(currents: ColumnCurrents, threshold) -> np.ndarray:
    """Per-column comparator: bit = 1 iff current strictly exceeds threshold."""
    thr = np.asarray(threshold, dtype=float)
    if np.any(thr <= 0):
        raise ValueError("CSA threshold must be positive")
    return (currents.amperes > thr).astype(np.uint8)


# ---------------------------------------------------------------------------
# serialization: .xbar container and lossless text export
# ---------------------------------------------------------------------------

def _rng_states_to_arrays(xbar: Crossbar):
    gens = list(xbar.iter_devices())
    count = len(gens) + 1
    state = np.zeros((count, 2), dtype=np.uint64)
    inc = np.zeros((count, 2), dtype=np.uint64)
    extra = np.zeros((count, 2), dtype=np.uint64)
    streams = [d.rng for d in gens] + [xbar.rng]
    mask = (1 << 64) - 1
    for idx, rng in enumerate(streams):
        st = generator_state(rng)
        if st["bit_generator"] != "PCG64":
            raise FormatError("only PCG64 streams are serializable")
        s, i = st["state"]["state"], st["state"]["inc"]
        state[idx] = (s >> 64) & mask, s & mask
        inc[idx] = (i >> 64) & mask, i & mask
        extra[idx] = st["has_uint32"], st["uinteger"]
    return state, inc, extra


def _rng_from_arrays(state_row, inc_row, extra_row) -> RandomStream:
    s = (int(state_row[0]) << 64) | int(state_row[1])
    i = (int(inc_row[0]) << 64) | int(inc_row[1])
    return restore_generator({
        "bit_generator": "PCG64",
        "state": {"state": s, "inc": i},
        "has_uint32": int(extra_row[0]),
        "uinteger": int(extra_row[1]),
    })


def _gather_arrays(xbar: Crossbar) -> dict:
    n, m = xbar.n, xbar.m
    getp = lambda f: np.array([[getattr(d.params, f) for d in row] for row in xbar.devices])
    mode_kind = np.array([[0 if d.state.mode.kind == "binary" else 1 for d in row]
                          for row in xbar.devices], dtype=np.int64)
    mode_levels = np.array([[d.state.mode.levels for d in row] for row in xbar.devices],
                           dtype=np.int64)
    mode_map = np.array([[0 if d.state.mode.level_map == "geometric" else 1 for d in row]
                         for row in xbar.devices], dtype=np.int64)
    state, inc, extra = _rng_states_to_arrays(xbar)
    arrays = {
        "format_version": np.array([XBAR_FORMAT_VERSION], dtype=np.int64),
        "dims": np.array([n, m], dtype=np.int64),
        "seed": np.array([xbar.seed], dtype=np.int64),
        "line_resistance": np.array([xbar.line_resistance]),
        "mode": np.array([_MODES.index(xbar.mode)], dtype=np.int64),
        "hrs": getp("hrs_resistance"),
        "lrs": getp("lrs_resistance"),
        "set_threshold": getp("set_threshold"),
        "reset_threshold": getp("reset_threshold"),
        "c2c_sigma": getp("c2c_sigma"),
        "programming_noise_sigma": getp("programming_noise_sigma"),
        "resistance": xbar.resistances(),
        "level": xbar.levels(),
        "mode_kind": mode_kind,
        "mode_levels": mode_levels,
        "mode_map": mode_map,
        "rng_state": state,
        "rng_inc": inc,
        "rng_extra": extra,
        "has_entropy": np.array([xbar.entropy_pattern is not None], dtype=np.int64),
        "has_csa_reference": np.array([xbar.csa_reference is not None], dtype=np.int64),
    }
    if xbar.entropy_pattern is not None:
        arrays["entropy_pattern"] = xbar.entropy_pattern.astype(np.uint8)
    if xbar.csa_reference is not None:
        arrays["csa_reference"] = xbar.csa_reference
        arrays["csa_reference_weight"] = np.array([xbar.csa_reference_weight], dtype=np.int64)
    return arrays


def save_crossbar(xbar: Crossbar, path) -> None:
    """Write the versioned binary ``.xbar`` container (zip of arrays + profile)."""
    arrays = _gather_arrays(xbar)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("arrays.npz", buf.getvalue())
        zf.writestr("profile.txt", profile_to_text(xbar.profile))


def load_crossbar(path) -> Crossbar:
    try:
        with zipfile.ZipFile(path, "r") as zf:
            with zf.open("arrays.npz") as fh:
                arrays = dict(np.load(io.BytesIO(fh.read())))
            profile = parse_profile_text(zf.read("profile.txt").decode("utf-8"))
    except (zipfile.BadZipFile, KeyError, OSError) as exc:
        raise FormatError(f"not a readable .xbar file: {path}") from exc
    return _crossbar_from_arrays(arrays, profile)


def _crossbar_from_arrays(arrays: dict, profile: CalibrationProfile) -> Crossbar:
    version = int(arrays["format_version"][0])
    if version != XBAR_FORMAT_VERSION:
        raise FormatError(f"unsupported .xbar format version {version}")
    n, m = (int(x) for x in arrays["dims"])
    devices = []
    for i in range(n):
        row = []
        for j in range(m):
            params = DeviceParams(
                hrs_resistance=float(arrays["hrs"][i, j]),
                lrs_resistance=float(arrays["lrs"][i, j]),
                set_threshold=float(arrays["set_threshold"][i, j]),
                reset_threshold=float(arrays["reset_threshold"][i, j]),
                c2c_sigma=float(arrays["c2c_sigma"][i, j]),
                programming_noise_sigma=float(arrays["programming_noise_sigma"][i, j]),
            )
            kind = "binary" if arrays["mode_kind"][i, j] == 0 else "multistate"
            lmap = "geometric" if arrays["mode_map"][i, j] == 0 else "linear-conductance"
            mode = (BINARY if kind == "binary"
                    else multistate(int(arrays["mode_levels"][i, j]), lmap))
            state = DeviceState(resistance=float(arrays["resistance"][i, j]),
                                level=int(arrays["level"][i, j]), mode=mode)
            rng = _rng_from_arrays(arrays["rng_state"][i * m + j],
                                   arrays["rng_inc"][i * m + j],
                                   arrays["rng_extra"][i * m + j])
            row.append(DeviceInstance(params=params, state=state, rng=rng))
        devices.append(row)
    xbar = Crossbar(
        n=n, m=m, devices=devices,
        line_resistance=float(arrays["line_resistance"][0]),
        profile=profile,
        rng=_rng_from_arrays(arrays["rng_state"][n * m], arrays["rng_inc"][n * m],
                             arrays["rng_extra"][n * m]),
        seed=int(arrays["seed"][0]),
        mode=_MODES[int(arrays["mode"][0])],
    )
    if int(arrays["has_entropy"][0]):
        xbar.entropy_pattern = arrays["entropy_pattern"].astype(np.uint8)
    if int(arrays["has_csa_reference"][0]):
        xbar.csa_reference = arrays["csa_reference"]
        xbar.csa_reference_weight = int(arrays["csa_reference_weight"][0])
    return xbar


def export_text(xbar: Crossbar) -> str:
    """Lossless JSON text export (floats as C99 hex literals)."""
    arrays = _gather_arrays(xbar)
    doc = {"profile": profile_to_text(xbar.profile)}
    for key, arr in arrays.items():
        if arr.dtype.kind == "f":
            doc[key] = {"dtype": "float-hex", "shape": list(arr.shape),
                        "data": [v.hex() for v in arr.ravel().tolist()]}
        else:
            doc[key] = {"dtype": str(arr.dtype), "shape": list(arr.shape),
                        "data": [int(v) for v in arr.ravel().tolist()]}
    return json.dumps(doc, indent=1, sort_keys=True)


def import_text(text: str) -> Crossbar:
    try:
        doc = json.loads(text)
        profile = parse_profile_text(doc.pop("profile"))
        arrays = {}
        for key, spec in doc.items():
            if spec["dtype"] == "float-hex":
                arr = np.array([float.fromhex(v) for v in spec["data"]])
            else:
                arr = np.array(spec["data"], dtype=np.dtype(spec["dtype"]))
            arrays[key] = arr.reshape(spec["shape"])
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError("malformed crossbar text export") from exc
    return _crossbar_from_arrays(arrays, profile)
