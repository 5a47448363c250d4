"""Device population calibration profiles.

A profile describes the distributions that device parameters are sampled
from: HRS resistance (lognormal, truncated by rejection to its stated
range), LRS resistance (truncated normal), and SET/RESET switching
thresholds (normal, resampled if non-positive).  The log-space spread of
the HRS distribution and the spread of the LRS distribution are fixed so
the stated range spans +/-3 sigma; the location parameter of each is then
solved numerically so the truncated mean lands exactly on the stated mean.

Profiles load from a versioned key-value text file (see ``load_profile``).
The factory default, ``paper-2023``, is embedded below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property, lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .errors import CalibrationError, FormatError
from .streams import RandomStream

PROFILE_FORMAT_VERSION = 1

# Sampling uses rejection against [min, max]; chunked to bound worst-case work.
_REJECTION_CHUNK_GROWTH = 1.5


@dataclass(frozen=True)
class CalibrationProfile:
    """Distribution spec for one device population.

    Resistances in ohms, thresholds in volts, sigmas dimensionless unless
    suffixed ``_v``.  ``c2c_sigma`` is the relative spread applied to a
    switching threshold per event; ``programming_noise_sigma`` the relative
    spread on a gradual-RESET landing resistance; ``read_noise_sigma`` the
    default relative spread of a non-destructive conductance read.
    """

    name: str
    hrs_min: float
    hrs_max: float
    hrs_mean: float
    lrs_min: float
    lrs_max: float
    lrs_mean: float
    set_threshold_mean_v: float
    set_threshold_sigma_v: float
    reset_threshold_mean_v: float
    reset_threshold_sigma_v: float
    c2c_sigma: float = 0.05
    programming_noise_sigma: float = 0.01
    read_noise_sigma: float = 0.01
    default_levels: int = 4

    def validate(self) -> None:
        if not (0 < self.lrs_min <= self.lrs_mean <= self.lrs_max):
            raise CalibrationError("LRS range/mean must satisfy 0 < min <= mean <= max")
        if not (0 < self.hrs_min <= self.hrs_mean <= self.hrs_max):
            raise CalibrationError("HRS range/mean must satisfy 0 < min <= mean <= max")
        if self.lrs_max >= self.hrs_min:
            raise CalibrationError(
                f"LRS range [{self.lrs_min:g}, {self.lrs_max:g}] overlaps HRS range "
                f"[{self.hrs_min:g}, {self.hrs_max:g}]: population is unusable"
            )
        if self.set_threshold_mean_v <= 0 or self.reset_threshold_mean_v <= 0:
            raise CalibrationError("switching thresholds must be positive")
        for s in (self.set_threshold_sigma_v, self.reset_threshold_sigma_v,
                  self.c2c_sigma, self.programming_noise_sigma, self.read_noise_sigma):
            if s < 0:
                raise CalibrationError("spreads must be non-negative")
        if self.default_levels < 2:
            raise CalibrationError("default_levels must be >= 2")

    # -- fitted location parameters ------------------------------------

    @cached_property
    def hrs_lognormal_params(self) -> tuple[float, float]:
        """(mu, sigma) of the untruncated lognormal behind the HRS draw."""
        a, b, target = self.hrs_min, self.hrs_max, self.hrs_mean
        if a == b:
            return math.log(a), 0.0
        sigma = (math.log(b) - math.log(a)) / 6.0

        def trunc_mean(mu: float) -> float:
            la, lb = math.log(a), math.log(b)
            num = norm.cdf((lb - mu - sigma**2) / sigma) - norm.cdf((la - mu - sigma**2) / sigma)
            den = norm.cdf((lb - mu) / sigma) - norm.cdf((la - mu) / sigma)
            return math.exp(mu + sigma**2 / 2) * num / den

        lo, hi = math.log(a) - 3 * sigma, math.log(b) + 3 * sigma
        mu = brentq(lambda m: trunc_mean(m) - target, lo, hi, xtol=1e-13)
        return mu, sigma

    @cached_property
    def lrs_normal_params(self) -> tuple[float, float]:
        """(loc, sigma) of the untruncated normal behind the LRS draw."""
        a, b, target = self.lrs_min, self.lrs_max, self.lrs_mean
        if a == b:
            return a, 0.0
        sigma = (b - a) / 6.0

        def trunc_mean(loc: float) -> float:
            al, be = (a - loc) / sigma, (b - loc) / sigma
            z = norm.cdf(be) - norm.cdf(al)
            return loc + sigma * (norm.pdf(al) - norm.pdf(be)) / z

        lo, hi = a - 6 * sigma, b + 6 * sigma
        loc = brentq(lambda l: trunc_mean(l) - target, lo, hi, xtol=1e-13)
        return loc, sigma

    # -- vectorized population sampling --------------------------------

    def sample_hrs(self, count: int, rng: RandomStream) -> np.ndarray:
        mu, sigma = self.hrs_lognormal_params
        if sigma == 0.0:
            return np.full(count, self.hrs_mean)
        return _rejection_sample(
            lambda k: rng.lognormal(mu, sigma, k), self.hrs_min, self.hrs_max, count)

    def sample_lrs(self, count: int, rng: RandomStream) -> np.ndarray:
        loc, sigma = self.lrs_normal_params
        if sigma == 0.0:
            return np.full(count, self.lrs_mean)
        return _rejection_sample(
            lambda k: rng.normal(loc, sigma, k), self.lrs_min, self.lrs_max, count)

    def sample_thresholds(self, count: int, rng: RandomStream,
                          which: str = "set") -> np.ndarray:
        if which == "set":
            mean, sigma = self.set_threshold_mean_v, self.set_threshold_sigma_v
        elif which == "reset":
            mean, sigma = self.reset_threshold_mean_v, self.reset_threshold_sigma_v
        else:
            raise ValueError(f"unknown threshold kind {which!r}")
        if sigma == 0.0:
            return np.full(count, mean)
        # thresholds must stay positive: resample the (astronomically rare) tail
        return _rejection_sample(
            lambda k: rng.normal(mean, sigma, k), np.nextafter(0.0, 1.0), np.inf, count)

    def effective_threshold_sample(self, count: int, rng: RandomStream) -> np.ndarray:
        """Per-event SET thresholds of ``count`` fresh devices (D2D then C2C)."""
        base = self.sample_thresholds(count, rng, "set")
        if self.c2c_sigma == 0.0:
            return base
        return base * (1.0 + self.c2c_sigma * rng.standard_normal(count))

    # -- scalar draws (single-device sampling hot path) -----------------

    def draw_hrs(self, rng: RandomStream) -> float:
        mu, sigma = self.hrs_lognormal_params
        if sigma == 0.0:
            return self.hrs_mean
        return _scalar_in_range(lambda: rng.lognormal(mu, sigma),
                                self.hrs_min, self.hrs_max)

    def draw_lrs(self, rng: RandomStream) -> float:
        loc, sigma = self.lrs_normal_params
        if sigma == 0.0:
            return self.lrs_mean
        return _scalar_in_range(lambda: rng.normal(loc, sigma),
                                self.lrs_min, self.lrs_max)

    def draw_threshold(self, rng: RandomStream, which: str = "set") -> float:
        mean, sigma = ((self.set_threshold_mean_v, self.set_threshold_sigma_v)
                       if which == "set"
                       else (self.reset_threshold_mean_v, self.reset_threshold_sigma_v))
        if sigma == 0.0:
            return mean
        return _scalar_in_range(lambda: rng.normal(mean, sigma),
                                np.nextafter(0.0, 1.0), math.inf)


def _rejection_sample(draw, lo: float, hi: float, count: int) -> np.ndarray:
    out = np.empty(count)
    filled = 0
    ask = count
    while filled < count:
        cand = draw(ask)
        keep = cand[(cand >= lo) & (cand <= hi)]
        take = min(keep.size, count - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
        ask = max(64, int(ask * _REJECTION_CHUNK_GROWTH))
    return out


def _scalar_in_range(draw, lo: float, hi: float) -> float:
    for _ in range(100_000):
        x = draw()
        if lo <= x <= hi:
            return float(x)
    raise CalibrationError("rejection sampling failed: distribution mass is "
                           "(almost) entirely outside the stated range")


# ---------------------------------------------------------------------------
# profile registry and file format
# ---------------------------------------------------------------------------

_PAPER_2023_TEXT = """\
profile-version = 1
name = paper-2023
hrs.min_ohm = 31e3
hrs.max_ohm = 155e3
hrs.mean_ohm = 65.56e3
lrs.min_ohm = 1.55e3
lrs.max_ohm = 1.67e3
lrs.mean_ohm = 1.64e3
set_threshold.mean_v = 1.5
set_threshold.sigma_v = 0.13
reset_threshold.mean_v = 1.5
reset_threshold.sigma_v = 0.13
c2c_sigma = 0.05
programming_noise_sigma = 0.01
read_noise_sigma = 0.01
default_levels = 4
"""

_KEY_TO_FIELD = {
    "name": ("name", str),
    "hrs.min_ohm": ("hrs_min", float),
    "hrs.max_ohm": ("hrs_max", float),
    "hrs.mean_ohm": ("hrs_mean", float),
    "lrs.min_ohm": ("lrs_min", float),
    "lrs.max_ohm": ("lrs_max", float),
    "lrs.mean_ohm": ("lrs_mean", float),
    "set_threshold.mean_v": ("set_threshold_mean_v", float),
    "set_threshold.sigma_v": ("set_threshold_sigma_v", float),
    "reset_threshold.mean_v": ("reset_threshold_mean_v", float),
    "reset_threshold.sigma_v": ("reset_threshold_sigma_v", float),
    "c2c_sigma": ("c2c_sigma", float),
    "programming_noise_sigma": ("programming_noise_sigma", float),
    "read_noise_sigma": ("read_noise_sigma", float),
    "default_levels": ("default_levels", int),
}


def parse_profile_text(text: str) -> CalibrationProfile:
    """Parse the ``key = value`` profile format.

    Lines starting with ``#`` and blank lines are ignored.  The file must
    declare ``profile-version`` before any other key.
    """
    fields: dict = {}
    version_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"profile line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "profile-version":
            if int(value) != PROFILE_FORMAT_VERSION:
                raise FormatError(f"unsupported profile version {value}")
            version_seen = True
            continue
        if not version_seen:
            raise FormatError("profile must declare profile-version first")
        if key not in _KEY_TO_FIELD:
            raise FormatError(f"profile line {lineno}: unknown key {key!r}")
        field, conv = _KEY_TO_FIELD[key]
        fields[field] = conv(value)
    missing = {f for f, _ in _KEY_TO_FIELD.values()} - set(fields)
    if missing:
        raise FormatError(f"profile missing keys for: {sorted(missing)}")
    profile = CalibrationProfile(**fields)
    profile.validate()
    return profile


def profile_to_text(profile: CalibrationProfile) -> str:
    lines = [f"profile-version = {PROFILE_FORMAT_VERSION}"]
    for key, (field, conv) in _KEY_TO_FIELD.items():
        value = getattr(profile, field)
        lines.append(f"{key} = {value!r}" if conv is str else f"{key} = {value:g}")
    return "\n".join(f"{l}" for l in lines).replace("'", "") + "\n"


def load_profile(path) -> CalibrationProfile:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_profile_text(fh.read())


def save_profile(profile: CalibrationProfile, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(profile_to_text(profile))


@lru_cache(maxsize=None)
def paper_2023_profile() -> CalibrationProfile:
    """The embedded factory default.

    Cached: profiles are frozen, and sharing the instance shares the
    (lazily solved) distribution location parameters.
    """
    return parse_profile_text(_PAPER_2023_TEXT)


@lru_cache(maxsize=None)
def ideal_profile(levels: int = 4) -> CalibrationProfile:
    """Zero-variance population: every device identical, all noise off.

    Used for exact digital-equivalence checks of the VMM pipeline.
    """
    return CalibrationProfile(
        name="ideal",
        hrs_min=65.56e3, hrs_max=65.56e3, hrs_mean=65.56e3,
        lrs_min=1.64e3, lrs_max=1.64e3, lrs_mean=1.64e3,
        set_threshold_mean_v=1.5, set_threshold_sigma_v=0.0,
        reset_threshold_mean_v=1.5, reset_threshold_sigma_v=0.0,
        c2c_sigma=0.0, programming_noise_sigma=0.0, read_noise_sigma=0.0,
        default_levels=levels,
    )


def get_profile(name: str) -> CalibrationProfile:
    """Look up an embedded profile by name, or load ``name`` as a file path."""
    if name == "paper-2023":
        return paper_2023_profile()
    if name == "ideal":
        return ideal_profile()
    try:
        return load_profile(name)
    except OSError as exc:
        raise CalibrationError(f"no embedded profile or readable file named {name!r}") from exc


def with_overrides(profile: CalibrationProfile, **kwargs) -> CalibrationProfile:
    """Copy of ``profile`` with selected fields replaced (e.g. noise sweeps)."""
    out = replace(profile, **kwargs)
    out.validate()
    return out
