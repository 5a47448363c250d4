"""Device-bound weight locking and unlocking.

Locking (performed where the device is enrolled): initialize the entropy
pattern, collect responses to freshly drawn challenges, condition them
into key material, and XOR the packed weights with a keystream expanded
from that key.  The shipped bundle carries the challenges, ciphertext and
a 64-bit integrity tag over (plaintext || key) -- never responses, key
bits, or the entropy pattern.

Unlocking replays the same steps on the receiving crossbar: re-derive the
entropy pattern, answer the bundled challenges, rebuild the key, decrypt,
verify the tag, and only then program the decrypted weights onto the same
array (destroying the entropy pattern).  A wrong device produces ~50%
response mismatches, a garbage key, and a tag failure; nothing is
programmed in that case.

Constructions: HKDF-SHA256 (RFC 5869) for extract-then-expand
conditioning, ChaCha20 in counter mode for the keystream.  Key derivation
assumes reliable (zero-read-noise) responses; no fuzzy extractor is
implemented, so a noisy unlock may legitimately fail the tag check.
"""

from __future__ import annotations

import hashlib
import hmac
import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

from .crossbar import MODE_PUF, MODE_TRNG, MODE_VMM, Crossbar, set_all_device_modes, set_mode
from .device import BINARY, PulseSpec
from .errors import FormatError, InsufficientEntropyError, IntegrityError
from .puf import (Challenge, ChallengeResponsePair, Response, enroll_thresholds,
                  evaluate, initialize_entropy, random_challenges)
from .streams import RandomStream, stream_from_seed
from .trng import calibrate_p50_pulse
from .vmm import WeightMatrix, program_weights

BUNDLE_MAGIC = b"XWLB"
BUNDLE_FORMAT_VERSION = 1
DEFAULT_KEY_BITS = 128
TAG_BYTES = 8

_SALT_KEY = b"xbarsec.v1.response-conditioning"
_SALT_CIPHER = b"xbarsec.v1.keystream"
_P50_PROTOCOL_SEED = 0x503530          # fixed so both protocol ends calibrate identically
_p50_cache: dict = {}


@dataclass(frozen=True)
class KeyMaterial:
    """Conditioned key bits derived from one or more responses."""

    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8))
        if self.bits.size < 128:
            raise ValueError("key material must be at least 128 bits")

    def to_bytes(self) -> bytes:
        return np.packbits(self.bits, bitorder="little").tobytes()


@dataclass(frozen=True)
class EncryptedWeightBundle:
    """The shippable unit: ciphertext plus everything needed to re-derive
    the key on the enrolling device, and nothing that leaks it elsewhere."""

    ciphertext: bytes
    challenges: tuple
    w: int
    n: int
    m: int
    key_bits: int
    integrity_tag: bytes
    format_version: int = BUNDLE_FORMAT_VERSION

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("bundle dimensions must be positive")
        expected = packed_weight_length(self.n, self.m, self.w)
        if len(self.ciphertext) != expected:
            raise ValueError(f"ciphertext is {len(self.ciphertext)} bytes, "
                             f"expected {expected} for {self.n}x{self.m} {self.w}-bit weights")
        if len(self.integrity_tag) != TAG_BYTES:
            raise ValueError(f"integrity tag must be {TAG_BYTES} bytes")


# ---------------------------------------------------------------------------
# conditioning and keystream primitives
# ---------------------------------------------------------------------------

def hkdf_extract(salt: bytes, ikm: bytes) -> bytes:
    return hmac.new(salt, ikm, hashlib.sha256).digest()

def hkdf_expand(prk: bytes, info: bytes, length: int) -> bytes:
    blocks = [b""]
    counter = 1
    while sum(len(b) for b in blocks) < length:
        blocks.append(hmac.new(prk, blocks[-1] + info + bytes([counter]),
                               hashlib.sha256).digest())
        counter += 1
    return b"".join(blocks)[:length]


def derive_key(responses: list[Response], key_bits: int = DEFAULT_KEY_BITS) -> KeyMaterial:
    """Extract-then-expand the concatenated response bits into key material.

    Deterministic in the responses; refuses to stretch fewer raw bits than
    the requested key length.
    """
    raw = np.concatenate([r.bits for r in responses]) if responses else np.zeros(0, np.uint8)
    if raw.size < key_bits:
        raise InsufficientEntropyError(
            f"{raw.size} response bits cannot fill a {key_bits}-bit key; "
            f"collect more challenges")
    prk = hkdf_extract(_SALT_KEY, np.packbits(raw, bitorder="little").tobytes())
    okm = hkdf_expand(prk, b"key" + struct.pack("<H", key_bits), math.ceil(key_bits / 8))
    bits = np.unpackbits(np.frombuffer(okm, dtype=np.uint8), bitorder="little")[:key_bits]
    return KeyMaterial(bits)


def keystream(key: KeyMaterial, length: int) -> bytes:
    """ChaCha20 counter-mode keystream, parameters expanded from the key."""
    prk = hkdf_extract(_SALT_CIPHER, key.to_bytes())
    okm = hkdf_expand(prk, b"chacha20-params", 48)
    cipher = Cipher(algorithms.ChaCha20(okm[:32], okm[32:48]), mode=None)
    return cipher.encryptor().update(b"\x00" * length)


def packed_weight_length(n: int, m: int, w: int) -> int:
    return math.ceil(n * m * w / 8)


def pack_weights(weights: WeightMatrix) -> bytes:
    """Row-major, LSB-first bit packing of the w-bit weights."""
    vals = weights.values.ravel()
    bit_index = np.arange(weights.w)
    bits = ((vals[:, None] >> bit_index[None, :]) & 1).astype(np.uint8).ravel()
    return np.packbits(bits, bitorder="little").tobytes()


def unpack_weights(data: bytes, n: int, m: int, w: int) -> WeightMatrix:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    bits = bits[:n * m * w].reshape(n * m, w)
    vals = (bits.astype(np.int64) << np.arange(w)).sum(axis=1)
    return WeightMatrix(vals.reshape(n, m), w)


def compute_tag(plaintext: bytes, key: KeyMaterial) -> bytes:
    return hashlib.sha256(plaintext + key.to_bytes()).digest()[:TAG_BYTES]


# ---------------------------------------------------------------------------
# lock / unlock
# ---------------------------------------------------------------------------

def lock_weights(weights: WeightMatrix, key: KeyMaterial,
                 challenges: list[Challenge]) -> EncryptedWeightBundle:
    """Encrypt packed weights under the key; pure (mutates nothing)."""
    plaintext = pack_weights(weights)
    ct = bytes(a ^ b for a, b in zip(plaintext, keystream(key, len(plaintext))))
    n, m = weights.shape
    return EncryptedWeightBundle(
        ciphertext=ct, challenges=tuple(challenges), w=weights.w, n=n, m=m,
        key_bits=int(key.bits.size), integrity_tag=compute_tag(plaintext, key))


def challenges_for_key(m_columns: int, key_bits: int, rng: RandomStream,
                       n_rows: int) -> list[Challenge]:
    """Uniform random challenges, enough for ``key_bits`` of raw response."""
    count = math.ceil(key_bits / m_columns)
    return random_challenges(n_rows, count, rng)


def p50_pulse_for(profile) -> PulseSpec:
    """The protocol's entropy pulse for a calibration profile.

    Calibrated once per profile from a fixed protocol seed, so the locking
    and unlocking ends agree without shipping the pulse in the bundle.
    """
    cache_key = profile
    if cache_key not in _p50_cache:
        _p50_cache[cache_key] = calibrate_p50_pulse(
            profile, tolerance=0.002, rng=stream_from_seed(_P50_PROTOCOL_SEED))
    return _p50_cache[cache_key]


@dataclass
class EnrollmentRecord:
    """Server-side record from locking: CRPs plus the entropy pattern, so a
    later unlock can be audited for entropy reproduction.  Never shipped."""

    device_id: str
    entropy_pattern: np.ndarray
    crps: list[ChallengeResponsePair]


def lock_protocol(xbar: Crossbar, weights: WeightMatrix, rng: RandomStream,
                  key_bits: int = DEFAULT_KEY_BITS,
                  ) -> tuple[EncryptedWeightBundle, EnrollmentRecord]:
    """Run the full locking sequence on the enrolling crossbar.

    Steps: route to TRNG and initialize the entropy pattern; route to PUF,
    draw challenges, collect responses; condition the key; encrypt; emit
    the bundle and the server-side enrollment record.
    """
    set_mode(xbar, MODE_TRNG)
    set_all_device_modes(xbar, BINARY)
    initialize_entropy(xbar, p50_pulse_for(xbar.profile))
    set_mode(xbar, MODE_PUF)
    enroll_thresholds(xbar)
    challenges = challenges_for_key(xbar.m, key_bits, rng, xbar.n)
    responses = [evaluate(xbar, ch) for ch in challenges]
    key = derive_key(responses, key_bits)
    bundle = lock_weights(weights, key, challenges)
    record = EnrollmentRecord(
        device_id=xbar.device_id,
        entropy_pattern=xbar.entropy_pattern.copy(),
        crps=[ChallengeResponsePair(c, r, xbar.device_id)
              for c, r in zip(challenges, responses)])
    return bundle, record


def unlock_weights(bundle: EncryptedWeightBundle, xbar: Crossbar,
                   read_noise_sigma: float = 0.0,
                   enrollment_pattern: np.ndarray | None = None) -> WeightMatrix:
    """Run the full unlocking sequence on (nominally) the enrolling crossbar.

    Re-derives the entropy pattern and key, decrypts, and verifies the
    integrity tag; only on success are the decrypted weights programmed
    onto the crossbar, overwriting the entropy pattern.  On tag mismatch an
    ``IntegrityError`` carries the candidate plaintext for diagnostics and
    the crossbar keeps its entropy pattern: nothing is programmed.
    """
    if (bundle.n, bundle.m) != (xbar.n, xbar.m):
        raise IntegrityError(
            f"bundle is for a {bundle.n}x{bundle.m} crossbar, device is "
            f"{xbar.n}x{xbar.m}")
    set_mode(xbar, MODE_TRNG)
    set_all_device_modes(xbar, BINARY)
    initialize_entropy(xbar, p50_pulse_for(xbar.profile))
    divergence = None
    if enrollment_pattern is not None:
        divergence = float(np.mean(xbar.entropy_pattern != enrollment_pattern))
        if divergence > 0:
            warnings.warn(f"entropy pattern diverges from enrollment in "
                          f"{100 * divergence:.1f}% of cells", stacklevel=2)
    set_mode(xbar, MODE_PUF)
    enroll_thresholds(xbar)
    responses = [evaluate(xbar, ch, read_noise_sigma) for ch in bundle.challenges]
    key = derive_key(responses, bundle.key_bits)
    candidate = bytes(a ^ b for a, b in zip(bundle.ciphertext,
                                            keystream(key, len(bundle.ciphertext))))
    if compute_tag(candidate, key) != bundle.integrity_tag:
        err = IntegrityError(
            "integrity tag mismatch: wrong device or corrupted bundle; "
            "weights were NOT programmed")
        err.candidate_plaintext = candidate
        err.entropy_divergence = divergence
        raise err
    weights = unpack_weights(candidate, bundle.n, bundle.m, bundle.w)
    set_mode(xbar, MODE_VMM)
    program_weights(xbar, weights)        # overwrites the entropy pattern
    xbar.entropy_pattern = None
    xbar.csa_reference = None
    xbar.csa_reference_weight = None
    return weights


# ---------------------------------------------------------------------------
# bundle container format
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sHIIBHH")   # magic, version, n, m, w, key_bits, challenge_count


def save_bundle(bundle: EncryptedWeightBundle, path) -> None:
    chal_bytes = math.ceil(bundle.n / 8)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BUNDLE_MAGIC, bundle.format_version, bundle.n,
                              bundle.m, bundle.w, bundle.key_bits,
                              len(bundle.challenges)))
        for ch in bundle.challenges:
            packed = np.packbits(ch.bits, bitorder="little").tobytes()
            fh.write(packed.ljust(chal_bytes, b"\x00"))
        fh.write(bundle.integrity_tag)
        fh.write(struct.pack("<Q", len(bundle.ciphertext)))
        fh.write(bundle.ciphertext)


def load_bundle(path) -> EncryptedWeightBundle:
    try:
        with open(path, "rb") as fh:
            header = fh.read(_HEADER.size)
            magic, version, n, m, w, key_bits, count = _HEADER.unpack(header)
            if magic != BUNDLE_MAGIC:
                raise FormatError(f"not a weight bundle (bad magic {magic!r})")
            if version != BUNDLE_FORMAT_VERSION:
                raise FormatError(f"unsupported bundle version {version}")
            chal_bytes = math.ceil(n / 8)
            challenges = []
            for _ in range(count):
                raw = fh.read(chal_bytes)
                bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8),
                                     bitorder="little")[:n]
                challenges.append(Challenge(bits))
            tag = fh.read(TAG_BYTES)
            (ct_len,) = struct.unpack("<Q", fh.read(8))
            ciphertext = fh.read(ct_len)
            if len(ciphertext) != ct_len or fh.read(1):
                raise FormatError("bundle truncated or has trailing bytes")
    except (struct.error, ValueError, OSError) as exc:
        raise FormatError(f"malformed bundle file: {path}") from exc
    return EncryptedWeightBundle(ciphertext=ciphertext, challenges=tuple(challenges),
                                 w=w, n=n, m=m, key_bits=key_bits, integrity_tag=tag,
                                 format_version=version)
