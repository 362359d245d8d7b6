"""Prime-field arithmetic, seeded sampling and fixed-point encoding.

Residues are plain Python ints in ``[0, p)``; :class:`FieldElement` wraps one
together with its :class:`FieldConfig` for the public API.  Hot paths in the
protocol layer work on raw ints through the ``FieldConfig`` helpers.
"""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Iterable, List, Optional, Sequence, Union

from .errors import ConfigError, ConfigMismatch, DecodeError, OutOfRange

MERSENNE_61 = (1 << 61) - 1
DEFAULT_FRAC_BITS = 16
ELEMENT_BYTES = 8

# Deterministic Miller-Rabin witnesses; sufficient for n < 3.3e24.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)

Number = Union[int, float, str, Rational]


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    for q in _MR_BASES:
        if n % q == 0:
            return n == q
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def derive_seed(*parts: object) -> int:
    """Stable 256-bit seed from an arbitrary label tuple."""
    h = hashlib.sha256("/".join(map(str, parts)).encode())
    return int.from_bytes(h.digest(), "big")


class SeededRng:
    """Single-owner random source.

    With a seed it is fully reproducible; with ``seed=None`` it draws from the
    operating system.  ``record`` (if given) receives every residue sampled
    through :meth:`below`, which is how party views capture local randomness.
    """

    def __init__(self, seed: Optional[int] = None, record: Optional[list] = None):
        self._rand = random.SystemRandom() if seed is None else random.Random(seed)
        self.record = record

    def getrandbits(self, k: int) -> int:
        return self._rand.getrandbits(k)

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection (no modulo bias)."""
        k = (n - 1).bit_length() or 1
        while True:
            v = self._rand.getrandbits(k)
            if v < n:
                if self.record is not None:
                    self.record.append(v)
                return v

    def uniform(self, lo: float, hi: float) -> float:
        return self._rand.uniform(lo, hi)

    def randint(self, lo: int, hi: int) -> int:
        return self._rand.randint(lo, hi)


@dataclass(frozen=True)
class FieldConfig:
    """Prime modulus plus the fixed-point fractional bit count."""

    p: int = MERSENNE_61
    frac_bits: int = DEFAULT_FRAC_BITS

    def __post_init__(self) -> None:
        if not isinstance(self.p, int) or not 2 <= self.p < (1 << 61):
            raise ConfigError(f"modulus must satisfy 2 <= p < 2^61, got {self.p!r}")
        if not is_prime(self.p):
            raise ConfigError(f"modulus {self.p} is not prime")
        if not isinstance(self.frac_bits, int) or not 0 <= self.frac_bits <= 30:
            raise ConfigError(f"frac_bits must be in [0, 30], got {self.frac_bits!r}")

    def __call__(self, value: int) -> "FieldElement":
        return FieldElement(value, self)

    # raw-int helpers used on hot paths
    def add(self, a: int, b: int) -> int:
        return (a + b) % self.p

    def sub(self, a: int, b: int) -> int:
        return (a - b) % self.p

    def mul(self, a: int, b: int) -> int:
        return a * b % self.p

    def sample(self, rng: SeededRng) -> int:
        return rng.below(self.p)

    def sample_element(self, rng: SeededRng) -> "FieldElement":
        return FieldElement(rng.below(self.p), self)

    def sample_many(self, rng: SeededRng, n: int) -> List[int]:
        return [rng.below(self.p) for _ in range(n)]

    # fixed point
    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    def encode(self, v: Number) -> int:
        scaled = round(Fraction(v) * self.scale)
        if 2 * abs(scaled) >= self.p:
            raise OutOfRange(f"{v!r} scales to {scaled}, outside (-p/2, p/2) for p={self.p}")
        return scaled % self.p

    def signed(self, value: int) -> int:
        """Lift a residue to the symmetric range (values >= p/2 are negative)."""
        return value - self.p if 2 * value >= self.p else value

    def decode(self, value: int) -> Fraction:
        return Fraction(self.signed(value % self.p), self.scale)

    # wire format
    def to_bytes(self, value: int) -> bytes:
        return struct.pack("<Q", value)

    def from_bytes(self, data: bytes) -> int:
        if len(data) != ELEMENT_BYTES:
            raise DecodeError(f"field element needs {ELEMENT_BYTES} bytes, got {len(data)}")
        (value,) = struct.unpack("<Q", data)
        if value >= self.p:
            raise DecodeError(f"element {value} not reduced mod {self.p}")
        return value


DEFAULT_FIELD = FieldConfig()


class FieldElement:
    """Immutable residue bound to one field configuration."""

    __slots__ = ("value", "field")

    def __init__(self, value: int, field: FieldConfig = DEFAULT_FIELD):
        object.__setattr__(self, "value", int(value) % field.p)
        object.__setattr__(self, "field", field)

    def __setattr__(self, name, value):
        raise AttributeError("FieldElement is immutable")

    def _coerce(self, other) -> int:
        if isinstance(other, FieldElement):
            if other.field != self.field:
                raise ConfigMismatch(f"p={self.field.p} vs p={other.field.p}")
            return other.value
        if isinstance(other, int):
            return other % self.field.p
        return NotImplemented

    def __add__(self, other):
        v = self._coerce(other)
        if v is NotImplemented:
            return v
        return FieldElement(self.value + v, self.field)

    __radd__ = __add__

    def __sub__(self, other):
        v = self._coerce(other)
        if v is NotImplemented:
            return v
        return FieldElement(self.value - v, self.field)

    def __rsub__(self, other):
        v = self._coerce(other)
        if v is NotImplemented:
            return v
        return FieldElement(v - self.value, self.field)

    def __mul__(self, other):
        v = self._coerce(other)
        if v is NotImplemented:
            return v
        return FieldElement(self.value * v, self.field)

    __rmul__ = __mul__

    def __neg__(self):
        return FieldElement(-self.value, self.field)

    def __eq__(self, other):
        if isinstance(other, FieldElement):
            return self.value == other.value and self.field == other.field
        if isinstance(other, int):
            return self.value == other % self.field.p
        return NotImplemented

    def __hash__(self):
        return hash((self.value, self.field.p))

    def __int__(self):
        return self.value

    __index__ = __int__

    def __repr__(self):
        return f"FieldElement({self.value}, p={self.field.p})"

    def to_bytes(self) -> bytes:
        return self.field.to_bytes(self.value)


def fe_sample(rng: SeededRng, field: FieldConfig = DEFAULT_FIELD) -> FieldElement:
    return field.sample_element(rng)


def fp_encode(v: Number, field: FieldConfig = DEFAULT_FIELD) -> FieldElement:
    """Map a signed rational to ``round(v * 2^f) mod p``."""
    return FieldElement(field.encode(v), field)


def fp_decode(e: FieldElement, field: Optional[FieldConfig] = None) -> Fraction:
    field = field or e.field
    return field.decode(e.value)


def pack_elements(values: Sequence[int]) -> bytes:
    """Count-prefixed (u32) run of 8-byte little-endian residues."""
    return struct.pack(f"<I{len(values)}Q", len(values), *values)


def unpack_elements(data: bytes, field: FieldConfig, offset: int = 0) -> tuple:
    """Inverse of :func:`pack_elements`; returns ``(values, next_offset)``."""
    if len(data) - offset < 4:
        raise DecodeError("truncated element count")
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    end = offset + count * ELEMENT_BYTES
    if end > len(data):
        raise DecodeError(f"element run of {count} overruns payload")
    values = list(struct.unpack_from(f"<{count}Q", data, offset))
    p = field.p
    for v in values:
        if v >= p:
            raise DecodeError(f"element {v} not reduced mod {p}")
    return values, end


def as_residues(values: Iterable, field: FieldConfig) -> List[int]:
    out = []
    for v in values:
        if isinstance(v, FieldElement):
            if v.field != field:
                raise ConfigMismatch(f"p={v.field.p} vs p={field.p}")
            out.append(v.value)
        else:
            out.append(int(v) % field.p)
    return out
