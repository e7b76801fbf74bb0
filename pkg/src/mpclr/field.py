"""Prime-field arithmetic and fixed-point encoding.

Secure computation here runs over F_q with q the smallest prime above
2^(e+2f+1): e integer bits, f fractional bits, one sign/guard bit, and one
bit of masking headroom for the truncation protocol. Reals are embedded by
scaling with 2^f and rounding; field values above q/2 represent negatives.

q at the default precision (e = f = 64) is a 194-bit prime, so all element
arithmetic uses Python's arbitrary-precision integers. Matrices of field
elements are numpy object arrays of ints; see :mod:`mpclr.sharing`.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

DEFAULT_E = 64
DEFAULT_F = 64

_SMALL_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47)


def probably_prime(n: int, rounds: int = 64) -> bool:
    """Miller-Rabin primality test.

    With `rounds` independent witnesses the error probability is at most
    4^-rounds; the default 64 rounds keeps it below 2^-80 with a wide margin.
    Witnesses are drawn from an RNG seeded by `n` so the answer is
    deterministic for a given input.
    """
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    rng = random.Random(n)
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class FieldParams:
    """Field description shared by every participant of a session.

    e: bits of integer precision, f: bits of fractional precision,
    q: the prime modulus. Constructing one directly is allowed for custom
    fields; `make_params` builds the canonical minimal field.
    """

    e: int
    f: int
    q: int

    def __post_init__(self):
        if self.e < 1 or self.f < 1:
            raise ValueError("precision parameters must be positive")
        if self.q <= (1 << (self.e + 2 * self.f + 1)):
            raise ValueError("modulus too small: need q > 2^(e+2f+1)")
        if not probably_prime(self.q):
            raise ValueError("modulus must be prime")

    @property
    def bits(self) -> int:
        return self.q.bit_length()

    @property
    def element_bytes(self) -> int:
        """Width of the canonical big-endian serialization of one element."""
        return (self.bits + 7) // 8


@lru_cache(maxsize=None)
def make_params(e: int = DEFAULT_E, f: int = DEFAULT_F) -> FieldParams:
    """Build the canonical field for the given precision.

    q is the smallest prime strictly greater than 2^(e+2f+1). The search is
    deterministic: same (e, f) always yields the same q.
    """
    n = (1 << (e + 2 * f + 1)) + 1
    while not probably_prime(n):
        n += 2
    return FieldParams(e=e, f=f, q=n)


def int_to_bytes(v: int, width: int) -> bytes:
    return v.to_bytes(width, "big")


def int_from_bytes(data: bytes) -> int:
    return int.from_bytes(data, "big")


@dataclass(frozen=True)
class FieldElement:
    """A value of F_q tagged with its field.

    Arithmetic between elements of different fields is a configuration
    error and raises immediately rather than producing garbage.
    """

    value: int
    params: FieldParams

    def __post_init__(self):
        if not 0 <= self.value < self.params.q:
            raise ValueError("element out of range [0, q)")

    def _check(self, other: "FieldElement") -> None:
        if not isinstance(other, FieldElement):
            raise TypeError(f"expected FieldElement, got {type(other).__name__}")
        if other.params != self.params:
            raise ValueError("mismatched field parameters")

    def __add__(self, other: "FieldElement") -> "FieldElement":
        self._check(other)
        return FieldElement((self.value + other.value) % self.params.q, self.params)

    def __sub__(self, other: "FieldElement") -> "FieldElement":
        self._check(other)
        return FieldElement((self.value - other.value) % self.params.q, self.params)

    def __mul__(self, other):
        if isinstance(other, int):
            return FieldElement(self.value * other % self.params.q, self.params)
        self._check(other)
        return FieldElement(self.value * other.value % self.params.q, self.params)

    __rmul__ = __mul__

    def __neg__(self) -> "FieldElement":
        return FieldElement(-self.value % self.params.q, self.params)

    def serialize(self) -> bytes:
        return int_to_bytes(self.value, self.params.element_bytes)

    @classmethod
    def deserialize(cls, data: bytes, params: FieldParams) -> "FieldElement":
        if len(data) != params.element_bytes:
            raise ValueError(
                f"expected {params.element_bytes} bytes, got {len(data)}"
            )
        v = int_from_bytes(data)
        if v >= params.q:
            raise ValueError("serialized value not reduced mod q")
        return cls(v, params)


def scalar_mul(c: int, a: FieldElement) -> FieldElement:
    """Multiply by a public integer scalar."""
    return a * (c % a.params.q)


class FixedPointCodec:
    """Embeds reals into F_q at scale 2^f.

    encode rounds x * 2^f half away from zero; decode maps values above q/2
    back to negatives. Raw products of two encodings carry scale 2^(2f) and
    are decoded with frac_bits = 2f, or rescaled by the truncation protocol.
    """

    def __init__(self, params: FieldParams):
        self.params = params
        self._encode_one = np.frompyfunc(self.encode, 1, 1)
        self._decode_one = np.frompyfunc(self.decode, 1, 1)

    @property
    def resolution(self) -> float:
        return 2.0 ** -self.params.f

    def encode(self, x) -> int:
        """Encode a real (float, int, or Fraction) as a field value."""
        r = Fraction(x)
        limit = 1 << self.params.e
        if not -limit <= r < limit:
            raise ValueError(f"{x!r} outside representable range [-2^e, 2^e)")
        scaled = r * (1 << self.params.f)
        num, den = scaled.numerator, scaled.denominator
        # round half away from zero, exactly
        magnitude = (2 * abs(num) + den) // (2 * den)
        v = magnitude if num >= 0 else -magnitude
        return v % self.params.q

    def signed(self, v: int) -> int:
        """Signed representative in (-q/2, q/2] of a field value."""
        if not 0 <= v < self.params.q:
            raise ValueError("value not reduced mod q")
        return v if v <= self.params.q // 2 else v - self.params.q

    def decode(self, v: int, frac_bits: int | None = None) -> float:
        """Decode a field value back to a float at scale 2^frac_bits."""
        if frac_bits is None:
            frac_bits = self.params.f
        return self.signed(v) / (1 << frac_bits)

    def decode_fraction(self, v: int, frac_bits: int | None = None) -> Fraction:
        """Exact rational decode, for reference computations."""
        if frac_bits is None:
            frac_bits = self.params.f
        return Fraction(self.signed(v), 1 << frac_bits)

    def encode_matrix(self, x: np.ndarray) -> np.ndarray:
        """Encode a float array into an object array of field values."""
        out = self._encode_one(np.asarray(x))
        return np.atleast_1d(out)

    def decode_matrix(self, v: np.ndarray, frac_bits: int | None = None) -> np.ndarray:
        if frac_bits is None:
            out = self._decode_one(np.asarray(v))
        else:
            fb = np.frompyfunc(lambda u: self.decode(u, frac_bits), 1, 1)
            out = fb(np.asarray(v))
        return out.astype(float)
