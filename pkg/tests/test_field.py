import random
from fractions import Fraction

import numpy as np
import pytest

from mpclr.field import (
    FieldElement,
    FieldParams,
    FixedPointCodec,
    make_params,
    probably_prime,
    scalar_mul,
)

# First prime above 2^193, cross-checked against an independent
# primality oracle while writing this suite.
Q_64_64 = 12554203470773361527671578846415332832204710888928069025857


def test_minimal_fields():
    assert make_params(1, 1).q == 17
    assert make_params(2, 2).q == 131


def test_default_field_is_first_prime_above_2_193():
    p = make_params(64, 64)
    assert p.q == Q_64_64
    assert p.q > 1 << 193
    assert p.bits == 194
    assert p.element_bytes == 25


def test_make_params_deterministic():
    assert make_params(8, 8) == make_params(8, 8)
    assert make_params(8, 8).q == make_params(8, 8).q


def test_probably_prime_known_values():
    assert probably_prime(2) and probably_prime(17) and probably_prime(131)
    assert not probably_prime(1)
    assert not probably_prime(561)  # Carmichael
    assert not probably_prime(1 << 193)
    assert probably_prime(Q_64_64)


def test_params_validation():
    with pytest.raises(ValueError):
        FieldParams(e=1, f=1, q=13)  # too small
    with pytest.raises(ValueError):
        FieldParams(e=1, f=1, q=21)  # composite
    with pytest.raises(ValueError):
        FieldParams(e=0, f=1, q=17)


def test_element_arithmetic_small_field():
    p = make_params(1, 1)
    three = FieldElement(3, p)
    five = FieldElement(5, p)
    assert (three - five).value == 15  # wraparound subtraction
    assert (three + five).value == 8
    assert (three * five).value == 15
    assert (-three).value == 14
    assert scalar_mul(4, three).value == 12


def test_element_params_mismatch_raises():
    a = FieldElement(3, make_params(1, 1))
    b = FieldElement(3, make_params(2, 2))
    with pytest.raises(ValueError):
        a + b
    with pytest.raises(TypeError):
        a + 3


def test_element_range_checked():
    p = make_params(1, 1)
    with pytest.raises(ValueError):
        FieldElement(17, p)
    with pytest.raises(ValueError):
        FieldElement(-1, p)


def test_element_arithmetic_matches_int_oracle():
    p = make_params(4, 4)
    rng = random.Random(7)
    for _ in range(500):
        x, y = rng.randrange(p.q), rng.randrange(p.q)
        a, b = FieldElement(x, p), FieldElement(y, p)
        assert (a + b).value == (x + y) % p.q
        assert (a - b).value == (x - y) % p.q
        assert (a * b).value == (x * y) % p.q
        assert (-a).value == -x % p.q


def test_encode_worked_values():
    codec = FixedPointCodec(make_params(2, 2))
    assert codec.encode(1.5) == 6
    assert codec.encode(-1) == 127
    assert codec.decode(127) == -1.0


def test_encode_rounds_half_away_from_zero():
    codec = FixedPointCodec(make_params(2, 2))
    assert codec.encode(Fraction(1, 8)) == 1  # 0.5 in scaled units
    assert codec.encode(Fraction(-1, 8)) == codec.params.q - 1
    assert codec.encode(Fraction(3, 8)) == 2  # 1.5 rounds up
    assert codec.encode(Fraction(-3, 8)) == codec.params.q - 2


def test_encode_range_limits():
    codec = FixedPointCodec(make_params(2, 2))
    codec.encode(-4)  # -2^e is inside the half-open range
    with pytest.raises(ValueError):
        codec.encode(4)
    with pytest.raises(ValueError):
        codec.encode(1e300)


def test_round_trip_error_bounded():
    codec = FixedPointCodec(make_params(8, 16))
    rng = random.Random(11)
    half_ulp = 2.0 ** -(16 + 1)
    for _ in range(2000):
        x = rng.uniform(-255.0, 255.0)
        err = abs(codec.decode(codec.encode(x)) - x)
        assert err <= half_ulp * 1.0000001


def test_grid_values_round_trip_exactly():
    codec = FixedPointCodec(make_params(4, 6))
    for k in range(-(1 << 10), 1 << 10):
        x = Fraction(k, 1 << 6)
        assert codec.decode_fraction(codec.encode(x)) == x


def test_raw_product_carries_double_scale():
    p = make_params(8, 12)
    codec = FixedPointCodec(p)
    rng = random.Random(3)
    for _ in range(200):
        a = rng.uniform(-10, 10)
        b = rng.uniform(-10, 10)
        prod = codec.encode(a) * codec.encode(b) % p.q
        approx = codec.decode(prod, frac_bits=2 * p.f)
        # each factor is off by at most half an ulp
        tol = (abs(a) + abs(b) + 1) * 2.0 ** -(p.f + 1)
        assert abs(approx - a * b) <= tol


def test_signed_representative():
    p = make_params(2, 2)
    codec = FixedPointCodec(p)
    assert codec.signed(0) == 0
    assert codec.signed(p.q // 2) == p.q // 2
    assert codec.signed(p.q // 2 + 1) == -(p.q // 2)
    with pytest.raises(ValueError):
        codec.signed(p.q)


def test_serialization_fixed_width():
    p = make_params(64, 64)
    a = FieldElement(12345, p)
    blob = a.serialize()
    assert len(blob) == 25
    assert FieldElement.deserialize(blob, p) == a
    with pytest.raises(ValueError):
        FieldElement.deserialize(blob + b"\x00", p)
    with pytest.raises(ValueError):
        FieldElement.deserialize(b"\xff" * 25, p)  # not reduced


def test_serialization_round_trip_random():
    p = make_params(8, 8)
    rng = random.Random(5)
    for _ in range(300):
        a = FieldElement(rng.randrange(p.q), p)
        assert FieldElement.deserialize(a.serialize(), p) == a


def test_matrix_encode_decode():
    codec = FixedPointCodec(make_params(8, 20))
    rng = np.random.default_rng(9)
    x = rng.uniform(-100, 100, size=(7, 5))
    enc = codec.encode_matrix(x)
    assert enc.dtype == object
    back = codec.decode_matrix(enc)
    assert np.max(np.abs(back - x)) <= 2.0 ** -20
