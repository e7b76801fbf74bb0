"""Where all the arithmetic lives: a prime field sized for fixed-point
products.

Real-valued features are scaled into [-1, 1] and mapped onto integers with
f fractional bits. Multiplying two encoded values doubles the scale, so the
field must hold numbers up to 2^(e+2f) plus a sign bit; the modulus is the
first prime past that. Run me directly:

    python3 demos/01_field_encoding.py
"""

from mpclr.field import FixedPointCodec, make_params

params = make_params()  # e = 64 integer bits, f = 64 fractional bits
print(f"modulus q = {params.q}")
print(f"          = 2^193 + {params.q - 2**193}, {params.q.bit_length()} bits")

codec = FixedPointCodec(params)
for x in (0.5, -0.125, 3.75, -2.0 ** -12):
    enc = codec.encode(x)
    print(f"encode({x:>14}) = {enc}")
    assert codec.decode(enc) == x

# values whose lowest mantissa bit sits below 2^-64 round at place f;
# the error is at most half a unit there
for x in (1 / 3, 1e-6):
    err = abs(codec.decode(codec.encode(x)) - x)
    print(f"{x!r} encodes with error {err:.2e} (bound {2.0 ** -65:.2e})")
    assert err <= 2.0 ** -65

# products of encoded values carry scale 2^(2f); dividing the scale back
# out is what the truncation protocol does jointly later on
a, b = codec.encode(1.5), codec.encode(2.5)
product = (a * b) % params.q
print(f"1.5 * 2.5 at double scale: {product}")
print(f"rescaled locally: {codec.decode(product >> params.f)}")

# tiny parameter sets behave identically and are handy for experiments
tiny = make_params(1, 1)
print(f"smallest useful field: e=f=1 gives q = {tiny.q}")
