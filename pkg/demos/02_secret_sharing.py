"""Additive secret sharing: a matrix split into fragments that are each
uniformly random, yet sum back to the secret mod q.

    python3 demos/02_secret_sharing.py
"""

import numpy as np

from mpclr.field import FixedPointCodec, make_params
from mpclr.sharing import local_add, reconstruct, share

params = make_params(8, 8)
codec = FixedPointCodec(params)
group = (1, 2, 3)

secret = codec.encode_matrix(np.array([[0.5, -0.25], [1.0, 2.0]]))
fragments = share(secret, group, params)

print("each fragment alone looks like noise:")
for frag in fragments:
    print(f"  party {frag.owner}: {frag.entries.tolist()}")

restored = reconstruct(fragments)
assert np.array_equal(restored, secret)
print("sum of all fragments mod q restores the secret:")
print(f"  {np.vectorize(codec.decode)(restored)}")

# linear operations happen locally, with zero communication: each party
# adds its own fragments, and the sums are again a sharing
other = share(codec.encode_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])),
              group, params)
summed = [local_add(a, b) for a, b in zip(fragments, other)]
print("fragment-wise addition shares the sum:")
print(f"  {np.vectorize(codec.decode)(reconstruct(summed))}")

# fewer than all fragments reveal nothing: any strict subset is uniform
partial = (fragments[0].entries + fragments[1].entries) % params.q
print(f"two of three fragments are still noise: {partial.tolist()}")
