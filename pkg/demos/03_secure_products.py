"""Secure matrix products and rescaling.

A trusted initializer deals each party correlated randomness up front
(multiplication triples and truncation pairs), then disappears. Parties
multiply shared matrices with one message round per product: they open the
uniformly masked differences X - U and Y - V, never X or Y themselves.

    python3 demos/03_secure_products.py
"""

import random
import threading

import numpy as np

from mpclr.field import FixedPointCodec, make_params
from mpclr.protocols import PartyEngine
from mpclr.randomness import Requirements, generate
from mpclr.sharing import share
from mpclr.transport import LoopbackHub

params = make_params(16, 24)
codec = FixedPointCodec(params)
group = (1, 2)
session = bytes(16)

# offline phase: the initializer provisions one (2,2,2) product and the
# four truncation pairs that rescaling a 2x2 product consumes
needs = Requirements()
needs.add_triples((2, 2, 2), 1)
needs.trunc_pairs = 4
bundles = dict(zip(group, generate(needs, session, group, params)))

x = codec.encode_matrix(np.array([[1.5, 0.0], [0.0, -2.0]]))
y = codec.encode_matrix(np.array([[2.0, 1.0], [0.5, 1.0]]))
x_frags = {f.owner: f for f in share(x, group, params)}
y_frags = {f.owner: f for f in share(y, group, params)}

hub = LoopbackHub(group)
hub.keep_payloads = True
opened = {}


def run(pid):
    engine = PartyEngine(hub.connect(pid, session), pid, group, bundles[pid])
    product = engine.mul_trunc(x_frags[pid], y_frags[pid])
    opened[pid] = engine.open(product)


threads = [threading.Thread(target=run, args=(pid,)) for pid in group]
for t in threads:
    t.start()
for t in threads:
    t.join()

result = np.vectorize(codec.decode)(opened[1])
print("jointly computed X @ Y:")
print(result)
print("plaintext oracle:")
print(np.array([[1.5, 0.0], [0.0, -2.0]]) @ np.array([[2.0, 1.0],
                                                      [0.5, 1.0]]))

# what actually crossed the wire: masked differences and opening sums,
# never an input or an input fragment
from mpclr.transport import encode_matrices

secrets = {encode_matrices([m], params) for m in
           (x, y, x_frags[1].entries, x_frags[2].entries,
            y_frags[1].entries, y_frags[2].entries)}
assert all(record["payload"] not in secrets for record in hub.relay_log)
print(f"\n{len(hub.relay_log)} envelopes relayed; none encodes an input:")
for record in hub.relay_log[:4]:
    print(f"  round {record['round']} kind {record['kind']} "
          f"{record['bytes']}B from party {record['sender']}")
