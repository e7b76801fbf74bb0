"""Online protocols over pre-distributed correlated randomness.

Each party runs one PartyEngine per protocol group. All communication is
strictly round-synchronous and instance-addressed: engines derive identical
instance labels from a per-engine call counter, so parties consume matching
initializer material without any coordination traffic.

Wire cost of the primitives:

* open        1 round (broadcast, or addressed when revealing to one party)
* dmm         1 round: parties exchange the masked differences D = X - U and
              E = Y - V in a single message, then finish locally
* trunc       1 round: masked opening of the value plus a public shift,
              quotient extracted from the public sum
* invert_spd  2 * iterations dmm invocations, each paired with a trunc;
              initialization is local and costs no communication

The truncation requires the signed input (at scale 2^(2f)) to stay within
2^(e+2f-1) in magnitude, i.e. products of encoded reals up to 2^(e-1); the
spare bit is exactly the headroom the field bound 2^(e+2f+1) provides.
"""

from __future__ import annotations

import numpy as np

from mpclr.field import FixedPointCodec
from mpclr.randomness import CorrelatedBundle
from mpclr.sharing import (
    SharedMatrix,
    local_add_public,
    local_neg,
)
from mpclr.transport import (
    BROADCAST,
    Channel,
    Kind,
    decode_matrices,
    encode_matrices,
    instance_id,
)

DEFAULT_INVERT_ITERATIONS = 32


def diagonal_matrix(value: int, k: int) -> np.ndarray:
    out = np.zeros((k, k), dtype=object)
    out[np.diag_indices(k)] = value
    return out


class PartyEngine:
    """One party's endpoint for the secure-computation primitives.

    scope prefixes every instance label, which keeps concurrent protocol
    contexts (for example per-source sessions) from colliding on the wire.
    """

    def __init__(self, channel: Channel, party_id: int, group,
                 bundle: CorrelatedBundle, *, scope: str = ""):
        self.channel = channel
        self.party_id = party_id
        self.group = tuple(sorted(group))
        self.bundle = bundle
        self.params = bundle.params
        self.codec = FixedPointCodec(self.params)
        self.scope = scope
        self._seq = 0
        self.audit: list[dict] = []
        if party_id not in self.group:
            raise ValueError(f"party {party_id} not in group {self.group}")
        if bundle.party != party_id or bundle.group != self.group:
            raise ValueError("bundle was dealt to a different party or group")

    # -- bookkeeping -------------------------------------------------------

    @property
    def peers(self) -> list[int]:
        return [p for p in self.group if p != self.party_id]

    @property
    def designated(self) -> bool:
        return self.party_id == self.group[0]

    def _next_instance(self, kind: str) -> bytes:
        label = f"{self.scope}{kind}/{self._seq:06d}"
        self._seq += 1
        inst = instance_id(label)
        self.audit.append({"kind": kind, "instance": inst.hex(), "rounds": 1})
        return inst

    def wrap(self, entries) -> SharedMatrix:
        """Tag locally computed fragment entries for this engine's group."""
        return SharedMatrix(entries, self.party_id, self.group, self.params)

    def from_public(self, public) -> SharedMatrix:
        """Share a public matrix: the designated party holds it whole."""
        public = np.asarray(public, dtype=object) % self.params.q
        entries = public if self.designated else np.zeros(public.shape,
                                                          dtype=object)
        return self.wrap(entries)

    def _check(self, x: SharedMatrix) -> None:
        if x.group != self.group or x.owner != self.party_id:
            raise ValueError("fragment does not belong to this engine")
        if x.params != self.params:
            raise ValueError("fragment uses different field parameters")

    # -- primitives ---------------------------------------------------------

    def open(self, x: SharedMatrix, to: int | None = None):
        """Reveal a shared matrix; returns the plaintext matrix, or None for
        parties other than `to` when revealing to a single recipient."""
        self._check(x)
        inst = self._next_instance("open")
        payload = encode_matrices([x.entries], self.params)
        if to is None:
            self.channel.send(inst, 1, BROADCAST, Kind.OPEN, payload)
            total = x.entries.copy()
            for env in self.channel.recv_round(inst, 1, self.peers).values():
                (frag,) = decode_matrices(env.payload, self.params)
                total = total + frag
            return total % self.params.q
        if to not in self.group:
            raise ValueError(f"recipient {to} not in group {self.group}")
        if self.party_id != to:
            self.channel.send(inst, 1, to, Kind.OPEN, payload)
            return None
        total = x.entries.copy()
        senders = [p for p in self.group if p != to]
        for env in self.channel.recv_round(inst, 1, senders).values():
            (frag,) = decode_matrices(env.payload, self.params)
            total = total + frag
        return total % self.params.q

    def dmm(self, x: SharedMatrix, y: SharedMatrix) -> SharedMatrix:
        """Secure matrix product via a pre-distributed triple; one round.

        Parties broadcast fragments of D = X - U and E = Y - V together,
        reconstruct the public D and E, and finish locally. The result
        carries fixed-point scale 2^(2f) when the inputs are encodings.
        """
        self._check(x)
        self._check(y)
        a, b = x.shape
        b2, c = y.shape
        if b != b2:
            raise ValueError(f"cannot multiply {x.shape} by {y.shape}")
        triple = self.bundle.next_triple((a, b, c))
        q = self.params.q
        d_frag = (x.entries - triple.u) % q
        e_frag = (y.entries - triple.v) % q
        inst = self._next_instance("dmm")
        payload = encode_matrices([d_frag, e_frag], self.params)
        if self.peers:
            self.channel.send(inst, 1, BROADCAST, Kind.PRODUCT_STEP, payload)
        d_pub, e_pub = d_frag, e_frag
        if self.peers:
            for env in self.channel.recv_round(inst, 1, self.peers).values():
                dj, ej = decode_matrices(env.payload, self.params)
                d_pub = d_pub + dj
                e_pub = e_pub + ej
        d_pub = d_pub % q
        e_pub = e_pub % q
        z = (triple.w + d_pub.dot(triple.v) + triple.u.dot(e_pub)) % q
        if self.designated:
            z = (z + d_pub.dot(e_pub)) % q
        return self.wrap(z)

    def trunc(self, x: SharedMatrix) -> SharedMatrix:
        """Rescale a scale-2^(2f) sharing to scale 2^f; one round.

        Opens the input masked with shift + 2^f * r_high + r_low and keeps
        the public quotient by 2^f; each party subtracts its r_high
        fragment. The result is floor(v / 2^f) + u with u in {0, 1}, i.e.
        at most one unit in the last place above the exact quotient.
        """
        self._check(x)
        p = self.params
        q = p.q
        r_low, r_high = self.bundle.next_pair_block(x.shape)
        masked = (x.entries + (r_high * (1 << p.f)) + r_low) % q
        shift = 1 << (p.e + 2 * p.f - 1)
        if self.designated:
            masked = (masked + shift) % q
        inst = self._next_instance("trunc")
        payload = encode_matrices([masked], self.params)
        if self.peers:
            self.channel.send(inst, 1, BROADCAST, Kind.TRUNC_STEP, payload)
        total = masked
        if self.peers:
            for env in self.channel.recv_round(inst, 1, self.peers).values():
                (frag,) = decode_matrices(env.payload, self.params)
                total = total + frag
        opened = total % q
        quotient = opened >> p.f  # elementwise on the integer representatives
        out = (-r_high) % q
        if self.designated:
            out = (out + quotient - (shift >> p.f)) % q
        return self.wrap(out)

    def mul_trunc(self, x: SharedMatrix, y: SharedMatrix) -> SharedMatrix:
        """Fixed-point product of two scale-2^f sharings."""
        return self.trunc(self.dmm(x, y))

    def invert_spd(self, a: SharedMatrix, trace_bound,
                   iterations: int = DEFAULT_INVERT_ITERATIONS) -> SharedMatrix:
        """Newton iteration X <- X (2I - A X) for an SPD sharing.

        trace_bound is a public upper bound on trace(A); the public seed
        X_0 = I / trace_bound guarantees convergence because every
        eigenvalue of I - A X_0 then lies in [0, 1). Performs exactly
        2 * iterations dmm invocations, each followed by a truncation;
        initialization is communication-free.
        """
        self._check(a)
        k, k2 = a.shape
        if k != k2:
            raise ValueError("matrix inversion needs a square sharing")
        if trace_bound <= 0:
            raise ValueError("trace bound must be positive")
        if iterations < 1:
            raise ValueError("at least one iteration required")
        seed = self.codec.encode(1.0 / float(trace_bound))
        x = self.from_public(diagonal_matrix(seed, k))
        two_eye = diagonal_matrix(self.codec.encode(2), k)
        for _ in range(iterations):
            ax = self.mul_trunc(a, x)
            y = local_add_public(local_neg(ax), two_eye)
            x = self.mul_trunc(x, y)
        self.audit.append({
            "kind": "invert_spd",
            "iterations": iterations,
            "product_invocations": 2 * iterations,
        })
        return x
