"""Trusted-initializer material: pre-distributed correlated randomness.

The initializer works entirely offline. For every planned secure matrix
product it deals additive sharings of (U, V, W = U*V mod q); for every
planned truncation it deals sharings of a pair (r_low, r_high) with
r_low uniform in [0, 2^f) and r_high uniform in [0, 2^(e+f+kappa)).
Each party receives one CorrelatedBundle covering a whole session, streamed
in a single setup message, after which the initializer goes silent.

Parties consume material in lockstep: per-shape FIFOs for triples, one FIFO
for truncation pairs. The online engine derives identical consumption
sequences on every party from instance ids and call order, so matching
fragments are always used together; serial numbers make that auditable.

kappa is the statistical masking allowance for truncation openings. The
opening transmits shift + value + 2^f*r_high + r_low, which must stay below
q: the effective kappa is clamped to the field's capacity (zero whenever q
is the minimal prime above 2^(e+2f+1); custom larger fields admit more).
"""

from __future__ import annotations

import hashlib
import io
import struct
from collections import deque
from dataclasses import dataclass, field as dc_field
from random import SystemRandom

import numpy as np

from mpclr.field import FieldParams, int_from_bytes, int_to_bytes
from mpclr.sharing import SharedMatrix, random_matrix, share

_sysrand = SystemRandom()

DEFAULT_KAPPA = 48

_MAGIC = b"CRB1"
_TAG_TRIPLE = 0x01
_TAG_PAIR = 0x02


class MaterialExhausted(RuntimeError):
    """Raised when the online phase outruns the planned offline supply."""


def kappa_cap(params: FieldParams) -> int:
    """Largest kappa the field can mask without wrapping mod q.

    The truncation opening is bounded by (2^(e+2f) - 1) + (2^(e+2f+kappa)
    - 2^f) + (2^f - 1); it must stay below q. Minimal fields give 0.
    """
    base = 1 << (params.e + 2 * params.f)
    k = 0
    while base + (base << (k + 1)) - 2 < params.q:
        k += 1
    return k


def effective_kappa(params: FieldParams, requested: int = DEFAULT_KAPPA) -> int:
    if requested < 0:
        raise ValueError("kappa must be non-negative")
    return min(requested, kappa_cap(params))


@dataclass
class MatMulTriple:
    """One party's fragments of a multiplication triple (U, V, W = U*V)."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    shape: tuple[int, int, int]  # (a, b, c) for an (a x b) * (b x c) product
    serial: int


@dataclass
class TruncPair:
    """One party's fragments of a truncation masking pair."""

    r_low: int
    r_high: int
    serial: int


@dataclass
class Requirements:
    """Offline material needed by one protocol group for one session."""

    triples: dict = dc_field(default_factory=dict)  # (a, b, c) -> count
    trunc_pairs: int = 0

    def add_triples(self, shape: tuple[int, int, int], count: int) -> None:
        self.triples[shape] = self.triples.get(shape, 0) + count

    def merge(self, other: "Requirements") -> "Requirements":
        out = Requirements(dict(self.triples), self.trunc_pairs)
        for shape, count in other.triples.items():
            out.add_triples(shape, count)
        out.trunc_pairs += other.trunc_pairs
        return out


def plan_training(k: int, iterations: int) -> Requirements:
    """Material for one normal-equations training run on k coefficients.

    Two products per inversion iteration, one product for the final
    coefficient solve, and truncation pairs for rescaling the Gram fragments,
    the response fragments, every inversion product, and the coefficients.
    """
    req = Requirements()
    req.add_triples((k, k, k), 2 * iterations)
    req.add_triples((k, k, 1), 1)
    req.trunc_pairs = (
        k * k              # Gram rescale
        + k                # X^T y rescale
        + 2 * iterations * k * k
        + k                # coefficient rescale
    )
    return req


def plan_inference(k: int, rows: int) -> Requirements:
    """Material for `rows` single-vector predictions: one (1,k,1) product
    and one truncation pair each."""
    req = Requirements()
    if rows:
        req.add_triples((1, k, 1), rows)
    req.trunc_pairs = rows
    return req


def plan_requirements(k: int, iterations: int, inference_rows: int = 0) -> Requirements:
    return plan_training(k, iterations).merge(plan_inference(k, inference_rows))


@dataclass
class CorrelatedBundle:
    """Everything one party receives from the initializer for a session."""

    session_id: bytes
    party: int
    group: tuple[int, ...]
    params: FieldParams
    kappa: int
    triples: dict = dc_field(default_factory=dict)  # shape -> deque[MatMulTriple]
    pairs: deque = dc_field(default_factory=deque)
    consumed_serials: list = dc_field(default_factory=list)

    def next_triple(self, shape: tuple[int, int, int]) -> MatMulTriple:
        queue = self.triples.get(shape)
        if not queue:
            raise MaterialExhausted(
                f"party {self.party}: no multiplication triple left for shape {shape}"
            )
        t = queue.popleft()
        self.consumed_serials.append(("triple", t.serial))
        return t

    def next_pair_block(self, shape: tuple[int, int]):
        """Consume rows*cols truncation pairs, row-major, as two matrices."""
        rows, cols = shape
        n = rows * cols
        if len(self.pairs) < n:
            raise MaterialExhausted(
                f"party {self.party}: {n} truncation pairs requested, "
                f"{len(self.pairs)} left"
            )
        lows, highs = [], []
        for _ in range(n):
            p = self.pairs.popleft()
            self.consumed_serials.append(("pair", p.serial))
            lows.append(p.r_low)
            highs.append(p.r_high)
        low = np.array(lows, dtype=object).reshape(rows, cols)
        high = np.array(highs, dtype=object).reshape(rows, cols)
        return low, high

    def remaining(self) -> Requirements:
        req = Requirements()
        for shape, queue in self.triples.items():
            if queue:
                req.add_triples(shape, len(queue))
        req.trunc_pairs = len(self.pairs)
        return req

    # -- persistence ------------------------------------------------------

    def serialize(self) -> bytes:
        """Canonical byte stream: header, then length-prefixed records,
        then a SHA-256 trailer over everything before it."""
        width = self.params.element_bytes
        out = io.BytesIO()
        q_bytes = int_to_bytes(self.params.q, width)
        triple_records = [t for queue in self.triples.values() for t in queue]
        out.write(_MAGIC)
        out.write(self.session_id)
        out.write(struct.pack(">HH", self.party, len(self.group)))
        for pid in self.group:
            out.write(struct.pack(">H", pid))
        out.write(struct.pack(">HHH", self.params.e, self.params.f, len(q_bytes)))
        out.write(q_bytes)
        out.write(struct.pack(">HII", self.kappa, len(triple_records), len(self.pairs)))
        for t in triple_records:
            body = io.BytesIO()
            a, b, c = t.shape
            body.write(struct.pack(">BIIII", _TAG_TRIPLE, t.serial, a, b, c))
            for mat in (t.u, t.v, t.w):
                for v in mat.flat:
                    body.write(int_to_bytes(int(v), width))
            blob = body.getvalue()
            out.write(struct.pack(">I", len(blob)))
            out.write(blob)
        for p in self.pairs:
            body = struct.pack(">BI", _TAG_PAIR, p.serial)
            body += int_to_bytes(p.r_low, width) + int_to_bytes(p.r_high, width)
            out.write(struct.pack(">I", len(body)))
            out.write(body)
        payload = out.getvalue()
        return payload + hashlib.sha256(payload).digest()

    @classmethod
    def deserialize(cls, blob: bytes) -> "CorrelatedBundle":
        if len(blob) < 32:
            raise ValueError("bundle truncated")
        payload, digest = blob[:-32], blob[-32:]
        if hashlib.sha256(payload).digest() != digest:
            raise ValueError("bundle checksum mismatch")
        buf = io.BytesIO(payload)

        def take(n: int) -> bytes:
            data = buf.read(n)
            if len(data) != n:
                raise ValueError("bundle truncated")
            return data

        if take(4) != _MAGIC:
            raise ValueError("not a correlated-randomness bundle")
        session_id = take(16)
        party, gsize = struct.unpack(">HH", take(4))
        group = tuple(struct.unpack(">H", take(2))[0] for _ in range(gsize))
        e, f, qlen = struct.unpack(">HHH", take(6))
        q = int_from_bytes(take(qlen))
        params = FieldParams(e=e, f=f, q=q)
        width = params.element_bytes
        kappa, n_triples, n_pairs = struct.unpack(">HII", take(10))
        bundle = cls(session_id, party, group, params, kappa)

        def read_matrix(rows: int, cols: int) -> np.ndarray:
            vals = [int_from_bytes(take(width)) for _ in range(rows * cols)]
            return np.array(vals, dtype=object).reshape(rows, cols)

        for _ in range(n_triples):
            (rec_len,) = struct.unpack(">I", take(4))
            tag, serial, a, b, c = struct.unpack(">BIIII", take(17))
            if tag != _TAG_TRIPLE:
                raise ValueError(f"unexpected record tag {tag}")
            expected = 17 + width * (a * b + b * c + a * c)
            if rec_len != expected:
                raise ValueError("triple record length mismatch")
            t = MatMulTriple(
                u=read_matrix(a, b),
                v=read_matrix(b, c),
                w=read_matrix(a, c),
                shape=(a, b, c),
                serial=serial,
            )
            bundle.triples.setdefault(t.shape, deque()).append(t)
        for _ in range(n_pairs):
            (rec_len,) = struct.unpack(">I", take(4))
            tag, serial = struct.unpack(">BI", take(5))
            if tag != _TAG_PAIR or rec_len != 5 + 2 * width:
                raise ValueError("bad truncation-pair record")
            r_low = int_from_bytes(take(width))
            r_high = int_from_bytes(take(width))
            bundle.pairs.append(TruncPair(r_low, r_high, serial))
        if buf.read(1):
            raise ValueError("trailing bytes after last record")
        return bundle

    def checksum(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.serialize())

    @classmethod
    def load(cls, path) -> "CorrelatedBundle":
        with open(path, "rb") as fh:
            return cls.deserialize(fh.read())


def generate(
    requirements: Requirements,
    session_id: bytes,
    group,
    params: FieldParams,
    kappa: int = DEFAULT_KAPPA,
    rng=None,
) -> list[CorrelatedBundle]:
    """Deal bundles for every member of `group`.

    Triples for equal shapes are dealt in serial order, which is the order
    parties will consume them. The requested kappa is clamped to the field's
    masking capacity.
    """
    rng = rng or _sysrand
    if len(session_id) != 16:
        raise ValueError("session id must be 16 bytes")
    members = tuple(sorted(group))
    if len(members) < 1:
        raise ValueError("empty group")
    k_eff = effective_kappa(params, kappa)
    bundles = {
        pid: CorrelatedBundle(session_id, pid, members, params, k_eff)
        for pid in members
    }
    serial = 0
    for shape in sorted(requirements.triples):
        a, b, c = shape
        for _ in range(requirements.triples[shape]):
            u = random_matrix((a, b), params.q, rng)
            v = random_matrix((b, c), params.q, rng)
            w = u.dot(v) % params.q
            parts = {
                "u": share(u, members, params, rng),
                "v": share(v, members, params, rng),
                "w": share(w, members, params, rng),
            }
            for i, pid in enumerate(members):
                bundles[pid].triples.setdefault(shape, deque()).append(
                    MatMulTriple(
                        u=parts["u"][i].entries,
                        v=parts["v"][i].entries,
                        w=parts["w"][i].entries,
                        shape=shape,
                        serial=serial,
                    )
                )
            serial += 1
    low_bound = 1 << params.f
    high_bound = 1 << (params.e + params.f + k_eff)
    for _ in range(requirements.trunc_pairs):
        r_low = rng.randrange(low_bound)
        r_high = rng.randrange(high_bound)
        lows = share(np.array([[r_low]], dtype=object), members, params, rng)
        highs = share(np.array([[r_high]], dtype=object), members, params, rng)
        for i, pid in enumerate(members):
            bundles[pid].pairs.append(
                TruncPair(
                    r_low=int(lows[i].entries[0, 0]),
                    r_high=int(highs[i].entries[0, 0]),
                    serial=serial,
                )
            )
        serial += 1
    return [bundles[pid] for pid in members]


def reconstruct_triple(fragments: list[MatMulTriple], params: FieldParams):
    """Recombine per-party triple fragments; intended for tests and audits."""
    q = params.q
    u = sum(t.u for t in fragments) % q
    v = sum(t.v for t in fragments) % q
    w = sum(t.w for t in fragments) % q
    return u, v, w
