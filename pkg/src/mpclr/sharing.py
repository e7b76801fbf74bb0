"""Additive secret sharing of field matrices.

A secret matrix over F_q is split into one fragment per group member such
that the fragments sum to the secret elementwise mod q. Any proper subset of
fragments is uniformly distributed independently of the secret. Linear
operations (add, subtract, public scalar, adding a public matrix) are local;
the designated party for public-constant absorption is always the lowest
party id in the group.
"""

from __future__ import annotations

from dataclasses import dataclass
from random import SystemRandom

import numpy as np

from mpclr.field import FieldParams

_sysrand = SystemRandom()


def as_field_matrix(x) -> np.ndarray:
    """Coerce ints / lists / arrays to a 2-D object array of Python ints.

    Scalars become 1x1, flat vectors become column vectors.
    """
    a = np.asarray(x, dtype=object)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise ValueError("field matrices must be at most 2-D")
    return a


def random_matrix(shape: tuple[int, int], q: int, rng=None) -> np.ndarray:
    """Uniform matrix over F_q. `rng` needs randrange; defaults to the OS RNG."""
    rng = rng or _sysrand
    rows, cols = shape
    flat = [rng.randrange(q) for _ in range(rows * cols)]
    return np.array(flat, dtype=object).reshape(rows, cols)


@dataclass
class SharedMatrix:
    """One party's additive fragment of a secret matrix.

    group is the sorted tuple of party ids holding fragments; owner is the
    party this fragment belongs to.
    """

    entries: np.ndarray
    owner: int
    group: tuple[int, ...]
    params: FieldParams

    def __post_init__(self):
        self.entries = as_field_matrix(self.entries)
        self.group = tuple(sorted(self.group))
        if self.owner not in self.group:
            raise ValueError(f"owner {self.owner} not in group {self.group}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def designated(self) -> bool:
        """True for the party that absorbs public constants."""
        return self.owner == self.group[0]


def _check_aligned(a: SharedMatrix, b: SharedMatrix) -> None:
    if a.params != b.params:
        raise ValueError("mismatched field parameters")
    if a.group != b.group or a.owner != b.owner:
        raise ValueError("fragments belong to different sharings")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def share(secret, group, params: FieldParams, rng=None) -> list[SharedMatrix]:
    """Split a secret matrix into fragments, one per group member.

    The first m-1 fragments are uniform; the last is the remainder. Returned
    in ascending-party-id order. The group must be non-empty with unique ids;
    the caller is expected to use groups of two or more parties (a singleton
    group degenerates to the plaintext and is permitted for local baselines).
    """
    rng = rng or _sysrand
    members = tuple(sorted(group))
    if not members:
        raise ValueError("empty group")
    if len(set(members)) != len(members):
        raise ValueError("duplicate party ids in group")
    secret = as_field_matrix(secret) % params.q
    total = np.zeros(secret.shape, dtype=object)
    fragments = []
    for pid in members[:-1]:
        frag = random_matrix(secret.shape, params.q, rng)
        total = total + frag
        fragments.append(SharedMatrix(frag, pid, members, params))
    last = (secret - total) % params.q
    fragments.append(SharedMatrix(last, members[-1], members, params))
    return fragments


def reconstruct(fragments) -> np.ndarray:
    """Sum fragments back into the secret. Requires the full group."""
    frags = list(fragments)
    if not frags:
        raise ValueError("no fragments")
    ref = frags[0]
    owners = sorted(f.owner for f in frags)
    if tuple(owners) != ref.group:
        raise ValueError(f"fragments {tuple(owners)} do not cover group {ref.group}")
    total = np.zeros(ref.shape, dtype=object)
    for f in frags:
        if f.group != ref.group or f.params != ref.params or f.shape != ref.shape:
            raise ValueError("inconsistent fragments")
        total = total + f.entries
    return total % ref.params.q


def local_add(a: SharedMatrix, b: SharedMatrix) -> SharedMatrix:
    _check_aligned(a, b)
    return SharedMatrix((a.entries + b.entries) % a.params.q, a.owner, a.group, a.params)


def local_sub(a: SharedMatrix, b: SharedMatrix) -> SharedMatrix:
    _check_aligned(a, b)
    return SharedMatrix((a.entries - b.entries) % a.params.q, a.owner, a.group, a.params)


def local_neg(a: SharedMatrix) -> SharedMatrix:
    return SharedMatrix((-a.entries) % a.params.q, a.owner, a.group, a.params)


def local_scale(c: int, a: SharedMatrix) -> SharedMatrix:
    """Multiply a sharing by a public integer scalar."""
    return SharedMatrix(a.entries * c % a.params.q, a.owner, a.group, a.params)


def local_add_public(a: SharedMatrix, public) -> SharedMatrix:
    """Add a public matrix to a sharing; only the designated party adds."""
    if not a.designated:
        return a
    public = as_field_matrix(public)
    if public.shape != a.shape:
        raise ValueError(f"shape mismatch: {public.shape} vs {a.shape}")
    return SharedMatrix((a.entries + public) % a.params.q, a.owner, a.group, a.params)


def local_gram(x_enc: np.ndarray, y_enc: np.ndarray, params: FieldParams):
    """Party-local normal-equation fragments over encoded data.

    Returns (X^T X mod q, X^T y mod q) for this party's rows. Because the
    rows of the virtual pooled matrix are partitioned across parties, these
    local products are additive fragments of the pooled X^T X and X^T y;
    both carry fixed-point scale 2^(2f).
    """
    x = as_field_matrix(x_enc)
    y = as_field_matrix(y_enc)
    if y.shape != (x.shape[0], 1):
        raise ValueError(f"response shape {y.shape} does not match {x.shape[0]} rows")
    xt = x.T
    return xt.dot(x) % params.q, xt.dot(y) % params.q
