"""Message transport through a broadcast agent.

Every participant (parties, trusted initializer, client) opens exactly one
socket, to the broadcast agent (BA): a dumb relay that gives the session
O(m) sockets instead of O(m^2). The BA reads envelope headers only; it
never interprets payloads.

Envelope wire layout, all integers big-endian:

    session id      16 bytes
    instance id      8 bytes
    round            4 bytes
    sender           2 bytes
    recipient        2 bytes   (0xFFFF = broadcast to all parties)
    payload kind     1 byte
    payload length   4 bytes
    payload          variable, at most 64 MiB

Delivery rules: per-sender FIFO order is preserved; messages to a recipient
that has not registered yet are buffered until it does; duplicate or
late-for-a-closed-round deliveries are rejected and logged; a missing sender
aborts the round after a timeout with an error naming the instance, round,
and sender.

Payload encryption defaults to on: addressed payloads use a pairwise
ChaCha20-Poly1305 key, broadcast payloads a group key, both derived from the
session secret in the roster (the BA never holds the secret). The envelope
header is bound as associated data. Registration control payloads stay in
the clear because the BA must read them to route.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import logging
import os
import socket
import struct
import threading
import time
from dataclasses import dataclass, field as dc_field
from enum import IntEnum

import numpy as np

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from mpclr.field import FieldParams, int_from_bytes, int_to_bytes

log = logging.getLogger(__name__)

HEADER_LEN = 37
MAX_PAYLOAD = 64 * 1024 * 1024
DEFAULT_TIMEOUT = 60.0

BROADCAST = 0xFFFF
TI_ID = 0xFFFE
CLIENT_ID = 0xFFFD
MAX_PARTY_ID = 0xF000


class Kind(IntEnum):
    CONTROL = 0
    OPEN = 1
    PRODUCT_STEP = 2
    TRUNC_STEP = 3
    BUNDLE = 4
    INPUT_SHARE = 5
    PREDICTION = 6
    MASKED_PREDICTION = 7
    MASK = 8
    MASK_TOTAL = 9


class Control(IntEnum):
    REGISTER = 1
    DONE = 2
    ABORT = 3


class MissingMessage(RuntimeError):
    """A protocol round timed out waiting for specific senders."""


def instance_id(label: str) -> bytes:
    """Deterministic 8-byte instance id; equal labels on every party."""
    return hashlib.sha256(label.encode()).digest()[:8]


@dataclass
class Envelope:
    session_id: bytes
    instance_id: bytes
    round_no: int
    sender: int
    recipient: int
    kind: int
    payload: bytes

    def header_bytes(self) -> bytes:
        if len(self.session_id) != 16 or len(self.instance_id) != 8:
            raise ValueError("bad session or instance id length")
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError(f"payload exceeds {MAX_PAYLOAD} bytes")
        return (
            self.session_id
            + self.instance_id
            + struct.pack(">IHHBI", self.round_no, self.sender, self.recipient,
                          self.kind, len(self.payload))
        )

    def encode(self) -> bytes:
        return self.header_bytes() + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "Envelope":
        env, used = cls.decode_prefix(data)
        if used != len(data):
            raise ValueError("trailing bytes after envelope")
        return env

    @classmethod
    def decode_prefix(cls, data: bytes) -> tuple["Envelope", int]:
        if len(data) < HEADER_LEN:
            raise ValueError("short envelope header")
        session = data[:16]
        instance = data[16:24]
        round_no, sender, recipient, kind, plen = struct.unpack(
            ">IHHBI", data[24:37]
        )
        if plen > MAX_PAYLOAD:
            raise ValueError(f"payload exceeds {MAX_PAYLOAD} bytes")
        end = HEADER_LEN + plen
        if len(data) < end:
            raise ValueError("short envelope payload")
        return cls(session, instance, round_no, sender, recipient, kind,
                   data[37:end]), end


def read_exactly(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def read_envelope(sock: socket.socket) -> Envelope:
    header = read_exactly(sock, HEADER_LEN)
    plen = struct.unpack(">I", header[33:37])[0]
    if plen > MAX_PAYLOAD:
        raise ValueError(f"payload exceeds {MAX_PAYLOAD} bytes")
    payload = read_exactly(sock, plen) if plen else b""
    env, _ = Envelope.decode_prefix(header + payload)
    return env


# -- matrix payloads --------------------------------------------------------

def encode_matrices(mats, params: FieldParams) -> bytes:
    """Pack field matrices: count byte, then per matrix rows/cols and
    fixed-width big-endian elements."""
    out = io.BytesIO()
    mats = list(mats)
    if len(mats) > 255:
        raise ValueError("too many matrices in one payload")
    out.write(struct.pack(">B", len(mats)))
    width = params.element_bytes
    for m in mats:
        rows, cols = m.shape
        out.write(struct.pack(">II", rows, cols))
        for v in m.flat:
            out.write(int_to_bytes(int(v), width))
    return out.getvalue()


def decode_matrices(data: bytes, params: FieldParams) -> list[np.ndarray]:
    buf = io.BytesIO(data)

    def take(n):
        chunk = buf.read(n)
        if len(chunk) != n:
            raise ValueError("matrix payload truncated")
        return chunk

    (count,) = struct.unpack(">B", take(1))
    width = params.element_bytes
    mats = []
    for _ in range(count):
        rows, cols = struct.unpack(">II", take(8))
        vals = []
        for _ in range(rows * cols):
            v = int_from_bytes(take(width))
            if v >= params.q:
                raise ValueError("matrix element not reduced mod q")
            vals.append(v)
        mats.append(np.array(vals, dtype=object).reshape(rows, cols))
    if buf.read(1):
        raise ValueError("trailing bytes in matrix payload")
    return mats


# -- payload encryption ------------------------------------------------------

class PayloadCrypto:
    """Authenticated payload encryption keyed from the session secret."""

    def __init__(self, secret: bytes, session_id: bytes):
        self.secret = secret
        self.session_id = session_id
        self._keys: dict[bytes, ChaCha20Poly1305] = {}

    def _key(self, info: bytes) -> ChaCha20Poly1305:
        if info not in self._keys:
            kdf = HKDF(algorithm=hashes.SHA256(), length=32,
                       salt=self.session_id, info=info)
            self._keys[info] = ChaCha20Poly1305(kdf.derive(self.secret))
        return self._keys[info]

    def _select(self, sender: int, recipient: int) -> ChaCha20Poly1305:
        if recipient == BROADCAST:
            return self._key(b"group")
        lo, hi = sorted((sender, recipient))
        return self._key(b"pair|" + struct.pack(">HH", lo, hi))

    @staticmethod
    def _in_clear(env: Envelope) -> bool:
        # control envelopes carry 1-byte session signals and no secrets; the
        # BA must be able to read registrations, so the kind stays plaintext
        return env.kind == Kind.CONTROL

    def seal(self, env: Envelope) -> Envelope:
        if self._in_clear(env):
            return env
        aead = self._select(env.sender, env.recipient)
        nonce = os.urandom(12)
        ct = aead.encrypt(nonce, env.payload,
                          env.header_bytes()[:HEADER_LEN - 4])
        return Envelope(env.session_id, env.instance_id, env.round_no,
                        env.sender, env.recipient, env.kind, nonce + ct)

    def open(self, env: Envelope) -> Envelope:
        if self._in_clear(env):
            return env
        aead = self._select(env.sender, env.recipient)
        nonce, ct = env.payload[:12], env.payload[12:]
        header = env.header_bytes()[:HEADER_LEN - 4]
        pt = aead.decrypt(nonce, ct, header)
        return Envelope(env.session_id, env.instance_id, env.round_no,
                        env.sender, env.recipient, env.kind, pt)


# -- transcripts -------------------------------------------------------------

class Transcript:
    """Per-participant log of plaintext traffic plus a manifest of local
    secrets, for post-run privacy and round audits."""

    def __init__(self):
        self.records: list[dict] = []
        self._lock = threading.Lock()

    def note_message(self, direction: str, env: Envelope) -> None:
        with self._lock:
            self.records.append({
                "type": "message",
                "dir": direction,
                "instance": env.instance_id.hex(),
                "round": env.round_no,
                "sender": env.sender,
                "recipient": env.recipient,
                "kind": int(env.kind),
                "bytes": len(env.payload),
                "payload_sha256": hashlib.sha256(env.payload).hexdigest(),
            })

    def note_secret(self, name: str, blob: bytes) -> None:
        with self._lock:
            self.records.append({
                "type": "secret",
                "name": name,
                "payload_sha256": hashlib.sha256(blob).hexdigest(),
            })

    def dump(self, path) -> None:
        with self._lock, open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")

    @staticmethod
    def load(path) -> list[dict]:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]


# -- mailbox ------------------------------------------------------------------

class _Mailbox:
    """Round-synchronous inbox: envelopes keyed by (instance, round, sender),
    rounds closed once collected."""

    def __init__(self):
        self._cond = threading.Condition()
        self._pending: dict[tuple, dict[int, Envelope]] = {}
        self._closed: set[tuple] = set()
        self._dead: str | None = None

    def deliver(self, env: Envelope) -> None:
        key = (env.instance_id, env.round_no)
        with self._cond:
            if key in self._closed:
                log.warning("late delivery dropped: instance %s round %d from %d",
                            env.instance_id.hex(), env.round_no, env.sender)
                return
            slot = self._pending.setdefault(key, {})
            if env.sender in slot:
                log.warning("duplicate delivery dropped: instance %s round %d "
                            "from %d", env.instance_id.hex(), env.round_no,
                            env.sender)
                return
            slot[env.sender] = env
            self._cond.notify_all()

    def fail(self, reason: str) -> None:
        with self._cond:
            self._dead = reason
            self._cond.notify_all()

    def collect(self, instance: bytes, round_no: int, senders,
                timeout: float) -> dict[int, Envelope]:
        wanted = set(senders)
        key = (instance, round_no)
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                if self._dead:
                    raise ConnectionError(self._dead)
                have = self._pending.get(key, {})
                if wanted <= set(have):
                    self._closed.add(key)
                    got = {s: have[s] for s in wanted}
                    del self._pending[key]
                    return got
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    missing = sorted(wanted - set(have))
                    raise MissingMessage(
                        f"round {round_no} of instance {instance.hex()} timed "
                        f"out; missing sender(s) {missing}"
                    )
                self._cond.wait(min(remaining, 0.5))


# -- channel base -------------------------------------------------------------

class Channel:
    """Common send/receive behaviour for loopback and TCP sessions."""

    def __init__(self, role: int, session_id: bytes, *, crypto=None,
                 transcript: Transcript | None = None,
                 timeout: float = DEFAULT_TIMEOUT):
        self.role = role
        self.session_id = session_id
        self.crypto = crypto
        self.transcript = transcript
        self.timeout = timeout
        self._mailbox = _Mailbox()

    # subclasses implement the actual wire push
    def _push(self, env: Envelope) -> None:
        raise NotImplementedError

    def send(self, instance: bytes, round_no: int, recipient: int, kind: int,
             payload: bytes) -> None:
        env = Envelope(self.session_id, instance, round_no, self.role,
                       recipient, kind, payload)
        env.encode()  # validates lengths before anything leaves
        if self.transcript is not None:
            self.transcript.note_message("send", env)
        if self.crypto is not None:
            env = self.crypto.seal(env)
        self._push(env)

    def _accept(self, env: Envelope) -> None:
        if self.crypto is not None:
            env = self.crypto.open(env)
        if self.transcript is not None:
            self.transcript.note_message("recv", env)
        self._mailbox.deliver(env)

    def recv_round(self, instance: bytes, round_no: int, senders,
                   timeout: float | None = None) -> dict[int, Envelope]:
        return self._mailbox.collect(
            instance, round_no, senders,
            self.timeout if timeout is None else timeout)

    def recv_one(self, instance: bytes, round_no: int, sender: int,
                 timeout: float | None = None) -> Envelope:
        return self.recv_round(instance, round_no, [sender], timeout)[sender]

    def close(self) -> None:
        pass


# -- in-memory loopback --------------------------------------------------------

class LoopbackHub:
    """In-process broadcast agent with the exact relay semantics of the TCP
    one; used by tests and the threaded run mode."""

    def __init__(self, expected_parties):
        self.expected_parties = tuple(sorted(expected_parties))
        self._lock = threading.Lock()
        self._channels: dict[int, "LoopbackChannel"] = {}
        self._buffers: dict[int, list[Envelope]] = {}
        self.relay_log: list[dict] = []
        self.keep_payloads = False
        self._seq = 0

    def connect(self, role: int, session_id: bytes, **kwargs) -> "LoopbackChannel":
        ch = LoopbackChannel(self, role, session_id, **kwargs)
        with self._lock:
            if role in self._channels:
                raise ValueError(f"role {role} already registered")
            self._channels[role] = ch
            # flush under the lock so buffered frames keep FIFO order
            for env in self._buffers.pop(role, []):
                ch._accept(env)
        return ch

    def _note(self, env: Envelope) -> None:
        record = {
            "seq": self._seq,
            "sender": env.sender,
            "recipient": env.recipient,
            "kind": int(env.kind),
            "instance": env.instance_id.hex(),
            "round": env.round_no,
            "bytes": len(env.payload),
        }
        if self.keep_payloads:
            record["payload"] = env.payload
        self.relay_log.append(record)
        self._seq += 1

    def route(self, env: Envelope) -> None:
        with self._lock:
            self._note(env)
            if env.recipient == BROADCAST:
                targets = [pid for pid in self.expected_parties
                           if pid != env.sender]
                deliver, buffer = [], []
                for pid in targets:
                    if pid in self._channels:
                        deliver.append(self._channels[pid])
                    else:
                        buffer.append(pid)
                for pid in buffer:
                    self._buffers.setdefault(pid, []).append(env)
                for ch in deliver:
                    ch._accept(env)
            else:
                if env.recipient in self._channels:
                    self._channels[env.recipient]._accept(env)
                else:
                    self._buffers.setdefault(env.recipient, []).append(env)


class LoopbackChannel(Channel):
    def __init__(self, hub: LoopbackHub, role: int, session_id: bytes, **kwargs):
        super().__init__(role, session_id, **kwargs)
        self.hub = hub

    def _push(self, env: Envelope) -> None:
        # round-trip through the codec so loopback exercises the same bytes
        self.hub.route(Envelope.decode(env.encode()))


# -- TCP broadcast agent ---------------------------------------------------------

class BAServer:
    """The relay process. Accepts one socket per participant, routes by
    envelope header, counts traffic, and snapshots statistics on shutdown."""

    def __init__(self, host: str, port: int, expected_parties, *,
                 stats_path=None, transcript_path=None):
        self.expected_parties = tuple(sorted(expected_parties))
        self._stats_path = stats_path
        self._transcript_path = transcript_path
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._lock = threading.Lock()
        self._conns: dict[int, socket.socket] = {}
        self._write_locks: dict[int, threading.Lock] = {}
        self._buffers: dict[int, list[bytes]] = {}
        self._registered_ever: set[int] = set()
        self._active = 0
        self._peak = 0
        self._relay_log: list[dict] = []
        self._seq = 0
        self.stats = {"messages": 0, "bytes": 0, "per_sender": {}}
        self._stopping = threading.Event()
        self._finished = threading.Event()
        self._threads: list[threading.Thread] = []
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               daemon=True)

    def start(self) -> "BAServer":
        self._accept_thread.start()
        return self

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                break
            with self._lock:
                self._active += 1
                self._peak = max(self._peak, self._active)
            t = threading.Thread(target=self._serve_conn, args=(conn,),
                                 daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_conn(self, conn: socket.socket) -> None:
        role = None
        try:
            env = read_envelope(conn)
            if not (env.kind == Kind.CONTROL
                    and env.payload[:1] == bytes([Control.REGISTER])):
                log.warning("connection did not register first; dropping")
                return
            role = env.sender
            wlock = threading.Lock()
            # flush buffered frames under the write lock so later routed
            # frames cannot jump ahead of them
            with wlock:
                with self._lock:
                    if role in self._conns:
                        log.warning("role %d registered twice; dropping", role)
                        role = None
                        return
                    self._conns[role] = conn
                    self._write_locks[role] = wlock
                    self._registered_ever.add(role)
                    held = self._buffers.pop(role, [])
                for frame in held:
                    conn.sendall(frame)
            self._note(env)
            while True:
                env = read_envelope(conn)
                self._route(env)
        except (ConnectionError, OSError):
            pass
        except ValueError as exc:
            log.warning("malformed frame from role %s: %s", role, exc)
        finally:
            with self._lock:
                if role is not None and self._conns.get(role) is conn:
                    del self._conns[role]
                self._active -= 1
                # stop once every expected party has come and gone
                done = (self._active == 0
                        and set(self.expected_parties) <= self._registered_ever
                        and not self._stopping.is_set())
            conn.close()
            if done:
                self.stop()

    def _note(self, env: Envelope) -> None:
        with self._lock:
            self._relay_log.append({
                "seq": self._seq,
                "sender": env.sender,
                "recipient": env.recipient,
                "kind": int(env.kind),
                "instance": env.instance_id.hex(),
                "round": env.round_no,
                "bytes": len(env.payload),
            })
            self._seq += 1
            self.stats["messages"] += 1
            self.stats["bytes"] += HEADER_LEN + len(env.payload)
            per = self.stats["per_sender"].setdefault(str(env.sender),
                                                      {"messages": 0, "bytes": 0})
            per["messages"] += 1
            per["bytes"] += HEADER_LEN + len(env.payload)

    def _write(self, role: int, frame: bytes) -> None:
        with self._lock:
            conn = self._conns.get(role)
            wlock = self._write_locks.get(role)
        if conn is None:
            with self._lock:
                self._buffers.setdefault(role, []).append(frame)
            return
        try:
            with wlock:
                conn.sendall(frame)
        except OSError:
            log.warning("write to role %d failed", role)

    def _route(self, env: Envelope) -> None:
        self._note(env)
        frame = env.encode()
        if env.recipient == BROADCAST:
            for pid in self.expected_parties:
                if pid != env.sender:
                    self._write(pid, frame)
        else:
            self._write(env.recipient, frame)

    def stop(self) -> None:
        with self._lock:
            if self._stopping.is_set():
                return
            self._stopping.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            conns = list(self._conns.values())
        for c in conns:
            try:
                c.close()
            except OSError:
                pass
        snapshot = {
            "peak_sockets": self._peak,
            "registered_roles": sorted(self._registered_ever),
            **self.stats,
        }
        if self._stats_path:
            with open(self._stats_path, "w") as fh:
                json.dump(snapshot, fh, indent=2)
        if self._transcript_path:
            with open(self._transcript_path, "w") as fh:
                for rec in self._relay_log:
                    fh.write(json.dumps(rec) + "\n")
        # signalled only after the files are on disk, so waiters may exit
        self._finished.set()

    def wait(self, timeout: float | None = None) -> bool:
        """Block until the relay has shut down and flushed its files."""
        return self._finished.wait(timeout)

    @property
    def peak_sockets(self) -> int:
        return self._peak


class TcpChannel(Channel):
    """A participant's connection to the broadcast agent."""

    def __init__(self, host: str, port: int, role: int, session_id: bytes,
                 *, connect_retries: int = 40, **kwargs):
        super().__init__(role, session_id, **kwargs)
        last = None
        for _ in range(connect_retries):
            try:
                self._sock = socket.create_connection((host, port), timeout=10)
                break
            except OSError as exc:
                last = exc
                time.sleep(0.25)
        else:
            raise ConnectionError(f"cannot reach broadcast agent: {last}")
        self._sock.settimeout(None)
        self._send_lock = threading.Lock()
        self.send(instance_id("session/register"), 0, 0,
                  Kind.CONTROL, bytes([Control.REGISTER]))
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _push(self, env: Envelope) -> None:
        with self._send_lock:
            self._sock.sendall(env.encode())

    def _read_loop(self) -> None:
        try:
            while True:
                env = read_envelope(self._sock)
                self._accept(env)
        except (ConnectionError, OSError):
            self._mailbox.fail("connection to broadcast agent lost")
        except ValueError as exc:
            self._mailbox.fail(f"malformed frame: {exc}")

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


# -- initializer distribution -----------------------------------------------

BUNDLE_INSTANCE = instance_id("ti/bundle")


def ti_distribute(channel: Channel, bundles) -> None:
    """Send every party its bundle; one setup message each, then silence."""
    for bundle in bundles:
        channel.send(BUNDLE_INSTANCE, 0, bundle.party, Kind.BUNDLE,
                     bundle.serialize())


def receive_bundle(channel: Channel, timeout: float | None = None):
    from mpclr.randomness import CorrelatedBundle

    env = channel.recv_one(BUNDLE_INSTANCE, 0, TI_ID, timeout)
    return CorrelatedBundle.deserialize(env.payload)


# -- roster -------------------------------------------------------------------

@dataclass
class SessionRoster:
    """Out-of-band session agreement, stored as a human-readable INI file."""

    session_id: bytes
    scenario: str
    ba_host: str
    ba_port: int
    party_ids: tuple[int, ...]
    params: FieldParams
    kappa: int
    secret: bytes = b""
    encrypt: bool = True
    timeout: float = DEFAULT_TIMEOUT
    extra: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if len(self.session_id) != 16:
            raise ValueError("session id must be 16 bytes")
        if len(set(self.party_ids)) != len(self.party_ids):
            raise ValueError("duplicate party id in roster")
        if any(not 0 < pid <= MAX_PARTY_ID for pid in self.party_ids):
            raise ValueError("party ids must lie in (0, 0xF000]")

    def crypto(self) -> PayloadCrypto | None:
        if not self.encrypt:
            return None
        if not self.secret:
            raise ValueError("encryption enabled but roster has no secret")
        return PayloadCrypto(self.secret, self.session_id)

    def save(self, path) -> None:
        cp = configparser.ConfigParser()
        cp["session"] = {
            "id": self.session_id.hex(),
            "scenario": self.scenario,
            "encrypt": "on" if self.encrypt else "off",
            "secret": self.secret.hex(),
            "timeout": str(self.timeout),
        }
        cp["field"] = {
            "e": str(self.params.e),
            "f": str(self.params.f),
            "q": str(self.params.q),
            "kappa": str(self.kappa),
        }
        cp["ba"] = {"host": self.ba_host, "port": str(self.ba_port)}
        cp["parties"] = {"ids": " ".join(str(p) for p in self.party_ids)}
        if self.extra:
            cp["scenario"] = {k: str(v) for k, v in self.extra.items()}
        with open(path, "w") as fh:
            cp.write(fh)

    @classmethod
    def load(cls, path) -> "SessionRoster":
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise FileNotFoundError(path)
        sess = cp["session"]
        fld = cp["field"]
        params = FieldParams(e=fld.getint("e"), f=fld.getint("f"),
                             q=int(fld["q"]))
        return cls(
            session_id=bytes.fromhex(sess["id"]),
            scenario=sess.get("scenario", "ti-lr"),
            ba_host=cp["ba"]["host"],
            ba_port=cp["ba"].getint("port"),
            party_ids=tuple(int(t) for t in cp["parties"]["ids"].split()),
            params=params,
            kappa=fld.getint("kappa"),
            secret=bytes.fromhex(sess.get("secret", "")),
            encrypt=sess.get("encrypt", "on").lower() in ("on", "true", "1", "yes"),
            timeout=sess.getfloat("timeout", DEFAULT_TIMEOUT),
            extra=dict(cp["scenario"]) if cp.has_section("scenario") else {},
        )

    def connect(self, role: int, *, transcript: Transcript | None = None
                ) -> TcpChannel:
        return TcpChannel(self.ba_host, self.ba_port, role, self.session_id,
                          crypto=self.crypto(), transcript=transcript,
                          timeout=self.timeout)
