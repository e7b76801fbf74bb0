import os
import random
import threading

import numpy as np
import pytest

from mpclr.field import make_params
from mpclr.randomness import Requirements, generate
from mpclr.sharing import random_matrix
from mpclr.transport import (
    BROADCAST,
    CLIENT_ID,
    DEFAULT_TIMEOUT,
    HEADER_LEN,
    MAX_PAYLOAD,
    TI_ID,
    BAServer,
    Control,
    Envelope,
    Kind,
    LoopbackHub,
    MissingMessage,
    PayloadCrypto,
    SessionRoster,
    TcpChannel,
    Transcript,
    decode_matrices,
    encode_matrices,
    instance_id,
    read_envelope,
    receive_bundle,
    ti_distribute,
)

PARAMS = make_params(4, 8)
SESSION = bytes(16)


def env(instance="x", rnd=1, sender=1, recipient=2, kind=Kind.OPEN,
        payload=b"hi"):
    return Envelope(SESSION, instance_id(instance), rnd, sender, recipient,
                    kind, payload)


def test_envelope_round_trip():
    rng = random.Random(0)
    for _ in range(50):
        e = Envelope(
            os.urandom(16), os.urandom(8), rng.randrange(1 << 32),
            rng.randrange(1 << 16), rng.randrange(1 << 16),
            rng.randrange(256), os.urandom(rng.randrange(200)),
        )
        blob = e.encode()
        assert len(blob) == HEADER_LEN + len(e.payload)
        assert Envelope.decode(blob) == e


def test_envelope_maximal_payload():
    e = env(payload=b"\xab" * MAX_PAYLOAD)
    assert Envelope.decode(e.encode()) == e


def test_envelope_rejects_oversize_and_garbage():
    with pytest.raises(ValueError):
        env(payload=b"x" * (MAX_PAYLOAD + 1)).encode()
    with pytest.raises(ValueError):
        Envelope.decode(b"short")
    with pytest.raises(ValueError):
        Envelope.decode(env().encode() + b"extra")
    with pytest.raises(ValueError):
        Envelope(b"bad", instance_id("x"), 1, 1, 2, 0, b"").encode()


def test_instance_id_deterministic():
    assert instance_id("train/inv") == instance_id("train/inv")
    assert instance_id("a") != instance_id("b")
    assert len(instance_id("z")) == 8


def test_matrix_payload_round_trip():
    rng = random.Random(1)
    mats = [random_matrix((3, 2), PARAMS.q, rng), random_matrix((1, 5), PARAMS.q, rng)]
    blob = encode_matrices(mats, PARAMS)
    back = decode_matrices(blob, PARAMS)
    assert len(back) == 2
    assert np.array_equal(back[0], mats[0])
    assert np.array_equal(back[1], mats[1])


def test_matrix_payload_validation():
    blob = encode_matrices([np.array([[PARAMS.q - 1]], dtype=object)], PARAMS)
    with pytest.raises(ValueError):
        decode_matrices(blob + b"junk", PARAMS)
    bad = np.array([[PARAMS.q]], dtype=object)  # not reduced
    with pytest.raises(ValueError):
        decode_matrices(encode_matrices([bad], PARAMS), PARAMS)


def test_payload_crypto_round_trip_and_tamper():
    crypto = PayloadCrypto(b"\x07" * 32, SESSION)
    e = env(payload=b"secret fragment bytes")
    sealed = crypto.seal(e)
    assert sealed.payload != e.payload
    assert crypto.open(sealed) == e
    # header is bound: changing the sender breaks authentication
    forged = Envelope(sealed.session_id, sealed.instance_id, sealed.round_no,
                      9, sealed.recipient, sealed.kind, sealed.payload)
    with pytest.raises(Exception):
        crypto.open(forged)
    # a different pair key cannot open it either
    other = PayloadCrypto(b"\x08" * 32, SESSION)
    with pytest.raises(Exception):
        other.open(sealed)


def test_control_messages_stay_clear():
    crypto = PayloadCrypto(b"\x07" * 32, SESSION)
    reg = env(kind=Kind.CONTROL, payload=bytes([Control.REGISTER]))
    assert crypto.seal(reg) == reg


def test_broadcast_crypto_uses_group_key():
    crypto = PayloadCrypto(b"\x07" * 32, SESSION)
    e = env(recipient=BROADCAST, payload=b"masked opening")
    assert crypto.open(crypto.seal(e)) == e


def loopback_pair(expected=(1, 2, 3)):
    hub = LoopbackHub(expected)
    chans = {pid: hub.connect(pid, SESSION, timeout=2.0) for pid in expected}
    return hub, chans


def test_loopback_broadcast_excludes_sender_and_nonparties():
    hub, chans = loopback_pair()
    client = hub.connect(CLIENT_ID, SESSION, timeout=2.0)
    inst = instance_id("round")
    chans[1].send(inst, 1, BROADCAST, Kind.OPEN, b"frag1")
    for pid in (2, 3):
        got = chans[pid].recv_one(inst, 1, 1)
        assert got.payload == b"frag1"
    with pytest.raises(MissingMessage):
        client.recv_one(inst, 1, 1, timeout=0.2)
    with pytest.raises(MissingMessage):
        chans[1].recv_one(inst, 1, 1, timeout=0.2)


def test_loopback_buffers_for_late_registration():
    hub = LoopbackHub((1, 2))
    c1 = hub.connect(1, SESSION, timeout=2.0)
    inst = instance_id("early")
    c1.send(inst, 1, BROADCAST, Kind.OPEN, b"pre")
    c1.send(inst, 1, 2, Kind.INPUT_SHARE, b"direct")
    c2 = hub.connect(2, SESSION, timeout=2.0)
    assert c2.recv_one(inst, 1, 1).payload == b"pre"
    # same (instance, round, sender) from a second kind was dropped as a
    # duplicate, so resend under a different instance
    inst2 = instance_id("early2")
    c1.send(inst2, 1, 2, Kind.INPUT_SHARE, b"direct")
    assert c2.recv_one(inst2, 1, 1).payload == b"direct"


def test_duplicate_and_late_deliveries_dropped(caplog):
    hub, chans = loopback_pair((1, 2))
    inst = instance_id("dups")
    chans[1].send(inst, 1, 2, Kind.OPEN, b"first")
    chans[1].send(inst, 1, 2, Kind.OPEN, b"second")  # duplicate
    got = chans[2].recv_one(inst, 1, 1)
    assert got.payload == b"first"
    chans[1].send(inst, 1, 2, Kind.OPEN, b"late")  # round already closed
    with pytest.raises(MissingMessage):
        chans[2].recv_one(inst, 2, 1, timeout=0.2)


def test_timeout_names_missing_sender():
    hub, chans = loopback_pair((1, 2, 3))
    inst = instance_id("quiet")
    chans[1].send(inst, 4, BROADCAST, Kind.OPEN, b"only one")
    with pytest.raises(MissingMessage) as err:
        chans[3].recv_round(inst, 4, [1, 2], timeout=0.3)
    msg = str(err.value)
    assert "[2]" in msg and "round 4" in msg and inst.hex() in msg


def test_transcript_records_plaintext_digests():
    secret = b"\x05" * 32
    hub = LoopbackHub((1, 2))
    t1, t2 = Transcript(), Transcript()
    c1 = hub.connect(1, SESSION, crypto=PayloadCrypto(secret, SESSION),
                     transcript=t1, timeout=2.0)
    c2 = hub.connect(2, SESSION, crypto=PayloadCrypto(secret, SESSION),
                     transcript=t2, timeout=2.0)
    inst = instance_id("t")
    c1.send(inst, 1, 2, Kind.OPEN, b"payload bytes")
    c2.recv_one(inst, 1, 1)
    sent = [r for r in t1.records if r["type"] == "message"][0]
    got = [r for r in t2.records if r["type"] == "message"][0]
    assert sent["payload_sha256"] == got["payload_sha256"]
    assert sent["dir"] == "send" and got["dir"] == "recv"


def test_ti_distribution_over_loopback():
    group = (1, 2)
    hub = LoopbackHub(group)
    chans = {pid: hub.connect(pid, SESSION, timeout=2.0) for pid in group}
    ti = hub.connect(TI_ID, SESSION, timeout=2.0)
    bundles = generate(Requirements({(2, 2, 2): 1}, 3), SESSION, group,
                       PARAMS, rng=random.Random(0))
    ti_distribute(ti, bundles)
    for pid in group:
        got = receive_bundle(chans[pid])
        assert got.serialize() == bundles[pid - 1].serialize()


def run_tcp_session(tmp_path, encrypt=True):
    parties = (1, 2, 3)
    stats_path = tmp_path / "ba-stats.json"
    ba = BAServer("127.0.0.1", 0, parties, stats_path=stats_path).start()
    secret = os.urandom(32)
    crypto = (lambda: PayloadCrypto(secret, SESSION)) if encrypt else (lambda: None)
    chans = {
        pid: TcpChannel("127.0.0.1", ba.port, pid, SESSION, crypto=crypto(),
                        timeout=5.0)
        for pid in parties
    }
    client = TcpChannel("127.0.0.1", ba.port, CLIENT_ID, SESSION,
                        crypto=crypto(), timeout=5.0)
    inst = instance_id("tcp-round")
    for pid in parties:
        chans[pid].send(inst, 1, BROADCAST, Kind.OPEN, f"frag{pid}".encode())
    for pid in parties:
        others = [p for p in parties if p != pid]
        got = chans[pid].recv_round(inst, 1, others)
        assert {s: e.payload for s, e in got.items()} == {
            p: f"frag{p}".encode() for p in others
        }
    # addressed traffic party -> client
    inst2 = instance_id("tcp-result")
    for pid in parties:
        chans[pid].send(inst2, 1, CLIENT_ID, Kind.PREDICTION, b"y%d" % pid)
    got = client.recv_round(inst2, 1, parties)
    assert sorted(got) == list(parties)
    for ch in list(chans.values()) + [client]:
        ch.close()
    assert ba.wait(5.0)
    return ba, stats_path


def test_tcp_session_encrypted(tmp_path):
    ba, stats_path = run_tcp_session(tmp_path, encrypt=True)
    assert ba.peak_sockets <= len((1, 2, 3)) + 3
    import json

    stats = json.loads(stats_path.read_text())
    assert stats["peak_sockets"] == ba.peak_sockets
    assert stats["messages"] > 0 and stats["bytes"] > 0


def test_tcp_session_plaintext(tmp_path):
    run_tcp_session(tmp_path, encrypt=False)


def test_tcp_buffered_delivery_before_registration(tmp_path):
    parties = (1, 2)
    ba = BAServer("127.0.0.1", 0, parties).start()
    c1 = TcpChannel("127.0.0.1", ba.port, 1, SESSION, timeout=5.0)
    inst = instance_id("early-tcp")
    c1.send(inst, 1, 2, Kind.INPUT_SHARE, b"held")
    c1.send(inst, 1, BROADCAST, Kind.OPEN, b"held-bcast")
    c2 = TcpChannel("127.0.0.1", ba.port, 2, SESSION, timeout=5.0)
    assert c2.recv_one(inst, 1, 1).payload == b"held"
    c1.close()
    c2.close()
    ba.stop()


def test_roster_round_trip(tmp_path):
    roster = SessionRoster(
        session_id=bytes(range(16)),
        scenario="tc-lr",
        ba_host="127.0.0.1",
        ba_port=4321,
        party_ids=(1, 2, 3, 4),
        params=PARAMS,
        kappa=7,
        secret=b"\x01" * 32,
        encrypt=True,
        timeout=30.0,
        extra={"k": "5", "rows": "100"},
    )
    path = tmp_path / "roster.ini"
    roster.save(path)
    back = SessionRoster.load(path)
    assert back == roster
    text = path.read_text()
    assert "[session]" in text and "[field]" in text and "[parties]" in text


def test_roster_defaults(tmp_path):
    path = tmp_path / "r.ini"
    SessionRoster(bytes(16), "ti-lr", "h", 1, (1, 2), PARAMS, 0).save(path)
    back = SessionRoster.load(path)
    assert back.encrypt is True
    assert back.timeout == DEFAULT_TIMEOUT
    with pytest.raises(ValueError):
        back.crypto()  # encryption on but no secret
