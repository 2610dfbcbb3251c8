import dataclasses
import json
import random

import pytest

from tmisauth.primitives import DEFAULT_SUITE as S
from tmisauth.primitives import xor
from tmisauth.scheme import (
    LoginMessage,
    Reason,
    Rejected,
    RegistrationError,
    ServerResponse,
    ServerState,
    SmartCard,
    card_login,
    card_verify_server,
    compute_j,
    finalize_card,
    register_request,
    register_user,
    server_authenticate,
    server_register,
)


@pytest.fixture
def server():
    return ServerState(b"master-secret", freshness_window=60)


def flip(data: bytes, byte: int, mask: int = 1) -> bytes:
    raw = bytearray(data)
    raw[byte] ^= mask
    return bytes(raw)


def full_run(server, card, uid, pw, t=100):
    msg, pending = card_login(card, uid, pw, t)
    resp, srv = server_authenticate(server, msg, t + 1)
    cli = card_verify_server(card, pending, resp, t + 2, server.freshness_window)
    return msg, resp, srv, cli


# -- registration -------------------------------------------------------------

def test_register_request_is_seeded():
    c1, m1 = register_request("alice", "pw", random.Random(9))
    c2, m2 = register_request("alice", "pw", random.Random(9))
    assert c1 == c2 and m1 == m2
    assert m1.rpw == S.hash_fields(c1.r, "pw")


def test_registration_message_carries_only_id_and_rpw():
    creds, msg = register_request("alice", "secret-pw", random.Random(1))
    assert {f.name for f in dataclasses.fields(msg)} == {"id", "rpw"}
    assert creds.r not in msg.rpw and b"secret-pw" not in msg.rpw


def test_rpw_distinct_for_distinct_passwords():
    rng = random.Random(4)
    creds, msg = register_request("alice", "pw0", rng)
    seen = {msg.rpw}
    for i in range(1, 1000):
        seen.add(S.hash_fields(creds.r, f"pw{i}"))
    assert len(seen) == 1000


@pytest.mark.parametrize("uid,pw", [("", "pw"), ("x" * 33, "pw"), ("alice", "")])
def test_register_request_rejects_invalid(uid, pw):
    with pytest.raises(Exception):
        register_request(uid, pw, random.Random(0))


def test_server_register_new_user(server):
    creds, req = register_request("alice", "pw", random.Random(1))
    contents = server_register(server, req.id, req.rpw)
    assert server.registry["alice"] == 0
    assert xor(contents.L, req.rpw) == S.hash_fields(b"master-secret", "alice", bytes(8))
    assert contents.e == xor(S.hash(b"master-secret"), S.hash_fields(req.rpw, "alice"))


def test_reregistration_bumps_counter_and_invalidates_old_card(server):
    rng = random.Random(2)
    _, old = register_user(server, "alice", "pw", rng)
    _, new = register_user(server, "alice", "pw", rng)
    assert server.registry["alice"] == 1
    assert old.L != new.L
    full_run(server, new, "alice", "pw")
    msg, _ = card_login(old, "alice", "pw", 10)
    with pytest.raises(Rejected) as exc:
        server_authenticate(server, msg, 10)
    assert exc.value.reason is Reason.BAD_VERIFIER


def test_server_register_rejects_bad_id(server):
    with pytest.raises(RegistrationError):
        server_register(server, "", bytes(32))
    assert server.registry == {}


def test_card_holds_exactly_l_e_r(server):
    creds, req = register_request("alice", "pw", random.Random(3))
    card = finalize_card(server_register(server, req.id, req.rpw), creds.r)
    assert card.r == creds.r
    assert [f.name for f in dataclasses.fields(SmartCard)] == ["L", "e", "r", "suite"]
    assert set(card.to_json()) == {"l_hex", "e_hex", "r_hex"}


def test_cards_of_many_users_never_collide(server):
    rng = random.Random(5)
    seen = {"L": set(), "e": set(), "r": set()}
    for i in range(1000):
        _, card = register_user(server, f"u{i}", f"pw{i}", rng)
        for name in seen:
            seen[name].add(getattr(card, name))
    assert all(len(v) == 1000 for v in seen.values())


# -- login / authenticate ----------------------------------------------------

def test_honest_algebra(server):
    rng = random.Random(6)
    creds, card = register_user(server, "alice", "pw", rng)
    msg, pending = card_login(card, "alice", "pw", 1234)
    t_block = S.encode_timestamp(1234)
    rpw = S.hash_fields(creds.r, "pw")
    assert xor(msg.B1, server.hx) == t_block
    aid = S.decrypt(S.hash(t_block), msg.C1)[:32]
    assert xor(aid, server.hx, S.hash(t_block)) == S.encode_id("alice")
    assert xor(card.L, rpw) == compute_j(server, "alice", 0)
    assert pending.mask == server.hx


def test_full_run_agrees_on_session_key(server):
    _, card = register_user(server, "alice", "pw", random.Random(7))
    _, _, srv, cli = full_run(server, card, "alice", "pw", t=500)
    assert srv.sk == cli.sk
    assert srv.peer_id == cli.peer_id == "alice"
    assert (srv.t_user, srv.t_server) == (cli.t_user, cli.t_server) == (500, 501)
    j = compute_j(server, "alice", 0)
    assert srv.sk == S.hash_fields(j, S.encode_timestamp(500), S.encode_timestamp(501), "alice")


@pytest.mark.parametrize("bad", ["pw", "id"])
def test_wrong_input_still_emits_message_but_b1_is_off(server, bad):
    _, card = register_user(server, "alice", "pw", random.Random(8))
    uid, pw = ("alice", "wrong") if bad == "pw" else ("alicf", "pw")
    msg, _ = card_login(card, uid, pw, 77)
    assert len(msg.C1) == 3 * S.width
    assert msg.B1 != xor(server.hx, S.encode_timestamp(77))
    with pytest.raises(Rejected) as exc:
        server_authenticate(server, msg, 77)
    assert exc.value.reason in (Reason.STALE, Reason.TIMESTAMP_MISMATCH)


def test_card_login_never_validates_inputs(server):
    _, card = register_user(server, "alice", "pw", random.Random(9))
    for uid, pw in [("alice", "pw"), ("bob", "pw"), ("alice", "x"), ("zz", "zz")]:
        msg, _ = card_login(card, uid, pw, 0)
        assert isinstance(msg, LoginMessage)


def test_card_login_id_too_long(server):
    _, card = register_user(server, "alice", "pw", random.Random(9))
    with pytest.raises(Exception):
        card_login(card, "a" * 40, "pw", 0)


def test_stale_and_future_timestamps(server):
    _, card = register_user(server, "alice", "pw", random.Random(10))
    msg, _ = card_login(card, "alice", "pw", 100)
    server_authenticate(server, msg, 160)  # exactly at the window edge
    for now in (161, 39):
        with pytest.raises(Rejected) as exc:
            server_authenticate(server, msg, now)
        assert exc.value.reason is Reason.STALE


@pytest.mark.parametrize("byte,reason", [
    (0, Reason.UNKNOWN_ID),
    (S.width, Reason.TIMESTAMP_MISMATCH),
    (2 * S.width + 5, Reason.BAD_VERIFIER),
])
def test_rejection_reasons_for_c1_tamper(server, byte, reason):
    _, card = register_user(server, "alice", "pw", random.Random(11))
    msg, _ = card_login(card, "alice", "pw", 5)
    bad = LoginMessage(msg.B1, flip(msg.C1, byte, 0x80))
    with pytest.raises(Rejected) as exc:
        server_authenticate(server, bad, 5)
    assert exc.value.reason is reason


def test_unregistered_identity_rejected(server):
    rng = random.Random(12)
    _, card = register_user(server, "alice", "pw", rng)
    del server.registry["alice"]
    msg, _ = card_login(card, "alice", "pw", 5)
    with pytest.raises(Rejected) as exc:
        server_authenticate(server, msg, 5)
    assert exc.value.reason is Reason.UNKNOWN_ID


def test_card_rejects_tampered_response(server):
    _, card = register_user(server, "alice", "pw", random.Random(13))
    msg, pending = card_login(card, "alice", "pw", 5)
    resp, _ = server_authenticate(server, msg, 6)
    for byte, reason in [(0, Reason.VERIFIER_MISMATCH), (S.width + 1, Reason.TIMESTAMP_MISMATCH)]:
        with pytest.raises(Rejected) as exc:
            card_verify_server(card, pending, ServerResponse(resp.B2, flip(resp.C2, byte)), 7)
        assert exc.value.reason is reason
    with pytest.raises(Rejected) as exc:
        card_verify_server(card, pending, ServerResponse(flip(resp.B2, 0), resp.C2), 7)
    assert exc.value.reason is Reason.STALE_SERVER_TIMESTAMP
    with pytest.raises(Rejected) as exc:
        card_verify_server(card, pending, resp, 6 + 61)
    assert exc.value.reason is Reason.STALE_SERVER_TIMESTAMP


def test_response_replayed_to_next_login_rejected(server):
    _, card = register_user(server, "alice", "pw", random.Random(14))
    msg, _ = card_login(card, "alice", "pw", 5)
    old_resp, _ = server_authenticate(server, msg, 6)
    _, pending2 = card_login(card, "alice", "pw", 8)
    with pytest.raises(Rejected) as exc:
        card_verify_server(card, pending2, old_resp, 9)
    assert exc.value.reason is Reason.VERIFIER_MISMATCH


def test_wire_opacity(server):
    rng = random.Random(15)
    for i in range(50):
        uid, pw = f"patient{i}", f"hunter{i}"
        _, card = register_user(server, uid, pw, rng)
        msg, resp, _, _ = full_run(server, card, uid, pw, t=i)
        for blob in (msg.B1, msg.C1, resp.B2, resp.C2):
            assert uid.encode() not in blob and pw.encode() not in blob


def test_server_state_json_round_trip(server):
    register_user(server, "alice", "pw", random.Random(16))
    register_user(server, "alice", "pw", random.Random(17))
    doc = json.loads(server.dumps())
    assert doc["master_key_hex"] == b"master-secret".hex()
    assert doc["registry"] == [{"id": "alice", "N": 1}]
    assert doc["freshness_window"] == 60
    again = ServerState.from_json(doc)
    assert again.registry == server.registry and again.hx == server.hx


def test_wire_json_round_trip(server):
    _, card = register_user(server, "alice", "pw", random.Random(18))
    msg, resp, _, _ = full_run(server, card, "alice", "pw")
    assert set(msg.to_json()) == {"b1_hex", "c1_hex"}
    assert set(resp.to_json()) == {"b2_hex", "c2_hex"}
    assert LoginMessage.from_json(msg.to_json()) == msg
    assert ServerResponse.from_json(resp.to_json()) == resp
    assert SmartCard.from_json(card.to_json()) == card


def test_non_default_hash_suite():
    from tmisauth.primitives import Suite
    s = Suite("sha512")
    server = ServerState(b"k", suite=s)
    _, card = register_user(server, "alice", "pw", random.Random(19))
    assert len(card.L) == 64
    _, _, srv, cli = full_run(server, card, "alice", "pw")
    assert srv.sk == cli.sk and len(srv.sk) == 64


def test_no_hash_collisions_over_a_simulation():
    from tmisauth.primitives import Suite

    seen = {}

    class RecordingSuite(Suite):
        def hash(self, data):
            digest = super().hash(data)
            assert seen.setdefault(digest, data) == data, "hash collision"
            return digest

    s = RecordingSuite()
    server = ServerState(b"k", suite=s)
    rng = random.Random(20)
    cards = [register_user(server, f"u{i}", f"pw{i}", rng) for i in range(20)]
    for t in range(200):
        creds, card = cards[t % 20]
        full_run(server, card, creds.id, creds.pw, t=3 * t)
    assert len(seen) > 1000
