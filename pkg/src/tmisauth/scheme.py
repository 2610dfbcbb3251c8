"""Registration, login and authentication phases of the smart-card scheme.

The functions here reproduce the protocol as published, flaws included:

* ``card_login`` performs no local check of the typed identity or password;
* the server keeps no replay cache, only a freshness window;
* ``h(x)`` is folded into every card's ``e`` value, so any registered user
  can unmask it.

Naming follows the protocol symbols loosely: ``rpw`` is h(r || PW), ``j`` is
the per-user secret h(x || ID || N), ``mask`` is the card's view of h(x).
"""

from __future__ import annotations

import enum
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from .primitives import DEFAULT_SUITE, Block, DecodeError, PrimitiveError, Suite, xor

DEFAULT_FRESHNESS_WINDOW = 60


class Reason(str, enum.Enum):
    STALE = "stale"
    TIMESTAMP_MISMATCH = "timestamp-mismatch"
    UNKNOWN_ID = "unknown-id"
    BAD_VERIFIER = "bad-verifier"
    # card side
    STALE_SERVER_TIMESTAMP = "stale-server-timestamp"
    VERIFIER_MISMATCH = "verifier-mismatch"


class Rejected(Exception):
    """A protocol party terminated the session."""

    def __init__(self, reason: Reason, detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)
        self.reason = reason
        self.detail = detail


class RegistrationError(ValueError):
    pass


def _n_bytes(n: int) -> bytes:
    return n.to_bytes(8, "big")


@dataclass(frozen=True)
class Credentials:
    id: str
    pw: str
    r: Block


@dataclass(frozen=True)
class RegistrationRequest:
    """What the user sends over the secure registration channel: <ID, RPW>."""

    id: str
    rpw: Block


@dataclass(frozen=True)
class CardContents:
    L: Block
    e: Block


@dataclass(frozen=True)
class SmartCard:
    L: Block
    e: Block
    r: Block
    suite: Suite = field(default=DEFAULT_SUITE, compare=False, repr=False)

    def to_json(self) -> dict[str, str]:
        return {"l_hex": self.L.hex(), "e_hex": self.e.hex(), "r_hex": self.r.hex()}

    @classmethod
    def from_json(cls, doc: dict[str, str], suite: Suite = DEFAULT_SUITE) -> "SmartCard":
        card = cls(bytes.fromhex(doc["l_hex"]), bytes.fromhex(doc["e_hex"]),
                   bytes.fromhex(doc["r_hex"]), suite)
        for name in ("L", "e", "r"):
            if len(getattr(card, name)) != suite.width:
                raise ValueError(f"card field {name} has wrong width")
        return card


@dataclass(frozen=True)
class LoginMessage:
    B1: Block
    C1: bytes

    def to_json(self) -> dict[str, str]:
        return {"b1_hex": self.B1.hex(), "c1_hex": self.C1.hex()}

    @classmethod
    def from_json(cls, doc: dict[str, str]) -> "LoginMessage":
        return cls(bytes.fromhex(doc["b1_hex"]), bytes.fromhex(doc["c1_hex"]))


@dataclass(frozen=True)
class ServerResponse:
    B2: Block
    C2: bytes

    def to_json(self) -> dict[str, str]:
        return {"b2_hex": self.B2.hex(), "c2_hex": self.C2.hex()}

    @classmethod
    def from_json(cls, doc: dict[str, str]) -> "ServerResponse":
        return cls(bytes.fromhex(doc["b2_hex"]), bytes.fromhex(doc["c2_hex"]))


@dataclass(frozen=True)
class SessionRecord:
    sk: Block
    peer_id: str
    t_user: int
    t_server: int


@dataclass(frozen=True)
class PendingLogin:
    """State the card keeps between sending <B1, C1> and receiving <B2, C2>."""

    id: str
    t_user: int
    mask: Block
    j: Block
    v: Block


@dataclass
class ServerState:
    master_key: bytes
    registry: dict[str, int] = field(default_factory=dict)
    freshness_window: int = DEFAULT_FRESHNESS_WINDOW
    suite: Suite = DEFAULT_SUITE
    # operation counts for flood-cost accounting; not persisted
    work: Counter = field(default_factory=Counter, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.master_key:
            raise ValueError("master key must be non-empty")
        if self.freshness_window < 0:
            raise ValueError("freshness window must be non-negative")
        self._hx = self.suite.hash(self.master_key)

    @property
    def hx(self) -> Block:
        return self._hx

    @classmethod
    def generate(cls, rng: random.Random, suite: Suite = DEFAULT_SUITE,
                 freshness_window: int = DEFAULT_FRESHNESS_WINDOW) -> "ServerState":
        return cls(rng.randbytes(suite.width), freshness_window=freshness_window, suite=suite)

    def to_json(self) -> dict[str, Any]:
        return {
            "master_key_hex": self.master_key.hex(),
            "registry": [{"id": k, "N": v} for k, v in self.registry.items()],
            "freshness_window": self.freshness_window,
            "hash_algorithm": self.suite.algorithm,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "ServerState":
        suite = Suite(doc.get("hash_algorithm", DEFAULT_SUITE.algorithm))
        registry: dict[str, int] = {}
        for entry in doc["registry"]:
            if entry["id"] in registry:
                raise ValueError(f"duplicate registry id {entry['id']!r}")
            if int(entry["N"]) < 0:
                raise ValueError("registration counter must be non-negative")
            registry[entry["id"]] = int(entry["N"])
        return cls(bytes.fromhex(doc["master_key_hex"]), registry,
                   int(doc["freshness_window"]), suite)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


# -- registration ------------------------------------------------------------

def register_request(id: str, pw: str, rng: random.Random,
                     suite: Suite = DEFAULT_SUITE) -> tuple[Credentials, RegistrationRequest]:
    suite.encode_id(id)  # validates
    if not pw:
        raise RegistrationError("password must be non-empty")
    r = rng.randbytes(suite.width)
    rpw = suite.hash_fields(r, pw)
    return Credentials(id, pw, r), RegistrationRequest(id, rpw)


def compute_j(state: ServerState, id: str, n: int) -> Block:
    return state.suite.hash_fields(state.master_key, id, _n_bytes(n))


def server_register(state: ServerState, id: str, rpw: Block) -> CardContents:
    suite = state.suite
    try:
        suite.encode_id(id)
    except PrimitiveError as exc:
        raise RegistrationError(f"invalid identity: {exc}") from exc
    if len(rpw) != suite.width:
        raise RegistrationError("RPW has wrong width")
    n = state.registry[id] + 1 if id in state.registry else 0
    j = compute_j(state, id, n)
    card = CardContents(L=xor(j, rpw), e=xor(state.hx, suite.hash_fields(rpw, id)))
    state.registry[id] = n
    return card


def finalize_card(contents: CardContents, r: Block, suite: Suite = DEFAULT_SUITE) -> SmartCard:
    return SmartCard(contents.L, contents.e, r, suite)


def register_user(state: ServerState, id: str, pw: str,
                  rng: random.Random) -> tuple[Credentials, SmartCard]:
    """All three registration steps in one call."""
    creds, req = register_request(id, pw, rng, state.suite)
    contents = server_register(state, req.id, req.rpw)
    return creds, finalize_card(contents, creds.r, state.suite)


# -- login -------------------------------------------------------------------

def card_login(card: SmartCard, id: str, pw: str, now: int) -> tuple[LoginMessage, PendingLogin]:
    """Build <B1, C1> from whatever identity and password were typed.

    Nothing here checks the inputs against the card, so wrong values still
    produce a well-formed login message.
    """
    s = card.suite
    rpw = s.hash_fields(card.r, pw)
    j = xor(card.L, rpw)
    mask = xor(card.e, s.hash_fields(rpw, id))
    t_block = s.encode_timestamp(now)
    h_t = s.hash(t_block)
    aid = xor(mask, h_t, s.encode_id(id))
    b1 = xor(mask, t_block)
    v = s.hash_fields(t_block, j)
    c1 = s.encrypt(h_t, aid + t_block + v)
    return LoginMessage(b1, c1), PendingLogin(id, now, mask, j, v)


# -- authentication ----------------------------------------------------------

def _fresh(now: int, t: int, window: int) -> bool:
    return abs(now - t) <= window


def server_authenticate(state: ServerState, msg: LoginMessage,
                        now: int) -> tuple[ServerResponse, SessionRecord]:
    """Check a login message; raise :class:`Rejected` or answer with <B2, C2>."""
    s = state.suite
    work = state.work
    if len(msg.B1) != s.width or len(msg.C1) != 3 * s.width:
        raise Rejected(Reason.STALE, "malformed login message")

    work["xor"] += 1
    t_block = xor(msg.B1, state.hx)
    try:
        t_user = s.decode_timestamp(t_block)
    except DecodeError:
        raise Rejected(Reason.STALE, "B1 does not unmask to a timestamp") from None
    if not _fresh(now, t_user, state.freshness_window):
        raise Rejected(Reason.STALE, f"T={t_user} now={now}")

    work["hash"] += 1
    h_t = s.hash(t_block)
    work["decrypt"] += 1
    aid, t_inner, v = s.split_blocks(s.decrypt(h_t, msg.C1), 3)
    if t_inner != t_block:
        raise Rejected(Reason.TIMESTAMP_MISMATCH)

    work["xor"] += 1
    try:
        peer = s.decode_id(xor(aid, state.hx, h_t))
    except DecodeError:
        raise Rejected(Reason.UNKNOWN_ID, "AID does not unmask to an identity") from None
    if peer not in state.registry:
        raise Rejected(Reason.UNKNOWN_ID, peer)

    work["hash"] += 2
    j = compute_j(state, peer, state.registry[peer])
    if v != s.hash_fields(t_block, j):
        raise Rejected(Reason.BAD_VERIFIER, peer)

    work["hash"] += 2
    ts_block = s.encode_timestamp(now)
    b2 = xor(state.hx, ts_block)
    c2 = s.encrypt(s.hash(ts_block), v + ts_block)
    sk = s.hash_fields(j, t_block, ts_block, peer)
    return ServerResponse(b2, c2), SessionRecord(sk, peer, t_user, now)


def card_verify_server(card: SmartCard, pending: PendingLogin, resp: ServerResponse, now: int,
                       freshness_window: int = DEFAULT_FRESHNESS_WINDOW) -> SessionRecord:
    s = card.suite
    if len(resp.B2) != s.width or len(resp.C2) != 2 * s.width:
        raise Rejected(Reason.STALE_SERVER_TIMESTAMP, "malformed response")
    ts_block = xor(resp.B2, pending.mask)
    try:
        t_server = s.decode_timestamp(ts_block)
    except DecodeError:
        raise Rejected(Reason.STALE_SERVER_TIMESTAMP, "B2 does not unmask") from None
    if not _fresh(now, t_server, freshness_window):
        raise Rejected(Reason.STALE_SERVER_TIMESTAMP, f"Ts={t_server} now={now}")
    v2, ts_inner = s.split_blocks(s.decrypt(s.hash(ts_block), resp.C2), 2)
    if v2 != pending.v:
        raise Rejected(Reason.VERIFIER_MISMATCH)
    if ts_inner != ts_block:
        raise Rejected(Reason.TIMESTAMP_MISMATCH)
    t_block = s.encode_timestamp(pending.t_user)
    sk = s.hash_fields(pending.j, t_block, ts_block, pending.id)
    return SessionRecord(sk, pending.id, pending.t_user, t_server)
