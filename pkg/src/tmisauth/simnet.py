"""Deterministic public channel, tamper policies and the adversary's view.

The channel carries exactly the wire pairs <B1, C1> and <B2, C2>. Session ids
are bookkeeping for the harness and never appear on the wire. An adversary
is modelled as an :class:`AdversaryKnowledge` record that only grows through
the capabilities the threat model grants: reading the channel, reading a
card, and registering like any other user.
"""

from __future__ import annotations

import dataclasses
import io
import json
import random
from dataclasses import dataclass, field
from typing import IO, Any, Iterable, Iterator, Optional, Union

from .primitives import Suite
from .scheme import (
    Credentials,
    LoginMessage,
    PendingLogin,
    Rejected,
    ServerResponse,
    ServerState,
    SessionRecord,
    SmartCard,
    card_login,
    card_verify_server,
    register_user,
    server_authenticate,
)

TRACE_SCHEMA = "tmisauth.trace"
TRACE_VERSION = 1

TO_SERVER = "user->server"
TO_USER = "server->user"

Payload = Union[LoginMessage, ServerResponse]


class TraceFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class SimClock:
    tick: int = 0
    step: int = 1

    def advance(self, n: Optional[int] = None) -> int:
        n = self.step if n is None else n
        if n < 0:
            raise ValueError("clock cannot run backwards")
        self.tick += n
        return self.tick


@dataclass(frozen=True)
class TraceEvent:
    tick: int
    direction: str
    session_id: int
    payload: Payload
    outcome: str
    delivered_tick: Optional[int] = None

    def to_json(self) -> dict[str, Any]:
        return {
            "tick": self.tick,
            "direction": self.direction,
            "session_id": self.session_id,
            "payload": self.payload.to_json(),
            "outcome": self.outcome,
            "delivered_tick": self.delivered_tick,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "TraceEvent":
        direction = doc["direction"]
        if direction == TO_SERVER:
            payload: Payload = LoginMessage.from_json(doc["payload"])
        elif direction == TO_USER:
            payload = ServerResponse.from_json(doc["payload"])
        else:
            raise ValueError(f"unknown direction {direction!r}")
        return cls(int(doc["tick"]), direction, int(doc["session_id"]), payload,
                   str(doc["outcome"]), doc.get("delivered_tick"))


def outcome_label(result: Union[SessionRecord, Rejected, None]) -> str:
    if result is None:
        return "in-flight"
    if isinstance(result, Rejected):
        return f"rejected:{result.reason.value}"
    return "accepted"


def dump_trace(events: Iterable[TraceEvent], fp: IO[str]) -> None:
    fp.write(json.dumps({"schema": TRACE_SCHEMA, "version": TRACE_VERSION}) + "\n")
    for ev in events:
        fp.write(json.dumps(ev.to_json(), sort_keys=True) + "\n")


def load_trace(fp: IO[str]) -> list[TraceEvent]:
    events = []
    header_seen = False
    for lineno, line in enumerate(fp, 1):
        if not line.strip():
            raise TraceFormatError(lineno, "blank line")
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(lineno, f"invalid JSON: {exc.msg}") from None
        if not header_seen:
            if doc.get("schema") != TRACE_SCHEMA:
                raise TraceFormatError(lineno, "missing trace header")
            if doc.get("version") != TRACE_VERSION:
                raise TraceFormatError(lineno, f"unsupported version {doc.get('version')!r}")
            header_seen = True
            continue
        try:
            events.append(TraceEvent.from_json(doc))
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceFormatError(lineno, f"bad event: {exc}") from None
    if not header_seen:
        raise TraceFormatError(1, "empty file, no trace header")
    return events


# -- tamper policies ---------------------------------------------------------

@dataclass(frozen=True)
class Drop:
    pass


@dataclass(frozen=True)
class Delay:
    ticks: int


@dataclass(frozen=True)
class FlipBit:
    field: str  # "B1"/"C1" or "B2"/"C2"
    bit: int

    def apply(self, payload: Payload) -> Payload:
        raw = bytearray(getattr(payload, self.field))
        if not 0 <= self.bit < 8 * len(raw):
            raise ValueError(f"bit offset {self.bit} outside {self.field}")
        raw[self.bit // 8] ^= 0x80 >> (self.bit % 8)
        return dataclasses.replace(payload, **{self.field: bytes(raw)})


@dataclass(frozen=True)
class Replace:
    payload: Payload


@dataclass(frozen=True)
class Reroute:
    """Deliver to a different principal (a server, for the login direction)."""

    target: Any


Action = Union[Drop, Delay, FlipBit, Replace, Reroute]


@dataclass(frozen=True)
class TamperPolicy:
    to_server: tuple[Action, ...] = ()
    to_user: tuple[Action, ...] = ()

    @classmethod
    def parse(cls, spec: str) -> "TamperPolicy":
        """Parse the CLI form: ``drop:login``, ``delay:response:120``, ``flip-bit:c1:0``."""
        parts = spec.split(":")
        kind = parts[0]
        try:
            if kind == "drop" and len(parts) == 2:
                return cls._for(parts[1], Drop())
            if kind == "delay" and len(parts) == 3:
                return cls._for(parts[1], Delay(int(parts[2])))
            if kind == "flip-bit" and len(parts) == 3:
                name = parts[1].upper()
                if name not in ("B1", "C1", "B2", "C2"):
                    raise ValueError(f"unknown field {parts[1]!r}")
                direction = "login" if name in ("B1", "C1") else "response"
                return cls._for(direction, FlipBit(name, int(parts[2])))
        except ValueError as exc:
            raise ValueError(f"bad tamper policy {spec!r}: {exc}") from None
        raise ValueError(f"bad tamper policy {spec!r}")

    @classmethod
    def _for(cls, direction: str, action: Action) -> "TamperPolicy":
        if direction == "login":
            return cls(to_server=(action,))
        if direction == "response":
            return cls(to_user=(action,))
        raise ValueError(f"unknown direction {direction!r}")


NO_TAMPER = TamperPolicy()


def _apply(actions: Iterable[Action], payload: Payload, default_target: Any):
    """Return (payload or None if dropped, extra delay, delivery target)."""
    delay = 0
    target = default_target
    for act in actions:
        if isinstance(act, Drop):
            return None, delay, target
        if isinstance(act, Delay):
            delay += act.ticks
        elif isinstance(act, FlipBit):
            payload = act.apply(payload)
        elif isinstance(act, Replace):
            payload = act.payload
        elif isinstance(act, Reroute):
            target = act.target
    return payload, delay, target


# -- channel and sessions ----------------------------------------------------

@dataclass
class User:
    creds: Credentials
    card: SmartCard

    @property
    def id(self) -> str:
        return self.creds.id


@dataclass
class Channel:
    events: list[TraceEvent] = field(default_factory=list)
    next_session: int = 0

    def new_session(self) -> int:
        sid = self.next_session
        self.next_session += 1
        return sid

    def dump(self, fp: IO[str]) -> None:
        dump_trace(self.events, fp)

    def dumps(self) -> str:
        buf = io.StringIO()
        self.dump(buf)
        return buf.getvalue()


@dataclass
class SessionOutcome:
    session_id: int
    login: Optional[LoginMessage]
    response: Optional[ServerResponse]
    server: Union[SessionRecord, Rejected, None]
    card: Union[SessionRecord, Rejected, None]

    @property
    def accepted(self) -> bool:
        return isinstance(self.server, SessionRecord) and isinstance(self.card, SessionRecord)

    @property
    def keys_agree(self) -> bool:
        return self.accepted and self.server.sk == self.card.sk


def run_session(user: User, server: ServerState, channel: Channel, clock: SimClock,
                policy: TamperPolicy = NO_TAMPER, *, typed_id: Optional[str] = None,
                typed_pw: Optional[str] = None) -> SessionOutcome:
    """One login/authenticate/verify round trip over the channel.

    ``typed_id``/``typed_pw`` stand in for what the user keys into the card
    reader; they default to the user's real credentials.
    """
    sid = channel.new_session()
    id_in = user.id if typed_id is None else typed_id
    pw_in = user.creds.pw if typed_pw is None else typed_pw

    sent_at = clock.tick
    login, pending = card_login(user.card, id_in, pw_in, sent_at)
    delivered, delay, target = _apply(policy.to_server, login, server)
    if delivered is None:
        channel.events.append(TraceEvent(sent_at, TO_SERVER, sid, login, "in-flight"))
        clock.advance()
        return SessionOutcome(sid, login, None, None, None)

    now = clock.advance(clock.step + delay)
    try:
        response, record = server_authenticate(target, delivered, now)
        server_result: Union[SessionRecord, Rejected] = record
    except Rejected as exc:
        response, server_result = None, exc
    # the trace records what the server actually received
    channel.events.append(TraceEvent(sent_at, TO_SERVER, sid, delivered,
                                     outcome_label(server_result), now))
    if response is None:
        return SessionOutcome(sid, delivered, None, server_result, None)

    return _deliver_response(user.card, pending, response, target.freshness_window,
                             channel, clock, policy, sid, delivered, server_result)


def _deliver_response(card, pending: PendingLogin, response: ServerResponse, window: int,
                      channel: Channel, clock: SimClock, policy: TamperPolicy, sid: int,
                      login: LoginMessage, server_result) -> SessionOutcome:
    sent_at = clock.tick
    delivered, delay, _ = _apply(policy.to_user, response, None)
    if delivered is None:
        channel.events.append(TraceEvent(sent_at, TO_USER, sid, response, "in-flight"))
        clock.advance()
        return SessionOutcome(sid, login, response, server_result, None)
    now = clock.advance(clock.step + delay)
    try:
        card_result: Union[SessionRecord, Rejected] = card_verify_server(
            card, pending, delivered, now, window)
    except Rejected as exc:
        card_result = exc
    channel.events.append(TraceEvent(sent_at, TO_USER, sid, delivered,
                                     outcome_label(card_result), now))
    return SessionOutcome(sid, login, delivered, server_result, card_result)


def inject_login(server: ServerState, msg: LoginMessage, channel: Channel,
                 clock: SimClock) -> SessionOutcome:
    """Adversary sends a (recorded or forged) login message to the server."""
    sid = channel.new_session()
    sent_at = clock.tick
    now = clock.advance()
    try:
        response, result = server_authenticate(server, msg, now)
    except Rejected as exc:
        response, result = None, exc
    channel.events.append(TraceEvent(sent_at, TO_SERVER, sid, msg, outcome_label(result), now))
    if response is not None:
        # nobody holds the pending state, so the response is never verified
        channel.events.append(TraceEvent(now, TO_USER, sid, response, "in-flight"))
    return SessionOutcome(sid, msg, response, result, None)


def replay_response(card: SmartCard, pending: PendingLogin, response: ServerResponse,
                    clock: SimClock, freshness_window: int) -> Union[SessionRecord, Rejected]:
    try:
        return card_verify_server(card, pending, response, clock.advance(), freshness_window)
    except Rejected as exc:
        return exc


# -- adversary ---------------------------------------------------------------

@dataclass
class AdversaryKnowledge:
    suite: Suite
    extracted_cards: dict[str, SmartCard] = field(default_factory=dict)
    intercepted: list[TraceEvent] = field(default_factory=list)
    own_creds: Optional[Credentials] = None
    own_card: Optional[SmartCard] = None
    derived_hx: Optional[bytes] = None

    def logins(self) -> Iterator[TraceEvent]:
        return (ev for ev in self.intercepted if ev.direction == TO_SERVER)

    def responses(self) -> Iterator[TraceEvent]:
        return (ev for ev in self.intercepted if ev.direction == TO_USER)


def eavesdrop(events: Iterable[TraceEvent], know: AdversaryKnowledge) -> int:
    before = len(know.intercepted)
    know.intercepted.extend(events)
    return len(know.intercepted) - before


def extract_card(card: SmartCard, know: AdversaryKnowledge, label: str) -> SmartCard:
    copy = SmartCard(bytes(card.L), bytes(card.e), bytes(card.r), card.suite)
    know.extracted_cards[label] = copy
    return copy


def adversary_register(server: ServerState, id_e: str, pw_e: str, rng: random.Random,
                       know: AdversaryKnowledge) -> User:
    creds, card = register_user(server, id_e, pw_e, rng)
    know.own_creds = creds
    know.own_card = card
    return User(creds, card)
