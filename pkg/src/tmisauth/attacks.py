"""Attacks on the scheme, driven purely from :class:`AdversaryKnowledge`.

``extract_master_digest``, ``guess_password`` and ``deanonymize`` never touch a
``ServerState`` or a victim's ``Credentials``; their inputs are what the
adversary can legitimately hold: its own registration, a read-out victim
card and recorded channel traffic. ``wrong_input_scenario`` and
``flood_cost_report`` exercise the login-phase flaw and therefore drive the
honest parties directly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .primitives import Block, DecodeError, Suite, xor
from .scheme import LoginMessage, Rejected, ServerState, SessionRecord, SmartCard
from .simnet import AdversaryKnowledge, Channel, SimClock, User, outcome_label, run_session

PW_GUESS = "pw-guess"
DEANONYMIZE = "deanonymize"
WRONG_INPUT = "wrong-input"
FLOOD = "flood"

WRONG_PASSWORD = "wrong-password"
WRONG_IDENTITY = "wrong-identity"
CORRECT = "correct"


class AttackError(RuntimeError):
    pass


@dataclass
class AttackVerdict:
    kind: str
    success: bool
    recovered: Optional[str] = None
    work: int = 0
    transcript: list[int] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.success and self.recovered is None and self.kind in (PW_GUESS, DEANONYMIZE):
            raise ValueError("a successful verdict must carry the recovered value")

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


class Dictionary:
    """Ordered, duplicate-free list of candidate passwords."""

    def __init__(self, entries: Iterable[str]):
        self.entries = tuple(entries)
        if not self.entries:
            raise ValueError("dictionary is empty")
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("dictionary entries must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @classmethod
    def from_file(cls, path: str | Path) -> "Dictionary":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        for n, line in enumerate(lines, 1):
            if not line:
                raise ValueError(f"{path}:{n}: blank line in dictionary")
        return cls(lines)

    def write(self, path: str | Path) -> None:
        Path(path).write_text("".join(e + "\n" for e in self.entries), encoding="utf-8")


def extract_master_digest(know: AdversaryKnowledge) -> Block:
    """Unmask h(x) from the adversary's own card: e_E xor h(h(r_E || PW_E) || ID_E)."""
    if know.own_creds is None or know.own_card is None:
        raise AttackError("adversary has not registered")
    s = know.suite
    creds, card = know.own_creds, know.own_card
    rpw = s.hash_fields(card.r, creds.pw)
    know.derived_hx = xor(card.e, s.hash_fields(rpw, creds.id))
    return know.derived_hx


def _open_login(suite: Suite, hx: Block, msg: LoginMessage) -> tuple[Block, Block, Block, Block]:
    """Unmask B1 with h(x) and decrypt C1; returns (T-block, h(T), AID, V)."""
    t_block = xor(msg.B1, hx)
    suite.decode_timestamp(t_block)
    h_t = suite.hash(t_block)
    aid, _, v = suite.split_blocks(suite.decrypt(h_t, msg.C1), 3)
    return t_block, h_t, aid, v


def _require_hx(know: AdversaryKnowledge) -> Block:
    if know.derived_hx is None:
        raise AttackError("h(x) has not been derived yet")
    return know.derived_hx


def guess_password(know: AdversaryKnowledge, victim_card: SmartCard, msg: LoginMessage,
                   dictionary: Sequence[str], *, exhaustive: bool = False,
                   session_id: Optional[int] = None) -> AttackVerdict:
    """Offline dictionary attack on one recorded login.

    T and the decryption of C1 do not depend on the guess, so they are
    computed once. With ``exhaustive`` the whole dictionary is scanned and
    every verifier hit is reported in ``details["hits"]`` (1-based).
    """
    s = know.suite
    hx = _require_hx(know)
    try:
        t_block, _, _, v = _open_login(s, hx, msg)
    except DecodeError as exc:
        raise AttackError(f"B1 does not unmask to a timestamp: {exc}") from None

    hits: list[int] = []
    recovered = None
    work = 0
    for pos, guess in enumerate(dictionary, 1):
        work = pos
        rpw = s.hash_fields(victim_card.r, guess)
        j = xor(victim_card.L, rpw)
        if s.hash_fields(t_block, j) == v:
            hits.append(pos)
            if recovered is None:
                recovered = guess
            if not exhaustive:
                break
    transcript = [] if session_id is None else [session_id]
    return AttackVerdict(PW_GUESS, recovered is not None, recovered, work, transcript,
                         {"hits": hits, "timestamp": s.decode_timestamp(t_block)})


def deanonymize(know: AdversaryKnowledge, msg: LoginMessage,
                session_id: Optional[int] = None) -> AttackVerdict:
    s = know.suite
    hx = _require_hx(know)
    transcript = [] if session_id is None else [session_id]
    try:
        t_block, h_t, aid, _ = _open_login(s, hx, msg)
    except DecodeError:
        return AttackVerdict(DEANONYMIZE, False, None, 1, transcript,
                             {"error": "timestamp decode failed"})
    try:
        identity = s.decode_id(xor(aid, hx, h_t))
    except DecodeError:
        return AttackVerdict(DEANONYMIZE, False, None, 1, transcript,
                             {"error": "identity decode failed"})
    return AttackVerdict(DEANONYMIZE, True, identity, 1, transcript,
                         {"timestamp": s.decode_timestamp(t_block)})


def deanonymize_all(know: AdversaryKnowledge) -> list[AttackVerdict]:
    return [deanonymize(know, ev.payload, ev.session_id) for ev in know.logins()]


def linkability_groups(verdicts: Iterable[AttackVerdict]) -> dict[str, list[int]]:
    """Group session ids by recovered identity."""
    groups: dict[str, list[int]] = {}
    for v in verdicts:
        if v.success:
            groups.setdefault(v.recovered, []).extend(v.transcript)
    return {k: sorted(vs) for k, vs in sorted(groups.items())}


def mistype(value: str, limit: int) -> str:
    """A deterministic typo that stays within ``limit`` UTF-8 bytes."""
    typo = value + "!"
    if len(typo.encode("utf-8")) > limit:
        typo = value[:-1] + ("?" if value.endswith("!") else "!")
    return typo


def wrong_input_scenario(user: User, server: ServerState, channel: Channel, clock: SimClock,
                         mode: str) -> AttackVerdict:
    """Log in with a mistyped password or identity and observe both ends.

    Success means the flaw was reproduced: the card emitted a login message
    and the server turned it down. In ``correct`` mode (the control) success
    means the server accepted.
    """
    typed_id, typed_pw = user.id, user.creds.pw
    if mode == WRONG_PASSWORD:
        typed_pw = mistype(typed_pw, 1 << 30)
    elif mode == WRONG_IDENTITY:
        typed_id = mistype(typed_id, user.card.suite.width)
    elif mode != CORRECT:
        raise ValueError(f"unknown mode {mode!r}")

    out = run_session(user, server, channel, clock, typed_id=typed_id, typed_pw=typed_pw)
    emitted = out.login is not None
    rejected = isinstance(out.server, Rejected)
    if mode == CORRECT:
        success = emitted and isinstance(out.server, SessionRecord)
    else:
        success = emitted and rejected
    details = {
        "mode": mode,
        "message_emitted": emitted,
        "server_outcome": outcome_label(out.server),
    }
    return AttackVerdict(WRONG_INPUT, success, None, 1, [out.session_id], details)


def flood_cost_report(user: User, server: ServerState, channel: Channel, clock: SimClock,
                      n: int, mode: str = WRONG_PASSWORD) -> dict:
    """Send ``n`` wrong-input logins and count what they cost the server."""
    before = sum(server.work.values())
    sent = rejections = 0
    for _ in range(n):
        v = wrong_input_scenario(user, server, channel, clock, mode)
        sent += v.details["message_emitted"]
        rejections += v.details["server_outcome"].startswith("rejected")
    return {
        "messages_sent": sent,
        "server_rejections": rejections,
        "server_work_units": sum(server.work.values()) - before,
    }
