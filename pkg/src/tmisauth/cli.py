"""Command-line harness: ``register``, ``session``, ``attack`` and ``report``.

Exit status: 0 for the expected outcome, 1 for an unexpected verdict,
2 for usage, configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional
from urllib.parse import quote

from . import attacks
from .primitives import PrimitiveError, Suite
from .scheme import (
    DEFAULT_FRESHNESS_WINDOW,
    Credentials,
    RegistrationError,
    ServerState,
    SmartCard,
    register_user,
)
from .simnet import (
    TO_SERVER,
    TO_USER,
    AdversaryKnowledge,
    Channel,
    SimClock,
    TamperPolicy,
    TraceFormatError,
    User,
    eavesdrop,
    extract_card,
    load_trace,
    run_session,
)

EXIT_OK, EXIT_UNEXPECTED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class ScenarioConfig:
    seed: int
    users: list[dict[str, str]]
    hash_algorithm: str = "sha256"
    freshness_window: int = DEFAULT_FRESHNESS_WINDOW
    adversary: Optional[dict[str, str]] = None
    dictionary_path: Optional[Path] = None
    output_path: Path = field(default_factory=lambda: Path("out"))

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        base = path.parent

        def resolve(p: Optional[str]) -> Optional[Path]:
            if p is None:
                return None
            p = Path(p)
            return p if p.is_absolute() else base / p

        try:
            cfg = cls(
                seed=int(doc["seed"]),
                users=list(doc.get("users", [])),
                hash_algorithm=doc.get("hash_algorithm", "sha256"),
                freshness_window=int(doc.get("freshness_window", DEFAULT_FRESHNESS_WINDOW)),
                adversary=doc.get("adversary"),
                dictionary_path=resolve(doc.get("dictionary_path")),
                output_path=resolve(doc.get("output_path", "out")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"bad config {path}: {exc}") from None
        for u in cfg.users + ([cfg.adversary] if cfg.adversary else []):
            if not isinstance(u, dict) or "id" not in u or "pw" not in u:
                raise UsageError(f"bad config {path}: every user needs 'id' and 'pw'")
        return cfg

    @property
    def suite(self) -> Suite:
        return Suite(self.hash_algorithm)

    def password_of(self, user_id: str) -> str:
        for u in self.users + ([self.adversary] if self.adversary else []):
            if u["id"] == user_id:
                return u["pw"]
        raise UsageError(f"unknown user {user_id!r}")


def _card_path(out: Path, user_id: str) -> Path:
    return out / "cards" / f"{quote(user_id, safe='')}.json"


def _write_json(path: Path, doc: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_server(cfg: ScenarioConfig) -> ServerState:
    path = cfg.output_path / "server.json"
    try:
        return ServerState.from_json(json.loads(path.read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise UsageError(f"no server database at {path}; run 'register' first") from None
    except (KeyError, ValueError) as exc:
        raise UsageError(f"corrupt server database {path}: {exc}") from None


def _load_card(cfg: ScenarioConfig, user_id: str) -> SmartCard:
    path = _card_path(cfg.output_path, user_id)
    try:
        return SmartCard.from_json(json.loads(path.read_text(encoding="utf-8")), cfg.suite)
    except FileNotFoundError:
        raise UsageError(f"no card for {user_id!r} at {path}") from None
    except (KeyError, ValueError) as exc:
        raise UsageError(f"corrupt card file {path}: {exc}") from None


def _load_user(cfg: ScenarioConfig, user_id: str) -> User:
    pw = cfg.password_of(user_id)
    card = _load_card(cfg, user_id)
    return User(Credentials(user_id, pw, card.r), card)


def _load_trace_file(path: Path):
    try:
        with open(path, encoding="utf-8") as fp:
            return load_trace(fp)
    except OSError as exc:
        raise UsageError(f"cannot read trace {path}: {exc}") from None
    except TraceFormatError as exc:
        raise UsageError(f"malformed trace {path}: {exc}") from None


def _adversary_knowledge(cfg: ScenarioConfig) -> AdversaryKnowledge:
    if not cfg.adversary:
        raise UsageError("config has no adversary credentials")
    know = AdversaryKnowledge(cfg.suite)
    adv = _load_user(cfg, cfg.adversary["id"])
    know.own_creds, know.own_card = adv.creds, adv.card
    attacks.extract_master_digest(know)
    return know


# -- commands ----------------------------------------------------------------

def cmd_register(args: argparse.Namespace) -> int:
    cfg = _config(args)
    rng = random.Random(cfg.seed)
    out = cfg.output_path
    if args.resume:
        state = _load_server(cfg)
    else:
        state = ServerState.generate(rng, cfg.suite, cfg.freshness_window)
    everyone = cfg.users + ([cfg.adversary] if cfg.adversary else [])
    if not everyone:
        raise UsageError("config lists no users")
    cards = {}
    for u in everyone:
        if u["id"] in state.registry and not args.allow_reregister:
            raise UsageError(f"{u['id']!r} is already registered (use --allow-reregister)")
        try:
            _, card = register_user(state, u["id"], u["pw"], rng)
        except (RegistrationError, PrimitiveError) as exc:
            raise UsageError(f"cannot register {u['id']!r}: {exc}") from None
        cards[u["id"]] = card
    _write_json(out / "server.json", state.to_json())
    for user_id, card in cards.items():
        _write_json(_card_path(out, user_id), card.to_json())
    print(json.dumps({"registered": list(cards), "registry": state.registry}, sort_keys=True))
    return EXIT_OK


def cmd_session(args: argparse.Namespace) -> int:
    cfg = _config(args)
    server = _load_server(cfg)
    user_ids = args.user or [u["id"] for u in cfg.users]
    users = [_load_user(cfg, uid) for uid in user_ids]
    for u in users:
        if u.id not in server.registry:
            raise UsageError(f"{u.id!r} is not registered")
    try:
        policy = TamperPolicy.parse(args.tamper) if args.tamper else TamperPolicy()
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    channel = Channel()
    clock = SimClock(args.start_tick)
    accepted = incomplete = 0
    rejected: Counter[str] = Counter()
    for _ in range(args.n):
        for u in users:
            try:
                o = run_session(u, server, channel, clock, policy)
            except ValueError as exc:
                raise UsageError(f"tamper policy cannot be applied: {exc}") from None
            if o.accepted:
                accepted += 1
            else:
                bad = [r for r in (o.server, o.card) if hasattr(r, "reason")]
                if bad:
                    rejected[bad[0].reason.value] += 1
                else:
                    incomplete += 1

    trace_path = Path(args.out) if args.out else cfg.output_path / "trace.jsonl"
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    with open(trace_path, "w", encoding="utf-8") as fp:
        channel.dump(fp)
    summary = {
        "sessions": args.n * len(users),
        "accepted": accepted,
        "rejected": dict(sorted(rejected.items())),
        "incomplete": incomplete,
        "trace": str(trace_path),
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _attack_pwguess(cfg: ScenarioConfig, args: argparse.Namespace) -> attacks.AttackVerdict:
    if not args.victim:
        raise UsageError("pwguess needs --victim")
    dict_path = Path(args.dict) if args.dict else cfg.dictionary_path
    if dict_path is None:
        raise UsageError("pwguess needs --dict or dictionary_path in the config")
    try:
        dictionary = attacks.Dictionary.from_file(dict_path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load dictionary: {exc}") from None

    know = _adversary_knowledge(cfg)
    victim = extract_card(_load_card(cfg, args.victim), know, args.victim)
    eavesdrop(_load_trace_file(_trace_arg(cfg, args)), know)
    logins = list(know.logins())
    if args.session is not None:
        logins = [ev for ev in logins if ev.session_id == args.session]
    else:
        # pick the victim's traffic out of the trace by unmasking identities
        mine = [ev for ev in logins
                if attacks.deanonymize(know, ev.payload).recovered == args.victim]
        logins = mine or logins
    if not logins:
        raise UsageError("no usable login message in the trace")
    ev = logins[0]
    try:
        return attacks.guess_password(know, victim, ev.payload, dictionary.entries,
                                      exhaustive=args.exhaustive, session_id=ev.session_id)
    except attacks.AttackError as exc:
        return attacks.AttackVerdict(attacks.PW_GUESS, False, None, 0, [ev.session_id],
                                     {"error": str(exc)})


def _attack_deanon(cfg: ScenarioConfig, args: argparse.Namespace) -> attacks.AttackVerdict:
    know = _adversary_knowledge(cfg)
    eavesdrop(_load_trace_file(_trace_arg(cfg, args)), know)
    verdicts = attacks.deanonymize_all(know)
    ok = bool(verdicts) and all(v.success for v in verdicts)
    groups = attacks.linkability_groups(verdicts)
    return attacks.AttackVerdict(
        attacks.DEANONYMIZE, ok, ",".join(groups) if ok else None, len(verdicts),
        [v.transcript[0] for v in verdicts],
        {"results": [{"session_id": v.transcript[0], "recovered": v.recovered}
                     for v in verdicts],
         "groups": groups})


def _attack_wrong_input(cfg: ScenarioConfig, args: argparse.Namespace,
                        flood: bool) -> attacks.AttackVerdict:
    if not args.victim:
        raise UsageError("this attack needs --victim")
    server = _load_server(cfg)
    user = _load_user(cfg, args.victim)
    channel, clock = Channel(), SimClock(args.start_tick)
    if flood:
        report = attacks.flood_cost_report(user, server, channel, clock, args.n, args.mode)
        ok = report["server_rejections"] == args.n
        return attacks.AttackVerdict(attacks.FLOOD, ok, None, args.n,
                                     list(range(channel.next_session)), report)
    runs = [attacks.wrong_input_scenario(user, server, channel, clock, args.mode)
            for _ in range(args.n)]
    return attacks.AttackVerdict(
        attacks.WRONG_INPUT, bool(runs) and all(r.success for r in runs), None, len(runs),
        [r.transcript[0] for r in runs],
        {"mode": args.mode, "trials": len(runs), "reproduced": sum(r.success for r in runs),
         "server_outcomes": dict(Counter(r.details["server_outcome"] for r in runs))})


def cmd_attack(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.kind == "pwguess":
        verdict = _attack_pwguess(cfg, args)
    elif args.kind == "deanon":
        verdict = _attack_deanon(cfg, args)
    else:
        verdict = _attack_wrong_input(cfg, args, flood=args.kind == "flood")
    text = verdict.dumps()
    sys.stdout.write(text)
    out = Path(args.out) if args.out else cfg.output_path / f"verdict-{args.kind}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    expected = args.expect == "success"
    return EXIT_OK if verdict.success == expected else EXIT_UNEXPECTED


def build_report(events, know: Optional[AdversaryKnowledge], window: int) -> dict:
    sessions: dict[int, dict] = {}
    for ev in events:
        row = sessions.setdefault(ev.session_id, {
            "session_id": ev.session_id, "login_tick": None, "server_outcome": None,
            "card_outcome": None, "identity": None})
        if ev.direction == TO_SERVER:
            row["login_tick"] = ev.tick
            row["server_outcome"] = ev.outcome
            if know is not None:
                row["identity"] = attacks.deanonymize(know, ev.payload).recovered
        elif ev.direction == TO_USER:
            row["card_outcome"] = ev.outcome

    groups: dict[str, list[int]] = {}
    for row in sessions.values():
        if row["identity"] is not None:
            groups.setdefault(row["identity"], []).append(row["session_id"])

    seen: Counter[str] = Counter()
    replays = replays_accepted = 0
    exposure = []
    for ev in events:
        if ev.direction != TO_SERVER:
            continue
        key = ev.payload.B1.hex() + ev.payload.C1.hex()
        if seen[key]:
            replays += 1
            replays_accepted += ev.outcome == "accepted"
        seen[key] += 1
        if ev.outcome == "accepted" and ev.delivered_tick is not None:
            # ticks left during which the same message would still be accepted
            exposure.append(ev.tick + window - ev.delivered_tick)

    return {
        "sessions": [sessions[k] for k in sorted(sessions)],
        "outcomes": dict(sorted(Counter(r["server_outcome"] or "none"
                                        for r in sessions.values()).items())),
        "linkability_groups": {k: sorted(v) for k, v in sorted(groups.items())},
        "replay_window": {
            "freshness_window": window,
            "accepted_logins": len(exposure),
            "replayed_messages": replays,
            "replays_accepted": replays_accepted,
            "min_exposure_ticks": min(exposure) if exposure else None,
            "max_exposure_ticks": max(exposure) if exposure else None,
        },
    }


def format_report(report: dict) -> str:
    lines = [f"{'session':>7}  {'tick':>6}  {'server':<28}  {'card':<28}  identity"]
    for r in report["sessions"]:
        cells = [r["login_tick"], r["server_outcome"], r["card_outcome"], r["identity"]]
        tick, server, card, ident = ("-" if c is None else c for c in cells)
        lines.append(f"{r['session_id']:>7}  {tick:>6}  {server:<28}  {card:<28}  {ident}")
    lines.append("")
    for ident, sids in report["linkability_groups"].items():
        lines.append(f"linked {ident}: sessions {', '.join(map(str, sids))}")
    rw = report["replay_window"]
    lines.append(f"replay window {rw['freshness_window']} ticks: "
                 f"{rw['accepted_logins']} accepted logins, "
                 f"{rw['replayed_messages']} replays ({rw['replays_accepted']} accepted)")
    return "\n".join(lines) + "\n"


def cmd_report(args: argparse.Namespace) -> int:
    events = _load_trace_file(Path(args.trace))
    know = None
    window = DEFAULT_FRESHNESS_WINDOW
    if args.config:
        cfg = _config(args)
        window = cfg.freshness_window
        if cfg.adversary:
            know = _adversary_knowledge(cfg)
    report = build_report(events, know, window)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    out = Path(args.out) if args.out else Path(args.trace).with_suffix(".report.json")
    out.write_text(text, encoding="utf-8")
    sys.stdout.write(text if args.json else format_report(report))
    return EXIT_OK


# -- plumbing ----------------------------------------------------------------

def _config(args: argparse.Namespace) -> ScenarioConfig:
    if not args.config:
        raise UsageError("--config is required")
    cfg = ScenarioConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "output_dir", None):
        cfg.output_path = Path(args.output_dir)
    try:
        cfg.suite
    except PrimitiveError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _trace_arg(cfg: ScenarioConfig, args: argparse.Namespace) -> Path:
    return Path(args.trace) if args.trace else cfg.output_path / "trace.jsonl"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tmisauth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="scenario config (JSON)")
        sp.add_argument("--output-dir", help="override output_path from the config")
        if seed:
            sp.add_argument("--seed", type=int, help="override the config seed")

    r = sub.add_parser("register", help="create the server database and smart cards")
    common(r)
    r.add_argument("--allow-reregister", action="store_true",
                   help="re-register existing identities (bumps N)")
    r.add_argument("--resume", action="store_true",
                   help="extend the existing server database instead of starting fresh")
    r.set_defaults(func=cmd_register)

    s = sub.add_parser("session", help="run honest or tampered login sessions")
    common(s)
    s.add_argument("--user", action="append", help="user id (repeatable; default all)")
    s.add_argument("-n", type=int, default=1, help="sessions per user")
    s.add_argument("--tamper", help="drop:<login|response>, delay:<dir>:<ticks>, "
                                    "flip-bit:<b1|c1|b2|c2>:<bit>")
    s.add_argument("--start-tick", type=int, default=0)
    s.add_argument("--out", help="trace path (default <output>/trace.jsonl)")
    s.set_defaults(func=cmd_session)

    a = sub.add_parser("attack", help="run an attack and print its verdict")
    common(a)
    a.add_argument("kind", choices=["pwguess", "deanon", "wronginput", "flood"])
    a.add_argument("--trace", help="trace file (default <output>/trace.jsonl)")
    a.add_argument("--victim", help="victim user id (selects the card file)")
    a.add_argument("--dict", help="dictionary file, one password per line")
    a.add_argument("--session", type=int, help="session id of the login to attack")
    a.add_argument("--exhaustive", action="store_true",
                   help="scan the whole dictionary and report every hit")
    a.add_argument("--mode", default=attacks.WRONG_PASSWORD,
                   choices=[attacks.WRONG_PASSWORD, attacks.WRONG_IDENTITY, attacks.CORRECT])
    a.add_argument("-n", type=int, default=1, help="trials for wronginput/flood")
    a.add_argument("--start-tick", type=int, default=0)
    a.add_argument("--expect", choices=["success", "failure"], default="success")
    a.add_argument("--out", help="verdict path (default <output>/verdict-<kind>.json)")
    a.set_defaults(func=cmd_attack)

    rp = sub.add_parser("report", help="summarise a trace file")
    common(rp, seed=False)
    rp.add_argument("trace")
    rp.add_argument("--json", action="store_true", help="print JSON instead of the table")
    rp.add_argument("--out", help="report path (default <trace>.report.json)")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "n", 0) < 0:
            raise UsageError("-n must be non-negative")
        return args.func(args)
    except UsageError as exc:
        print(f"tmisauth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"tmisauth: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
