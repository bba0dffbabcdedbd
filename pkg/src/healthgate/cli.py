"""Operator command line: run the server, seed data, manage users and
policies, tail the audit log, and launch the adversarial harness.

Passwords are never taken as command-line arguments (they would land in
process listings); they come from a hidden prompt or HEALTHGATE_PASSWORD.
Exit codes: 0 success, 1 parse or validation failure, 2 I/O failure,
3 target unreachable.
"""

from __future__ import annotations

import argparse
import datetime
import getpass
import json
import os
import signal
import sys
import time
import uuid
from typing import Optional

from .config import Config, ConfigError, load_config
from .fixtures import build_fixture
from .gateway import GatewayServer
from .harness import DEFAULT_ATTEMPTS, Harness, HarnessError, TargetUnreachable
from .policy import (
    PolicyError,
    Role,
    User,
    format_policy_line,
    parse_policy_line,
)
from .store import (
    AUDIT_FILE,
    AuditEvent,
    DuplicateUsernameError,
    HealthStore,
    StorageIOError,
    StoreError,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_UNREACHABLE = 3

PASSWORD_ENV = "HEALTHGATE_PASSWORD"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="healthgate",
                     description="Field-level access control service for health records.")
    parser.add_argument("--config", metavar="PATH", help="key=value configuration file")
    verbs = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    serve = verbs.add_parser("serve", help="run the HTTP gateway")
    serve.add_argument("--unsafe-allow-all", action="store_true",
                       help="stub the policy layer wide open (harness baseline only)")
    serve.set_defaults(func=cmd_serve)

    seed = verbs.add_parser("seed", help="build the canonical seeded fixture")
    seed.add_argument("--fixture", required=True, metavar="DIR")
    seed.add_argument("--session-ttl", type=float, default=3600.0, metavar="SECONDS")
    seed.set_defaults(func=cmd_seed)

    user_add = verbs.add_parser("user-add", help="create a user (password via prompt or env)")
    user_add.add_argument("--username", required=True)
    user_add.add_argument("--role", help="patient, physician, records_officer; admin needs --admin")
    user_add.add_argument("--admin", action="store_true",
                          help="permit creating an admin account (implies --role admin)")
    user_add.add_argument("--data-dir", metavar="DIR")
    user_add.set_defaults(func=cmd_user_add)

    policy_add = verbs.add_parser("policy-add", help="append one policy line")
    policy_add.add_argument("line", metavar="ROLE,MODE,FILE,FIELDS")
    policy_add.add_argument("--data-dir", metavar="DIR")
    policy_add.set_defaults(func=cmd_policy_add)

    policy_list = verbs.add_parser("policy-list", help="print the policy table canonically")
    policy_list.add_argument("--data-dir", metavar="DIR")
    policy_list.set_defaults(func=cmd_policy_list)

    audit_tail = verbs.add_parser("audit-tail", help="print audit events in sequence order")
    audit_tail.add_argument("--follow", action="store_true", help="keep printing new events")
    audit_tail.add_argument("--from", dest="from_sequence", type=int, default=1, metavar="N")
    audit_tail.add_argument("--data-dir", metavar="DIR")
    audit_tail.set_defaults(func=cmd_audit_tail)

    simulate = verbs.add_parser("simulate", help="run the adversarial scenario suite")
    simulate.add_argument("--target", metavar="URL",
                          help="attack a running gateway instead of self-hosting")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--fixture", metavar="DIR",
                          help="existing fixture directory (default: build a temporary one)")
    simulate.add_argument("--report-dir", metavar="DIR",
                          help="also write report.txt and report.ndjson here")
    simulate.add_argument("--attempts", type=int, metavar="N",
                          help="cap every scenario at N attempts (sizing down a run)")
    simulate.add_argument("--auth-fail-delay-ms", type=int, default=200, metavar="MS")
    simulate.set_defaults(func=cmd_simulate)

    return parser


def _resolve_config(args) -> Config:
    config = load_config(args.config)
    data_dir = getattr(args, "data_dir", None)
    if data_dir:
        config.data_dir = data_dir
    return config


# -- verbs ------------------------------------------------------------------


def cmd_serve(args) -> int:
    config = _resolve_config(args)
    if args.unsafe_allow_all:
        config.unsafe_allow_all = True
    gateway = GatewayServer(config).start()
    if config.unsafe_allow_all:
        print("WARNING: policy checks are stubbed open (--unsafe-allow-all)", flush=True)
    print(f"listening on {gateway.base_url}", flush=True)
    stop = {"requested": False}

    def request_stop(signum, frame):
        stop["requested"] = True

    signal.signal(signal.SIGTERM, request_stop)
    try:
        while not stop["requested"]:
            time.sleep(0.2)
    except KeyboardInterrupt:
        pass
    finally:
        gateway.stop()
    print("stopped", flush=True)
    return EXIT_OK


def cmd_seed(args) -> int:
    fixture = build_fixture(args.fixture, session_ttl_seconds=args.session_ttl)
    print(f"seeded fixture in {fixture.directory}")
    for username in fixture.usernames:
        print(f"  user {username}")
    return EXIT_OK


def _read_password() -> str:
    password = os.environ.get(PASSWORD_ENV)
    if password is None:
        password = getpass.getpass("Password: ")
    if not password:
        raise ValueError("password must be non-empty")
    return password


def cmd_user_add(args) -> int:
    role_name = args.role or ("admin" if args.admin else None)
    if role_name is None:
        raise ValueError("--role is required (or pass --admin)")
    role = Role.parse(role_name)
    if role is Role.ADMIN and not args.admin:
        raise ValueError("creating an admin account requires --admin")
    if not args.username.strip():
        raise ValueError("username must be non-empty")
    password = _read_password()
    config = _resolve_config(args)
    store = HealthStore(config.data_dir)
    try:
        user_id = uuid.uuid4().hex
        stored = store.put_user(User(user_id, args.username, role, user_id), password,
                                correlation_id="cli")
    finally:
        store.close()
    print(f"created {stored.username} role={stored.role.value} user_id={stored.user_id}")
    return EXIT_OK


def cmd_policy_add(args) -> int:
    parsed = parse_policy_line(args.line)
    if parsed is None:
        raise ValueError("policy line is empty")
    config = _resolve_config(args)
    store = HealthStore(config.data_dir)
    try:
        table = store.load_policy()
        table.add(parsed)
        store.save_policy(table)
    finally:
        store.close()
    print(format_policy_line(parsed))
    return EXIT_OK


def cmd_policy_list(args) -> int:
    config = _resolve_config(args)
    store = HealthStore(config.data_dir)
    try:
        table = store.load_policy()
    finally:
        store.close()
    for entry in table.tuples():
        print(format_policy_line(entry))
    return EXIT_OK


def _format_event(event: AuditEvent) -> str:
    stamp = datetime.datetime.fromtimestamp(event.timestamp, tz=datetime.timezone.utc)
    line = (f"{event.sequence:>6}  {stamp.isoformat(timespec='seconds')}  "
            f"{event.event_kind.value:<17} {event.actor_username:<16} "
            f"{event.correlation_id}  {event.detail}")
    if event.decision_fields is not None:
        line += f"  fields={event.decision_fields.serialize()}"
    return line


def _read_audit_lines(path: str, offset: int) -> tuple[list[AuditEvent], int]:
    """Parse complete lines past `offset`; never touches the file (a live
    server may be appending)."""
    if not os.path.exists(path):
        return [], offset
    with open(path, "rb") as f:
        f.seek(offset)
        chunk = f.read()
    end = chunk.rfind(b"\n") + 1
    events = []
    for line in chunk[:end].decode("utf-8").splitlines():
        if line.strip():
            events.append(AuditEvent.from_json(json.loads(line)))
    return events, offset + end


def cmd_audit_tail(args) -> int:
    config = _resolve_config(args)
    path = os.path.join(config.data_dir, AUDIT_FILE)
    offset = 0
    events, offset = _read_audit_lines(path, offset)
    for event in events:
        if event.sequence >= args.from_sequence:
            print(_format_event(event))
    if not args.follow:
        return EXIT_OK
    try:
        while True:
            time.sleep(0.5)
            events, offset = _read_audit_lines(path, offset)
            for event in events:
                print(_format_event(event), flush=True)
    except KeyboardInterrupt:
        return EXIT_OK


def cmd_simulate(args) -> int:
    fixture_dir = args.fixture
    if fixture_dir is None:
        fixture_dir = os.path.join(args.report_dir or ".", "harness-fixture")
        build_fixture(fixture_dir)
        print(f"built fixture in {fixture_dir}")
    attempts_override: Optional[dict[str, int]] = None
    if args.attempts is not None:
        attempts_override = {name: min(count, args.attempts)
                             for name, count in DEFAULT_ATTEMPTS.items()}
    harness = Harness(
        fixture_dir,
        seed=args.seed,
        target=args.target,
        report_dir=args.report_dir,
        auth_fail_delay_ms=args.auth_fail_delay_ms,
        attempts_override=attempts_override,
    )
    result = harness.run_all()
    sys.stdout.write(result.text_summary())
    return EXIT_OK if result.passed else EXIT_VALIDATION


def main(argv: Optional[list[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DuplicateUsernameError, PolicyError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TargetUnreachable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    except (StorageIOError, HarnessError, StoreError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
