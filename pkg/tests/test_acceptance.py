"""Acceptance suite: one test per shipping criterion, each printing a
single pass/fail verdict line (collected into the terminal summary).

These tests are end-to-end and deliberately heavier than the unit suites;
together they should stay well under the stated budgets (60 s for the
exhaustive equivalence sweep, 5 min for the adversarial suite).
"""

import itertools
import json
import random
import select
import signal
import subprocess
import sys
import textwrap
import time
import uuid

import pytest
import requests

from conftest import ACCEPTANCE_LINES
from healthgate.agents import AgentRuntime, ExpireSweep, LoginRequest
from healthgate.config import Config
from healthgate.fixtures import build_fixture, fixture_password, load_fixture
from healthgate.gateway import UNIFORM_401_BODY, GatewayServer
from healthgate.harness import FixtureOracle, Harness
from healthgate.policy import (
    CATALOG,
    AccessMode,
    AccessRequest,
    FieldSet,
    PolicyTable,
    PolicyTuple,
    Role,
    User,
    evaluate_access,
    oracle_evaluate,
    parse_policy_line,
)
from healthgate.store import AuditKind, HealthStore

ITER = 1000  # fixture hashing is tagged per credential, so tests can run light

ALL_NAMES = [f.name for f in CATALOG]


def verdict(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def make_gateway(data_dir: str, **overrides) -> GatewayServer:
    settings = {
        "data_dir": data_dir,
        "listen_addr": "127.0.0.1:0",
        "auth_fail_delay_ms": 0,
        "sweep_interval_seconds": 0,
    }
    settings.update(overrides)
    return GatewayServer(Config(**settings)).start()


def login(base: str, http: requests.Session, username: str) -> str:
    reply = http.post(f"{base}/api/login", json={
        "username": username, "password": fixture_password(username),
    }, timeout=10)
    assert reply.status_code == 200, reply.text
    return reply.json()["token"]


# -- criterion 1: oracle equivalence (exhaustive) ---------------------------


def test_oracle_equivalence_exhaustive():
    sub_catalog = ["location", "age", "heart_rate", "blood_pressure"]
    roles = [Role.PATIENT, Role.PHYSICIAN, Role.RECORDS_OFFICER]
    modes = [AccessMode.READ, AccessMode.WRITE]
    files = ["rec1", "rec2"]
    requesters = {role: User(f"id-{role.value}", f"u-{role.value}", role, "-")
                  for role in roles}

    subsets = [FieldSet.of_names(combo)
               for size in range(len(sub_catalog) + 1)
               for combo in itertools.combinations(sub_catalog, size)]
    request_sets = subsets + [FieldSet.wildcard()]

    tables: list[list[PolicyTuple]] = [[]]
    for role, mode, file_id, fields in itertools.product(roles, modes, files, subsets):
        tables.append([PolicyTuple(role, mode, file_id, fields)])

    requests_space = [
        (requesters[role], AccessRequest(requesters[role].user_id, mode, file_id, fields))
        for role, mode, file_id, fields in itertools.product(roles, modes, files, request_sets)
    ]

    started = time.monotonic()
    cases = 0
    mismatches = 0
    for tuples in tables:
        table = PolicyTable(tuples)
        for requester, request in requests_space:
            cases += 1
            if evaluate_access(request, requester, table) != oracle_evaluate(
                    request, requester, tuples):
                mismatches += 1
    elapsed = time.monotonic() - started

    verdict(
        "oracle equivalence (exhaustive)",
        mismatches == 0 and elapsed < 60.0,
        f"{cases} cases, {mismatches} mismatches, {elapsed:.1f}s",
    )
    assert cases == 39_372


# -- criterion 2: connection gate over a randomized fixture -----------------


def test_connection_gate_randomized_fixture(tmp_path):
    rng = random.Random(20260816)
    roles = list(Role)
    covered = set(rng.sample(roles, k=2))

    table = PolicyTable()
    for role in covered:
        for _ in range(rng.randint(1, 2)):
            table.add(PolicyTuple(
                role,
                rng.choice([AccessMode.READ, AccessMode.WRITE]),
                rng.choice(["rec1", "rec2"]),
                FieldSet.of_names(rng.sample(ALL_NAMES, k=rng.randint(1, 4))),
            ))

    store = HealthStore(str(tmp_path), hash_iterations=ITER)
    store.save_policy(table)
    users = []
    for i in range(50):
        user = User(f"id-{i:02d}", f"user{i:02d}", rng.choice(roles), f"id-{i:02d}")
        store.put_user(user, f"pw-{i:02d}")
        users.append(user)

    runtime = AgentRuntime(store, session_ttl=60.0).start()
    try:
        outcomes = {}
        for i, user in enumerate(users):
            result = runtime.request(LoginRequest(user.username, f"pw-{i:02d}"))
            outcomes[user.username] = result.ok
    finally:
        runtime.stop()

    should_establish = {u.username for u in users if u.role in covered}
    established = {name for name, ok in outcomes.items() if ok}
    refused = set(outcomes) - established

    events = store.read_audit()
    refuse_names = {e.actor_username for e in events
                    if e.event_kind is AuditKind.CONNECT_REFUSE}
    establish_names = {e.actor_username for e in events
                       if e.event_kind is AuditKind.CONNECT_ESTABLISH}
    store.close()

    ok = (
        established == should_establish
        and refused == set(outcomes) - should_establish
        and refuse_names == refused
        and established <= establish_names
        and len(outcomes) == 50
        and 0 < len(established) < 50  # both sides of the gate exercised
    )
    verdict(
        "connection gate (50-user fixture)",
        ok,
        f"{len(established)} established, {len(refused)} refused, "
        f"audit kinds match both sets",
    )


# -- criterion 3: no-bypass fuzz ---------------------------------------------


def test_no_bypass_fuzz(tmp_path):
    fixture = build_fixture(str(tmp_path / "fx"))
    oracle = FixtureOracle(fixture)
    secrets = {str(v) for values in oracle.records.values() for v in values.values()}
    gw = make_gateway(fixture.directory)
    rng = random.Random(31337)
    http = requests.Session()
    try:
        failures = 0
        leaks = 0
        for i in range(1000):
            token = f"{rng.getrandbits(256):064x}"
            record = rng.choice(["rec_bob", "rec_carol"])
            params = {}
            if i % 3 == 0:
                params["fields"] = ",".join(rng.sample(ALL_NAMES, k=rng.randint(1, 4)))
            reply = http.get(f"{gw.base_url}/api/records/{record}", params=params,
                             headers={"Authorization": f"Bearer {token}"}, timeout=10)
            if reply.status_code != 401 or reply.content != UNIFORM_401_BODY:
                failures += 1
            if any(secret in reply.text for secret in secrets):
                leaks += 1
    finally:
        gw.stop()
    verdict(
        "no-bypass fuzz (1000 random tokens)",
        failures == 0 and leaks == 0,
        f"1000 requests, {1000 - failures} uniform 401s, {leaks} field-value leaks",
    )


# -- criterion 4: redaction soundness ----------------------------------------


def test_redaction_soundness(tmp_path):
    fixture = build_fixture(str(tmp_path / "fx"))
    oracle = FixtureOracle(fixture)
    gw = make_gateway(fixture.directory)
    rng = random.Random(404)
    http = requests.Session()
    try:
        tokens = {name: login(gw.base_url, http, name) for name in fixture.usernames}

        granted = 0
        violations = 0
        while granted < 1000:
            username = rng.choice(fixture.usernames)
            record = rng.choice(["rec_bob", "rec_carol"])
            names = (None if rng.random() < 0.25
                     else rng.sample(ALL_NAMES, k=rng.randint(1, len(ALL_NAMES))))
            allowed = oracle.allowed_read_names(username, record, names)
            if not allowed:
                continue
            granted += 1
            params = {} if names is None else {"fields": ",".join(names)}
            reply = http.get(f"{gw.base_url}/api/records/{record}", params=params,
                             headers={"Authorization": f"Bearer {tokens[username]}"},
                             timeout=10)
            if reply.status_code != 200:
                violations += 1
                continue
            returned = set(reply.json()["values"])
            if not returned <= allowed:
                violations += 1

        # strict write: partially granted PUT must change nothing
        partial_writes = 0
        probes = [
            ("dr_alice", {"heart_rate": 999, "age": 999}),       # age not writable
            ("pat_bob", {"bgm": 999, "location": "nowhere"}),    # location not writable
        ]
        for username, values in probes:
            before = http.get(f"{gw.base_url}/api/records/rec_bob",
                              headers={"Authorization": f"Bearer {tokens['admin_root']}"},
                              timeout=10).json()["values"]
            reply = http.put(f"{gw.base_url}/api/records/rec_bob",
                             json={"values": values},
                             headers={"Authorization": f"Bearer {tokens[username]}"},
                             timeout=10)
            after = http.get(f"{gw.base_url}/api/records/rec_bob",
                             headers={"Authorization": f"Bearer {tokens['admin_root']}"},
                             timeout=10).json()["values"]
            if reply.status_code != 403 or after != before:
                partial_writes += 1
    finally:
        gw.stop()

    verdict(
        "redaction soundness (1000 granted requests)",
        violations == 0 and partial_writes == 0,
        f"{granted} granted reads within oracle grant, {violations} violations, "
        f"{partial_writes} partial writes after 403",
    )


# -- criterion 5: audit completeness -----------------------------------------


def test_audit_completeness(tmp_path):
    fixture_dir = str(tmp_path / "fx")
    fixture = build_fixture(fixture_dir)
    # one grant pointing at an absent record, so the 404 path is exercised
    store = HealthStore(fixture_dir, hash_iterations=ITER)
    table = store.load_policy()
    table.add(parse_policy_line("physician,read,rec_ghost,age"))
    store.save_policy(table)
    store.close()

    gw = make_gateway(fixture_dir)
    http = requests.Session()
    evaluated_cids = []
    rng = random.Random(5)
    try:
        tokens = {name: login(gw.base_url, http, name) for name in fixture.usernames}

        def record_request(method: str, username: str, record: str, **kwargs):
            headers = {"Authorization": f"Bearer {tokens[username]}"}
            reply = http.request(method, f"{gw.base_url}/api/records/{record}",
                                 headers=headers, timeout=10, **kwargs)
            if reply.status_code in (200, 403, 404):
                evaluated_cids.append(reply.headers["X-Correlation-Id"])
            return reply

        for _ in range(30):
            choice = rng.randrange(7)
            if choice == 0:     # granted read
                assert record_request("GET", "pat_bob", "rec_bob").status_code == 200
            elif choice == 1:   # denied read (no tuple for this record)
                assert record_request("GET", "ro_rita", "rec_carol").status_code == 403
            elif choice == 2:   # granted-but-absent record
                assert record_request("GET", "dr_alice", "rec_ghost").status_code == 404
            elif choice == 3:   # granted write
                assert record_request("PUT", "pat_bob", "rec_bob",
                                      json={"values": {"bgm": rng.randrange(99)}},
                                      ).status_code == 200
            elif choice == 4:   # strict-write denial
                assert record_request("PUT", "dr_alice", "rec_bob",
                                      json={"values": {"heart_rate": 1, "age": 1}},
                                      ).status_code == 403
            elif choice == 5:   # invalid token: never reaches policy evaluation
                reply = http.get(f"{gw.base_url}/api/records/rec_bob",
                                 headers={"Authorization": f"Bearer {'0' * 64}"},
                                 timeout=10)
                assert reply.status_code == 401
            else:               # shape rejection: never reaches policy evaluation
                reply = http.get(f"{gw.base_url}/api/records/rec_bob",
                                 params={"fields": "shoe_size"},
                                 headers={"Authorization": f"Bearer {tokens['pat_bob']}"},
                                 timeout=10)
                assert reply.status_code == 400
    finally:
        gw.stop()

    store = HealthStore(fixture_dir, hash_iterations=ITER)
    events = store.read_audit()
    store.close()
    access_events = [e for e in events
                     if e.event_kind in (AuditKind.ACCESS_GRANTED, AuditKind.ACCESS_DENIED)]
    sequences = [e.sequence for e in events]
    counts_match = len(access_events) == len(evaluated_cids)
    cids_match = sorted(e.correlation_id for e in access_events) == sorted(evaluated_cids)
    gapless = sequences == list(range(1, len(events) + 1))

    verdict(
        "audit completeness",
        counts_match and cids_match and gapless,
        f"{len(access_events)} access events = {len(evaluated_cids)} evaluated requests, "
        f"correlation ids match, sequence 1..{len(events)} gapless",
    )


# -- criterion 6: session lifecycle ------------------------------------------


def test_session_lifecycle_ttl_one_second(tmp_path):
    fixture = build_fixture(str(tmp_path / "fx"))
    gw = make_gateway(fixture.directory, session_ttl_seconds=1.0)
    http = requests.Session()
    base = gw.base_url
    auth = lambda t: {"Authorization": f"Bearer {t}"}
    try:
        # expiry: a request two seconds after login must fail closed
        expired_token = login(base, http, "pat_bob")
        time.sleep(2.05)
        expired = http.get(f"{base}/api/records/rec_bob",
                           headers=auth(expired_token), timeout=10)
        expiry_ok = (expired.status_code == 401
                     and expired.content == UNIFORM_401_BODY)

        # logout then replay
        replay_token = login(base, http, "pat_bob")
        live = http.get(f"{base}/api/records/rec_bob",
                        headers=auth(replay_token), timeout=10)
        assert live.status_code == 200
        assert http.post(f"{base}/api/logout",
                         headers=auth(replay_token), timeout=10).status_code == 204
        replay = http.get(f"{base}/api/records/rec_bob",
                          headers=auth(replay_token), timeout=10)
        replay_ok = replay.status_code == 401 and replay.content == UNIFORM_401_BODY

        # sweep removes exactly the expired sessions: by now the first two
        # tokens and the stale one are past expiry, only fresh is live
        stale = login(base, http, "dr_alice")
        time.sleep(1.3)
        fresh = login(base, http, "pat_carol")
        purged = gw.runtime.request(ExpireSweep()).purged
        stale_gone = gw.store.get_session(stale) is None
        fresh_kept = gw.store.get_session(fresh) is not None
        sweep_ok = purged == 3 and stale_gone and fresh_kept
    finally:
        gw.stop()

    verdict(
        "session lifecycle (ttl=1s)",
        expiry_ok and replay_ok and sweep_ok,
        f"expired request 401, logout replay 401, sweep purged {purged} "
        f"(stale gone, fresh kept)",
    )


# -- criterion 7: threat harness ---------------------------------------------


def test_threat_harness_full_suite(tmp_path):
    build_fixture(str(tmp_path / "fx"))
    harness = Harness(str(tmp_path / "fx"), seed=2026,
                      report_dir=str(tmp_path / "reports"))
    started = time.monotonic()
    result = harness.run_all()
    elapsed = time.monotonic() - started

    normal = {r.scenario: r for r in result.reports if not r.weakened}
    weakened = {r.scenario: r for r in result.reports if r.weakened}
    normal_clean = all(r.successes == 0 for r in normal.values())
    sensitivity = (weakened["field_exfiltration"].successes >= 1
                   and weakened["privilege_escalation"].successes >= 1)

    verdict(
        "threat harness (6 scenarios + weakened baseline)",
        normal_clean and sensitivity and result.passed and elapsed < 300.0,
        f"normal successes {[r.successes for r in normal.values()]}, weakened "
        f"exfiltration={weakened['field_exfiltration'].successes} "
        f"escalation={weakened['privilege_escalation'].successes}, {elapsed:.0f}s",
    )
    assert len(normal) == 6


# -- criterion 8: store durability across a hard kill ------------------------


def test_store_durability_kill_between_append_and_read(tmp_path):
    data_dir = str(tmp_path / "fx")
    build_fixture(data_dir)  # a few pre-existing audit events

    child_code = textwrap.dedent("""
        import sys, time
        from healthgate.store import AuditKind, HealthStore
        store = HealthStore(sys.argv[1], hash_iterations=1000)
        seq = store.append_audit("kill-window", "tester",
                                 AuditKind.LOGIN_SUCCESS, "pre-kill")
        print(f"COMMITTED {seq}", flush=True)
        time.sleep(60)  # killed here, before any further read
    """)
    proc = subprocess.Popen([sys.executable, "-c", child_code, data_dir],
                            stdout=subprocess.PIPE, text=True)
    try:
        ready, _, _ = select.select([proc.stdout], [], [], 30.0)
        assert ready, "child never reported the committed append"
        committed_seq = int(proc.stdout.readline().split()[1])
    finally:
        proc.send_signal(signal.SIGKILL)
        proc.wait(timeout=10)

    store = HealthStore(data_dir, hash_iterations=ITER)
    events = store.read_audit()
    store.close()
    sequences = [e.sequence for e in events]
    contiguous = sequences == list(range(1, len(events) + 1))
    last = events[-1]
    committed_present = (last.sequence == committed_seq
                         and last.detail == "pre-kill"
                         and last.correlation_id == "kill-window")

    verdict(
        "store durability (kill after append)",
        contiguous and committed_present,
        f"reopened log contiguous 1..{len(events)}, committed event "
        f"#{committed_seq} present",
    )
