"""Scripted adversarial scenarios executed against a live gateway.

Six attack scripts, each deterministic for a given seed. A "success" is a
breach: a response whose content exposes or mutates data the policy forbids,
judged by recomputing the decision with the naive oracle for the attacker's
actual identity (an invalid session has no identity and is allowed nothing).
Status codes alone never count. The weakened baseline relaunches the gateway
with the policy layer stubbed wide open to prove the scenarios can detect
breaches at all; authentication and session custody stay intact there, so
only the policy-dependent scenarios are expected to fire.

By default every scenario gets its own throwaway gateway over a fresh copy
of the fixture, so nothing an attack does can contaminate the fixture or a
later scenario. Attacks can also be pointed at an external deployment, in
which case the weakened baselines are skipped (a remote server cannot be
weakened from here) and record state is verified by read-back instead.
"""

from __future__ import annotations

import json
import os
import random
import shutil
import string
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import requests

from .config import Config
from .fixtures import Fixture, copy_fixture_store, load_fixture
from .gateway import GatewayServer
from .policy import (
    AccessMode,
    AccessRequest,
    CATALOG,
    FieldSet,
    PolicyTuple,
    User,
    oracle_evaluate,
)
from .store import HealthStore

SCENARIO_NAMES = (
    "credential_stuffing",
    "token_replay",
    "privilege_escalation",
    "field_exfiltration",
    "session_hijack",
    "expired_session_reuse",
)

WEAKENED_SCENARIOS = ("field_exfiltration", "privilege_escalation")

DEFAULT_ATTEMPTS = {
    "credential_stuffing": 500,
    "token_replay": 20,
    "privilege_escalation": 40,
    "field_exfiltration": 30,
    "session_hijack": 100,
    "expired_session_reuse": 10,
}

STUFFING_CONCURRENCY = 16
MAX_EXPIRY_WAIT_SECONDS = 5.0
REQUEST_TIMEOUT = 15.0


class HarnessError(Exception):
    pass


class TargetUnreachable(HarnessError):
    pass


@dataclass(frozen=True)
class TranscriptEntry:
    index: int
    request: str
    status: int


@dataclass
class ScenarioReport:
    scenario: str
    weakened: bool
    seed: int
    attempts: int
    successes: int
    breaches: list[str] = field(default_factory=list)
    transcript: list[TranscriptEntry] = field(default_factory=list)
    audit_delta: int = 0
    fixture_preserved: bool = True
    duration_seconds: float = 0.0
    skipped: bool = False
    note: str = ""

    @property
    def label(self) -> str:
        return f"weakened:{self.scenario}" if self.weakened else self.scenario

    @property
    def verdict(self) -> str:
        if self.skipped:
            return "SKIPPED"
        if self.weakened:
            return "DETECTED" if self.successes >= 1 else "INSENSITIVE"
        return "PASS" if self.successes == 0 else "FAIL"

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "weakened": self.weakened,
            "seed": self.seed,
            "attempts": self.attempts,
            "successes": self.successes,
            "verdict": self.verdict,
            "breaches": self.breaches,
            "audit_delta": self.audit_delta,
            "fixture_preserved": self.fixture_preserved,
            "duration_seconds": round(self.duration_seconds, 3),
            "skipped": self.skipped,
            "note": self.note,
        }


@dataclass
class HarnessResult:
    seed: int
    target: str
    reports: list[ScenarioReport]

    @property
    def passed(self) -> bool:
        for report in self.reports:
            if report.skipped:
                continue
            if report.weakened and report.successes < 1:
                return False
            if not report.weakened and report.successes > 0:
                return False
            if not report.weakened and not report.fixture_preserved:
                return False
        return True

    def text_summary(self) -> str:
        lines = [f"seed={self.seed} target={self.target}",
                 f"{'scenario':<34}{'attempts':>9}{'successes':>11}  verdict"]
        for report in self.reports:
            lines.append(f"{report.label:<34}{report.attempts:>9}{report.successes:>11}"
                         f"  {report.verdict}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def mask_token(token: str) -> str:
    return "***" if token else "-"


class GatewayClient:
    """Plain HTTP driver; stateless so scenario threads can share it."""

    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")

    def _url(self, path: str) -> str:
        return f"{self.base_url}{path}"

    @staticmethod
    def _body(response: requests.Response):
        try:
            return response.json()
        except ValueError:
            return response.text

    def _request(self, method: str, path: str, token: Optional[str] = None, **kwargs):
        headers = kwargs.pop("headers", {})
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            response = requests.request(method, self._url(path), headers=headers,
                                        timeout=REQUEST_TIMEOUT, **kwargs)
        except requests.exceptions.RequestException as exc:
            raise TargetUnreachable(f"{method} {path}: {exc}") from exc
        return response.status_code, self._body(response)

    def health(self) -> bool:
        try:
            status, _ = self._request("GET", "/api/health")
        except TargetUnreachable:
            return False
        return status == 200

    def login(self, username: str, password: str):
        status, body = self._request("POST", "/api/login",
                                     json={"username": username, "password": password})
        token = body.get("token") if isinstance(body, dict) else None
        return status, body, token

    def must_login(self, username: str, password: str) -> str:
        status, _, token = self.login(username, password)
        if status != 200 or not token:
            raise HarnessError(f"fixture login failed for {username} (status {status})")
        return token

    def read(self, token: Optional[str], file_id: str, fields: Optional[list[str]] = None):
        params = {"fields": ",".join(fields)} if fields is not None else None
        return self._request("GET", f"/api/records/{file_id}", token=token, params=params)

    def write(self, token: Optional[str], file_id: str, values: dict):
        return self._request("PUT", f"/api/records/{file_id}", token=token,
                             json={"values": values})

    def logout(self, token: str) -> int:
        status, _ = self._request("POST", "/api/logout", token=token)
        return status

    def audit(self, token: str, from_sequence: int = 1):
        return self._request("GET", "/api/audit", token=token,
                             params={"from": from_sequence})


class FixtureOracle:
    """Ground truth rebuilt from the fixture directory, independent of the gateway."""

    def __init__(self, fixture: Fixture):
        self.fixture = fixture
        store = HealthStore(fixture.directory, hash_iterations=1)
        try:
            self.users: dict[str, User] = {u.username: u for u in store.list_users()}
            self.records: dict[str, dict[str, object]] = {
                file_id: store.get_record(file_id).values_by_name()
                for file_id in store.list_record_ids()
            }
            self.tuples: list[PolicyTuple] = list(store.load_policy())
        finally:
            store.close()

    def record_ids(self) -> list[str]:
        return sorted(self.records)

    def _decide(self, username: Optional[str], mode: AccessMode, file_id: str,
                requested: FieldSet):
        user = self.users.get(username) if username else None
        if user is None:
            return None
        request = AccessRequest(user.user_id, mode, file_id, requested)
        return oracle_evaluate(request, user, self.tuples)

    def allowed_read_names(self, username: Optional[str], file_id: str,
                           fields: Optional[list[str]]) -> frozenset[str]:
        requested = FieldSet.wildcard() if fields is None else FieldSet.of_names(fields)
        decision = self._decide(username, AccessMode.READ, file_id, requested)
        if decision is None or not decision.granted:
            return frozenset()
        return frozenset(decision.granted_fields.names())

    def write_fully_granted(self, username: Optional[str], file_id: str,
                            names: list[str]) -> bool:
        requested = FieldSet.of_names(names)
        decision = self._decide(username, AccessMode.WRITE, file_id, requested)
        if decision is None or not decision.granted:
            return False
        return requested.resolve() <= decision.granted_fields.resolve()


class _ScenarioRun:
    """Book-keeping for one scenario execution against one live gateway."""

    def __init__(self, harness: "Harness", report: ScenarioReport, client: GatewayClient):
        self.harness = harness
        self.oracle = harness.oracle
        self.fixture = harness.fixture
        self.report = report
        self.client = client
        self.rng = random.Random(f"{report.seed}:{report.scenario}:{report.weakened}")
        # live view of what the store should hold; denied writes must not move it
        self.expected = {fid: dict(values) for fid, values in self.oracle.records.items()}
        self._admin_token: Optional[str] = None

    # -- helpers -----------------------------------------------------------

    def admin_token(self, fresh: bool = False) -> str:
        if fresh or self._admin_token is None:
            admin = self.fixture.admin_username
            self._admin_token = self.client.must_login(admin, self.fixture.passwords[admin])
        return self._admin_token

    def _as_admin(self, send):
        # short-TTL gateways expire the harness's own session; retry once fresh
        status, body = send(self.admin_token())
        if status == 401:
            status, body = send(self.admin_token(fresh=True))
        return status, body

    def record(self, index: int, request: str, status: int,
               breach: Optional[str] = None) -> None:
        self.report.transcript.append(TranscriptEntry(index, request, status))
        if breach:
            self.report.successes += 1
            self.report.breaches.append(f"attempt {index}: {breach}")

    def sentinel_leak(self, body) -> Optional[str]:
        text = body if isinstance(body, str) else json.dumps(body)
        for file_id, values in self.expected.items():
            for name, value in values.items():
                if isinstance(value, str) and value and value in text:
                    return f"{file_id}.{name}"
        return None

    # -- attack primitives (all breach checks live here) --------------------

    def attempt_read(self, index: int, identity: Optional[str], token: Optional[str],
                     file_id: str, fields: Optional[list[str]]) -> None:
        status, body = self.client.read(token, file_id, fields)
        shown = "*" if fields is None else ",".join(fields)
        summary = f"GET /api/records/{file_id} fields={shown} token={mask_token(token or '')}"
        breach = None
        allowed = self.oracle.allowed_read_names(identity, file_id, fields)
        if status == 200 and isinstance(body, dict) and isinstance(body.get("values"), dict):
            extra = set(body["values"]) - allowed
            if extra:
                breach = f"read of {file_id} exposed ungranted fields {sorted(extra)}"
        else:
            leaked = self.sentinel_leak(body)
            if leaked is not None:
                breach = f"non-200 response leaked value of {leaked}"
        self.record(index, summary, status, breach)

    def attempt_write(self, index: int, identity: Optional[str], token: Optional[str],
                      file_id: str, values: dict) -> None:
        status, body = self.client.write(token, file_id, values)
        names = sorted(values)
        summary = f"PUT /api/records/{file_id} fields={','.join(names)} token={mask_token(token or '')}"
        fully_granted = self.oracle.write_fully_granted(identity, file_id, names)
        breach = None
        if status == 200 and not fully_granted:
            breach = f"write to {file_id} accepted beyond grant ({names})"
        if status == 200 and fully_granted and file_id in self.expected:
            self.expected[file_id].update(values)
        divergence = self.verify_store_state(file_id)
        if breach is None and divergence:
            breach = divergence
        self.record(index, summary, status, breach)

    def verify_store_state(self, file_id: str) -> Optional[str]:
        """Admin read-back: stored values must match the oracle's expectation."""
        if file_id not in self.expected:
            return None
        status, body = self._as_admin(lambda t: self.client.read(t, file_id, fields=None))
        if status != 200 or not isinstance(body, dict):
            return None  # admin grant covers *; anything else is a fixture problem
        actual = body.get("values", {})
        if actual != self.expected[file_id]:
            changed = sorted(k for k in set(actual) | set(self.expected[file_id])
                             if actual.get(k) != self.expected[file_id].get(k))
            # adopt what the store now holds so one mutation is counted once
            self.expected[file_id] = dict(actual)
            return f"stored state of {file_id} diverged in {changed}"
        return None

    def fixture_preserved(self) -> bool:
        for file_id, values in self.oracle.records.items():
            status, body = self._as_admin(lambda t: self.client.read(t, file_id, fields=None))
            if status != 200 or not isinstance(body, dict) or body.get("values") != values:
                return False
        return True

    def audit_length(self) -> int:
        status, body = self._as_admin(lambda t: self.client.audit(t, from_sequence=1))
        if status != 200 or not isinstance(body, dict):
            return 0
        events = body.get("events", [])
        return events[-1]["sequence"] if events else 0


class Harness:
    """Runs scenarios, self-hosting throwaway gateways unless given a target."""

    def __init__(
        self,
        fixture_dir: str,
        seed: int = 0,
        target: Optional[str] = None,
        report_dir: Optional[str] = None,
        auth_fail_delay_ms: int = 200,
        attempts_override: Optional[dict[str, int]] = None,
    ):
        self.fixture = load_fixture(fixture_dir)
        self.oracle = FixtureOracle(self.fixture)
        self.seed = seed
        self.target = target
        self.report_dir = report_dir
        self.auth_fail_delay_ms = auth_fail_delay_ms
        self.attempts = dict(DEFAULT_ATTEMPTS)
        if attempts_override:
            self.attempts.update(attempts_override)
        self._work_root: Optional[str] = None

    # -- gateway provisioning ---------------------------------------------

    def _work_dir(self, label: str) -> str:
        if self._work_root is None:
            self._work_root = tempfile.mkdtemp(prefix="healthgate-harness-")
        path = os.path.join(self._work_root, label)
        os.makedirs(path, exist_ok=True)
        return path

    def _host(self, label: str, session_ttl: float, weakened: bool) -> GatewayServer:
        work_dir = self._work_dir(label)
        copy_fixture_store(self.fixture.directory, work_dir)
        config = Config(
            data_dir=work_dir,
            listen_addr="127.0.0.1:0",
            session_ttl_seconds=session_ttl,
            auth_fail_delay_ms=self.auth_fail_delay_ms,
            sweep_interval_seconds=0,
            unsafe_allow_all=weakened,
        )
        iterations = int(self.fixture.settings.get("hash_iterations", 100_000))
        store = HealthStore(work_dir, hash_iterations=iterations)
        return GatewayServer(config, store=store).start()

    def cleanup(self) -> None:
        if self._work_root is not None:
            shutil.rmtree(self._work_root, ignore_errors=True)
            self._work_root = None

    # -- scenario execution -------------------------------------------------

    def run_one(self, name: str, weakened: bool = False) -> ScenarioReport:
        if name not in SCENARIO_NAMES:
            raise HarnessError(f"unknown scenario {name!r}")
        report = ScenarioReport(scenario=name, weakened=weakened, seed=self.seed,
                                attempts=0, successes=0)
        if weakened and self.target is not None:
            report.skipped = True
            report.note = "weakened baseline requires a self-hosted gateway"
            return report
        started = time.monotonic()
        session_ttl = self.fixture.setting_float("session_ttl_seconds", 3600.0)
        if name == "expired_session_reuse":
            if self.target is None:
                session_ttl = 1.0
            elif session_ttl > MAX_EXPIRY_WAIT_SECONDS:
                report.skipped = True
                report.note = (f"target session_ttl_seconds={session_ttl:g} exceeds the "
                               f"{MAX_EXPIRY_WAIT_SECONDS:g} s wait budget")
                return report
        gateway: Optional[GatewayServer] = None
        if self.target is None:
            gateway = self._host(report.label.replace(":", "-"), session_ttl, weakened)
            base_url = gateway.base_url
        else:
            base_url = self.target
        client = GatewayClient(base_url)
        if not client.health():
            if gateway:
                gateway.stop()
            raise TargetUnreachable(f"{base_url} failed the health check")
        run = _ScenarioRun(self, report, client)
        try:
            audit_before = run.audit_length()
            getattr(self, f"_scenario_{name}")(run)
            report.audit_delta = run.audit_length() - audit_before
            # weakened runs mutate their sandbox copy by design; the flag is
            # informational there and a pass requirement for normal runs
            report.fixture_preserved = run.fixture_preserved()
        finally:
            if gateway:
                gateway.stop()
                gateway.store.close()
        report.transcript.sort(key=lambda entry: entry.index)
        report.attempts = len(report.transcript)
        report.duration_seconds = time.monotonic() - started
        return report

    def run_all(self) -> HarnessResult:
        reports = [self.run_one(name) for name in SCENARIO_NAMES]
        for name in WEAKENED_SCENARIOS:
            reports.append(self.run_one(name, weakened=True))
        result = HarnessResult(
            seed=self.seed,
            target=self.target or "self-hosted",
            reports=reports,
        )
        if self.report_dir:
            self.write_reports(result)
        self.cleanup()
        return result

    def write_reports(self, result: HarnessResult) -> None:
        os.makedirs(self.report_dir, exist_ok=True)
        with open(os.path.join(self.report_dir, "report.txt"), "w", encoding="utf-8") as f:
            f.write(result.text_summary())
        with open(os.path.join(self.report_dir, "report.ndjson"), "w", encoding="utf-8") as f:
            for report in result.reports:
                f.write(json.dumps(report.to_json(), separators=(",", ":")) + "\n")

    # -- the six scenarios ---------------------------------------------------

    def _scenario_credential_stuffing(self, run: _ScenarioRun) -> None:
        """Concurrent password guessing against a known username."""
        username = run.fixture.settings.get("stuffing_target", "dr_alice")
        attempts = self.attempts["credential_stuffing"]
        guesses = [f"wrong-{run.rng.randrange(10 ** 9)}-{i}" for i in range(attempts)]

        def fire(index: int):
            status, body, token = run.client.login(username, guesses[index])
            return index, status, body, token

        with ThreadPoolExecutor(max_workers=STUFFING_CONCURRENCY) as pool:
            outcomes = list(pool.map(fire, range(attempts)))
        for index, status, body, token in outcomes:
            breach = None
            if token:
                breach = "guessed password yielded a session token"
            else:
                leaked = run.sentinel_leak(body)
                if leaked:
                    breach = f"login failure leaked value of {leaked}"
            run.record(index, f"POST /api/login username={username} password=***",
                       status, breach)

    def _scenario_token_replay(self, run: _ScenarioRun) -> None:
        """Reuse of a legitimately obtained token after logout revoked it."""
        username = "dr_alice"
        token = run.client.must_login(username, run.fixture.passwords[username])
        # setup, not an attack: prove the token worked before revocation
        status, _ = run.client.read(token, "rec_bob", ["heart_rate"])
        run.record(0, f"GET /api/records/rec_bob fields=heart_rate token={mask_token(token)} (setup)",
                   status)
        run.client.logout(token)
        for i in range(1, self.attempts["token_replay"] + 1):
            # revoked session = no identity; any exposed field is a breach
            run.attempt_read(i, None, token, "rec_bob", None)

    def _scenario_privilege_escalation(self, run: _ScenarioRun) -> None:
        """A patient pushes writes and reads the policy table never granted."""
        username = "pat_bob"
        token = run.client.must_login(username, run.fixture.passwords[username])
        index = 0
        fixed = [
            ("write", "rec_bob", ["heart_rate"]),
            ("write", "rec_carol", ["bgm"]),
            ("read", "rec_carol", None),
            ("read", "rec_carol", ["age", "status"]),
        ]
        for kind, file_id, names in fixed:
            if kind == "write":
                run.attempt_write(index, username, token, file_id,
                                  {n: f"pwned-{index}" for n in names})
            else:
                run.attempt_read(index, username, token, file_id, names)
            index += 1
        status, body = run.client.audit(token, from_sequence=1)
        breach = None
        if status == 200 and isinstance(body, dict) and body.get("events"):
            breach = "patient token read the admin audit log"
        run.record(index, f"GET /api/audit token={mask_token(token)}", status, breach)
        index += 1
        field_names = sorted(f.name for f in CATALOG)
        while index < self.attempts["privilege_escalation"]:
            file_id = run.rng.choice(run.oracle.record_ids())
            names = run.rng.sample(field_names, k=run.rng.randint(1, 3))
            if run.rng.random() < 0.7:
                if self.oracle.write_fully_granted(username, file_id, names):
                    # granted writes are legitimate use, not escalation
                    names = ["operation_history"]
                run.attempt_write(index, username, token, file_id,
                                  {n: f"pwned-{index}" for n in names})
            else:
                run.attempt_read(index, username, token, file_id, names)
            index += 1

    def _scenario_field_exfiltration(self, run: _ScenarioRun) -> None:
        """An officer with a narrow grant requests far more than it covers."""
        username = "ro_rita"
        token = run.client.must_login(username, run.fixture.passwords[username])
        all_fields = sorted(f.name for f in CATALOG)
        run.attempt_read(0, username, token, "rec_bob", all_fields)
        run.attempt_read(1, username, token, "rec_bob", None)
        run.attempt_read(2, username, token, "rec_carol", None)
        for index in range(3, self.attempts["field_exfiltration"]):
            file_id = run.rng.choice(run.oracle.record_ids())
            names = run.rng.sample(all_fields, k=run.rng.randint(2, len(all_fields)))
            run.attempt_read(index, username, token, file_id, sorted(names))

    def _scenario_session_hijack(self, run: _ScenarioRun) -> None:
        """Forged and near-miss tokens aimed at a live victim session."""
        victim = "pat_bob"
        victim_token = run.client.must_login(victim, run.fixture.passwords[victim])
        attempts = self.attempts["session_hijack"]
        hexdigits = string.hexdigits.lower()[:16]
        candidates: list[str] = []
        while len(candidates) < attempts // 2:
            candidates.append("".join(run.rng.choice(hexdigits) for _ in range(64)))
        while len(candidates) < attempts:
            position = run.rng.randrange(64)
            original = victim_token[position]
            flipped = run.rng.choice([c for c in hexdigits if c != original])
            candidates.append(victim_token[:position] + flipped + victim_token[position + 1:])
        for index, forged in enumerate(candidates):
            run.attempt_read(index, None, forged, "rec_bob", None)

    def _scenario_expired_session_reuse(self, run: _ScenarioRun) -> None:
        """A once-valid token presented again after its TTL elapsed."""
        username = "dr_alice"
        status, body, token = run.client.login(username, run.fixture.passwords[username])
        if status != 200 or not token:
            raise HarnessError(f"fixture login failed for {username} (status {status})")
        expires_at = float(body["expires_at"])
        deadline = time.time() + MAX_EXPIRY_WAIT_SECONDS
        while time.time() <= expires_at and time.time() < deadline:
            time.sleep(0.05)
        time.sleep(0.05)  # sit firmly past the boundary
        for index in range(self.attempts["expired_session_reuse"]):
            run.attempt_read(index, None, token, "rec_bob", ["heart_rate"])
