"""Fixture building and adversarial scenario tests at reduced attempt counts."""

import json

import pytest

from healthgate.config import Config
from healthgate.fixtures import build_fixture, load_fixture, copy_fixture_store, sentinel_value
from healthgate.gateway import GatewayServer
from healthgate.harness import (
    Harness,
    HarnessError,
    SCENARIO_NAMES,
    TargetUnreachable,
)
from healthgate.store import HealthStore

SMALL = {
    "credential_stuffing": 12,
    "token_replay": 6,
    "privilege_escalation": 12,
    "field_exfiltration": 12,
    "session_hijack": 10,
    "expired_session_reuse": 3,
}


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("fixture")
    build_fixture(str(directory))
    return str(directory)


def make_harness(fixture_dir, **kwargs) -> Harness:
    kwargs.setdefault("auth_fail_delay_ms", 0)
    kwargs.setdefault("attempts_override", SMALL)
    return Harness(fixture_dir, **kwargs)


class TestFixture:
    def test_build_creates_store_and_settings(self, fixture_dir):
        store = HealthStore(fixture_dir, hash_iterations=1000)
        usernames = {u.username for u in store.list_users()}
        assert {"admin_root", "dr_alice", "ro_rita", "pat_bob", "pat_carol"} <= usernames
        record = store.get_record("rec_bob")
        assert len(record.values) == 12
        assert sentinel_value("rec_bob", "age") in record.values_by_name().values()
        assert len(store.load_policy()) > 0
        store.close()

    def test_load_round_trips_settings(self, fixture_dir):
        fixture = load_fixture(fixture_dir)
        assert fixture.passwords["dr_alice"] == "fixture-pw-dr_alice"
        assert fixture.admin_username == "admin_root"
        assert fixture.setting_float("session_ttl_seconds", 0) == 3600.0

    def test_load_rejects_non_fixture_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_fixture(str(tmp_path))

    def test_copy_materializes_fresh_work_dir(self, fixture_dir, tmp_path):
        work = tmp_path / "work"
        copy_fixture_store(fixture_dir, str(work))
        store = HealthStore(str(work), hash_iterations=1000)
        assert store.get_record("rec_bob") is not None
        assert store.verify_credentials("dr_alice", "fixture-pw-dr_alice")
        store.close()


class TestScenariosAgainstCorrectGateway:
    @pytest.mark.parametrize("name", [n for n in SCENARIO_NAMES if n != "expired_session_reuse"])
    def test_no_breaches(self, fixture_dir, name):
        harness = make_harness(fixture_dir)
        report = harness.run_one(name)
        harness.cleanup()
        assert report.successes == 0, report.breaches
        assert report.attempts >= SMALL[name]
        assert report.fixture_preserved
        assert not report.skipped
        assert report.audit_delta > 0  # attacks leave audit footprints
        indices = [entry.index for entry in report.transcript]
        assert indices == sorted(indices)

    def test_expired_session_reuse(self, fixture_dir):
        harness = make_harness(fixture_dir)
        report = harness.run_one("expired_session_reuse")
        harness.cleanup()
        assert report.successes == 0, report.breaches
        statuses = {e.status for e in report.transcript}
        assert statuses == {401}

    def test_unknown_scenario_rejected(self, fixture_dir):
        with pytest.raises(HarnessError):
            make_harness(fixture_dir).run_one("tea_spilling")


class TestWeakenedBaseline:
    def test_field_exfiltration_detected(self, fixture_dir):
        harness = make_harness(fixture_dir)
        report = harness.run_one("field_exfiltration", weakened=True)
        harness.cleanup()
        assert report.successes >= 1
        assert report.verdict == "DETECTED"
        assert any("ungranted" in b for b in report.breaches)

    def test_privilege_escalation_detected(self, fixture_dir):
        harness = make_harness(fixture_dir)
        report = harness.run_one("privilege_escalation", weakened=True)
        harness.cleanup()
        assert report.successes >= 1

    def test_auth_layer_stays_intact(self, fixture_dir):
        harness = make_harness(fixture_dir)
        report = harness.run_one("credential_stuffing", weakened=True)
        harness.cleanup()
        assert report.successes == 0

    def test_revocation_stays_intact(self, fixture_dir):
        harness = make_harness(fixture_dir)
        report = harness.run_one("token_replay", weakened=True)
        harness.cleanup()
        assert report.successes == 0


class TestDeterminism:
    def test_equal_seeds_equal_transcripts(self, fixture_dir):
        first = make_harness(fixture_dir, seed=42).run_one("field_exfiltration")
        second = make_harness(fixture_dir, seed=42).run_one("field_exfiltration")
        assert first.transcript == second.transcript

    def test_escalation_is_deterministic_too(self, fixture_dir):
        first = make_harness(fixture_dir, seed=9).run_one("privilege_escalation")
        second = make_harness(fixture_dir, seed=9).run_one("privilege_escalation")
        assert first.transcript == second.transcript


class TestExternalTarget:
    @pytest.fixture
    def external(self, fixture_dir, tmp_path):
        work = tmp_path / "external-data"
        copy_fixture_store(fixture_dir, str(work))
        config = Config(data_dir=str(work), listen_addr="127.0.0.1:0",
                        auth_fail_delay_ms=0, sweep_interval_seconds=0)
        store = HealthStore(str(work), hash_iterations=1000)
        gateway = GatewayServer(config, store=store).start()
        yield gateway
        gateway.stop()
        store.close()

    def test_scenario_runs_against_external_url(self, fixture_dir, external):
        harness = make_harness(fixture_dir, target=external.base_url)
        report = harness.run_one("token_replay")
        assert report.successes == 0
        assert report.fixture_preserved

    def test_weakened_is_skipped_externally(self, fixture_dir, external):
        harness = make_harness(fixture_dir, target=external.base_url)
        report = harness.run_one("field_exfiltration", weakened=True)
        assert report.skipped
        assert report.verdict == "SKIPPED"

    def test_unreachable_target(self, fixture_dir):
        harness = make_harness(fixture_dir, target="http://127.0.0.1:9")
        with pytest.raises(TargetUnreachable):
            harness.run_one("token_replay")


class TestRunAll:
    def test_full_sweep_reports_and_passes(self, fixture_dir, tmp_path):
        harness = make_harness(fixture_dir, report_dir=str(tmp_path / "reports"))
        result = harness.run_all()
        assert result.passed
        labels = [r.label for r in result.reports]
        assert labels == list(SCENARIO_NAMES) + [f"weakened:{n}" for n in
                                                 ("field_exfiltration", "privilege_escalation")]
        text = (tmp_path / "reports" / "report.txt").read_text()
        assert "overall: PASS" in text
        assert "credential_stuffing" in text
        lines = (tmp_path / "reports" / "report.ndjson").read_text().splitlines()
        parsed = [json.loads(line) for line in lines]
        assert len(parsed) == 8
        assert {p["verdict"] for p in parsed if p["weakened"]} == {"DETECTED"}
        assert all(p["successes"] == 0 for p in parsed if not p["weakened"])
