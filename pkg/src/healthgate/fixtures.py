"""Seeded test fixtures: a ready-made store directory plus scenario settings.

A fixture is a normal store data directory with one extra file,
`scenario.cfg`, holding the seeded users' passwords and the knobs the
adversarial harness needs. Fixtures are test assets: the recorded
passwords exist so the harness can authenticate legitimately before
attacking, never for production use.
"""

from __future__ import annotations

import os
import shutil
from dataclasses import dataclass, field

from .policy import CATALOG, HealthRecord, Role, User, field_by_name, parse_policy_table
from .store import ENTITY_FILES, HealthStore

SCENARIO_FILE = "scenario.cfg"

FIXTURE_HASH_ITERATIONS = 1000  # verification honors the per-credential tag

FIXTURE_USERS: tuple[tuple[str, Role], ...] = (
    ("admin_root", Role.ADMIN),
    ("dr_alice", Role.PHYSICIAN),
    ("ro_rita", Role.RECORDS_OFFICER),
    ("pat_bob", Role.PATIENT),
    ("pat_carol", Role.PATIENT),
)

FIXTURE_RECORDS: tuple[tuple[str, str], ...] = (
    ("rec_bob", "pat_bob"),
    ("rec_carol", "pat_carol"),
)

FIXTURE_POLICIES = """\
admin,read,rec_bob,*
admin,read,rec_carol,*
physician,read,rec_bob,heart_rate|blood_pressure|sugar_level
physician,write,rec_bob,heart_rate|blood_pressure
physician,read,rec_carol,heart_rate
records_officer,read,rec_bob,age|status|blood_group
patient,read,rec_bob,*
patient,write,rec_bob,bgm|weight
"""


def fixture_password(username: str) -> str:
    return f"fixture-pw-{username}"


def sentinel_value(file_id: str, field_name: str) -> str:
    """Per-(record, field) marker so leaked values are attributable."""
    return f"{file_id}:{field_name}:secret"


@dataclass
class Fixture:
    directory: str
    passwords: dict[str, str] = field(default_factory=dict)
    settings: dict[str, str] = field(default_factory=dict)

    @property
    def usernames(self) -> list[str]:
        return [name for name, _ in FIXTURE_USERS]

    @property
    def admin_username(self) -> str:
        return self.settings.get("admin_username", "admin_root")

    def setting_float(self, key: str, default: float) -> float:
        return float(self.settings.get(key, default))


def build_fixture(directory: str, session_ttl_seconds: float = 3600.0) -> Fixture:
    """Create (or rebuild) the canonical fixture in `directory`."""
    if os.path.isdir(directory):
        for name in ENTITY_FILES + (SCENARIO_FILE,):
            path = os.path.join(directory, name)
            if os.path.exists(path):
                os.remove(path)
    store = HealthStore(directory, hash_iterations=FIXTURE_HASH_ITERATIONS)
    passwords: dict[str, str] = {}
    user_ids: dict[str, str] = {}
    try:
        for username, role in FIXTURE_USERS:
            uid = f"u-{username}"
            password = fixture_password(username)
            store.put_user(User(uid, username, role, uid), password, correlation_id="seed")
            passwords[username] = password
            user_ids[username] = uid
        for file_id, owner in FIXTURE_RECORDS:
            values = {field_by_name(f.name): sentinel_value(file_id, f.name) for f in CATALOG}
            store.put_record(HealthRecord(file_id, user_ids[owner], values))
        store.save_policy(parse_policy_table(FIXTURE_POLICIES))
    finally:
        store.close()
    settings = {
        "session_ttl_seconds": f"{session_ttl_seconds:g}",
        "hash_iterations": str(FIXTURE_HASH_ITERATIONS),
        "admin_username": "admin_root",
        "stuffing_target": "dr_alice",
    }
    for username, password in passwords.items():
        settings[f"password.{username}"] = password
    write_scenario_config(directory, settings)
    return Fixture(directory=directory, passwords=passwords, settings=settings)


def write_scenario_config(directory: str, settings: dict[str, str]) -> None:
    lines = [f"{key}={value}" for key, value in sorted(settings.items())]
    with open(os.path.join(directory, SCENARIO_FILE), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_fixture(directory: str) -> Fixture:
    path = os.path.join(directory, SCENARIO_FILE)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{directory} has no {SCENARIO_FILE}; not a fixture directory")
    settings: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            settings[key.strip()] = value.strip()
    passwords = {key.split(".", 1)[1]: value
                 for key, value in settings.items() if key.startswith("password.")}
    return Fixture(directory=directory, passwords=passwords, settings=settings)


def copy_fixture_store(fixture_dir: str, work_dir: str) -> None:
    """Materialize a fixture's store files into a fresh working data directory."""
    os.makedirs(work_dir, exist_ok=True)
    for name in os.listdir(work_dir):
        os.remove(os.path.join(work_dir, name))
    for name in ENTITY_FILES:
        source = os.path.join(fixture_dir, name)
        if os.path.exists(source):
            shutil.copy(source, os.path.join(work_dir, name))
