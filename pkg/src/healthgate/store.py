"""Persistence for users, credentials, records, sessions, policies, and the audit log.

The substrate is a directory of append-only NDJSON journals, one entity per
line, folded into memory on open (last line per key wins; sessions support
tombstones). Appends are flushed immediately so committed lines survive a
killed process; audit appends are additionally fsynced. Plaintext passwords
never touch disk: credentials hold a salted, iterated hash and a tag naming
the scheme and parameters, and verification honors the tag.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import secrets
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import IO, Optional

from .policy import (
    FieldSet,
    HealthRecord,
    PolicyTable,
    Role,
    User,
    field_by_name,
    format_policy_table,
    parse_policy_table,
)

USERS_FILE = "users.ndjson"
CREDENTIALS_FILE = "credentials.ndjson"
RECORDS_FILE = "records.ndjson"
SESSIONS_FILE = "sessions.ndjson"
AUDIT_FILE = "audit.ndjson"
POLICY_FILE = "policy.tbl"

ENTITY_FILES = (USERS_FILE, CREDENTIALS_FILE, RECORDS_FILE, SESSIONS_FILE, AUDIT_FILE, POLICY_FILE)

DEFAULT_HASH_ITERATIONS = 100_000
_HASH_SCHEME = "pbkdf2_sha256"


class StoreError(Exception):
    """Base class for storage errors."""


class StorageIOError(StoreError):
    pass


class DuplicateUsernameError(StoreError):
    pass


@dataclass(frozen=True)
class CredentialRecord:
    user_id: str
    salt: bytes
    hash: bytes
    algorithm_tag: str


def make_credential(user_id: str, password: str, iterations: int = DEFAULT_HASH_ITERATIONS) -> CredentialRecord:
    salt = secrets.token_bytes(16)
    digest = hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, iterations)
    return CredentialRecord(
        user_id=user_id,
        salt=salt,
        hash=digest,
        algorithm_tag=f"{_HASH_SCHEME}${iterations}",
    )


def verify_credential(credential: CredentialRecord, password: str) -> bool:
    """Recompute under the credential's own tag; constant-time comparison."""
    scheme, _, param = credential.algorithm_tag.partition("$")
    if scheme != _HASH_SCHEME:
        raise StoreError(f"unsupported credential scheme {scheme!r}")
    iterations = int(param)
    digest = hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), credential.salt, iterations)
    return hmac.compare_digest(digest, credential.hash)


class AuditKind(str, Enum):
    REGISTER = "register"
    LOGIN_SUCCESS = "login_success"
    LOGIN_FAILURE = "login_failure"
    CONNECT_ESTABLISH = "connect_establish"
    CONNECT_REFUSE = "connect_refuse"
    ACCESS_GRANTED = "access_granted"
    ACCESS_DENIED = "access_denied"
    REVOKE = "revoke"
    SWEEP = "sweep"


@dataclass(frozen=True)
class AuditEvent:
    sequence: int
    timestamp: float
    correlation_id: str
    actor_username: str
    event_kind: AuditKind
    detail: str
    decision_fields: Optional[FieldSet] = None

    def to_json(self) -> dict:
        return {
            "sequence": self.sequence,
            "timestamp": self.timestamp,
            "correlation_id": self.correlation_id,
            "actor_username": self.actor_username,
            "event_kind": self.event_kind.value,
            "detail": self.detail,
            "decision_fields": None if self.decision_fields is None else self.decision_fields.serialize(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AuditEvent":
        fields = obj.get("decision_fields")
        return cls(
            sequence=obj["sequence"],
            timestamp=obj["timestamp"],
            correlation_id=obj["correlation_id"],
            actor_username=obj["actor_username"],
            event_kind=AuditKind(obj["event_kind"]),
            detail=obj["detail"],
            decision_fields=None if fields is None else FieldSet.deserialize(fields),
        )


@dataclass
class StoredSession:
    token: str
    user_id: str
    established_at: float
    expires_at: float
    revoked: bool = False

    def __post_init__(self) -> None:
        if self.expires_at <= self.established_at:
            raise ValueError("session must expire after it is established")


def normalize_username(username: str) -> str:
    return username.strip()


def _load_lines(path: str) -> list[dict]:
    """Read an NDJSON journal, dropping a torn (uncommitted) final line.

    A final line without its newline, or unparseable, was mid-append when the
    process died; it is truncated away so future appends stay well-formed.
    A torn line anywhere else is real corruption and raises.
    """
    if not os.path.exists(path):
        return []
    with open(path, "rb") as f:
        raw = f.read()
    keep = len(raw)
    if raw and not raw.endswith(b"\n"):
        keep = raw.rfind(b"\n") + 1
    lines = raw[:keep].decode("utf-8").splitlines()
    parsed: list[dict] = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            parsed.append(json.loads(line))
        except json.JSONDecodeError as exc:
            if i == len(lines) - 1:
                keep = sum(len(l.encode("utf-8")) + 1 for l in lines[:i])
            else:
                raise StorageIOError(f"{path}: corrupt journal line {i + 1}") from exc
    if keep != len(raw):
        with open(path, "r+b") as f:
            f.truncate(keep)
    return parsed


class HealthStore:
    """File-backed store; writes are serialized, reads come from memory.

    Safe to share one handle across threads/agents. Reopening over the same
    data directory reloads the last committed state.
    """

    def __init__(self, data_dir: str, hash_iterations: int = DEFAULT_HASH_ITERATIONS):
        self.data_dir = data_dir
        self.hash_iterations = hash_iterations
        os.makedirs(data_dir, exist_ok=True)
        self._lock = threading.RLock()
        self._appenders: dict[str, IO[str]] = {}
        self._users: dict[str, User] = {}
        self._users_by_name: dict[str, User] = {}
        self._credentials: dict[str, CredentialRecord] = {}
        self._records: dict[str, HealthRecord] = {}
        self._sessions: dict[str, StoredSession] = {}
        self._audit: list[AuditEvent] = []
        self._load()

    # -- loading ---------------------------------------------------------

    def _path(self, name: str) -> str:
        return os.path.join(self.data_dir, name)

    def _load(self) -> None:
        for obj in _load_lines(self._path(USERS_FILE)):
            user = User(
                user_id=obj["user_id"],
                username=obj["username"],
                role=Role(obj["role"]),
                credential_ref=obj.get("credential_ref", obj["user_id"]),
            )
            self._users[user.user_id] = user
            self._users_by_name[user.username] = user
        for obj in _load_lines(self._path(CREDENTIALS_FILE)):
            cred = CredentialRecord(
                user_id=obj["user_id"],
                salt=bytes.fromhex(obj["salt"]),
                hash=bytes.fromhex(obj["hash"]),
                algorithm_tag=obj["algorithm_tag"],
            )
            self._credentials[cred.user_id] = cred
        for obj in _load_lines(self._path(RECORDS_FILE)):
            record = HealthRecord(
                file_id=obj["file_id"],
                owner_user_id=obj["owner_user_id"],
                values={field_by_name(n): v for n, v in obj["values"].items()},
            )
            self._records[record.file_id] = record
        for obj in _load_lines(self._path(SESSIONS_FILE)):
            token = obj["token"]
            if obj.get("deleted"):
                self._sessions.pop(token, None)
                continue
            self._sessions[token] = StoredSession(
                token=token,
                user_id=obj["user_id"],
                established_at=obj["established_at"],
                expires_at=obj["expires_at"],
                revoked=obj["revoked"],
            )
        for obj in _load_lines(self._path(AUDIT_FILE)):
            self._audit.append(AuditEvent.from_json(obj))
        for i, event in enumerate(self._audit, start=1):
            if event.sequence != i:
                raise StorageIOError(f"audit sequence gap: expected {i}, found {event.sequence}")

    def _append(self, filename: str, obj: dict, fsync: bool = False) -> None:
        try:
            f = self._appenders.get(filename)
            if f is None:
                f = open(self._path(filename), "a", encoding="utf-8")
                self._appenders[filename] = f
            f.write(json.dumps(obj, separators=(",", ":")) + "\n")
            f.flush()
            if fsync:
                os.fsync(f.fileno())
        except OSError as exc:
            raise StorageIOError(f"append to {filename} failed: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            for f in self._appenders.values():
                f.close()
            self._appenders.clear()

    # -- users and credentials -------------------------------------------

    def put_user(self, user: User, password: str, correlation_id: str = "-") -> User:
        """Persist a new user and a fresh salted credential; appends a register event."""
        username = normalize_username(user.username)
        if not username:
            raise StoreError("username must be non-empty")
        with self._lock:
            if username in self._users_by_name:
                raise DuplicateUsernameError(f"username {username!r} already taken")
            stored = replace(user, username=username)
            credential = make_credential(stored.user_id, password, self.hash_iterations)
            self._append(USERS_FILE, {
                "user_id": stored.user_id,
                "username": stored.username,
                "role": stored.role.value,
                "credential_ref": stored.credential_ref,
            })
            self._append(CREDENTIALS_FILE, {
                "user_id": credential.user_id,
                "salt": credential.salt.hex(),
                "hash": credential.hash.hex(),
                "algorithm_tag": credential.algorithm_tag,
            })
            self._users[stored.user_id] = stored
            self._users_by_name[stored.username] = stored
            self._credentials[stored.user_id] = credential
            self.append_audit(
                correlation_id=correlation_id,
                actor_username=stored.username,
                event_kind=AuditKind.REGISTER,
                detail=f"role={stored.role.value}",
            )
            return stored

    def get_user(self, user_id: str) -> Optional[User]:
        with self._lock:
            return self._users.get(user_id)

    def get_user_by_username(self, username: str) -> Optional[User]:
        with self._lock:
            return self._users_by_name.get(normalize_username(username))

    def list_users(self) -> list[User]:
        with self._lock:
            return list(self._users.values())

    def verify_credentials(self, username: str, password: str) -> Optional[str]:
        """Returns the user_id on a match, None on any mismatch."""
        with self._lock:
            user = self._users_by_name.get(normalize_username(username))
            credential = self._credentials.get(user.user_id) if user else None
        if credential is None:
            return None
        return credential.user_id if verify_credential(credential, password) else None

    # -- records -----------------------------------------------------------

    def put_record(self, record: HealthRecord) -> None:
        """Upsert; the owner must be a registered patient."""
        with self._lock:
            owner = self._users.get(record.owner_user_id)
            if owner is None or owner.role is not Role.PATIENT:
                raise StoreError(
                    f"record owner {record.owner_user_id!r} is not a registered patient"
                )
            self._append(RECORDS_FILE, {
                "file_id": record.file_id,
                "owner_user_id": record.owner_user_id,
                "values": record.values_by_name(),
            })
            self._records[record.file_id] = record

    def get_record(self, file_id: str) -> Optional[HealthRecord]:
        with self._lock:
            record = self._records.get(file_id)
            if record is None:
                return None
            return HealthRecord(record.file_id, record.owner_user_id, dict(record.values))

    def list_record_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._records)

    # -- sessions ----------------------------------------------------------

    def put_session(self, session: StoredSession) -> None:
        with self._lock:
            if session.token in self._sessions:
                raise StoreError("session token collision")
            self._append(SESSIONS_FILE, {
                "token": session.token,
                "user_id": session.user_id,
                "established_at": session.established_at,
                "expires_at": session.expires_at,
                "revoked": session.revoked,
            })
            self._sessions[session.token] = session

    def get_session(self, token: str) -> Optional[StoredSession]:
        with self._lock:
            return self._sessions.get(token)

    def mark_revoked(self, token: str) -> bool:
        """Idempotent; returns True only on a live -> revoked transition."""
        with self._lock:
            session = self._sessions.get(token)
            if session is None or session.revoked:
                return False
            session.revoked = True
            self._append(SESSIONS_FILE, {
                "token": session.token,
                "user_id": session.user_id,
                "established_at": session.established_at,
                "expires_at": session.expires_at,
                "revoked": True,
            })
            return True

    def purge_expired(self, now: float) -> list[str]:
        """Drop sessions with expires_at <= now from the live set; returns their tokens."""
        with self._lock:
            expired = [t for t, s in self._sessions.items() if s.expires_at <= now]
            for token in expired:
                self._append(SESSIONS_FILE, {"token": token, "deleted": True})
                del self._sessions[token]
            return expired

    def live_session_count(self) -> int:
        with self._lock:
            return len(self._sessions)

    def token_exists(self, token: str) -> bool:
        with self._lock:
            return token in self._sessions

    # -- audit ---------------------------------------------------------------

    def append_audit(
        self,
        correlation_id: str,
        actor_username: str,
        event_kind: AuditKind,
        detail: str,
        decision_fields: Optional[FieldSet] = None,
        timestamp: Optional[float] = None,
    ) -> int:
        with self._lock:
            event = AuditEvent(
                sequence=len(self._audit) + 1,
                timestamp=time.time() if timestamp is None else timestamp,
                correlation_id=correlation_id,
                actor_username=actor_username or "-",
                event_kind=event_kind,
                detail=detail,
                decision_fields=decision_fields,
            )
            self._append(AUDIT_FILE, event.to_json(), fsync=True)
            self._audit.append(event)
            return event.sequence

    def read_audit(self, from_sequence: int = 1) -> list[AuditEvent]:
        """Contiguous suffix of the log, starting at from_sequence (inclusive)."""
        with self._lock:
            if from_sequence < 1:
                from_sequence = 1
            return list(self._audit[from_sequence - 1:])

    def audit_length(self) -> int:
        with self._lock:
            return len(self._audit)

    # -- policy table ----------------------------------------------------------

    def policy_path(self) -> str:
        return self._path(POLICY_FILE)

    def load_policy(self) -> PolicyTable:
        path = self.policy_path()
        if not os.path.exists(path):
            return PolicyTable()
        return load_policy_table(path)

    def save_policy(self, table: PolicyTable) -> None:
        save_policy_table(table, self.policy_path())


def load_policy_table(path: str) -> PolicyTable:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise StorageIOError(f"cannot read policy table {path}: {exc}") from exc
    return parse_policy_table(text)


def save_policy_table(table: PolicyTable, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(format_policy_table(table))
    except OSError as exc:
        raise StorageIOError(f"cannot write policy table {path}: {exc}") from exc
