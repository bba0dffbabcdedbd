"""Decision core: domain types, the policy table, and access evaluation.

Everything in this module is pure and immutable. Authorization is a tuple
grant ``<role, mode, file_id, field-set>``; a concrete access attempt is
evaluated against the table and resolved to a field-level grant, so callers
can redact a record down to what the requester is actually allowed to see.

The independent reference evaluator (:func:`oracle_evaluate`) recomputes the
same contract by a deliberately naive per-field linear scan and is used as
ground truth by the test suite and the adversarial harness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, Optional, Union

Scalar = Union[str, int, float]


class PolicyError(Exception):
    """Base class for policy-layer errors."""


class PolicyFormatError(PolicyError):
    """A policy table line failed to parse; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class Role(str, Enum):
    PATIENT = "patient"
    PHYSICIAN = "physician"
    RECORDS_OFFICER = "records_officer"
    ADMIN = "admin"

    @classmethod
    def parse(cls, value: str) -> "Role":
        try:
            return cls(value)
        except ValueError:
            valid = ", ".join(r.value for r in cls)
            raise ValueError(f"unknown role {value!r} (valid roles: {valid})") from None


# Roles an unauthenticated caller may self-register as; admin is operator-only.
PUBLIC_ROLES = frozenset({Role.PATIENT, Role.PHYSICIAN, Role.RECORDS_OFFICER})


class AccessMode(str, Enum):
    READ = "read"
    WRITE = "write"

    @classmethod
    def parse(cls, value: str) -> "AccessMode":
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown access mode {value!r} (valid: read, write)") from None


class FieldGroup(str, Enum):
    ENVIRONMENT = "environment"
    PATIENT_INFO = "patient_info"
    CURRENT_MEDICAL = "current_medical"


@dataclass(frozen=True)
class FieldId:
    """One field of the record catalog, qualified by its group."""

    group: FieldGroup
    name: str

    def __post_init__(self) -> None:
        names = CATALOG_GROUPS.get(self.group)
        if names is None or self.name not in names:
            raise ValueError(f"field {self.name!r} is not in group {self.group.value!r}")


# The canonical field catalog is closed; every record key and every policy
# field must come from here. Names are unique across groups.
CATALOG_GROUPS: dict[FieldGroup, tuple[str, ...]] = {
    FieldGroup.ENVIRONMENT: ("location", "collected_at"),
    FieldGroup.PATIENT_INFO: ("age", "status", "blood_group", "height", "weight", "bgm"),
    FieldGroup.CURRENT_MEDICAL: ("heart_rate", "blood_pressure", "sugar_level", "operation_history"),
}

CATALOG: frozenset[FieldId] = frozenset(
    FieldId(group, name) for group, names in CATALOG_GROUPS.items() for name in names
)

_FIELDS_BY_NAME: dict[str, FieldId] = {f.name: f for f in CATALOG}


def field_by_name(name: str) -> FieldId:
    """Resolve a bare field name against the catalog; raises ValueError if unknown."""
    try:
        return _FIELDS_BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown field name {name!r}") from None


def is_catalog_field(name: str) -> bool:
    return name in _FIELDS_BY_NAME


class FieldSet:
    """Either the wildcard (all catalog fields) or an explicit set of FieldId.

    The wildcard is semantically equal to the full catalog: equality, hashing
    and membership all go through :meth:`resolve`.
    """

    __slots__ = ("_wildcard", "_fields")

    def __init__(self, fields: Iterable[FieldId] = (), *, wildcard: bool = False):
        self._wildcard = wildcard
        self._fields: frozenset[FieldId] = frozenset() if wildcard else frozenset(fields)

    @classmethod
    def wildcard(cls) -> "FieldSet":
        return cls(wildcard=True)

    @classmethod
    def of(cls, fields: Iterable[FieldId]) -> "FieldSet":
        return cls(fields)

    @classmethod
    def of_names(cls, names: Iterable[str]) -> "FieldSet":
        return cls(field_by_name(n) for n in names)

    @classmethod
    def empty(cls) -> "FieldSet":
        return cls()

    @property
    def is_wildcard(self) -> bool:
        return self._wildcard

    def resolve(self) -> frozenset[FieldId]:
        """Expand to the concrete set of fields (wildcard becomes the catalog)."""
        return CATALOG if self._wildcard else self._fields

    def is_empty(self) -> bool:
        return not self._wildcard and not self._fields

    def intersect(self, other: "FieldSet") -> "FieldSet":
        if self._wildcard and other._wildcard:
            return FieldSet.wildcard()
        return FieldSet(self.resolve() & other.resolve())

    def union(self, other: "FieldSet") -> "FieldSet":
        if self._wildcard or other._wildcard:
            return FieldSet.wildcard()
        return FieldSet(self._fields | other._fields)

    def issubset(self, other: "FieldSet") -> bool:
        return self.resolve() <= other.resolve()

    def names(self) -> list[str]:
        return sorted(f.name for f in self.resolve())

    def serialize(self) -> str:
        """Wire form: ``*`` for wildcard, else ``|``-joined sorted field names."""
        if self._wildcard:
            return "*"
        return "|".join(self.names())

    @classmethod
    def deserialize(cls, text: str) -> "FieldSet":
        text = text.strip()
        if text == "*":
            return cls.wildcard()
        if not text:
            return cls.empty()
        return cls.of_names(part.strip() for part in text.split("|"))

    def __contains__(self, item: FieldId) -> bool:
        return item in self.resolve()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FieldSet):
            return NotImplemented
        return self.resolve() == other.resolve()

    def __hash__(self) -> int:
        return hash(self.resolve())

    def __len__(self) -> int:
        return len(self.resolve())

    def __repr__(self) -> str:
        return f"FieldSet({self.serialize()!r})"


@dataclass(frozen=True)
class User:
    user_id: str
    username: str
    role: Role
    credential_ref: str


@dataclass(frozen=True)
class PolicyTuple:
    """One authorization grant: a role may use a mode on a file's field set."""

    role: Role
    mode: AccessMode
    file_id: str
    fields: FieldSet

    def key(self) -> tuple[Role, AccessMode, str]:
        return (self.role, self.mode, self.file_id)


class PolicyTable:
    """Grant set keyed by (role, mode, file_id); duplicate keys merge by field union."""

    def __init__(self, tuples: Iterable[PolicyTuple] = ()):
        self._entries: dict[tuple[Role, AccessMode, str], FieldSet] = {}
        for t in tuples:
            self.add(t)

    def add(self, t: PolicyTuple) -> None:
        key = t.key()
        existing = self._entries.get(key)
        self._entries[key] = t.fields if existing is None else existing.union(t.fields)

    def lookup(self, role: Role, mode: AccessMode, file_id: str) -> Optional[FieldSet]:
        return self._entries.get((role, mode, file_id))

    def has_role(self, role: Role) -> bool:
        return any(key[0] is role for key in self._entries)

    def tuples(self) -> list[PolicyTuple]:
        """Canonical ordering: by role, mode, then file_id."""
        return sorted(
            (PolicyTuple(r, m, f, fs) for (r, m, f), fs in self._entries.items()),
            key=lambda t: (t.role.value, t.mode.value, t.file_id),
        )

    def __iter__(self) -> Iterator[PolicyTuple]:
        return iter(self.tuples())

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolicyTable):
            return NotImplemented
        return self._entries == other._entries


@dataclass(frozen=True)
class AccessRequest:
    """A concrete access attempt; wildcard requested_fields means "everything I am allowed"."""

    user_id: str
    mode: AccessMode
    file_id: str
    requested_fields: FieldSet


@dataclass
class HealthRecord:
    """A stored record: a partial map of catalog fields to scalar values."""

    file_id: str
    owner_user_id: str
    values: dict[FieldId, Scalar] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key, value in self.values.items():
            if key not in CATALOG:
                raise ValueError(f"record value key {key!r} is not a catalog field")
            if isinstance(value, bool) or not isinstance(value, (str, int, float)):
                raise ValueError(f"record value for {key.name!r} must be a string or number")

    def values_by_name(self) -> dict[str, Scalar]:
        return {f.name: v for f, v in sorted(self.values.items(), key=lambda kv: kv[0].name)}


class ConnectOutcome(str, Enum):
    ESTABLISH = "establish"
    NO_CONNECTION = "no_connection"


class ConnectReason(str, Enum):
    OK = "ok"
    UNKNOWN_USER = "unknown_user"
    NO_POLICY_FOR_ROLE = "no_policy_for_role"


@dataclass(frozen=True)
class ConnectDecision:
    outcome: ConnectOutcome
    reason: ConnectReason

    def __post_init__(self) -> None:
        # Establish and ok imply each other.
        if (self.outcome is ConnectOutcome.ESTABLISH) != (self.reason is ConnectReason.OK):
            raise ValueError("establish outcome requires reason ok and vice versa")

    @property
    def established(self) -> bool:
        return self.outcome is ConnectOutcome.ESTABLISH


class AccessOutcome(str, Enum):
    GRANTED = "granted"
    DENIED = "denied"


class AccessReason(str, Enum):
    OK = "ok"
    NO_MATCHING_TUPLE = "no_matching_tuple"
    NOT_AUTHENTICATED = "not_authenticated"


@dataclass(frozen=True)
class AccessDecision:
    outcome: AccessOutcome
    granted_fields: FieldSet
    reason: AccessReason

    def __post_init__(self) -> None:
        if self.outcome is AccessOutcome.GRANTED and self.granted_fields.is_empty():
            raise ValueError("granted decision requires a non-empty field set")
        if self.outcome is AccessOutcome.DENIED and not self.granted_fields.is_empty():
            raise ValueError("denied decision must carry an empty field set")

    @property
    def granted(self) -> bool:
        return self.outcome is AccessOutcome.GRANTED

    @classmethod
    def deny(cls, reason: AccessReason) -> "AccessDecision":
        return cls(AccessOutcome.DENIED, FieldSet.empty(), reason)

    @classmethod
    def grant(cls, fields: FieldSet) -> "AccessDecision":
        return cls(AccessOutcome.GRANTED, fields, AccessReason.OK)


def evaluate_connection(
    username: str, users: Iterable[User], policies: PolicyTable
) -> ConnectDecision:
    """Connection gate: the user must exist and their role must hold at least one grant."""
    user = next((u for u in users if u.username == username), None)
    if user is None:
        return ConnectDecision(ConnectOutcome.NO_CONNECTION, ConnectReason.UNKNOWN_USER)
    if not policies.has_role(user.role):
        return ConnectDecision(ConnectOutcome.NO_CONNECTION, ConnectReason.NO_POLICY_FOR_ROLE)
    return ConnectDecision(ConnectOutcome.ESTABLISH, ConnectReason.OK)


def evaluate_access(
    request: AccessRequest, requester: User, policies: PolicyTable
) -> AccessDecision:
    """Resolve an access attempt to a field-level grant.

    The granted set is the intersection of the matching tuple's fields with
    the requested fields; an empty intersection is a denial, not a grant of
    nothing.
    """
    if requester.user_id != request.user_id:
        raise ValueError("request user_id does not match requester")
    tuple_fields = policies.lookup(requester.role, request.mode, request.file_id)
    if tuple_fields is None:
        return AccessDecision.deny(AccessReason.NO_MATCHING_TUPLE)
    granted = tuple_fields.intersect(request.requested_fields)
    if granted.is_empty():
        return AccessDecision.deny(AccessReason.NO_MATCHING_TUPLE)
    return AccessDecision.grant(granted)


def filter_record(record: HealthRecord, granted: FieldSet) -> HealthRecord:
    """Copy of the record with its values restricted to the granted fields."""
    allowed = granted.resolve()
    return HealthRecord(
        file_id=record.file_id,
        owner_user_id=record.owner_user_id,
        values={f: v for f, v in record.values.items() if f in allowed},
    )


def oracle_evaluate(
    request: AccessRequest, requester: User, policies: Iterable[PolicyTuple]
) -> AccessDecision:
    """Reference evaluator: same contract as :func:`evaluate_access`, computed naively.

    Scans every tuple and every catalog field individually, with no table
    index and no reliance on merged field sets, so it stays independent of
    the production evaluation path. Accepts any iterable of tuples, merged
    or not.
    """
    if requester.user_id != request.user_id:
        raise ValueError("request user_id does not match requester")
    tuples = list(policies)
    key_matched = False
    for t in tuples:
        if t.role is requester.role and t.mode is request.mode and t.file_id == request.file_id:
            key_matched = True
    if not key_matched:
        return AccessDecision.deny(AccessReason.NO_MATCHING_TUPLE)

    requested = request.requested_fields.resolve()
    granted: set[FieldId] = set()
    for f in CATALOG:
        if f not in requested:
            continue
        for t in tuples:
            if (
                t.role is requester.role
                and t.mode is request.mode
                and t.file_id == request.file_id
                and f in t.fields.resolve()
            ):
                granted.add(f)
                break
    if not granted:
        return AccessDecision.deny(AccessReason.NO_MATCHING_TUPLE)
    if request.requested_fields.is_wildcard and granted == set(CATALOG):
        return AccessDecision.grant(FieldSet.wildcard())
    return AccessDecision.grant(FieldSet.of(granted))


# --- policy table wire format -------------------------------------------------
#
# One tuple per line, four columns separated by commas (tabs accepted on
# input): role, mode, file_id, field-set. The field-set column is "|"-joined
# field names or "*". "#" starts a comment line. Round-trips bit-exactly
# after canonicalization (sorted tuples, sorted field names).


def parse_policy_line(line: str) -> Optional[PolicyTuple]:
    """Parse one line; returns None for blank and comment lines."""
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    sep = "\t" if "\t" in stripped else ","
    parts = [p.strip() for p in stripped.split(sep)]
    if len(parts) != 4:
        raise ValueError(f"expected 4 columns separated by {sep!r}, got {len(parts)}")
    role = Role.parse(parts[0])
    mode = AccessMode.parse(parts[1])
    file_id = parts[2]
    if not file_id:
        raise ValueError("empty file_id column")
    fields = FieldSet.deserialize(parts[3])
    if fields.is_empty():
        raise ValueError("empty field-set column")
    return PolicyTuple(role, mode, file_id, fields)


def format_policy_line(t: PolicyTuple) -> str:
    return f"{t.role.value},{t.mode.value},{t.file_id},{t.fields.serialize()}"


def parse_policy_table(text: str) -> PolicyTable:
    table = PolicyTable()
    for line_no, line in enumerate(text.splitlines(), start=1):
        try:
            t = parse_policy_line(line)
        except ValueError as exc:
            raise PolicyFormatError(str(exc), line_no) from exc
        if t is not None:
            table.add(t)
    return table


def format_policy_table(table: PolicyTable) -> str:
    lines = [format_policy_line(t) for t in table.tuples()]
    return "\n".join(lines) + ("\n" if lines else "")
