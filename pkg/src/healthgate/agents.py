"""Four cooperating agents wired by bounded message queues.

Pipeline: user_interface -> authentication -> connection_establishment
-> connection_management. Each agent is a single thread draining its own
inbox, so an agent never processes two messages concurrently; agents share
state only through the store and never read each other's internals. A
message carries the interaction's correlation_id and a reply future; every
hop forwards both, so the caller's future resolves exactly once with the
final outcome and the correlation_id survives the whole interaction.
"""

from __future__ import annotations

import queue
import secrets
import threading
import time
import uuid
from concurrent.futures import Future
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Union

from .policy import (
    AccessDecision,
    AccessMode,
    AccessRequest,
    FieldSet,
    HealthRecord,
    PUBLIC_ROLES,
    PolicyTable,
    Role,
    Scalar,
    User,
    evaluate_access,
    evaluate_connection,
    field_by_name,
    filter_record,
    is_catalog_field,
)
from .store import AuditKind, DuplicateUsernameError, HealthStore, StoredSession

DEFAULT_SESSION_TTL = 3600.0
DEFAULT_INBOX_CAPACITY = 1024
_UNIFORM_AUTH_FAILURE = "invalid credentials"


class AgentKind(str, Enum):
    USER_INTERFACE = "user_interface"
    AUTHENTICATION = "authentication"
    CONNECTION_ESTABLISHMENT = "connection_establishment"
    CONNECTION_MANAGEMENT = "connection_management"


class AgentError(Exception):
    pass


class InboxFullError(AgentError):
    """An agent inbox is at capacity; the caller should shed load."""


# -- message payloads ------------------------------------------------------
# Requests flow forward through the pipeline; *Result values resolve the
# caller's future and never travel between agents.


@dataclass(frozen=True)
class RegisterUser:
    username: str
    password: str
    role_name: str


@dataclass(frozen=True)
class RegisterResult:
    ok: bool
    user_id: str = ""
    error: str = ""


@dataclass(frozen=True)
class LoginRequest:
    username: str
    password: str


@dataclass(frozen=True)
class AuthResult:
    ok: bool
    user_id: Optional[str] = None
    message: str = ""


@dataclass(frozen=True)
class EstablishSession:
    user_id: str
    username: str


@dataclass(frozen=True)
class SessionEstablished:
    ok: bool
    token: str = ""
    expires_at: float = 0.0
    user_id: str = ""
    message: str = ""


@dataclass(frozen=True)
class AccessRequestMsg:
    token: str
    mode_name: str
    file_id: str
    # None means Wildcard for reads; writes derive the request from `values`.
    field_names: Optional[tuple[str, ...]] = None
    values: Optional[dict[str, Scalar]] = None


class AccessResultKind(str, Enum):
    GRANTED = "granted"
    DENIED = "denied"
    NOT_AUTHENTICATED = "not_authenticated"
    NOT_FOUND = "not_found"


@dataclass(frozen=True)
class AccessResult:
    outcome: AccessResultKind
    file_id: str = ""
    granted_fields: Optional[FieldSet] = None
    values: Optional[dict[str, Scalar]] = None
    message: str = ""


@dataclass(frozen=True)
class ExpireSweep:
    now: Optional[float] = None


@dataclass(frozen=True)
class SweepResult:
    purged: int


@dataclass(frozen=True)
class RevokeSession:
    token: str


@dataclass(frozen=True)
class RevokeAck:
    acknowledged: bool = True


@dataclass(frozen=True)
class SessionCheck:
    token: str


@dataclass(frozen=True)
class SessionCheckResult:
    user_id: Optional[str] = None
    username: str = ""
    role: Optional[Role] = None

    @property
    def valid(self) -> bool:
        return self.user_id is not None


@dataclass(frozen=True)
class ValidationFailure:
    message: str


@dataclass(frozen=True)
class Shutdown:
    pass


Payload = Union[
    RegisterUser, LoginRequest, AuthResult, EstablishSession, SessionEstablished,
    AccessRequestMsg, AccessResult, ExpireSweep, RevokeSession, SessionCheck, Shutdown,
]


@dataclass
class AgentMessage:
    correlation_id: str
    payload: Payload
    reply: Future = field(default_factory=Future)

    def resolve(self, value) -> None:
        if not self.reply.done():
            self.reply.set_result(value)

    def reject(self, exc: BaseException) -> None:
        if not self.reply.done():
            self.reply.set_exception(exc)

    def forward(self, payload: Payload) -> "AgentMessage":
        """Next-hop message for the same interaction: id and future carry over."""
        return AgentMessage(self.correlation_id, payload, self.reply)


class Agent(threading.Thread):
    """Inbox-draining worker; subclasses implement handle()."""

    def __init__(self, kind: AgentKind, capacity: int):
        super().__init__(name=f"agent-{kind.value}", daemon=True)
        self.kind = kind
        self.inbox: "queue.Queue[AgentMessage]" = queue.Queue(maxsize=capacity)

    def submit(self, message: AgentMessage) -> None:
        try:
            self.inbox.put_nowait(message)
        except queue.Full:
            raise InboxFullError(f"{self.kind.value} inbox full")

    def forward_to(self, other: "Agent", message: AgentMessage) -> None:
        # Internal hops block briefly instead of shedding; the pipeline is
        # acyclic so this cannot deadlock.
        try:
            other.inbox.put(message, timeout=30.0)
        except queue.Full:
            message.reject(InboxFullError(f"{other.kind.value} inbox full"))

    def run(self) -> None:
        while True:
            message = self.inbox.get()
            if isinstance(message.payload, Shutdown):
                message.resolve(True)
                break
            try:
                self.handle(message)
            except Exception as exc:  # a broken handler must not wedge the caller
                message.reject(exc)

    def handle(self, message: AgentMessage) -> None:
        raise NotImplementedError


class UserInterfaceAgent(Agent):
    """Front door: shape validation only, then routing. No authorization here."""

    def __init__(self, runtime: "AgentRuntime"):
        super().__init__(AgentKind.USER_INTERFACE, runtime.inbox_capacity)
        self.runtime = runtime

    def handle(self, message: AgentMessage) -> None:
        payload = message.payload
        if isinstance(payload, RegisterUser):
            self._handle_register(message, payload)
        elif isinstance(payload, LoginRequest):
            self._handle_login(message, payload)
        elif isinstance(payload, AccessRequestMsg):
            self._handle_access(message, payload)
        else:
            message.reject(AgentError(f"unroutable payload {type(payload).__name__}"))

    def _handle_register(self, message: AgentMessage, payload: RegisterUser) -> None:
        if not payload.username.strip() or not payload.password:
            message.resolve(ValidationFailure("username and password must be non-empty"))
            return
        try:
            role = Role.parse(payload.role_name)
        except ValueError:
            message.resolve(ValidationFailure(f"unknown role {payload.role_name!r}"))
            return
        if role not in PUBLIC_ROLES:
            message.resolve(ValidationFailure(f"role {role.value!r} cannot self-register"))
            return
        self.forward_to(self.runtime.authentication, message)

    def _handle_login(self, message: AgentMessage, payload: LoginRequest) -> None:
        if not payload.username.strip() or not payload.password:
            message.resolve(ValidationFailure("username and password must be non-empty"))
            return
        self.forward_to(self.runtime.authentication, message)

    def _handle_access(self, message: AgentMessage, payload: AccessRequestMsg) -> None:
        try:
            mode = AccessMode.parse(payload.mode_name)
        except ValueError:
            message.resolve(ValidationFailure(f"unknown mode {payload.mode_name!r}"))
            return
        if not payload.file_id.strip():
            message.resolve(ValidationFailure("file_id must be non-empty"))
            return
        if mode is AccessMode.READ:
            if payload.field_names is not None:
                if not payload.field_names:
                    message.resolve(ValidationFailure("fields list must be non-empty"))
                    return
                unknown = [n for n in payload.field_names if not is_catalog_field(n)]
                if unknown:
                    message.resolve(ValidationFailure(f"unknown field {unknown[0]!r}"))
                    return
        else:
            values = payload.values
            if not values:
                message.resolve(ValidationFailure("write body must name at least one field"))
                return
            for name, value in values.items():
                if not is_catalog_field(name):
                    message.resolve(ValidationFailure(f"unknown field {name!r}"))
                    return
                if isinstance(value, bool) or not isinstance(value, (str, int, float)):
                    message.resolve(ValidationFailure(f"field {name!r} value must be a scalar"))
                    return
        self.forward_to(self.runtime.connection_management, message)


class AuthenticationAgent(Agent):
    """Credential verification and user registration; owns login audit events."""

    def __init__(self, runtime: "AgentRuntime"):
        super().__init__(AgentKind.AUTHENTICATION, runtime.inbox_capacity)
        self.runtime = runtime

    def handle(self, message: AgentMessage) -> None:
        payload = message.payload
        if isinstance(payload, RegisterUser):
            self._handle_register(message, payload)
        elif isinstance(payload, LoginRequest):
            self._handle_login(message, payload)
        else:
            message.reject(AgentError(f"unroutable payload {type(payload).__name__}"))

    def _handle_register(self, message: AgentMessage, payload: RegisterUser) -> None:
        store = self.runtime.store
        role = Role.parse(payload.role_name)
        user_id = uuid.uuid4().hex
        user = User(user_id, payload.username, role, credential_ref=user_id)
        try:
            stored = store.put_user(user, payload.password, correlation_id=message.correlation_id)
        except DuplicateUsernameError:
            message.resolve(RegisterResult(ok=False, error="duplicate_username"))
            return
        message.resolve(RegisterResult(ok=True, user_id=stored.user_id))

    def _handle_login(self, message: AgentMessage, payload: LoginRequest) -> None:
        runtime = self.runtime
        store = runtime.store
        user_id = store.verify_credentials(payload.username, payload.password)
        if user_id is None:
            known = store.get_user_by_username(payload.username) is not None
            store.append_audit(
                correlation_id=message.correlation_id,
                actor_username=payload.username.strip() or "-",
                event_kind=AuditKind.LOGIN_FAILURE,
                detail="wrong_password" if known else "unknown_user",
                timestamp=runtime.clock(),
            )
            # Both causes resolve to the identical value: callers cannot tell
            # an unknown user from a wrong password.
            message.resolve(AuthResult(ok=False, message=_UNIFORM_AUTH_FAILURE))
            return
        user = store.get_user(user_id)
        store.append_audit(
            correlation_id=message.correlation_id,
            actor_username=user.username,
            event_kind=AuditKind.LOGIN_SUCCESS,
            detail=f"role={user.role.value}",
            timestamp=runtime.clock(),
        )
        self.forward_to(
            runtime.connection_establishment,
            message.forward(EstablishSession(user_id=user_id, username=user.username)),
        )


class ConnectionEstablishmentAgent(Agent):
    """Gate of record for new sessions: role must hold at least one policy tuple."""

    def __init__(self, runtime: "AgentRuntime"):
        super().__init__(AgentKind.CONNECTION_ESTABLISHMENT, runtime.inbox_capacity)
        self.runtime = runtime

    def handle(self, message: AgentMessage) -> None:
        payload = message.payload
        if not isinstance(payload, EstablishSession):
            message.reject(AgentError(f"unroutable payload {type(payload).__name__}"))
            return
        runtime = self.runtime
        store = runtime.store
        if not runtime.unsafe_allow_all:
            decision = evaluate_connection(payload.username, store.list_users(), runtime.policies)
            if not decision.established:
                store.append_audit(
                    correlation_id=message.correlation_id,
                    actor_username=payload.username,
                    event_kind=AuditKind.CONNECT_REFUSE,
                    detail=decision.reason.value,
                    timestamp=runtime.clock(),
                )
                message.resolve(SessionEstablished(ok=False, message=_UNIFORM_AUTH_FAILURE))
                return
        now = runtime.clock()
        session = StoredSession(
            token=secrets.token_hex(32),
            user_id=payload.user_id,
            established_at=now,
            expires_at=now + runtime.session_ttl,
        )
        store.put_session(session)
        store.append_audit(
            correlation_id=message.correlation_id,
            actor_username=payload.username,
            event_kind=AuditKind.CONNECT_ESTABLISH,
            detail=f"ttl={runtime.session_ttl:g}",
            timestamp=now,
        )
        message.resolve(SessionEstablished(
            ok=True,
            token=session.token,
            expires_at=session.expires_at,
            user_id=payload.user_id,
        ))


class ConnectionManagementAgent(Agent):
    """Session custody plus the single policy-decision point for record access."""

    def __init__(self, runtime: "AgentRuntime"):
        super().__init__(AgentKind.CONNECTION_MANAGEMENT, runtime.inbox_capacity)
        self.runtime = runtime

    def handle(self, message: AgentMessage) -> None:
        payload = message.payload
        if isinstance(payload, AccessRequestMsg):
            self._handle_access(message, payload)
        elif isinstance(payload, SessionCheck):
            message.resolve(self._check(payload.token))
        elif isinstance(payload, RevokeSession):
            self._handle_revoke(message, payload)
        elif isinstance(payload, ExpireSweep):
            self._handle_sweep(message, payload)
        else:
            message.reject(AgentError(f"unroutable payload {type(payload).__name__}"))

    def _check(self, token: str) -> SessionCheckResult:
        """Valid iff the token exists, is not revoked, and has not expired."""
        runtime = self.runtime
        session = runtime.store.get_session(token)
        if session is None or session.revoked or runtime.clock() >= session.expires_at:
            return SessionCheckResult()
        user = runtime.store.get_user(session.user_id)
        if user is None:
            return SessionCheckResult()
        return SessionCheckResult(user_id=user.user_id, username=user.username, role=user.role)

    def _handle_access(self, message: AgentMessage, payload: AccessRequestMsg) -> None:
        runtime = self.runtime
        store = runtime.store
        checked = self._check(payload.token)
        if not checked.valid:
            # No token, no identity: the request never reaches policy
            # evaluation and leaves no decision event behind.
            message.resolve(AccessResult(AccessResultKind.NOT_AUTHENTICATED, message="not authenticated"))
            return
        user = store.get_user(checked.user_id)
        mode = AccessMode.parse(payload.mode_name)
        if mode is AccessMode.READ:
            requested = (FieldSet.wildcard() if payload.field_names is None
                         else FieldSet.of_names(payload.field_names))
        else:
            requested = FieldSet.of_names(payload.values.keys())
        request = AccessRequest(user.user_id, mode, payload.file_id, requested)
        if runtime.unsafe_allow_all:
            decision = AccessDecision.grant(FieldSet.wildcard())
        else:
            decision = evaluate_access(request, user, runtime.policies)
        if not decision.granted:
            self._audit_decision(message, user.username, AuditKind.ACCESS_DENIED,
                                 f"{mode.value} {payload.file_id}: {decision.reason.value}", None)
            message.resolve(AccessResult(AccessResultKind.DENIED, file_id=payload.file_id,
                                         message="access denied"))
            return
        if mode is AccessMode.READ:
            self._finish_read(message, payload, user.username, decision)
        else:
            self._finish_write(message, payload, user.username, requested, decision)

    def _finish_read(self, message: AgentMessage, payload: AccessRequestMsg,
                     username: str, decision: AccessDecision) -> None:
        record = self.runtime.store.get_record(payload.file_id)
        if record is None:
            self._audit_decision(message, username, AuditKind.ACCESS_GRANTED,
                                 f"read {payload.file_id}: record_absent", decision.granted_fields)
            message.resolve(AccessResult(AccessResultKind.NOT_FOUND, file_id=payload.file_id,
                                         message="no such record"))
            return
        filtered = filter_record(record, decision.granted_fields)
        self._audit_decision(message, username, AuditKind.ACCESS_GRANTED,
                             f"read {payload.file_id}", decision.granted_fields)
        message.resolve(AccessResult(
            AccessResultKind.GRANTED,
            file_id=payload.file_id,
            granted_fields=decision.granted_fields,
            values=filtered.values_by_name(),
        ))

    def _finish_write(self, message: AgentMessage, payload: AccessRequestMsg,
                      username: str, requested: FieldSet, decision: AccessDecision) -> None:
        store = self.runtime.store
        # Strict write: every field in the body must be granted, or nothing is.
        if not requested.resolve() <= decision.granted_fields.resolve():
            self._audit_decision(message, username, AuditKind.ACCESS_DENIED,
                                 f"write {payload.file_id}: strict_write", decision.granted_fields)
            message.resolve(AccessResult(AccessResultKind.DENIED, file_id=payload.file_id,
                                         message="access denied"))
            return
        record = store.get_record(payload.file_id)
        if record is None:
            self._audit_decision(message, username, AuditKind.ACCESS_GRANTED,
                                 f"write {payload.file_id}: record_absent", decision.granted_fields)
            message.resolve(AccessResult(AccessResultKind.NOT_FOUND, file_id=payload.file_id,
                                         message="no such record"))
            return
        merged = dict(record.values)
        for name, value in payload.values.items():
            merged[field_by_name(name)] = value
        store.put_record(HealthRecord(record.file_id, record.owner_user_id, merged))
        self._audit_decision(message, username, AuditKind.ACCESS_GRANTED,
                             f"write {payload.file_id}", decision.granted_fields)
        message.resolve(AccessResult(
            AccessResultKind.GRANTED,
            file_id=payload.file_id,
            granted_fields=decision.granted_fields,
            values=dict(payload.values),
        ))

    def _audit_decision(self, message: AgentMessage, username: str, kind: AuditKind,
                        detail: str, fields: Optional[FieldSet]) -> None:
        self.runtime.store.append_audit(
            correlation_id=message.correlation_id,
            actor_username=username,
            event_kind=kind,
            detail=detail,
            decision_fields=fields,
            timestamp=self.runtime.clock(),
        )

    def _handle_revoke(self, message: AgentMessage, payload: RevokeSession) -> None:
        runtime = self.runtime
        store = runtime.store
        session = store.get_session(payload.token)
        changed = store.mark_revoked(payload.token)
        if changed:
            user = store.get_user(session.user_id) if session else None
            store.append_audit(
                correlation_id=message.correlation_id,
                actor_username=user.username if user else "-",
                event_kind=AuditKind.REVOKE,
                detail="session revoked",
                timestamp=runtime.clock(),
            )
        message.resolve(RevokeAck(acknowledged=True))

    def _handle_sweep(self, message: AgentMessage, payload: ExpireSweep) -> None:
        runtime = self.runtime
        now = runtime.clock() if payload.now is None else payload.now
        purged = runtime.store.purge_expired(now)
        if purged:
            runtime.store.append_audit(
                correlation_id=message.correlation_id,
                actor_username="-",
                event_kind=AuditKind.SWEEP,
                detail=f"count={len(purged)}",
                timestamp=now,
            )
        message.resolve(SweepResult(purged=len(purged)))


class AgentRuntime:
    """Owns the four agents, their wiring, and the shared policy table."""

    def __init__(
        self,
        store: HealthStore,
        policies: Optional[PolicyTable] = None,
        session_ttl: float = DEFAULT_SESSION_TTL,
        inbox_capacity: int = DEFAULT_INBOX_CAPACITY,
        sweep_interval: Optional[float] = None,
        unsafe_allow_all: bool = False,
        clock: Callable[[], float] = time.time,
    ):
        self.store = store
        self.policies = store.load_policy() if policies is None else policies
        self.session_ttl = session_ttl
        self.inbox_capacity = inbox_capacity
        self.sweep_interval = sweep_interval
        self.unsafe_allow_all = unsafe_allow_all
        self.clock = clock
        self.user_interface = UserInterfaceAgent(self)
        self.authentication = AuthenticationAgent(self)
        self.connection_establishment = ConnectionEstablishmentAgent(self)
        self.connection_management = ConnectionManagementAgent(self)
        self._agents = (
            self.user_interface,
            self.authentication,
            self.connection_establishment,
            self.connection_management,
        )
        self._sweep_stop = threading.Event()
        self._sweeper: Optional[threading.Thread] = None
        self._started = False

    def start(self) -> "AgentRuntime":
        if self._started:
            return self
        for agent in self._agents:
            agent.start()
        if self.sweep_interval:
            self._sweeper = threading.Thread(target=self._sweep_loop, name="session-sweeper", daemon=True)
            self._sweeper.start()
        self._started = True
        return self

    def stop(self) -> None:
        if not self._started:
            return
        self._sweep_stop.set()
        if self._sweeper is not None:
            self._sweeper.join(timeout=5.0)
        for agent in self._agents:
            agent.inbox.put(AgentMessage(correlation_id="-", payload=Shutdown()))
        for agent in self._agents:
            agent.join(timeout=5.0)
        self._started = False

    def _sweep_loop(self) -> None:
        while not self._sweep_stop.wait(self.sweep_interval):
            try:
                self.request(ExpireSweep(), correlation_id=f"swp-{uuid.uuid4().hex[:12]}")
            except Exception:
                continue  # a failed sweep retries next interval

    def _entry_agent(self, payload: Payload) -> Agent:
        if isinstance(payload, (RegisterUser, LoginRequest, AccessRequestMsg)):
            return self.user_interface
        if isinstance(payload, (RevokeSession, ExpireSweep, SessionCheck)):
            return self.connection_management
        raise AgentError(f"no entry route for {type(payload).__name__}")

    def submit(self, payload: Payload, correlation_id: Optional[str] = None) -> tuple[str, Future]:
        """Inject an interaction; raises InboxFullError when saturated."""
        if correlation_id is None:
            correlation_id = uuid.uuid4().hex
        message = AgentMessage(correlation_id=correlation_id, payload=payload)
        self._entry_agent(payload).submit(message)
        return correlation_id, message.reply

    def request(self, payload: Payload, correlation_id: Optional[str] = None, timeout: float = 30.0):
        _, future = self.submit(payload, correlation_id)
        return future.result(timeout=timeout)
