"""HTTP facade over the agent runtime.

Thin by design: handlers translate HTTP to agent messages and back, and the
record path learns the caller's identity only from the session check inside
the connection-management agent, so no endpoint can hand out record values
without that check having passed. Every response carries X-Correlation-Id.
All 401 responses share one fixed body, byte for byte, so unknown user,
wrong password, refused connection, and bad/expired/revoked tokens are
externally indistinguishable; the header still carries the real
correlation id for log joins.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional
from urllib.parse import parse_qs, unquote, urlparse

from .agents import (
    AccessRequestMsg,
    AccessResultKind,
    AgentRuntime,
    InboxFullError,
    LoginRequest,
    RegisterResult,
    RegisterUser,
    RevokeSession,
    SessionCheck,
    SessionEstablished,
    ValidationFailure,
)
from .config import Config
from .policy import Role
from .store import HealthStore

log = logging.getLogger("healthgate.gateway")

UNIFORM_401_BODY = json.dumps(
    {"code": "invalid_credentials", "message": "invalid credentials", "correlation_id": "-"},
    separators=(",", ":"),
).encode("utf-8")

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


class GatewayServer:
    """Owns the HTTP listener plus (by default) the runtime and store under it."""

    def __init__(
        self,
        config: Config,
        store: Optional[HealthStore] = None,
        runtime: Optional[AgentRuntime] = None,
        clock: Callable[[], float] = time.time,
    ):
        self.config = config
        self._owns_store = store is None
        self.store = HealthStore(config.data_dir) if store is None else store
        self._owns_runtime = runtime is None
        self.runtime = runtime if runtime is not None else AgentRuntime(
            self.store,
            session_ttl=config.session_ttl_seconds,
            inbox_capacity=config.inbox_capacity,
            sweep_interval=config.sweep_interval_seconds or None,
            unsafe_allow_all=config.unsafe_allow_all,
            clock=clock,
        )
        self._httpd: Optional[ThreadingHTTPServer] = None
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "GatewayServer":
        if self._owns_runtime:
            self.runtime.start()
        host, port = self.config.host_port()
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.gateway = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(
            target=lambda: self._httpd.serve_forever(poll_interval=0.05),
            name="gateway-http", daemon=True)
        self._thread.start()
        log.info("listening on %s", self.base_url)
        return self

    def stop(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None
        if self._owns_runtime:
            self.runtime.stop()
        if self._owns_store:
            self.store.close()

    @property
    def port(self) -> int:
        assert self._httpd is not None, "gateway not started"
        return self._httpd.server_address[1]

    @property
    def base_url(self) -> str:
        host, _ = self.config.host_port()
        return f"http://{host}:{self.port}"


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def gateway(self) -> GatewayServer:
        return self.server.gateway  # type: ignore[attr-defined]

    def log_message(self, fmt: str, *args) -> None:
        log.debug("%s %s", self.address_string(), fmt % args)

    # -- plumbing ---------------------------------------------------------

    def _dispatch(self, method: str) -> None:
        correlation_id = uuid.uuid4().hex
        try:
            self._route(method, correlation_id)
        except InboxFullError:
            self._send_error(503, "overloaded", "service saturated, retry later", correlation_id)
        except BrokenPipeError:
            pass
        except Exception:
            log.exception("unhandled error for %s %s", method, self.path)
            self._send_error(500, "internal_error", "internal error", correlation_id)

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    def do_PUT(self) -> None:
        self._dispatch("PUT")

    def _route(self, method: str, cid: str) -> None:
        parsed = urlparse(self.path)
        parts = [unquote(p) for p in parsed.path.split("/") if p]
        if not parts or parts[0] != "api":
            if method == "GET":
                self._serve_console(parsed.path, cid)
            else:
                self._send_error(404, "not_found", "no such endpoint", cid)
            return
        route = (method, tuple(parts[1:2]))
        if route == ("POST", ("register",)) and len(parts) == 2:
            self._post_register(cid)
        elif route == ("POST", ("login",)) and len(parts) == 2:
            self._post_login(cid)
        elif route == ("POST", ("logout",)) and len(parts) == 2:
            self._post_logout(cid)
        elif route == ("GET", ("health",)) and len(parts) == 2:
            self._send_json(200, {"status": "ok"}, cid)
        elif route == ("GET", ("audit",)) and len(parts) == 2:
            self._get_audit(parsed, cid)
        elif parts[1:2] == ["records"] and len(parts) == 3 and method in ("GET", "PUT"):
            if method == "GET":
                self._get_record(parts[2], parsed, cid)
            else:
                self._put_record(parts[2], cid)
        else:
            known = {"register", "login", "logout", "health", "audit", "records"}
            if len(parts) >= 2 and parts[1] in known:
                self._send_error(405, "method_not_allowed", f"{method} not supported here", cid)
            else:
                self._send_error(404, "not_found", "no such endpoint", cid)

    def _read_body(self) -> Optional[dict]:
        length = int(self.headers.get("Content-Length") or 0)
        if length <= 0:
            return None
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            return None
        return body if isinstance(body, dict) else None

    def _bearer_token(self) -> Optional[str]:
        header = self.headers.get("Authorization") or ""
        scheme, _, token = header.partition(" ")
        if scheme.lower() != "bearer" or not token.strip():
            return None
        return token.strip()

    def _send_bytes(self, status: int, body: bytes, cid: str,
                    content_type: str = "application/json") -> None:
        self.send_response(status)
        self.send_header("X-Correlation-Id", cid)
        if body:
            self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if body:
            self.wfile.write(body)

    def _send_json(self, status: int, obj: dict, cid: str) -> None:
        self._send_bytes(status, json.dumps(obj, separators=(",", ":")).encode("utf-8"), cid)

    def _send_error(self, status: int, code: str, message: str, cid: str) -> None:
        self._send_json(status, {"code": code, "message": message, "correlation_id": cid}, cid)

    def _send_auth_failure(self, cid: str) -> None:
        self._send_bytes(401, UNIFORM_401_BODY, cid)

    # -- endpoints ----------------------------------------------------------

    def _post_register(self, cid: str) -> None:
        body = self._read_body()
        if body is None or not all(isinstance(body.get(k), str) for k in ("username", "password", "role")):
            self._send_error(400, "validation", "username, password and role are required", cid)
            return
        result = self.gateway.runtime.request(
            RegisterUser(body["username"], body["password"], body["role"]), correlation_id=cid)
        if isinstance(result, ValidationFailure):
            self._send_error(400, "validation", result.message, cid)
        elif isinstance(result, RegisterResult) and result.ok:
            self._send_json(201, {"user_id": result.user_id}, cid)
        else:
            self._send_error(409, "duplicate_username", "username already taken", cid)

    def _post_login(self, cid: str) -> None:
        body = self._read_body()
        if body is None or not all(isinstance(body.get(k), str) for k in ("username", "password")):
            self._send_error(400, "validation", "username and password are required", cid)
            return
        result = self.gateway.runtime.request(
            LoginRequest(body["username"], body["password"]), correlation_id=cid)
        if isinstance(result, ValidationFailure):
            self._send_error(400, "validation", result.message, cid)
            return
        if isinstance(result, SessionEstablished) and result.ok:
            user = self.gateway.store.get_user(result.user_id)
            self._send_json(200, {
                "token": result.token,
                "expires_at": result.expires_at,
                "username": user.username if user else body["username"],
                "role": user.role.value if user else "",
            }, cid)
            return
        # Wrong password, unknown user, or refused connection: one body,
        # one delay, no way to tell them apart from the outside.
        time.sleep(self.gateway.config.auth_fail_delay_ms / 1000.0)
        self._send_auth_failure(cid)

    def _post_logout(self, cid: str) -> None:
        token = self._bearer_token()
        if token is None:
            self._send_auth_failure(cid)
            return
        self.gateway.runtime.request(RevokeSession(token), correlation_id=cid)
        self._send_bytes(204, b"", cid)

    def _get_record(self, file_id: str, parsed, cid: str) -> None:
        token = self._bearer_token()
        if token is None:
            self._send_auth_failure(cid)
            return
        query = parse_qs(parsed.query, keep_blank_values=True)
        field_names: Optional[tuple[str, ...]] = None
        if "fields" in query:
            raw = query["fields"][-1]
            field_names = tuple(s.strip() for s in raw.split(",") if s.strip())
        result = self.gateway.runtime.request(
            AccessRequestMsg(token, "read", file_id, field_names=field_names), correlation_id=cid)
        self._finish_access(result, cid, lambda r: {"file_id": r.file_id, "values": r.values})

    def _put_record(self, file_id: str, cid: str) -> None:
        token = self._bearer_token()
        if token is None:
            self._send_auth_failure(cid)
            return
        body = self._read_body()
        if body is None or not isinstance(body.get("values"), dict):
            self._send_error(400, "validation", 'body must be {"values": {...}}', cid)
            return
        result = self.gateway.runtime.request(
            AccessRequestMsg(token, "write", file_id, values=body["values"]), correlation_id=cid)
        self._finish_access(result, cid, lambda r: {"file_id": r.file_id, "written": sorted(r.values)})

    def _finish_access(self, result, cid: str, shape) -> None:
        if isinstance(result, ValidationFailure):
            self._send_error(400, "validation", result.message, cid)
        elif result.outcome is AccessResultKind.NOT_AUTHENTICATED:
            self._send_auth_failure(cid)
        elif result.outcome is AccessResultKind.DENIED:
            self._send_error(403, "access_denied", "access denied", cid)
        elif result.outcome is AccessResultKind.NOT_FOUND:
            self._send_error(404, "not_found", "no such record", cid)
        else:
            self._send_json(200, shape(result), cid)

    def _get_audit(self, parsed, cid: str) -> None:
        token = self._bearer_token()
        if token is None:
            self._send_auth_failure(cid)
            return
        checked = self.gateway.runtime.request(SessionCheck(token), correlation_id=cid)
        if not checked.valid:
            self._send_auth_failure(cid)
            return
        if checked.role is not Role.ADMIN:
            self._send_error(403, "access_denied", "audit log is admin-only", cid)
            return
        query = parse_qs(parsed.query)
        raw_from = query.get("from", ["1"])[-1]
        try:
            from_sequence = int(raw_from)
        except ValueError:
            self._send_error(400, "validation", "from must be an integer", cid)
            return
        events = self.gateway.store.read_audit(from_sequence)
        self._send_json(200, {"events": [e.to_json() for e in events]}, cid)

    # -- static console -----------------------------------------------------

    def _serve_console(self, path: str, cid: str) -> None:
        root = self.gateway.config.console_dir
        if root is None:
            self._send_error(404, "not_found", "no such endpoint", cid)
            return
        rel = path.lstrip("/") or "index.html"
        full = os.path.normpath(os.path.join(root, rel))
        if not full.startswith(os.path.normpath(root) + os.sep) and full != os.path.normpath(root):
            self._send_error(404, "not_found", "no such file", cid)
            return
        if os.path.isdir(full):
            full = os.path.join(full, "index.html")
        if not os.path.isfile(full):
            self._send_error(404, "not_found", "no such file", cid)
            return
        ext = os.path.splitext(full)[1].lower()
        with open(full, "rb") as f:
            data = f.read()
        self._send_bytes(200, data, cid, content_type=_CONTENT_TYPES.get(ext, "application/octet-stream"))
