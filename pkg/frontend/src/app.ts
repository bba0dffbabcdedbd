// The whole console: three views (login, record request, audit) driven off
// one in-memory state object. Rendering is plain DOM construction; values
// always go through textContent, never innerHTML.

import { AuditEvent, GatewayClient, GatewayError } from "./api.js";
import { CATALOG, FIELD_NAMES, GROUP_LABELS, PUBLIC_ROLES, Role } from "./catalog.js";
import { ConsoleSession, formatCountdown, secondsLeft } from "./session.js";

type View = "login" | "console" | "audit";

interface Banner {
  kind: "error" | "info";
  text: string;
  retry?: () => Promise<void>;
}

interface ResultRow {
  name: string;
  kind: "value" | "lock";
  text: string;
}

interface RecordResult {
  fileId: string;
  rows: ResultRow[];
}

export class ConsoleApp {
  private session: ConsoleSession | null = null;
  private view: View = "login";
  private banner: Banner | null = null;
  private recordResult: RecordResult | null = null;
  private auditEvents: AuditEvent[] = [];
  private auditFrom = 1;
  private pending = false;
  private countdownTimer: ReturnType<typeof setInterval> | null = null;
  // Chained so tests can `await app.idle()` after dispatching a click.
  private lastOp: Promise<void> = Promise.resolve();
  // Cosmetics: refill the forms after a render so a re-request is one click.
  private loginUsername = "";
  private lastFileId = "";
  private lastChecked: string[] = [];

  constructor(private root: HTMLElement, private client: GatewayClient) {}

  mount(): void {
    this.render();
  }

  unmount(): void {
    this.stopCountdown();
    this.root.textContent = "";
  }

  idle(): Promise<void> {
    return this.lastOp;
  }

  private track(op: () => Promise<void>): void {
    this.lastOp = this.lastOp.then(op, op);
  }

  // -- actions --------------------------------------------------------------

  private async doLogin(username: string, password: string): Promise<void> {
    if (this.pending) return;
    this.pending = true;
    this.loginUsername = username;
    try {
      const reply = await this.client.login(username, password);
      this.session = {
        token: reply.token,
        username: reply.username ?? username,
        role: reply.role as Role,
        expiresAt: reply.expires_at,
      };
      this.view = "console";
      this.banner = null;
      this.recordResult = null;
      this.startCountdown();
    } catch (err) {
      this.handleFailure(err, () => this.doLogin(username, password));
    } finally {
      this.pending = false;
      this.render();
    }
  }

  private async doRegister(username: string, password: string, role: string): Promise<void> {
    if (this.pending) return;
    this.pending = true;
    try {
      await this.client.register(username, password, role);
      this.banner = { kind: "info", text: `account ${username} created, log in below` };
    } catch (err) {
      this.handleFailure(err, () => this.doRegister(username, password, role));
    } finally {
      this.pending = false;
      this.render();
    }
  }

  private async doLogout(): Promise<void> {
    const session = this.session;
    if (session) {
      try {
        await this.client.logout(session.token);
      } catch {
        // the session dies locally regardless
      }
    }
    this.endSession({ kind: "info", text: "logged out" });
  }

  private async doRecordRequest(fileId: string, checked: string[]): Promise<void> {
    if (this.pending || !this.session) return;
    this.pending = true;
    this.lastFileId = fileId;
    this.lastChecked = checked;
    // nothing carries over from the previous answer
    this.recordResult = null;
    this.root.querySelector(".record-result")?.remove();
    const shown = checked.length > 0 ? checked : FIELD_NAMES;
    try {
      const reply = await this.client.readRecord(
        this.session.token,
        fileId,
        checked.length > 0 ? checked : undefined,
      );
      this.recordResult = {
        fileId,
        rows: shown.map((name) =>
          name in reply.values
            ? { name, kind: "value" as const, text: String(reply.values[name]) }
            : { name, kind: "lock" as const, text: "not granted" },
        ),
      };
      this.banner = null;
    } catch (err) {
      if (err instanceof GatewayError && err.status === 403) {
        this.recordResult = {
          fileId,
          rows: shown.map((name) => ({ name, kind: "lock" as const, text: err.message })),
        };
        this.banner = null;
      } else if (err instanceof GatewayError && err.status === 404) {
        this.banner = { kind: "error", text: `record ${fileId} not found` };
      } else {
        this.handleFailure(err, () => this.doRecordRequest(fileId, checked));
      }
    } finally {
      this.pending = false;
      this.render();
    }
  }

  private async doLoadAudit(from: number): Promise<void> {
    if (this.pending || !this.session) return;
    this.pending = true;
    this.render();
    try {
      this.auditEvents = await this.client.audit(this.session.token, from);
      this.auditFrom = from;
      this.banner = null;
    } catch (err) {
      if (err instanceof GatewayError && err.status === 403) {
        this.banner = { kind: "error", text: "audit log is admin-only" };
      } else {
        this.handleFailure(err, () => this.doLoadAudit(from));
      }
    } finally {
      this.pending = false;
      this.render();
    }
  }

  // A 401 while holding a session means it is gone server-side; network
  // failures get a retry banner instead of losing the view.
  private handleFailure(err: unknown, retry: () => Promise<void>): void {
    if (err instanceof GatewayError) {
      if (err.status === 401 && this.session) {
        this.endSession({ kind: "error", text: "session expired or invalid, log in again" });
        return;
      }
      this.banner = { kind: "error", text: err.message };
      return;
    }
    this.banner = {
      kind: "error",
      text: "gateway unreachable",
      retry: () => retry(),
    };
  }

  private endSession(banner: Banner): void {
    this.stopCountdown();
    this.session = null;
    this.view = "login";
    this.recordResult = null;
    this.auditEvents = [];
    this.banner = banner;
    this.render();
  }

  private startCountdown(): void {
    this.stopCountdown();
    this.countdownTimer = setInterval(() => this.tickCountdown(), 1000);
  }

  private stopCountdown(): void {
    if (this.countdownTimer !== null) {
      clearInterval(this.countdownTimer);
      this.countdownTimer = null;
    }
  }

  private tickCountdown(): void {
    if (!this.session) return;
    const left = secondsLeft(this.session);
    if (left <= 0) {
      this.endSession({ kind: "error", text: "session expired, log in again" });
      return;
    }
    const el = this.root.querySelector("#countdown");
    if (el) el.textContent = formatCountdown(left);
  }

  // -- rendering --------------------------------------------------------------

  private render(): void {
    this.root.textContent = "";
    if (this.view === "login" || !this.session) {
      this.root.appendChild(this.renderLogin());
      return;
    }
    const wrap = el("div", "view console-view");
    wrap.appendChild(this.renderSessionBanner(this.session));
    if (this.banner) wrap.appendChild(this.renderBanner(this.banner));
    if (this.view === "audit") {
      wrap.appendChild(this.renderAudit());
    } else {
      wrap.appendChild(this.renderRecordForm());
      if (this.recordResult) wrap.appendChild(this.renderRecordResult(this.recordResult));
    }
    this.root.appendChild(wrap);
  }

  private renderLogin(): HTMLElement {
    const wrap = el("div", "view login-view");
    wrap.appendChild(el("h1", "", "healthgate"));
    if (this.banner) wrap.appendChild(this.renderBanner(this.banner));

    const form = el("form") as HTMLFormElement;
    form.id = "login-form";
    const username = input("text", "username");
    username.value = this.loginUsername;
    form.appendChild(labeled("username", username));
    form.appendChild(labeled("password", input("password", "password")));
    const submit = button("login-submit", "Log in", this.pending);
    submit.type = "submit";
    form.appendChild(submit);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      if (this.pending) return;
      const data = new FormData(form);
      this.track(() =>
        this.doLogin(String(data.get("username") ?? ""), String(data.get("password") ?? "")),
      );
    });
    wrap.appendChild(form);

    // registration is self-service for the public roles only
    const details = document.createElement("details");
    details.id = "register-box";
    details.appendChild(el("summary", "", "Create an account"));
    const reg = el("form") as HTMLFormElement;
    reg.id = "register-form";
    reg.appendChild(labeled("username", input("text", "username")));
    reg.appendChild(labeled("password", input("password", "password")));
    const select = document.createElement("select");
    select.name = "role";
    for (const role of PUBLIC_ROLES) {
      const option = document.createElement("option");
      option.value = role;
      option.textContent = role;
      select.appendChild(option);
    }
    reg.appendChild(labeled("role", select));
    const regSubmit = button("register-submit", "Register", this.pending);
    regSubmit.type = "submit";
    reg.appendChild(regSubmit);
    reg.addEventListener("submit", (event) => {
      event.preventDefault();
      if (this.pending) return;
      const data = new FormData(reg);
      this.track(() =>
        this.doRegister(
          String(data.get("username") ?? ""),
          String(data.get("password") ?? ""),
          String(data.get("role") ?? ""),
        ),
      );
    });
    details.appendChild(reg);
    wrap.appendChild(details);
    return wrap;
  }

  private renderSessionBanner(session: ConsoleSession): HTMLElement {
    const bar = el("header", "session-banner");
    const badge = el("span", "role-badge", session.role);
    badge.id = "role-badge";
    bar.appendChild(badge);
    bar.appendChild(el("span", "session-user", session.username));
    const countdown = el("span", "countdown", formatCountdown(secondsLeft(session)));
    countdown.id = "countdown";
    bar.appendChild(countdown);

    if (session.role === "admin") {
      const auditNav = button("audit-nav", this.view === "audit" ? "Records" : "Audit log", false);
      auditNav.addEventListener("click", () => {
        this.view = this.view === "audit" ? "console" : "audit";
        this.banner = null;
        this.render();
        if (this.view === "audit") this.track(() => this.doLoadAudit(this.auditFrom));
      });
      bar.appendChild(auditNav);
    }

    const logout = button("logout", "Log out", false);
    logout.addEventListener("click", () => this.track(() => this.doLogout()));
    bar.appendChild(logout);
    return bar;
  }

  private renderBanner(banner: Banner): HTMLElement {
    const box = el("div", `banner ${banner.kind}`, banner.text);
    box.setAttribute("role", "alert");
    if (banner.retry) {
      const retry = button("retry", "Retry", this.pending);
      const thunk = banner.retry;
      retry.addEventListener("click", () => this.track(thunk));
      box.appendChild(retry);
    }
    return box;
  }

  private renderRecordForm(): HTMLElement {
    const form = el("form") as HTMLFormElement;
    form.id = "record-form";
    const fileInput = input("text", "file_id");
    fileInput.placeholder = "record id, e.g. rec_bob";
    fileInput.value = this.lastFileId;
    form.appendChild(labeled("record", fileInput));

    for (const group of ["environment", "patient_info", "current_medical"] as const) {
      const fieldset = document.createElement("fieldset");
      fieldset.className = "field-grid";
      fieldset.appendChild(el("legend", "", GROUP_LABELS[group]));
      for (const field of CATALOG.filter((f) => f.group === group)) {
        const label = el("label", "field-box") as HTMLLabelElement;
        const box = input("checkbox", "field") as HTMLInputElement;
        box.value = field.name;
        // boxes reflect what was asked last time
        box.checked = this.lastChecked.includes(field.name);
        label.appendChild(box);
        label.appendChild(document.createTextNode(field.name));
        fieldset.appendChild(label);
      }
      form.appendChild(fieldset);
    }
    form.appendChild(
      el("p", "hint", "leave every box unchecked to request all fields you are granted"),
    );

    const submit = button("record-submit", "Request record", this.pending);
    submit.type = "submit";
    form.appendChild(submit);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      if (this.pending) return;
      const fileId = (form.elements.namedItem("file_id") as HTMLInputElement).value.trim();
      if (!fileId) return;
      const checked = Array.from(
        form.querySelectorAll<HTMLInputElement>("input[name=field]:checked"),
      ).map((box) => box.value);
      // disable in place so the checkboxes survive until the answer renders
      submit.disabled = true;
      this.track(() => this.doRecordRequest(fileId, checked));
    });
    return form;
  }

  private renderRecordResult(result: RecordResult): HTMLElement {
    const wrap = el("section", "record-result");
    wrap.appendChild(el("h2", "", result.fileId));
    const table = document.createElement("table");
    table.id = "record-result";
    for (const row of result.rows) {
      const tr = document.createElement("tr");
      tr.dataset.field = row.name;
      tr.appendChild(el("th", "", row.name));
      if (row.kind === "value") {
        tr.appendChild(el("td", "value-cell", row.text));
      } else {
        tr.appendChild(el("td", "lock-cell", `\u{1F512} ${row.text}`));
      }
      table.appendChild(tr);
    }
    wrap.appendChild(table);
    return wrap;
  }

  private renderAudit(): HTMLElement {
    const wrap = el("section", "audit-view");
    wrap.appendChild(el("h2", "", "Audit log"));

    const pager = el("form", "audit-pager") as HTMLFormElement;
    pager.id = "audit-pager";
    const fromInput = input("number", "from") as HTMLInputElement;
    fromInput.value = String(this.auditFrom);
    fromInput.min = "1";
    pager.appendChild(labeled("from sequence", fromInput));
    const load = button("audit-load", "Load", this.pending);
    load.type = "submit";
    pager.appendChild(load);
    pager.addEventListener("submit", (event) => {
      event.preventDefault();
      if (this.pending) return;
      const from = Math.max(1, Number(fromInput.value) || 1);
      this.track(() => this.doLoadAudit(from));
    });
    wrap.appendChild(pager);

    const table = document.createElement("table");
    table.id = "audit-table";
    const head = document.createElement("tr");
    for (const title of ["#", "event", "actor", "detail", "fields"]) {
      head.appendChild(el("th", "", title));
    }
    table.appendChild(head);
    for (const event of this.auditEvents) {
      const tr = document.createElement("tr");
      tr.appendChild(el("td", "seq", String(event.sequence)));
      tr.appendChild(el("td", "kind", event.event_kind));
      tr.appendChild(el("td", "actor", event.actor_username));
      tr.appendChild(el("td", "detail", event.detail));
      tr.appendChild(el("td", "fields", event.decision_fields ?? ""));
      table.appendChild(tr);
    }
    wrap.appendChild(table);

    if (this.auditEvents.length > 0) {
      const next = button("audit-next", "Next page", this.pending);
      const lastSeq = this.auditEvents[this.auditEvents.length - 1].sequence;
      next.addEventListener("click", () => this.track(() => this.doLoadAudit(lastSeq + 1)));
      wrap.appendChild(next);
    }
    return wrap;
  }
}

// -- tiny DOM helpers ---------------------------------------------------------

function el(tag: string, className = "", text = ""): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

function input(type: string, name: string): HTMLInputElement {
  const node = document.createElement("input");
  node.type = type;
  node.name = name;
  return node;
}

function button(id: string, text: string, disabled: boolean): HTMLButtonElement {
  const node = document.createElement("button");
  node.id = id;
  node.type = "button";
  node.textContent = text;
  node.disabled = disabled;
  return node;
}

function labeled(text: string, control: HTMLElement): HTMLElement {
  const label = el("label", "labeled");
  label.appendChild(el("span", "label-text", text));
  label.appendChild(control);
  return label;
}
