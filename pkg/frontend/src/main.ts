// Imperative shell: wires the three panes (chat, trace inspector, rules) to
// the API client and the pure renderers. The session id lives in the URL
// hash, so a hard refresh reloads everything from the server.

import { ApiClient, ApiRequestError } from "./api";
import {
  ViewState,
  addSystemNotice,
  beginAsk,
  completeAsk,
  failAsk,
  fromSession,
  hideTrace,
  initialState,
  setRules,
  setTablePage,
  showTrace,
  traceError,
} from "./state";
import { renderRules, renderTracePanel, renderTurns } from "./render";

const RULE_PREFIX = "add rule:";

function apiBase(): string {
  const meta = document.querySelector<HTMLMetaElement>('meta[name="nlquery-api"]');
  if (meta?.content) {
    return meta.content.replace(/\/$/, "");
  }
  return `${window.location.protocol}//${window.location.hostname}:8000`;
}

const api = new ApiClient(apiBase());
let state: ViewState = initialState();
let inFlight: AbortController | null = null;

const el = {
  chat: document.getElementById("chat") as HTMLElement,
  trace: document.getElementById("trace") as HTMLElement,
  rules: document.getElementById("rules-list") as HTMLElement,
  composer: document.getElementById("composer") as HTMLFormElement,
  question: document.getElementById("question") as HTMLInputElement,
  database: document.getElementById("database") as HTMLSelectElement,
  newSession: document.getElementById("new-session") as HTMLButtonElement,
  sessionLabel: document.getElementById("session-label") as HTMLElement,
  ruleForm: document.getElementById("rule-form") as HTMLFormElement,
  ruleText: document.getElementById("rule-text") as HTMLInputElement,
};

function update(next: ViewState): void {
  state = next;
  el.chat.innerHTML = renderTurns(state.turns, state.tablePages);
  el.trace.innerHTML = renderTracePanel(state.tracePanel);
  el.rules.innerHTML = renderRules(state.rules);
  el.sessionLabel.textContent = state.sessionId
    ? `session ${state.sessionId} on ${state.database}`
    : "no session";
  el.question.disabled = state.pending || state.sessionId === null;
  el.chat.scrollTop = el.chat.scrollHeight;
}

function describe(error: unknown): string {
  if (error instanceof ApiRequestError) {
    return `${error.errorCode}: ${error.message}`;
  }
  return error instanceof Error ? error.message : String(error);
}

async function refreshRules(): Promise<void> {
  try {
    update(setRules(state, await api.listRules()));
  } catch (error) {
    update(addSystemNotice(state, `could not load rules (${describe(error)})`));
  }
}

async function startSession(database: string): Promise<void> {
  const created = await api.createSession(database);
  window.location.hash = `session=${created.session_id}`;
  update(fromSession(state, await api.getSession(created.session_id)));
}

async function restoreFromHash(): Promise<boolean> {
  const match = window.location.hash.match(/session=([a-f0-9]+)/);
  if (!match) {
    return false;
  }
  try {
    const detail = await api.getSession(match[1]);
    update(fromSession(state, detail));
    el.database.value = detail.database;
    return true;
  } catch {
    window.location.hash = "";
    return false;
  }
}

async function submitQuestion(raw: string): Promise<void> {
  const question = raw.trim();
  if (!question || state.sessionId === null || state.pending) {
    return;
  }
  if (question.toLowerCase().startsWith(RULE_PREFIX)) {
    const text = question.slice(RULE_PREFIX.length).trim();
    if (!text) {
      update(addSystemNotice(state, "empty rule ignored"));
      return;
    }
    try {
      await api.addRule(text, "session", state.sessionId);
      update(addSystemNotice(state, `session rule added: ${text}`));
    } catch (error) {
      update(addSystemNotice(state, `rule rejected (${describe(error)})`));
    }
    return;
  }

  update(beginAsk(state, question));
  inFlight = new AbortController();
  try {
    const answer = await api.ask(state.sessionId, question, inFlight.signal);
    update(completeAsk(state, answer));
  } catch (error) {
    if (error instanceof DOMException && error.name === "AbortError") {
      // client-side abandon; the server completes and logs the turn
      update(failAsk(state, "(canceled; the server still completes this turn)"));
    } else {
      update(failAsk(state, describe(error)));
    }
  } finally {
    inFlight = null;
  }
}

async function openTrace(turnIndex: number, traceId: string): Promise<void> {
  try {
    update(showTrace(state, turnIndex, await api.getTrace(traceId)));
  } catch (error) {
    if (error instanceof ApiRequestError && error.status === 404) {
      update(traceError(state, turnIndex, "trace not found on the server"));
    } else {
      update(traceError(state, turnIndex, describe(error)));
    }
  }
}

function wireEvents(): void {
  el.composer.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = el.question.value;
    el.question.value = "";
    void submitQuestion(text);
  });

  el.newSession.addEventListener("click", () => {
    void startSession(el.database.value).catch((error) => {
      update(addSystemNotice(state, `could not start session (${describe(error)})`));
    });
  });

  el.ruleForm.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = el.ruleText.value.trim();
    if (!text) {
      return; // empty rules blocked client-side
    }
    el.ruleText.value = "";
    void api
      .addRule(text, "global")
      .then(() => refreshRules())
      .catch((error) => update(addSystemNotice(state, `rule rejected (${describe(error)})`)));
  });

  document.body.addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
    if (!target) {
      return;
    }
    const action = target.dataset.action;
    if (action === "show-trace") {
      void openTrace(Number(target.dataset.turn), target.dataset.trace ?? "");
    } else if (action === "table-page") {
      update(setTablePage(state, Number(target.dataset.turn), Number(target.dataset.page)));
    } else if (action === "delete-rule") {
      void api
        .deleteRule(target.dataset.rule ?? "")
        .then(() => refreshRules())
        .catch((error) => update(addSystemNotice(state, `delete failed (${describe(error)})`)));
    } else if (action === "cancel-ask") {
      inFlight?.abort();
    } else if (action === "close-trace") {
      update(hideTrace(state));
    }
  });
}

async function boot(): Promise<void> {
  wireEvents();
  update(state);
  try {
    const databases = await api.listDatabases();
    el.database.innerHTML = databases
      .map((db) => `<option value="${db.name}">${db.name}</option>`)
      .join("");
  } catch (error) {
    update(addSystemNotice(state, `cannot reach the nlquery service (${describe(error)})`));
    return;
  }
  await refreshRules();
  await restoreFromHash();
}

void boot();
