// Pure HTML renderers. Every user-visible string comes from server payloads
// or the static copy below; output strings are injected via innerHTML by the
// shell, so everything dynamic is escaped here.

import { diffLines } from "./diff";
import { extractSeries, renderChartSvg } from "./chart";
import type { Candidate, Rule, TableData } from "./types";
import type { TracePanel, TurnView } from "./state";

export const TABLE_PAGE_SIZE = 10;

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function renderTable(table: TableData, turnIndex: number, page: number): string {
  const total = table.rows.length;
  const pages = Math.max(1, Math.ceil(total / TABLE_PAGE_SIZE));
  const current = Math.min(Math.max(0, page), pages - 1);
  const start = current * TABLE_PAGE_SIZE;
  const rows = table.rows.slice(start, start + TABLE_PAGE_SIZE);

  const head = table.columns.map((c) => `<th>${escapeHtml(c.name)}</th>`).join("");
  const body = rows
    .map(
      (row) =>
        `<tr>${row
          .map((cell) => `<td>${cell === null ? '<span class="null">NULL</span>' : escapeHtml(String(cell))}</td>`)
          .join("")}</tr>`,
    )
    .join("");

  const plus = table.truncated ? "+" : "";
  let pager = "";
  if (pages > 1) {
    pager =
      `<button class="pager" data-action="table-page" data-turn="${turnIndex}" data-page="${current - 1}" ${current === 0 ? "disabled" : ""}>&laquo; prev</button>` +
      `<button class="pager" data-action="table-page" data-turn="${turnIndex}" data-page="${current + 1}" ${current >= pages - 1 ? "disabled" : ""}>next &raquo;</button>`;
  }
  const footer = `<div class="table-footer">rows ${total ? start + 1 : 0}–${start + rows.length} of ${total}${plus}${pager}</div>`;
  return `<div class="result-table"><table><thead><tr>${head}</tr></thead><tbody>${body}</tbody></table>${footer}</div>`;
}

export function renderTurn(turn: TurnView, index: number, tablePage: number): string {
  if (turn.system) {
    return `<div class="turn system"><div class="bubble system">${escapeHtml(turn.error ?? "")}</div></div>`;
  }
  let assistant: string;
  if (turn.error !== null) {
    // errors render as assistant messages; the chat never goes blank
    assistant = `<div class="bubble assistant error">${escapeHtml(turn.error)}</div>`;
  } else if (turn.answer === null) {
    assistant = `<div class="bubble assistant pending">… <button data-action="cancel-ask">cancel</button></div>`;
  } else {
    const answer = turn.answer;
    let extras = "";
    if (answer.table && answer.chart) {
      const series = extractSeries(answer.table, answer.chart);
      if (series) {
        extras += renderChartSvg(series, answer.chart.kind);
      }
    }
    if (answer.table && answer.table.rows.length) {
      extras += renderTable(answer.table, index, tablePage);
    }
    if (answer.sql) {
      extras += `<details class="sql-panel"><summary>SQL</summary><pre>${escapeHtml(answer.sql)}</pre></details>`;
    }
    if (answer.trace_id) {
      extras += `<button class="trace-link" data-action="show-trace" data-turn="${index}" data-trace="${escapeHtml(answer.trace_id)}">inspect trace</button>`;
    }
    assistant = `<div class="bubble assistant">${escapeHtml(answer.text)}${extras}</div>`;
  }
  const user = turn.question
    ? `<div class="bubble user">${escapeHtml(turn.question)}</div>`
    : "";
  return `<div class="turn" data-turn="${index}">${user}${assistant}</div>`;
}

export function renderTurns(turns: TurnView[], tablePages: Record<number, number>): string {
  if (!turns.length) {
    return `<div class="empty-chat">Ask a question about the connected database. Prefix with "add rule:" to attach a session business rule.</div>`;
  }
  return turns.map((turn, i) => renderTurn(turn, i, tablePages[i] ?? 0)).join("");
}

const STATUS_LABELS: Record<string, string> = {
  pass: "pass",
  guard_fail: "guard",
  exec_fail: "execution",
  semantic_fail: "introspection",
};

function renderCandidate(candidate: Candidate, prior: Candidate | null): string {
  const status = candidate.outcome.status;
  const badge = `<span class="badge ${status}">${STATUS_LABELS[status] ?? status}</span>`;
  let sqlBlock: string;
  if (prior && prior.sql !== candidate.sql) {
    const lines = diffLines(prior.sql, candidate.sql)
      .map((line) => {
        const cls = line.kind === "add" ? "add" : line.kind === "del" ? "del" : "ctx";
        const sign = line.kind === "add" ? "+" : line.kind === "del" ? "-" : " ";
        return `<span class="diff ${cls}">${sign} ${escapeHtml(line.text)}</span>`;
      })
      .join("\n");
    sqlBlock = `<pre class="sql diffed">${lines}</pre>`;
  } else {
    sqlBlock = `<pre class="sql">${escapeHtml(candidate.sql)}</pre>`;
  }
  const detail = candidate.outcome.detail
    ? `<div class="failure-detail">${escapeHtml(candidate.outcome.detail)}</div>`
    : "";
  return (
    `<li class="candidate ${status}">` +
    `<div class="candidate-head">iteration ${candidate.iteration} ${badge}</div>` +
    sqlBlock +
    detail +
    `</li>`
  );
}

export function renderTracePanel(panel: TracePanel | null): string {
  if (panel === null) {
    return "";
  }
  if (panel.error !== null) {
    return `<div class="trace-notice">${escapeHtml(panel.error)}</div>`;
  }
  const trace = panel.trace;
  if (trace === null) {
    return "";
  }
  if (!trace.candidates.length) {
    // structure answers have no candidates; nothing to inspect
    return "";
  }
  const items = trace.candidates
    .map((candidate, i) => renderCandidate(candidate, i > 0 ? trace.candidates[i - 1] : null))
    .join("");
  return (
    `<div class="trace">` +
    `<div class="trace-head">${escapeHtml(trace.question)} <span class="final ${trace.final_status}">${escapeHtml(trace.final_status)}</span></div>` +
    `<ol class="candidates">${items}</ol>` +
    `</div>`
  );
}

export function renderRules(rules: Rule[]): string {
  if (!rules.length) {
    return `<div class="empty-rules">No global rules yet.</div>`;
  }
  const items = rules
    .map(
      (rule) =>
        `<li class="rule"><span class="rule-text">${escapeHtml(rule.text)}</span>` +
        `<button class="rule-delete" data-action="delete-rule" data-rule="${escapeHtml(rule.rule_id)}">remove</button></li>`,
    )
    .join("");
  return `<ul class="rules">${items}</ul>`;
}
