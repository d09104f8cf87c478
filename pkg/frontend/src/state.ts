// View state and its pure transitions. The server owns the truth; this is
// only what the current page shows, reconstructible from GET /sessions/{id}.

import type { Answer, Rule, SessionDetail, Trace } from "./types";

export interface TurnView {
  question: string;
  answer: Answer | null;
  error: string | null;
  system: boolean; // locally generated notices (rule added, cancel, ...)
}

export interface TracePanel {
  turnIndex: number;
  trace: Trace | null;
  error: string | null;
}

export interface ViewState {
  sessionId: string | null;
  database: string | null;
  turns: TurnView[];
  pending: boolean;
  tracePanel: TracePanel | null;
  rules: Rule[];
  tablePages: Record<number, number>;
}

export function initialState(): ViewState {
  return {
    sessionId: null,
    database: null,
    turns: [],
    pending: false,
    tracePanel: null,
    rules: [],
    tablePages: {},
  };
}

export function fromSession(state: ViewState, detail: SessionDetail): ViewState {
  return {
    ...state,
    sessionId: detail.session_id,
    database: detail.database,
    turns: detail.turns.map((t) => ({
      question: t.question,
      answer: t.answer,
      error: null,
      system: false,
    })),
    pending: false,
    tracePanel: null,
    tablePages: {},
  };
}

// At most one pending ask per session, mirroring the server's 409 contract.
export function beginAsk(state: ViewState, question: string): ViewState {
  if (state.pending) {
    throw new Error("an ask is already pending");
  }
  return {
    ...state,
    pending: true,
    turns: [...state.turns, { question, answer: null, error: null, system: false }],
  };
}

export function completeAsk(state: ViewState, answer: Answer): ViewState {
  const turns = state.turns.slice();
  turns[turns.length - 1] = { ...turns[turns.length - 1], answer };
  return { ...state, pending: false, turns };
}

export function failAsk(state: ViewState, message: string): ViewState {
  const turns = state.turns.slice();
  turns[turns.length - 1] = { ...turns[turns.length - 1], error: message };
  return { ...state, pending: false, turns };
}

export function addSystemNotice(state: ViewState, text: string): ViewState {
  return {
    ...state,
    turns: [
      ...state.turns,
      { question: "", answer: null, error: text, system: true },
    ],
  };
}

export function showTrace(state: ViewState, turnIndex: number, trace: Trace): ViewState {
  return { ...state, tracePanel: { turnIndex, trace, error: null } };
}

export function traceError(state: ViewState, turnIndex: number, message: string): ViewState {
  return { ...state, tracePanel: { turnIndex, trace: null, error: message } };
}

export function hideTrace(state: ViewState): ViewState {
  return { ...state, tracePanel: null };
}

export function setRules(state: ViewState, rules: Rule[]): ViewState {
  return { ...state, rules };
}

export function setTablePage(state: ViewState, turnIndex: number, page: number): ViewState {
  return { ...state, tablePages: { ...state.tablePages, [turnIndex]: Math.max(0, page) } };
}
