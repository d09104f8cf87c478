// API payload types, mirroring docs/api_schema.json. The console consumes
// exactly these shapes and holds no state the server cannot reconstruct.

export type Cell = null | number | string | boolean;

export interface ColumnInfo {
  name: string;
  declared_type: string;
}

export interface TableData {
  columns: ColumnInfo[];
  rows: Cell[][];
  truncated: boolean;
}

export interface ChartSpec {
  kind: "bar" | "line";
  x_column: string;
  y_column: string;
}

export interface Answer {
  text: string;
  table: TableData | null;
  chart: ChartSpec | null;
  sql: string | null;
  trace_id: string;
}

export type CandidateStatus = "pass" | "guard_fail" | "exec_fail" | "semantic_fail";

export interface Outcome {
  status: CandidateStatus;
  detail: string;
  sample_rows: TableData | null;
}

export interface Candidate {
  iteration: number;
  sql: string;
  outcome: Outcome;
}

export interface ContextHit {
  id: string;
  source_ref: string;
  score: number;
}

export interface Trace {
  question: string;
  intent: "structure_query" | "data_query";
  intent_source: "model" | "fallback";
  context: { schema: ContextHit[]; rules: ContextHit[]; char_budget_used: number };
  candidates: Candidate[];
  final_status: "answered" | "exhausted" | "structure_answered";
  timings: Record<string, number>;
}

export interface Rule {
  rule_id: string;
  text: string;
  tags: string[];
  created_at: string;
  updated_at: string;
  active: boolean;
}

export interface Turn {
  question: string;
  answer: Answer;
}

export interface SessionDetail {
  session_id: string;
  database: string;
  turns: Turn[];
  session_rules: Rule[];
}

export interface DatabaseInfo {
  name: string;
  kind: string;
}

export interface ErrorBody {
  error_code: string;
  message: string;
}
