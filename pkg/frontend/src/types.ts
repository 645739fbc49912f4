/** Wire types mirroring the grading service's JSON responses. */

export interface ConceptTraceRow {
  name: string;
  top_tokens: [string, number][];
  argmax_level: number;
  expected_score: number;
  s_tilde: number;
  mu_post: number;
  contribution: number;
  label: number | null;
}

export interface DecisionTrace {
  instance_id: string;
  concepts: ConceptTraceRow[];
  logits: number[];
  probs: number[];
  predicted_grade: number;
  predicted_bias: number;
  label: number | null;
}

export interface InterventionResponse {
  trace: DecisionTrace;
  overrides: Record<string, number>;
  s_tilde: number[];
  mu_post: number[];
  logits: number[];
  probs: number[];
  predicted_grade: number;
  predicted_bias: number;
  contributions: number[];
  contribution_deltas: number[];
}

export interface ModelInfo {
  spec: {
    num_concepts: number;
    max_concept_level: number;
    max_grade: number;
    concept_names: string[];
  };
  head_mode: string;
}

export type Connection = "disconnected" | "connecting" | "connected" | "error";

export interface UiState {
  serviceUrl: string;
  connection: Connection;
  model: ModelInfo | null;
  instanceIds: string[];
  selectedId: string | null;
  selectedConcept: number;
  trace: DecisionTrace | null;
  overrides: Record<number, number>;
  lastResponse: InterventionResponse | null;
  banner: string | null;
  toast: string | null;
}
