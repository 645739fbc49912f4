/** UI state machine. Pure reducers; all displayed numbers come from the
 * service (trace or last intervention response), never from client math. */

import type { DecisionTrace, InterventionResponse, ModelInfo, UiState } from "./types.js";

export function initialState(serviceUrl: string): UiState {
  return {
    serviceUrl,
    connection: "disconnected",
    model: null,
    instanceIds: [],
    selectedId: null,
    selectedConcept: 0,
    trace: null,
    overrides: {},
    lastResponse: null,
    banner: null,
    toast: null,
  };
}

export type Action =
  | { type: "connecting" }
  | { type: "connected"; model: ModelInfo; ids: string[] }
  | { type: "connection-failed"; message: string }
  | { type: "select-instance"; id: string }
  | { type: "trace-loaded"; trace: DecisionTrace }
  | { type: "trace-failed"; message: string }
  | { type: "select-concept"; index: number }
  | { type: "set-override"; concept: number; value: number }
  | { type: "reset-overrides" }
  | { type: "intervene-result"; response: InterventionResponse }
  | { type: "intervene-failed"; message: string }
  | { type: "clear-toast" };

export function reduce(state: UiState, action: Action): UiState {
  switch (action.type) {
    case "connecting":
      return { ...state, connection: "connecting", banner: null };
    case "connected":
      return {
        ...state,
        connection: "connected",
        model: action.model,
        instanceIds: action.ids,
        banner: null,
      };
    case "connection-failed":
      return { ...state, connection: "error", banner: action.message };
    case "select-instance":
      return {
        ...state,
        selectedId: action.id,
        trace: null,
        overrides: {},
        lastResponse: null,
        banner: null,
      };
    case "trace-loaded": {
      const problem = validateTrace(action.trace, state.model);
      if (problem) return { ...state, trace: null, banner: problem };
      return { ...state, trace: action.trace, overrides: {}, lastResponse: null, banner: null };
    }
    case "trace-failed":
      return { ...state, trace: null, banner: action.message };
    case "select-concept":
      return { ...state, selectedConcept: action.index };
    case "set-override": {
      const value = clamp01(action.value);
      return { ...state, overrides: { ...state.overrides, [action.concept]: value } };
    }
    case "reset-overrides":
      return { ...state, overrides: {}, lastResponse: null };
    case "intervene-result":
      return { ...state, lastResponse: action.response, toast: null };
    case "intervene-failed":
      // keep the previous view; surface the failure as a toast
      return { ...state, toast: action.message };
    case "clear-toast":
      return { ...state, toast: null };
  }
}

export function clamp01(v: number): number {
  if (Number.isNaN(v)) return 0;
  return Math.min(1, Math.max(0, v));
}

/** Reject traces the renderer cannot trust; returns an error message or null. */
export function validateTrace(trace: DecisionTrace, model: ModelInfo | null): string | null {
  if (!trace || !Array.isArray(trace.concepts) || trace.concepts.length === 0)
    return "malformed trace: no concepts";
  if (!Array.isArray(trace.logits) || trace.logits.length !== trace.probs.length)
    return "malformed trace: logits/probs mismatch";
  if (trace.predicted_grade < 0 || trace.predicted_grade >= trace.logits.length)
    return "malformed trace: predicted grade out of range";
  if (model && trace.concepts.length !== model.spec.num_concepts)
    return "malformed trace: concept count disagrees with the model";
  for (const row of trace.concepts) {
    if (!Array.isArray(row.top_tokens)) return "malformed trace: missing attention";
    if (typeof row.s_tilde !== "number") return "malformed trace: missing scores";
  }
  return null;
}

/** The grade block currently on display: the last intervention response when
 * present, otherwise the fetched trace. */
export function displayedGrade(state: UiState): {
  grade: number;
  logits: number[];
  probs: number[];
  bias: number;
  contributions: number[];
  muPost: number[];
  sTilde: number[];
} | null {
  if (state.lastResponse) {
    const r = state.lastResponse;
    return {
      grade: r.predicted_grade,
      logits: r.logits,
      probs: r.probs,
      bias: r.predicted_bias,
      contributions: r.contributions,
      muPost: r.mu_post,
      sTilde: r.s_tilde,
    };
  }
  if (state.trace) {
    const t = state.trace;
    return {
      grade: t.predicted_grade,
      logits: t.logits,
      probs: t.probs,
      bias: t.predicted_bias,
      contributions: t.concepts.map((c) => c.contribution),
      muPost: t.concepts.map((c) => c.mu_post),
      sTilde: t.concepts.map((c) => c.s_tilde),
    };
  }
  return null;
}

/** Slider positions: pending override if set, else the trace's s~. */
export function sliderValue(state: UiState, concept: number): number {
  const pending = state.overrides[concept];
  if (pending !== undefined) return pending;
  return state.trace?.concepts[concept]?.s_tilde ?? 0;
}

/** Latest-wins debounce keeping at most one intervene request in flight. */
export class IntervenePipeline {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = false;
  private pending: Record<number, number> | null = null;
  private seq = 0;

  constructor(
    private send: (overrides: Record<number, number>) => Promise<InterventionResponse>,
    private deliver: (response: InterventionResponse) => void,
    private fail: (message: string) => void,
    private delayMs = 150,
  ) {}

  schedule(overrides: Record<number, number>): void {
    this.pending = overrides;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.flush();
    }, this.delayMs);
  }

  private async flush(): Promise<void> {
    if (this.inFlight || this.pending === null) return;
    const overrides = this.pending;
    this.pending = null;
    this.inFlight = true;
    const mySeq = ++this.seq;
    try {
      const response = await this.send(overrides);
      if (mySeq === this.seq) this.deliver(response);
    } catch (err) {
      if (mySeq === this.seq) this.fail(err instanceof Error ? err.message : String(err));
    } finally {
      this.inFlight = false;
      if (this.pending !== null) void this.flush();
    }
  }

  /** Drop any queued or in-flight work (instance switch, reset). */
  cancel(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
    this.pending = null;
    this.seq++;
  }
}
