/** View models: plain data the DOM layer paints. Kept free of DOM types so
 * the rendering logic is unit-testable. */

import type { UiState } from "./types.js";
import { displayedGrade, sliderValue } from "./state.js";

export interface HeatmapToken {
  text: string;
  weight: number; // attention weight in [0, 1]
  opacity: number; // weight / max weight for the selected concept
}

export interface TableRow {
  name: string;
  argmaxLevel: number;
  expectedScore: string;
  sTilde: string;
  muPost: string;
  label: number | null;
  sliderValue: number;
  overridden: boolean;
}

export interface Bar {
  name: string;
  value: number;
  width: number; // |value| / max|value| in [0, 1]
  positive: boolean;
}

export interface GradeView {
  grade: number;
  probs: { grade: number; prob: number; width: number }[];
  decomposition: {
    total: string;
    logit: string;
    matches: boolean; // at the rendered precision
  };
}

const SCORE_DIGITS = 4;
const LOGIT_DIGITS = 9;

export function fmt(x: number, digits = SCORE_DIGITS): string {
  return x.toFixed(digits);
}

/** Attention heatmap for the currently selected concept. */
export function heatmapView(state: UiState): HeatmapToken[] {
  const trace = state.trace;
  if (!trace) return [];
  const row = trace.concepts[state.selectedConcept];
  if (!row) return [];
  const max = Math.max(...row.top_tokens.map(([, w]) => w), 1e-12);
  return row.top_tokens.map(([text, weight]) => ({
    text,
    weight,
    opacity: weight / max,
  }));
}

export function tableView(state: UiState): TableRow[] {
  const trace = state.trace;
  if (!trace) return [];
  const shown = displayedGrade(state);
  return trace.concepts.map((c, k) => ({
    name: c.name,
    argmaxLevel: c.argmax_level,
    expectedScore: fmt(c.expected_score),
    sTilde: fmt(shown ? shown.sTilde[k]! : c.s_tilde),
    muPost: fmt(shown ? shown.muPost[k]! : c.mu_post),
    label: c.label,
    sliderValue: sliderValue(state, k),
    overridden: state.overrides[k] !== undefined,
  }));
}

export function barsView(state: UiState): Bar[] {
  const trace = state.trace;
  const shown = displayedGrade(state);
  if (!trace || !shown) return [];
  const max = Math.max(...shown.contributions.map(Math.abs), 1e-12);
  return shown.contributions.map((value, k) => ({
    name: trace.concepts[k]?.name ?? `concept ${k}`,
    value,
    width: Math.abs(value) / max,
    positive: value >= 0,
  }));
}

/** Grade block plus the additive-decomposition audit at rendered precision. */
export function gradeView(state: UiState): GradeView | null {
  const shown = displayedGrade(state);
  if (!shown) return null;
  const total = shown.contributions.reduce((a, b) => a + b, 0) + shown.bias;
  const logit = shown.logits[shown.grade]!;
  const totalStr = fmt(total, LOGIT_DIGITS);
  const logitStr = fmt(logit, LOGIT_DIGITS);
  const maxProb = Math.max(...shown.probs, 1e-12);
  return {
    grade: shown.grade,
    probs: shown.probs.map((prob, grade) => ({ grade, prob, width: prob / maxProb })),
    decomposition: {
      total: totalStr,
      logit: logitStr,
      matches: totalStr === logitStr,
    },
  };
}

/** Rubric-level tick positions for a slider: m / M for m = 0..M. */
export function sliderTicks(maxLevel: number): number[] {
  return Array.from({ length: maxLevel + 1 }, (_, m) => m / maxLevel);
}
