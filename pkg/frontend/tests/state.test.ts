import { describe, expect, it } from "vitest";

import {
  clamp01,
  displayedGrade,
  initialState,
  reduce,
  sliderValue,
  validateTrace,
} from "../src/state.js";
import type { DecisionTrace, InterventionResponse, ModelInfo, UiState } from "../src/types.js";

export function makeTrace(overrides: Partial<DecisionTrace> = {}): DecisionTrace {
  return {
    instance_id: "syn-00001",
    concepts: [
      {
        name: "coverage",
        top_tokens: [["c0lvl2", 0.41], ["filler", 0.1]],
        argmax_level: 2,
        expected_score: 1.9,
        s_tilde: 0.6333333333,
        mu_post: 0.31,
        contribution: 0.22,
        label: 2,
      },
      {
        name: "clarity",
        top_tokens: [["c1lvl1", 0.3], ["the", 0.05]],
        argmax_level: 1,
        expected_score: 1.05,
        s_tilde: 0.35,
        mu_post: 0.18,
        contribution: -0.07,
        label: 1,
      },
    ],
    logits: [0.01, 0.16, 0.02],
    probs: [0.3, 0.4, 0.3],
    predicted_grade: 1,
    predicted_bias: 0.01,
    label: 1,
    ...overrides,
  };
}

export function makeModel(): ModelInfo {
  return {
    spec: {
      num_concepts: 2,
      max_concept_level: 3,
      max_grade: 2,
      concept_names: ["coverage", "clarity"],
    },
    head_mode: "latent",
  };
}

function makeResponse(overrides: Partial<InterventionResponse> = {}): InterventionResponse {
  return {
    trace: makeTrace(),
    overrides: { "0": 1.0 },
    s_tilde: [1.0, 0.35],
    mu_post: [0.5, 0.2],
    logits: [0.0, 0.1, 0.4],
    probs: [0.2, 0.3, 0.5],
    predicted_grade: 2,
    predicted_bias: 0.02,
    contributions: [0.3, 0.08],
    contribution_deltas: [0.1, 0.01],
    ...overrides,
  };
}

function loaded(): UiState {
  let s = initialState("http://x");
  s = reduce(s, { type: "connected", model: makeModel(), ids: ["syn-00001"] });
  s = reduce(s, { type: "select-instance", id: "syn-00001" });
  s = reduce(s, { type: "trace-loaded", trace: makeTrace() });
  return s;
}

describe("reducer", () => {
  it("stores the trace and clears overrides on load", () => {
    const s = loaded();
    expect(s.trace?.instance_id).toBe("syn-00001");
    expect(s.overrides).toEqual({});
    expect(s.banner).toBeNull();
  });

  it("clamps overrides into [0, 1]", () => {
    let s = loaded();
    s = reduce(s, { type: "set-override", concept: 0, value: 1.7 });
    expect(s.overrides[0]).toBe(1);
    s = reduce(s, { type: "set-override", concept: 0, value: -0.4 });
    expect(s.overrides[0]).toBe(0);
    expect(clamp01(Number.NaN)).toBe(0);
  });

  it("reset clears overrides and the last response", () => {
    let s = loaded();
    s = reduce(s, { type: "set-override", concept: 1, value: 0.5 });
    s = reduce(s, { type: "intervene-result", response: makeResponse() });
    s = reduce(s, { type: "reset-overrides" });
    expect(s.overrides).toEqual({});
    expect(s.lastResponse).toBeNull();
    // view falls back to the trace: identical to the initial render
    expect(displayedGrade(s)?.grade).toBe(makeTrace().predicted_grade);
  });

  it("keeps the previous view on intervene failure and surfaces a toast", () => {
    let s = loaded();
    s = reduce(s, { type: "intervene-result", response: makeResponse() });
    const before = displayedGrade(s);
    s = reduce(s, { type: "intervene-failed", message: "boom" });
    expect(s.toast).toBe("boom");
    expect(displayedGrade(s)).toEqual(before);
  });

  it("rejects malformed traces with a banner instead of rendering", () => {
    let s = initialState("http://x");
    s = reduce(s, { type: "connected", model: makeModel(), ids: [] });
    const bad = makeTrace({ concepts: [] });
    s = reduce(s, { type: "trace-loaded", trace: bad });
    expect(s.trace).toBeNull();
    expect(s.banner).toMatch(/malformed/);
  });
});

describe("validateTrace", () => {
  it("accepts a well-formed trace", () => {
    expect(validateTrace(makeTrace(), makeModel())).toBeNull();
  });

  it("flags grade out of range and concept-count mismatch", () => {
    expect(validateTrace(makeTrace({ predicted_grade: 9 }), null)).toMatch(/grade/);
    const model = makeModel();
    model.spec.num_concepts = 5;
    expect(validateTrace(makeTrace(), model)).toMatch(/concept count/);
  });
});

describe("displayed grade block", () => {
  it("never invents a grade: null before any service data", () => {
    expect(displayedGrade(initialState("http://x"))).toBeNull();
  });

  it("uses the trace before any intervention", () => {
    const s = loaded();
    const shown = displayedGrade(s)!;
    expect(shown.grade).toBe(1);
    expect(shown.contributions).toEqual([0.22, -0.07]);
  });

  it("switches to the intervention response once one arrives", () => {
    let s = loaded();
    s = reduce(s, { type: "intervene-result", response: makeResponse() });
    const shown = displayedGrade(s)!;
    expect(shown.grade).toBe(2);
    expect(shown.muPost).toEqual([0.5, 0.2]);
  });
});

describe("slider values", () => {
  it("shows the trace score until overridden", () => {
    let s = loaded();
    expect(sliderValue(s, 0)).toBeCloseTo(0.6333333333, 9);
    s = reduce(s, { type: "set-override", concept: 0, value: 0.25 });
    expect(sliderValue(s, 0)).toBe(0.25);
    expect(sliderValue(s, 1)).toBe(0.35);
  });
});
