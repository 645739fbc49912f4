import { describe, expect, it } from "vitest";

import { initialState, reduce } from "../src/state.js";
import { barsView, gradeView, heatmapView, sliderTicks, tableView } from "../src/view.js";
import type { UiState } from "../src/types.js";
import { makeModel, makeTrace } from "./state.test.js";

function loaded(): UiState {
  let s = initialState("http://x");
  s = reduce(s, { type: "connected", model: makeModel(), ids: ["syn-00001"] });
  s = reduce(s, { type: "select-instance", id: "syn-00001" });
  s = reduce(s, { type: "trace-loaded", trace: makeTrace() });
  return s;
}

describe("heatmap view", () => {
  it("normalizes opacities by the strongest token of the selected concept", () => {
    const tokens = heatmapView(loaded());
    expect(tokens[0]!.opacity).toBe(1);
    expect(tokens[1]!.opacity).toBeCloseTo(0.1 / 0.41, 12);
  });

  it("switches with the concept selector", () => {
    let s = loaded();
    s = reduce(s, { type: "select-concept", index: 1 });
    expect(heatmapView(s)[0]![0 as never]).toBeUndefined; // shape sanity
    expect(heatmapView(s)[0]!.text).toBe("c1lvl1");
  });
});

describe("score table view", () => {
  it("renders one row per concept with slider state", () => {
    let s = loaded();
    s = reduce(s, { type: "set-override", concept: 1, value: 0.75 });
    const rows = tableView(s);
    expect(rows).toHaveLength(2);
    expect(rows[0]!.overridden).toBe(false);
    expect(rows[1]!.overridden).toBe(true);
    expect(rows[1]!.sliderValue).toBe(0.75);
    expect(rows[0]!.label).toBe(2);
  });
});

describe("contribution bars", () => {
  it("emits one signed bar per concept, widths normalized", () => {
    const bars = barsView(loaded());
    expect(bars).toHaveLength(2);
    expect(bars[0]!.positive).toBe(true);
    expect(bars[0]!.width).toBe(1);
    expect(bars[1]!.positive).toBe(false);
    expect(bars[1]!.width).toBeCloseTo(0.07 / 0.22, 12);
  });
});

describe("grade view", () => {
  it("verifies the additive decomposition at rendered precision", () => {
    // trace numbers chosen so contributions + bias equals the top logit
    const trace = makeTrace({
      logits: [0.01, 0.16, 0.02],
      predicted_grade: 1,
      predicted_bias: 0.01,
    });
    let s = loaded();
    s = reduce(s, { type: "trace-loaded", trace });
    const view = gradeView(s)!;
    // 0.22 - 0.07 + 0.01 = 0.16 exactly at 9 rendered digits
    expect(view.decomposition.matches).toBe(true);
    expect(view.decomposition.total).toBe(view.decomposition.logit);
  });

  it("flags a broken decomposition", () => {
    const trace = makeTrace({ predicted_bias: 0.5 });
    let s = loaded();
    s = reduce(s, { type: "trace-loaded", trace });
    expect(gradeView(s)!.decomposition.matches).toBe(false);
  });

  it("shows no grade block before any service data arrives", () => {
    expect(gradeView(initialState("http://x"))).toBeNull();
  });
});

describe("slider ticks", () => {
  it("places one tick per rubric level at m/M", () => {
    expect(sliderTicks(3)).toEqual([0, 1 / 3, 2 / 3, 1]);
    expect(sliderTicks(1)).toEqual([0, 1]);
  });
});
