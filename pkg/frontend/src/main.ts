/** DOM wiring for the educator intervention panel: fetch a decision trace,
 * drag per-concept sliders to override normalized scores, and watch the
 * grade, probabilities, and contribution bars update from the service. */

import { ServiceClient } from "./api.js";
import {
  Action,
  IntervenePipeline,
  initialState,
  reduce,
  sliderValue,
} from "./state.js";
import type { UiState } from "./types.js";
import { barsView, fmt, gradeView, heatmapView, sliderTicks, tableView } from "./view.js";

let state: UiState = initialState(defaultServiceUrl());
let client = new ServiceClient(state.serviceUrl);
let pipeline: IntervenePipeline | null = null;

function defaultServiceUrl(): string {
  const param = new URLSearchParams(window.location.search).get("service");
  return param ?? "http://127.0.0.1:8377";
}

function dispatch(action: Action): void {
  state = reduce(state, action);
  paint();
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function connect(): Promise<void> {
  const url = (el<HTMLInputElement>("service-url").value || state.serviceUrl).replace(/\/$/, "");
  state = { ...initialState(url) };
  client = new ServiceClient(url);
  dispatch({ type: "connecting" });
  try {
    const [model, ids] = await Promise.all([client.modelInfo(), client.instanceIds()]);
    dispatch({ type: "connected", model, ids });
    if (ids.length > 0) await selectInstance(ids[0]!);
  } catch (err) {
    dispatch({ type: "connection-failed", message: `cannot reach service: ${message(err)}` });
  }
}

async function selectInstance(id: string): Promise<void> {
  pipeline?.cancel();
  dispatch({ type: "select-instance", id });
  pipeline = new IntervenePipeline(
    (overrides) => client.intervene(id, overrides),
    (response) => dispatch({ type: "intervene-result", response }),
    (msg) => dispatch({ type: "intervene-failed", message: msg }),
  );
  try {
    const trace = await client.trace(id);
    dispatch({ type: "trace-loaded", trace });
  } catch (err) {
    dispatch({ type: "trace-failed", message: `trace failed: ${message(err)}` });
  }
}

function onSlider(concept: number, value: number): void {
  dispatch({ type: "set-override", concept, value });
  pipeline?.schedule({ ...state.overrides });
}

function onReset(): void {
  pipeline?.cancel();
  dispatch({ type: "reset-overrides" });
}

function message(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

// ---------------------------------------------------------------------------
// painting
// ---------------------------------------------------------------------------

function paint(): void {
  el("connection").textContent = state.connection;
  el("connection").className = `status status-${state.connection}`;

  const banner = el("banner");
  banner.textContent = state.banner ?? "";
  banner.style.display = state.banner ? "block" : "none";

  const toast = el("toast");
  toast.textContent = state.toast ?? "";
  toast.style.display = state.toast ? "block" : "none";

  paintInstanceSelector();
  paintConceptSelector();
  paintHeatmap();
  paintTable();
  paintGrade();
  paintBars();
}

function paintInstanceSelector(): void {
  const select = el<HTMLSelectElement>("instance");
  const current = select.value;
  select.innerHTML = "";
  for (const id of state.instanceIds) {
    const opt = document.createElement("option");
    opt.value = id;
    opt.textContent = id;
    select.appendChild(opt);
  }
  select.value = state.selectedId ?? current;
}

function paintConceptSelector(): void {
  const box = el("concept-tabs");
  box.innerHTML = "";
  if (!state.trace) return;
  state.trace.concepts.forEach((c, k) => {
    const btn = document.createElement("button");
    btn.textContent = c.name;
    btn.className = k === state.selectedConcept ? "tab active" : "tab";
    btn.onclick = () => dispatch({ type: "select-concept", index: k });
    box.appendChild(btn);
  });
}

function paintHeatmap(): void {
  const box = el("heatmap");
  box.innerHTML = "";
  for (const token of heatmapView(state)) {
    const span = document.createElement("span");
    span.className = "token";
    span.textContent = token.text;
    span.style.backgroundColor = `rgba(234, 88, 12, ${(0.15 + 0.85 * token.opacity).toFixed(3)})`;
    span.title = `weight ${fmt(token.weight, 6)}`;
    box.appendChild(span);
  }
}

function paintTable(): void {
  const body = el("score-body");
  body.innerHTML = "";
  const M = state.model?.spec.max_concept_level ?? 1;
  tableView(state).forEach((row, k) => {
    const tr = document.createElement("tr");
    if (row.overridden) tr.className = "overridden";

    const cells = [
      row.name,
      String(row.argmaxLevel),
      row.expectedScore,
      row.sTilde,
      row.muPost,
      row.label === null ? "—" : String(row.label),
    ];
    for (const text of cells) {
      const td = document.createElement("td");
      td.textContent = text;
      tr.appendChild(td);
    }

    const td = document.createElement("td");
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "0";
    slider.max = "1";
    slider.step = "0.001";
    slider.value = String(sliderValue(state, k));
    slider.setAttribute("list", `ticks-${k}`);
    slider.oninput = () => onSlider(k, Number(slider.value));
    const ticks = document.createElement("datalist");
    ticks.id = `ticks-${k}`;
    for (const t of sliderTicks(M)) {
      const opt = document.createElement("option");
      opt.value = String(t);
      ticks.appendChild(opt);
    }
    td.appendChild(slider);
    td.appendChild(ticks);
    tr.appendChild(td);
    body.appendChild(tr);
  });
}

function paintGrade(): void {
  const view = gradeView(state);
  const box = el("grade-box");
  if (!view) {
    box.style.display = "none";
    return;
  }
  box.style.display = "block";
  el("grade-value").textContent = String(view.grade);
  const probs = el("probs");
  probs.innerHTML = "";
  for (const p of view.probs) {
    const row = document.createElement("div");
    row.className = "prob-row";
    const label = document.createElement("span");
    label.textContent = `grade ${p.grade}`;
    const bar = document.createElement("div");
    bar.className = "prob-bar";
    bar.style.width = `${(p.width * 100).toFixed(1)}%`;
    const val = document.createElement("span");
    val.textContent = p.prob.toFixed(3);
    row.append(label, bar, val);
    probs.appendChild(row);
  }
  const dec = view.decomposition;
  el("decomposition").textContent =
    `contributions + bias = ${dec.total}  |  logit = ${dec.logit}  ` +
    (dec.matches ? "(exact)" : "(MISMATCH)");
  el("decomposition").className = dec.matches ? "decomp ok" : "decomp bad";
}

function paintBars(): void {
  const box = el("bars");
  box.innerHTML = "";
  for (const bar of barsView(state)) {
    const row = document.createElement("div");
    row.className = "bar-row";
    const label = document.createElement("span");
    label.className = "bar-label";
    label.textContent = bar.name;
    const track = document.createElement("div");
    track.className = "bar-track";
    const fill = document.createElement("div");
    fill.className = bar.positive ? "bar-fill pos" : "bar-fill neg";
    fill.style.width = `${(bar.width * 50).toFixed(1)}%`;
    if (bar.positive) {
      fill.style.left = "50%";
    } else {
      fill.style.right = "50%";
    }
    track.appendChild(fill);
    const val = document.createElement("span");
    val.className = "bar-value";
    val.textContent = (bar.value >= 0 ? "+" : "") + fmt(bar.value);
    row.append(label, track, val);
    box.appendChild(row);
  }
}

// ---------------------------------------------------------------------------
// bootstrap
// ---------------------------------------------------------------------------

window.addEventListener("DOMContentLoaded", () => {
  el<HTMLInputElement>("service-url").value = state.serviceUrl;
  el<HTMLButtonElement>("connect").onclick = () => void connect();
  el<HTMLSelectElement>("instance").onchange = (ev) =>
    void selectInstance((ev.target as HTMLSelectElement).value);
  el<HTMLButtonElement>("reset").onclick = onReset;
  paint();
  void connect();
});
