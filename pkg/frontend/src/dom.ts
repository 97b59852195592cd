/** DOM renderer for the console view model. Thin by design: all state logic
 * lives in the store, all numbers come from API payloads. */

import { ConsoleStore } from "./state.js";
import { ConsoleVM, renderConsole } from "./view.js";

function el(tag: string, cls?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmt(x: number | null): string {
  return x === null ? "-" : x.toFixed(5);
}

export function mountConsole(root: HTMLElement, store: ConsoleStore): void {
  const render = () => {
    const vm = renderConsole(store);
    root.replaceChildren(buildDom(vm, store));
  };
  store.subscribe(render);
  render();
}

function buildDom(vm: ConsoleVM, store: ConsoleStore): HTMLElement {
  const wrap = el("div", "console");

  if (vm.banner) {
    wrap.appendChild(el("div", "banner", vm.banner));
  }
  if (vm.error) {
    wrap.appendChild(el("div", "error", vm.error));
  }

  const status = el("div", "status");
  status.appendChild(el("span", "phase", vm.phase));
  status.appendChild(el("span", "iteration", `iteration ${vm.iteration ?? "-"}`));
  status.appendChild(el("span", "model-error", `model error ${fmt(vm.modelError)}`));
  if (vm.epe !== null) status.appendChild(el("span", "epe", `proposal EPE ${fmt(vm.epe)}`));
  wrap.appendChild(status);

  const proposal = el("div", "proposal");
  proposal.appendChild(el("h3", undefined, "proposed experiment"));
  for (const chip of vm.proposalChips) {
    proposal.appendChild(el("span", "chip query-chip", `${chip.name}: ${chip.value}`));
  }
  for (const chip of vm.attributeChips) {
    proposal.appendChild(el("span", "chip attr-chip", `${chip.name}: ${chip.value}`));
  }
  wrap.appendChild(proposal);

  const form = el("form", "outcome-form");
  for (const selector of vm.outcomeForm) {
    const label = el("label", undefined, selector.name);
    const select = document.createElement("select");
    select.disabled = vm.busy;
    select.appendChild(new Option("(pick)", ""));
    for (const option of selector.options) {
      select.appendChild(new Option(option, option, false, option === selector.selected));
    }
    select.addEventListener("change", () => store.setSelection(selector.name, select.value));
    label.appendChild(select);
    form.appendChild(label);
  }
  const submit = el("button", "submit", "record outcome") as HTMLButtonElement;
  submit.type = "submit";
  submit.disabled = !vm.submitEnabled || vm.busy;
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    void store.submitOutcome({ ...store.selections });
  });
  form.appendChild(submit);
  wrap.appendChild(form);

  wrap.appendChild(renderChart(vm));
  if (vm.scoreTable) wrap.appendChild(renderScores(vm, store));
  return wrap;
}

function renderChart(vm: ConsoleVM): HTMLElement {
  const box = el("div", "chart");
  box.appendChild(el("h3", undefined, "model error"));
  const svgNS = "http://www.w3.org/2000/svg";
  const svg = document.createElementNS(svgNS, "svg");
  svg.setAttribute("viewBox", "0 0 400 120");
  const points = vm.chart.points;
  if (points.length > 0) {
    const xMax = Math.max(...points.map((p) => p.x), 1);
    const yMax = Math.max(...points.map((p) => p.y), 1e-9);
    const path = document.createElementNS(svgNS, "polyline");
    path.setAttribute("fill", "none");
    path.setAttribute("stroke", "steelblue");
    path.setAttribute(
      "points",
      points.map((p) => `${(p.x / xMax) * 390 + 5},${115 - (p.y / yMax) * 110}`).join(" "),
    );
    svg.appendChild(path);
    for (const marker of vm.chart.resetMarkers) {
      const line = document.createElementNS(svgNS, "line");
      const x = (marker / xMax) * 390 + 5;
      line.setAttribute("x1", String(x));
      line.setAttribute("x2", String(x));
      line.setAttribute("y1", "5");
      line.setAttribute("y2", "115");
      line.setAttribute("stroke", "crimson");
      line.setAttribute("class", "reset-marker");
      svg.appendChild(line);
    }
  }
  box.appendChild(svg as unknown as HTMLElement);
  return box;
}

function renderScores(vm: ConsoleVM, store: ConsoleStore): HTMLElement {
  const table = vm.scoreTable!;
  const box = el("div", "scores");
  box.appendChild(el("h3", undefined, "per-context scores"));

  const slider = document.createElement("input");
  slider.type = "range";
  slider.min = "0";
  slider.max = "1";
  slider.step = "0.01";
  if (table.threshold !== null) slider.value = String(table.threshold);
  slider.addEventListener("change", () => void store.setThreshold(Number(slider.value)));
  const label = el("label", "threshold-label",
    table.threshold === null ? "threshold: -" : `threshold: ${table.threshold}`);
  label.appendChild(slider);
  box.appendChild(label);

  const tbl = document.createElement("table");
  const head = document.createElement("tr");
  for (const column of [...table.columns, "mismatch", "score", "favourable"]) {
    head.appendChild(el("th", undefined, column));
  }
  tbl.appendChild(head);
  for (const row of table.rows) {
    const tr = document.createElement("tr");
    if (row.favourable) tr.className = "favourable";
    for (const cell of row.cells) tr.appendChild(el("td", undefined, cell));
    tr.appendChild(el("td", undefined, row.mismatch === null ? "-" : fmt(row.mismatch)));
    tr.appendChild(el("td", undefined, row.score === null ? "-" : fmt(row.score)));
    tr.appendChild(el("td", undefined, row.favourable ? "yes" : ""));
    tbl.appendChild(tr);
  }
  box.appendChild(tbl);
  return box;
}
