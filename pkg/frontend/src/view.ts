/** Pure view model: plain data derived from the store, rendered by dom.ts.
 *
 * Numeric fields are passed through untouched from API payloads (formatting
 * happens at the DOM layer), which keeps the no-client-side-math invariant
 * mechanically checkable.
 */

import { ConsoleStore } from "./state.js";
import { contextScaffold } from "./wizard.js";

export interface Chip {
  name: string;
  value: string;
}

export interface ChartVM {
  /** x = iteration, y = model error; both straight from observation payloads */
  points: { x: number; y: number }[];
  /** iterations where a promotion reset the model (curve discontinuity markers) */
  resetMarkers: number[];
}

export interface ScoreTableVM {
  /** echoed by the server in the score report */
  threshold: number | null;
  columns: string[];
  rows: {
    cells: string[];
    score: number | null;
    mismatch: number | null;
    favourable: boolean;
  }[];
  skeleton: boolean;
}

export interface SelectorVM {
  name: string;
  options: string[];
  selected: string | null;
}

export interface ConsoleVM {
  phase: string;
  busy: boolean;
  iteration: number | null;
  modelError: number | null;
  epe: number | null;
  proposalChips: Chip[];
  attributeChips: Chip[];
  outcomeForm: SelectorVM[];
  submitEnabled: boolean;
  chart: ChartVM;
  banner: string | null;
  scoreTable: ScoreTableVM | null;
  wizardErrors: string[];
  error: string | null;
}

function chips(bindings: Record<string, string>): Chip[] {
  return Object.entries(bindings)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
    .map(([name, value]) => ({ name, value }));
}

export function renderConsole(store: ConsoleStore): ConsoleVM {
  const proposal = store.proposal;
  const scoreTable = buildScoreTable(store);
  return {
    phase: store.phase,
    busy: store.busy,
    iteration: store.session ? store.session.iteration : null,
    modelError: store.session ? store.session.model_error : null,
    epe: proposal ? proposal.epe : null,
    proposalChips: proposal ? chips(proposal.query) : [],
    attributeChips: proposal ? chips(proposal.attributes) : [],
    outcomeForm: store.outcomeForm.map((f) => ({
      name: f.name,
      options: f.options,
      selected: store.selections[f.name] ?? null,
    })),
    submitEnabled: store.submitEnabled(),
    chart: {
      points: store.series.map((p) => ({ x: p.iteration, y: p.modelError })),
      resetMarkers: store.promotions.map((p) => p.iteration),
    },
    banner: store.banner,
    scoreTable,
    wizardErrors: [...store.wizardErrors],
    error: store.lastError,
  };
}

function buildScoreTable(store: ConsoleStore): ScoreTableVM | null {
  if (store.scores) {
    const columns = columnNames(store.scores.rows.map((r) => r.context));
    return {
      threshold: store.scores.threshold,
      columns,
      rows: store.scores.rows.map((r) => ({
        cells: columns.map((c) => r.context[c] ?? "-"),
        score: r.score,
        mismatch: r.mismatch,
        favourable: r.favourable,
      })),
      skeleton: false,
    };
  }
  if (store.draft) {
    // no scores fetched yet: show the empty per-context scaffold
    const contexts = contextScaffold(store.draft);
    const columns = columnNames(contexts);
    return {
      threshold: null,
      columns,
      rows: contexts.map((ctx) => ({
        cells: columns.map((c) => ctx[c] ?? "-"),
        score: null,
        mismatch: null,
        favourable: false,
      })),
      skeleton: true,
    };
  }
  return null;
}

function columnNames(contexts: Record<string, string>[]): string[] {
  const names = new Set<string>();
  for (const ctx of contexts) {
    for (const name of Object.keys(ctx)) names.add(name);
  }
  return [...names].sort();
}
