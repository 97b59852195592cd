/** Console store: mirrors the session state machine and owns all async flow.
 *
 * Every number the console can display enters through `logPayload`, so tests
 * can assert that nothing shown was computed client-side. The store never
 * derives scores or errors; it only forwards API payloads to the view.
 */

import {
  ApiError,
  ObservationResult,
  Proposal,
  ScoreReport,
  SessionApi,
  SessionSummary,
} from "./api.js";
import { DefinitionDraft, draftToDefinition, outcomeVariables, validateDraft } from "./wizard.js";

export type Phase =
  | "configuring"
  | "creating"
  | "proposing"
  | "entering"
  | "submitting"
  | "finished";

export interface TurnPoint {
  iteration: number;
  modelError: number;
}

export interface PromotionEvent {
  iteration: number;
  variables: string[];
}

const THRESHOLD_FLOOR = 0.001;
const THRESHOLD_CEIL = 0.999;

export class ConsoleStore {
  phase: Phase = "configuring";
  session: SessionSummary | null = null;
  proposal: Proposal | null = null;
  draft: DefinitionDraft | null = null;
  series: TurnPoint[] = [];
  promotions: PromotionEvent[] = [];
  banner: string | null = null;
  scores: ScoreReport | null = null;
  wizardErrors: string[] = [];
  lastError: string | null = null;
  selections: Record<string, string> = {};
  /** every payload the console consumed, for provenance checks */
  payloadLog: unknown[] = [];

  private listeners: (() => void)[] = [];

  constructor(private api: SessionApi) {}

  subscribe(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  private logPayload(payload: unknown): void {
    this.payloadLog.push(payload);
  }

  get busy(): boolean {
    return this.phase === "creating" || this.phase === "proposing" || this.phase === "submitting";
  }

  get outcomeForm(): { name: string; options: string[] }[] {
    if (!this.draft) return [];
    return outcomeVariables(this.draft).map((v) => ({ name: v.name, options: [...v.domain] }));
  }

  submitEnabled(): boolean {
    if (this.phase !== "entering" || this.proposal === null) return false;
    return this.outcomeForm.every((f) => {
      const chosen = this.selections[f.name];
      return chosen !== undefined && f.options.includes(chosen);
    });
  }

  setSelection(name: string, value: string): void {
    this.selections[name] = value;
    this.emit();
  }

  /** Wizard submit: validates locally; nothing is sent when the draft is bad. */
  async createSession(draft: DefinitionDraft, config: Record<string, unknown> = {}): Promise<void> {
    this.wizardErrors = validateDraft(draft);
    if (this.wizardErrors.length > 0) {
      this.emit();
      return;
    }
    this.phase = "creating";
    this.emit();
    try {
      const summary = await this.api.createSession(draftToDefinition(draft), config);
      this.logPayload(summary);
      this.draft = draft;
      this.session = summary;
      this.series = [];
      this.promotions = [];
      this.banner = null;
      this.scores = null;
      this.lastError = null;
      await this.fetchProposal();
    } catch (err) {
      this.phase = "configuring";
      this.lastError = err instanceof ApiError ? err.message : String(err);
      this.emit();
    }
  }

  /** Create from a full scenario payload (used when resuming bundled demos). */
  async createFromScenario(
    scenario: unknown,
    draft: DefinitionDraft,
    config: Record<string, unknown> = {},
  ): Promise<void> {
    this.phase = "creating";
    this.emit();
    try {
      const summary = await this.api.createSession({ scenario }, config);
      this.logPayload(summary);
      this.draft = draft;
      this.session = summary;
      this.series = [];
      this.promotions = [];
      this.banner = null;
      this.scores = null;
      this.lastError = null;
      await this.fetchProposal();
    } catch (err) {
      this.phase = "configuring";
      this.lastError = err instanceof ApiError ? err.message : String(err);
      this.emit();
    }
  }

  /** Idempotent while an experiment is pending: the server returns the same proposal. */
  async fetchProposal(): Promise<void> {
    if (!this.session) return;
    this.phase = "proposing";
    this.emit();
    try {
      const proposal = await this.api.nextQuery(this.session.id);
      this.logPayload(proposal);
      this.proposal = proposal;
      this.session = proposal;
      this.selections = {};
      this.phase = "entering";
    } catch (err) {
      if (err instanceof ApiError && err.code === 409) {
        this.phase = "finished";
      } else {
        this.phase = "entering";
        this.lastError = err instanceof ApiError ? err.message : String(err);
      }
    }
    this.emit();
  }

  /** One experiment turn: post the outcome, extend the chart, get the next proposal. */
  async submitOutcome(
    outcome: Record<string, string>,
    situation: Record<string, string> = {},
  ): Promise<void> {
    if (this.phase !== "entering" || !this.session || this.busy) return;
    this.phase = "submitting";
    this.emit();
    let result: ObservationResult;
    try {
      result = await this.api.postObservation(this.session.id, { outcome, situation });
    } catch (err) {
      this.phase = "entering"; // proposal is still pending server-side
      this.lastError = err instanceof ApiError ? err.message : String(err);
      this.emit();
      return;
    }
    this.logPayload(result);
    this.lastError = null;
    this.session = result;
    this.series.push({ iteration: result.iteration, modelError: result.model_error });
    if (result.promoted.length > 0) {
      this.promotions.push({ iteration: result.iteration, variables: [...result.promoted] });
      this.banner = `added variable: ${result.promoted.join(", ")}`;
    }
    if (result.status === "finished") {
      this.phase = "finished";
      this.proposal = null;
      this.emit();
      return;
    }
    await this.fetchProposal();
  }

  /** Rebuild the chart series from the server's trace (e.g. when resuming). */
  async refreshState(): Promise<void> {
    if (!this.session) return;
    const state = await this.api.getState(this.session.id);
    this.logPayload(state);
    this.session = state;
    this.series = state.trace.map((row) => ({
      iteration: row.iteration,
      modelError: row.model_error,
    }));
    this.promotions = state.trace
      .filter((row) => row.promoted_vars.length > 0)
      .map((row) => ({ iteration: row.iteration, variables: [...row.promoted_vars] }));
    if (state.score_report) this.scores = state.score_report;
    this.emit();
  }

  /** Score slider: the server is authoritative; the raw [0,1] slider value is
   * clamped into the API's open-interval domain before the request. */
  async setThreshold(raw: number): Promise<void> {
    if (!this.session) return;
    const threshold = Math.min(THRESHOLD_CEIL, Math.max(THRESHOLD_FLOOR, raw));
    try {
      const report = await this.api.getScores(this.session.id, threshold);
      this.logPayload(report);
      this.scores = report;
      this.lastError = null;
    } catch (err) {
      this.lastError = err instanceof ApiError ? err.message : String(err);
    }
    this.emit();
  }
}
