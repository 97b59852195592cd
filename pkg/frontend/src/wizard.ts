/** Session wizard: definition drafts, validation, and bundled templates.
 *
 * Validation runs before any request, so a malformed draft (duplicate domain
 * values, unknown parents, ...) surfaces inline and nothing is sent.
 */

export type Role = "context" | "command" | "outcome" | "attribute";

export interface VariableDraft {
  name: string;
  domain: string[];
  role: Role;
  controllable: boolean;
}

export interface DefinitionDraft {
  variables: VariableDraft[];
  parents: Record<string, string[]>;
  prior: number;
  reference?: unknown;
}

export function validateDraft(draft: DefinitionDraft): string[] {
  const errors: string[] = [];
  const names = new Set<string>();
  for (const v of draft.variables) {
    if (!v.name.trim()) errors.push("every variable needs a name");
    if (names.has(v.name)) errors.push(`duplicate variable name: ${v.name}`);
    names.add(v.name);
    if (v.domain.length < 2) errors.push(`variable ${v.name} needs at least 2 domain values`);
    const seen = new Set<string>();
    for (const value of v.domain) {
      if (seen.has(value)) errors.push(`variable ${v.name} has duplicate domain value: ${value}`);
      seen.add(value);
    }
    if (v.role === "command" && !v.controllable) {
      errors.push(`command variable ${v.name} must be controllable`);
    }
  }
  const situation = new Set(
    draft.variables.filter((v) => v.role === "context" || v.role === "command").map((v) => v.name),
  );
  const outcomes = draft.variables.filter((v) => v.role === "outcome").map((v) => v.name);
  if (outcomes.length === 0) errors.push("at least one outcome variable is required");
  for (const o of outcomes) {
    const parents = draft.parents[o];
    if (!parents || parents.length === 0) {
      errors.push(`outcome ${o} needs at least one parent`);
      continue;
    }
    for (const p of parents) {
      if (!situation.has(p)) errors.push(`parent ${p} of ${o} is not a situation variable`);
    }
  }
  return errors;
}

/** Wire shape the session API expects for a bare learner definition. */
export function draftToDefinition(draft: DefinitionDraft): Record<string, unknown> {
  const def: Record<string, unknown> = {
    variables: draft.variables.map((v) => ({
      name: v.name,
      domain: [...v.domain],
      role: v.role,
      controllable: v.controllable,
    })),
    parents: Object.fromEntries(Object.entries(draft.parents).map(([k, v]) => [k, [...v]])),
    prior: draft.prior,
  };
  if (draft.reference !== undefined) def.reference = draft.reference;
  return def;
}

export function outcomeVariables(draft: DefinitionDraft): VariableDraft[] {
  return draft.variables.filter((v) => v.role === "outcome");
}

export function contextVariables(draft: DefinitionDraft): VariableDraft[] {
  return draft.variables.filter((v) => v.role === "context");
}

/** All context combinations, used only to scaffold the score table skeleton. */
export function contextScaffold(draft: DefinitionDraft): Record<string, string>[] {
  const ctx = contextVariables(draft);
  if (ctx.length === 0) return [{}];
  let combos: Record<string, string>[] = [{}];
  for (const v of ctx) {
    const next: Record<string, string>[] = [];
    for (const partial of combos) {
      for (const value of v.domain) {
        next.push({ ...partial, [v.name]: value });
      }
    }
    combos = next;
  }
  return combos;
}

export interface Template {
  label: string;
  draft: DefinitionDraft;
}

export const BALLKICK_TEMPLATE: Template = {
  label: "BallKick (kick direction under command)",
  draft: {
    variables: [
      { name: "Position", domain: ["LeftSide", "Middle", "RightSide"], role: "command", controllable: true },
      { name: "KDc", domain: ["Left", "Mid", "Right"], role: "command", controllable: true },
      { name: "KDo", domain: ["Left", "Mid", "Right", "None"], role: "outcome", controllable: false },
    ],
    parents: { KDo: ["Position", "KDc"] },
    prior: 1.0,
    reference: { type: "equals_command", outcome: "KDo", command: "KDc" },
  },
};

export const PICKUP_TEMPLATE: Template = {
  label: "Pickup (12 object types, two arms)",
  draft: {
    variables: [
      { name: "Shape", domain: ["Ball", "Box", "Cylinder"], role: "context", controllable: true },
      { name: "Size", domain: ["Small", "Large"], role: "context", controllable: true },
      { name: "Weight", domain: ["Light", "Heavy"], role: "context", controllable: true },
      { name: "Arm", domain: ["Left", "Right"], role: "command", controllable: true },
      { name: "Pick", domain: ["Success", "Failure"], role: "outcome", controllable: false },
    ],
    parents: { Pick: ["Shape", "Size", "Weight", "Arm"] },
    prior: 1.0,
    reference: { type: "constant", outcome: "Pick", value: "Success" },
  },
};

export const TEMPLATES: Template[] = [BALLKICK_TEMPLATE, PICKUP_TEMPLATE];
