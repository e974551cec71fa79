/** Pure view logic: wizard validation, coherence badge state, export/replay.
 * Everything here is a plain function of service data so it can be unit
 * tested without a browser. */

import type { HistoryEntry, Recommendation, TrialConfig, TrialSnapshot } from "./api.js";

export interface SetupForm {
  xMin: string;
  xMax: string;
  targetRate: string;
  nPatients: string;
  policyKind: string; // crm | ewoc | ewoc_star | ivoc | ewoc_plus
  bound: string; // feasibility bound / probability-scale weight
  futureWeight: string;
  seed: string;
}

export const TRIAL_DEFAULTS: SetupForm = {
  xMin: "140",
  xMax: "425",
  targetRate: "0.3333333333",
  nPatients: "24",
  policyKind: "ewoc",
  bound: "0.25",
  futureWeight: "0.4",
  seed: "1",
};

export type FieldErrors = Partial<Record<keyof SetupForm, string>>;

/** Client-side mirror of the server's config rules, for inline feedback.
 * The server remains the authority; anything missed here still 422s. */
export function validateSetup(form: SetupForm): FieldErrors {
  const errors: FieldErrors = {};
  const xMin = Number(form.xMin);
  const xMax = Number(form.xMax);
  const p = Number(form.targetRate);
  const n = Number(form.nPatients);
  const bound = Number(form.bound);
  const lam = Number(form.futureWeight);
  if (!Number.isFinite(xMin)) errors.xMin = "must be a number";
  if (!Number.isFinite(xMax)) errors.xMax = "must be a number";
  if (Number.isFinite(xMin) && Number.isFinite(xMax) && !(xMin < xMax)) {
    errors.xMax = "x_max must exceed x_min";
  }
  if (!(p > 0 && p < 1)) errors.targetRate = "target rate must be in (0, 1)";
  if (!(Number.isInteger(n) && n >= 1)) errors.nPatients = "need at least 1 patient";
  if (form.policyKind !== "crm" && !(bound > 0 && bound < 0.5)) {
    errors.bound = "0 < w < 1/2";
  }
  if (form.policyKind === "ewoc_plus" && !(lam >= 0)) {
    errors.futureWeight = "future weight must be >= 0";
  }
  return errors;
}

export function buildConfig(form: SetupForm): TrialConfig {
  const bound = Number(form.bound);
  let policy;
  switch (form.policyKind) {
    case "crm":
      policy = { kind: "crm" };
      break;
    case "ewoc_star":
      policy = { kind: "ewoc_star", start_bound: bound, end_bound: 0.5 };
      break;
    case "ivoc":
      policy = { kind: "ivoc", weight: bound };
      break;
    case "ewoc_plus":
      policy = {
        kind: "lookahead",
        base_loss: "ewoc",
        feasibility_bound: bound,
        future_weight: Number(form.futureWeight),
      };
      break;
    default:
      policy = { kind: "ewoc", feasibility_bound: bound };
  }
  return {
    dose_space: { x_min: Number(form.xMin), x_max: Number(form.xMax) },
    target_rate: Number(form.targetRate),
    n_patients: Number(form.nPatients),
    prior: "uniform",
    policy,
    seed: Number(form.seed) || 0,
  };
}

export type BadgeState = "green" | "warning";

/** The badge goes amber only when the service itself flags the current
 * recommendation as incoherent against the last recorded outcome. */
export function coherenceBadge(rec: Recommendation | null): BadgeState {
  return rec && rec.coherence_flag ? "warning" : "green";
}

export interface ExportedLog {
  config: TrialConfig;
  history: HistoryEntry[];
  eta_hat: number;
}

export function exportLog(snapshot: TrialSnapshot): ExportedLog {
  return {
    config: snapshot.config,
    history: snapshot.history,
    eta_hat: snapshot.eta_hat,
  };
}

export function serializeLog(snapshot: TrialSnapshot): string {
  return JSON.stringify(exportLog(snapshot), null, 2);
}

/** Replay an exported log through a fresh trial; resolves to the replayed
 * terminal estimate, which must equal the exported one bit for bit. */
export async function replayLog(
  client: {
    createTrial(c: TrialConfig): Promise<TrialSnapshot>;
    recordOutcome(
      id: string,
      i: number,
      d: number,
      y: 0 | 1,
    ): Promise<{ eta_hat: number }>;
  },
  log: ExportedLog,
): Promise<number> {
  const fresh = await client.createTrial(log.config);
  let eta = fresh.eta_hat;
  for (const entry of log.history) {
    const resp = await client.recordOutcome(
      fresh.id,
      entry.patient_index,
      entry.dose,
      entry.outcome as 0 | 1,
    );
    eta = resp.eta_hat;
  }
  return eta;
}
