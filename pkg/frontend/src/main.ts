/** DOM wiring for the trial-conduct dashboard. State lives on the server;
 * after every mutation the full snapshot is re-fetched and re-rendered. */

import { ApiError, DosefindClient, TrialSnapshot } from "./api.js";
import { buildConfig, TRIAL_DEFAULTS, serializeLog, SetupForm, validateSetup } from "./model.js";
import {
  renderCompletion,
  renderDensitySvg,
  renderDltCounter,
  renderError,
  renderRecommendation,
  renderTimeline,
} from "./render.js";

const client = new DosefindClient("");
let trialId: string | null = null;

const $ = (id: string) => document.getElementById(id) as HTMLElement;
const input = (id: string) => document.getElementById(id) as HTMLInputElement;

function readForm(): SetupForm {
  return {
    xMin: input("x-min").value,
    xMax: input("x-max").value,
    targetRate: input("target-rate").value,
    nPatients: input("n-patients").value,
    policyKind: (document.getElementById("policy-kind") as HTMLSelectElement).value,
    bound: input("bound").value,
    futureWeight: input("future-weight").value,
    seed: input("seed").value,
  };
}

function showFieldErrors(errors: Record<string, string | undefined>): void {
  document.querySelectorAll(".field-error").forEach((el) => (el.textContent = ""));
  for (const [field, message] of Object.entries(errors)) {
    const el = document.getElementById(`err-${field}`);
    if (el && message) el.textContent = message;
  }
}

async function refresh(): Promise<void> {
  if (!trialId) return;
  const snap = await client.getTrial(trialId);
  renderSnapshot(snap);
}

function renderSnapshot(snap: TrialSnapshot): void {
  $("conduct").hidden = false;
  $("recommendation").innerHTML = renderRecommendation(snap.recommendation);
  $("density").innerHTML = renderDensitySvg(snap.posterior);
  $("timeline").innerHTML = renderTimeline(snap.history);
  $("dlt-counter").innerHTML = renderDltCounter(snap);
  $("trial-meta").textContent =
    `trial ${snap.id.slice(0, 8)} — ${snap.patients_enrolled}/${snap.n_patients} patients, ${snap.status}`;
  const entry = $("entry");
  const done = snap.status === "complete";
  entry.hidden = done;
  $("completion").innerHTML = done ? renderCompletion(snap) : "";
  if (snap.recommendation) {
    input("dose-given").value = snap.recommendation.dose.toFixed(2);
  }
}

async function createTrial(): Promise<void> {
  const form = readForm();
  const errors = validateSetup(form);
  showFieldErrors(errors as Record<string, string>);
  if (Object.keys(errors).length > 0) return;
  try {
    const snap = await client.createTrial(buildConfig(form));
    trialId = snap.id;
    $("setup-error").innerHTML = "";
    renderSnapshot(snap);
  } catch (err) {
    if (err instanceof ApiError) {
      $("setup-error").innerHTML = renderError(
        `${err.body.message}${err.body.field ? ` (${err.body.field})` : ""}`,
        false,
      );
    } else {
      $("setup-error").innerHTML = renderError(String(err), false);
    }
  }
}

async function submitOutcome(outcome: 0 | 1): Promise<void> {
  if (!trialId) return;
  const snap = await client.getTrial(trialId);
  const patientIndex = snap.patients_enrolled + 1;
  const doseGiven = Number(input("dose-given").value);
  const recommended = snap.recommendation?.dose;
  try {
    await client.recordOutcome(trialId, patientIndex, doseGiven, outcome);
    if (recommended !== undefined && Math.abs(doseGiven - recommended) > 1e-9) {
      $("override-note").textContent =
        `patient ${patientIndex}: clinician override ${doseGiven.toFixed(2)} ` +
        `(recommended ${recommended.toFixed(2)}) — logged`;
    }
    $("entry-error").innerHTML = "";
    await refresh();
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      // double entry: the server kept the authoritative order; reload it
      $("entry-error").innerHTML = renderError(
        `Conflicting entry: ${err.body.message}.`,
        true,
      );
      document.getElementById("retry-btn")?.addEventListener("click", () => void refresh());
    } else if (err instanceof ApiError) {
      $("entry-error").innerHTML = renderError(err.body.message, false);
    } else {
      $("entry-error").innerHTML = renderError(String(err), false);
    }
  }
}

async function exportTrial(): Promise<void> {
  if (!trialId) return;
  const snap = await client.getTrial(trialId);
  const blob = new Blob([serializeLog(snap)], { type: "application/json" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = `trial-${snap.id.slice(0, 8)}.json`;
  a.click();
  URL.revokeObjectURL(a.href);
}

function fillDefaults(): void {
  input("x-min").value = TRIAL_DEFAULTS.xMin;
  input("x-max").value = TRIAL_DEFAULTS.xMax;
  input("target-rate").value = TRIAL_DEFAULTS.targetRate;
  input("n-patients").value = TRIAL_DEFAULTS.nPatients;
  input("bound").value = TRIAL_DEFAULTS.bound;
  input("future-weight").value = TRIAL_DEFAULTS.futureWeight;
  input("seed").value = TRIAL_DEFAULTS.seed;
}

export function init(): void {
  fillDefaults();
  $("create-btn").addEventListener("click", () => void createTrial());
  $("no-dlt-btn").addEventListener("click", () => void submitOutcome(0));
  $("dlt-btn").addEventListener("click", () => void submitOutcome(1));
  $("export-btn").addEventListener("click", () => void exportTrial());
}

if (typeof document !== "undefined" && document.getElementById("create-btn")) {
  init();
}
