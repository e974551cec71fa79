/** Typed client for the trial-conduct HTTP API. All displayed numbers come
 * verbatim from these responses; the dashboard computes no statistics. */

export interface DoseSpace {
  x_min: number;
  x_max: number;
}

export interface PolicyConfig {
  kind: string;
  feasibility_bound?: number;
  start_bound?: number;
  end_bound?: number;
  schedule_patients?: number;
  weight?: number;
  base_loss?: string;
  future_weight?: number;
  enforce_coherence?: boolean;
}

export interface TrialConfig {
  dose_space: DoseSpace;
  target_rate: number;
  n_patients: number;
  prior?: string;
  policy: PolicyConfig;
  seed?: number;
}

export interface Recommendation {
  patient_index: number;
  dose: number;
  coherence_flag: boolean;
}

export interface HistoryEntry {
  patient_index: number;
  dose: number;
  outcome: number;
}

export interface PosteriorSummary {
  mean_mtd: number;
  sd_mtd: number;
  interval_90: [number, number];
  density_grid: number[];
  density: number[];
}

export interface TrialSnapshot {
  id: string;
  status: "active" | "complete";
  created_at: string;
  updated_at: string;
  config: TrialConfig;
  patients_enrolled: number;
  n_patients: number;
  history: HistoryEntry[];
  dlt_count: number;
  posterior: PosteriorSummary;
  eta_hat: number;
  recommendation: Recommendation | null;
}

export interface OutcomeResponse {
  id: string;
  status: "active" | "complete";
  patients_enrolled: number;
  duplicate: boolean;
  recommendation: Recommendation | null;
  eta_hat: number;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  field?: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: ApiErrorBody,
  ) {
    super(`${body.code}: ${body.message}`);
  }
}

async function parse<T>(resp: Response): Promise<T> {
  const body = await resp.json();
  if (!resp.ok) {
    throw new ApiError(resp.status, body as ApiErrorBody);
  }
  return body as T;
}

export class DosefindClient {
  constructor(private baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  async healthz(): Promise<boolean> {
    try {
      const r = await fetch(this.url("/healthz"));
      return r.ok;
    } catch {
      return false;
    }
  }

  createTrial(config: TrialConfig): Promise<TrialSnapshot> {
    return fetch(this.url("/trials"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(config),
    }).then((r) => parse<TrialSnapshot>(r));
  }

  getTrial(id: string): Promise<TrialSnapshot> {
    return fetch(this.url(`/trials/${id}`)).then((r) => parse<TrialSnapshot>(r));
  }

  recordOutcome(
    id: string,
    patientIndex: number,
    doseGiven: number,
    outcome: 0 | 1,
  ): Promise<OutcomeResponse> {
    return fetch(this.url(`/trials/${id}/outcomes`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        patient_index: patientIndex,
        dose_given: doseGiven,
        outcome,
      }),
    }).then((r) => parse<OutcomeResponse>(r));
  }
}
