import { describe, expect, it } from "vitest";

import type { PosteriorSummary, Recommendation, TrialSnapshot } from "../src/api.js";
import {
  buildConfig,
  coherenceBadge,
  exportLog,
  TRIAL_DEFAULTS,
  serializeLog,
  validateSetup,
} from "../src/model.js";
import {
  renderCompletion,
  renderDensitySvg,
  renderDltCounter,
  renderRecommendation,
  renderTimeline,
} from "../src/render.js";

describe("setup validation", () => {
  it("accepts the prefilled defaults", () => {
    expect(validateSetup(TRIAL_DEFAULTS)).toEqual({});
  });

  it("rejects a feasibility bound outside (0, 1/2)", () => {
    const errors = validateSetup({ ...TRIAL_DEFAULTS, bound: "0.7" });
    expect(errors.bound).toBe("0 < w < 1/2");
  });

  it("rejects inverted dose bounds", () => {
    const errors = validateSetup({ ...TRIAL_DEFAULTS, xMin: "500" });
    expect(errors.xMax).toMatch(/exceed/);
  });

  it("does not demand a bound for the posterior-mean design", () => {
    const errors = validateSetup({ ...TRIAL_DEFAULTS, policyKind: "crm", bound: "0.9" });
    expect(errors.bound).toBeUndefined();
  });
});

describe("config building", () => {
  it("produces the quantile policy payload", () => {
    const cfg = buildConfig(TRIAL_DEFAULTS);
    expect(cfg.dose_space).toEqual({ x_min: 140, x_max: 425 });
    expect(cfg.n_patients).toBe(24);
    expect(cfg.policy).toEqual({ kind: "ewoc", feasibility_bound: 0.25 });
  });

  it("maps the lookahead selection onto the lookahead policy", () => {
    const cfg = buildConfig({ ...TRIAL_DEFAULTS, policyKind: "ewoc_plus" });
    expect(cfg.policy).toEqual({
      kind: "lookahead",
      base_loss: "ewoc",
      feasibility_bound: 0.25,
      future_weight: 0.4,
    });
  });
});

describe("coherence badge", () => {
  const rec = (flag: boolean): Recommendation => ({
    patient_index: 3,
    dose: 250,
    coherence_flag: flag,
  });

  it("is green when the service raises no flag", () => {
    expect(coherenceBadge(rec(false))).toBe("green");
    expect(coherenceBadge(null)).toBe("green");
  });

  it("warns when the service flags the recommendation", () => {
    expect(coherenceBadge(rec(true))).toBe("warning");
  });
});

const POSTERIOR: PosteriorSummary = {
  mean_mtd: 282.5,
  sd_mtd: 80.0,
  interval_90: [154.25, 410.75],
  density_grid: Array.from({ length: 200 }, (_, i) => 140 + (285 * i) / 199),
  density: Array.from({ length: 200 }, () => 1 / 285),
};

function snapshot(partial: Partial<TrialSnapshot> = {}): TrialSnapshot {
  return {
    id: "abc123def",
    status: "active",
    created_at: "t0",
    updated_at: "t1",
    config: buildConfig(TRIAL_DEFAULTS),
    patients_enrolled: 3,
    n_patients: 24,
    history: [
      { patient_index: 1, dose: 211.25, outcome: 0 },
      { patient_index: 2, dose: 241.9, outcome: 0 },
      { patient_index: 3, dose: 259.6, outcome: 1 },
    ],
    dlt_count: 1,
    posterior: POSTERIOR,
    eta_hat: 270.1,
    recommendation: { patient_index: 4, dose: 247.3, coherence_flag: false },
    ...partial,
  };
}

describe("renderers", () => {
  it("shows the dose and a green badge", () => {
    const html = renderRecommendation(snapshot().recommendation);
    expect(html).toContain("247.30");
    expect(html).toContain("Patient 4");
    expect(html).toContain("badge green");
  });

  it("shows completion when no recommendation remains", () => {
    expect(renderRecommendation(null)).toContain("complete");
  });

  it("builds the density polyline from the service grid verbatim", () => {
    const svg = renderDensitySvg(POSTERIOR);
    expect(svg).toContain("<polyline");
    expect((svg.match(/polyline points="([^"]+)"/)![1] ?? "").split(" ").length).toBe(200);
    expect(svg).toContain("mean 282.5");
  });

  it("renders one timeline row per outcome with DLT marking", () => {
    const html = renderTimeline(snapshot().history);
    expect(html.match(/<tr class=/g)!.length).toBe(3);
    expect(html).toContain('class="dlt"');
  });

  it("counts DLTs against the target rate", () => {
    const html = renderDltCounter(snapshot());
    expect(html).toContain("<strong>1</strong>");
    expect(html).toContain("of 3 treated");
  });

  it("completion view shows the terminal estimate and interval", () => {
    const html = renderCompletion(snapshot({ status: "complete" }));
    expect(html).toContain("270.10");
    expect(html).toContain("[154.3, 410.8]");
  });
});

describe("export", () => {
  it("captures config, history and the terminal estimate", () => {
    const log = exportLog(snapshot());
    expect(log.history.length).toBe(3);
    expect(log.eta_hat).toBe(270.1);
    const parsed = JSON.parse(serializeLog(snapshot()));
    expect(parsed.config.policy.kind).toBe("ewoc");
  });
});
