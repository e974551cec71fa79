/** HTML/SVG string renderers. Pure functions of service responses so the
 * end-to-end test can assert on rendered output without a browser. */

import type { HistoryEntry, PosteriorSummary, Recommendation, TrialSnapshot } from "./api.js";
import { coherenceBadge } from "./model.js";

const esc = (s: string) => s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

export function renderRecommendation(rec: Recommendation | null): string {
  if (rec === null) {
    return `<div class="recommendation complete">Trial complete — no further doses.</div>`;
  }
  const badge = coherenceBadge(rec);
  const badgeHtml =
    badge === "green"
      ? `<span class="badge green" title="consistent with the coherence rule">coherent</span>`
      : `<span class="badge warning" title="recommendation moves against the last outcome">coherence warning</span>`;
  return (
    `<div class="recommendation">` +
    `<span class="label">Patient ${rec.patient_index}</span>` +
    `<span class="dose">${rec.dose.toFixed(2)}</span>` +
    badgeHtml +
    `</div>`
  );
}

/** Density curve as an SVG polyline from the service's fixed grid; linear
 * interpolation between the supplied points only. */
export function renderDensitySvg(
  posterior: PosteriorSummary,
  width = 560,
  height = 180,
): string {
  const { density_grid: grid, density, mean_mtd, interval_90 } = posterior;
  const xMin = grid[0];
  const xMax = grid[grid.length - 1];
  const dMax = Math.max(...density, 1e-12);
  const sx = (x: number) => ((x - xMin) / (xMax - xMin)) * (width - 20) + 10;
  const sy = (d: number) => height - 14 - (d / dMax) * (height - 28);
  const pts = grid.map((x, i) => `${sx(x).toFixed(1)},${sy(density[i]).toFixed(1)}`).join(" ");
  const [lo, hi] = interval_90;
  return (
    `<svg viewBox="0 0 ${width} ${height}" class="density">` +
    `<rect x="${sx(lo).toFixed(1)}" y="10" width="${(sx(hi) - sx(lo)).toFixed(1)}"` +
    ` height="${height - 24}" class="interval"/>` +
    `<polyline points="${pts}" fill="none" class="curve"/>` +
    `<line x1="${sx(mean_mtd).toFixed(1)}" y1="10" x2="${sx(mean_mtd).toFixed(1)}"` +
    ` y2="${height - 14}" class="mean"/>` +
    `<text x="${sx(mean_mtd).toFixed(1)}" y="9" class="mean-label">mean ${mean_mtd.toFixed(1)}</text>` +
    `</svg>`
  );
}

export function renderTimeline(history: HistoryEntry[]): string {
  if (history.length === 0) {
    return `<p class="empty">No outcomes recorded yet.</p>`;
  }
  const rows = history
    .map(
      (h) =>
        `<tr class="${h.outcome ? "dlt" : "ok"}"><td>${h.patient_index}</td>` +
        `<td>${h.dose.toFixed(2)}</td><td>${h.outcome ? "DLT" : "no DLT"}</td></tr>`,
    )
    .join("");
  return `<table class="timeline"><thead><tr><th>#</th><th>dose</th><th>outcome</th></tr></thead><tbody>${rows}</tbody></table>`;
}

export function renderDltCounter(snapshot: TrialSnapshot): string {
  const expected = snapshot.config.target_rate * snapshot.patients_enrolled;
  return (
    `<div class="dlt-counter">DLTs: <strong>${snapshot.dlt_count}</strong>` +
    ` of ${snapshot.patients_enrolled} treated` +
    ` (target rate ${(100 * snapshot.config.target_rate).toFixed(1)}%` +
    ` &asymp; ${expected.toFixed(1)} expected)</div>`
  );
}

export function renderCompletion(snapshot: TrialSnapshot): string {
  const [lo, hi] = snapshot.posterior.interval_90;
  return (
    `<div class="completion">` +
    `<h3>Trial complete</h3>` +
    `<p>Terminal MTD estimate <strong>${snapshot.eta_hat.toFixed(2)}</strong></p>` +
    `<p>90% interval [${lo.toFixed(1)}, ${hi.toFixed(1)}]</p>` +
    `<p>${snapshot.dlt_count} DLTs in ${snapshot.patients_enrolled} patients</p>` +
    `</div>`
  );
}

export function renderError(message: string, retry: boolean): string {
  return (
    `<div class="error">${esc(message)}` +
    (retry ? ` <button class="retry" id="retry-btn">reload &amp; retry</button>` : "") +
    `</div>`
  );
}
