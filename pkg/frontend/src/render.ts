/** Pure HTML renderers; the server's numbers are the only truth shown. */

import type { ModelInfo, PredictionReport } from "./api.js";

export const CLASS_ORDER = ["Normal", "Pneumonia", "Tuberculosis"] as const;

export interface SessionEntry {
  thumbnail: string; // data/object URL, session-local only
  report: PredictionReport;
  timestamp: Date;
}

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Integer percentages; each value rounds to nearest, so the sum stays
 * within one point of 100. */
export function percentages(probs: number[]): number[] {
  return probs.map((p) => Math.round(p * 100));
}

export function argmaxIndex(probs: number[]): number {
  let best = 0;
  for (let i = 1; i < probs.length; i += 1) {
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

/** Three labeled probability bars in fixed class order, argmax flagged
 * with class "bar-row highlight" and data-highlight="true". */
export function renderBars(probs: number[]): string {
  const pct = percentages(probs);
  const winner = argmaxIndex(probs);
  return CLASS_ORDER.map((name, i) => {
    const highlight = i === winner;
    return `
      <div class="bar-row${highlight ? " highlight" : ""}"
           data-class="${name}" data-highlight="${highlight}">
        <span class="bar-label">${name}</span>
        <span class="bar-track"><span class="bar-fill" style="width:${pct[i]}%"></span></span>
        <span class="bar-value">${pct[i]}%</span>
      </div>`;
  }).join("\n");
}

export function renderReport(report: PredictionReport): string {
  return `
    <div class="verdict">
      Model opinion: <strong>${escapeHtml(report.label)}</strong>
    </div>
    <div class="bars">${renderBars(report.probabilities)}</div>
    <div class="report-meta">
      ${escapeHtml(report.model_name)} &middot;
      <code>${escapeHtml(report.model_hash.slice(0, 12))}</code>
    </div>`;
}

export function renderHistory(entries: SessionEntry[]): string {
  if (entries.length === 0) {
    return `<p class="muted">No uploads this session.</p>`;
  }
  return entries
    .map(
      (e) => `
    <div class="history-entry">
      <img class="thumb" src="${e.thumbnail}" alt="uploaded X-ray thumbnail">
      <div class="history-body">
        <div class="history-label">${escapeHtml(e.report.label)}</div>
        <div class="history-time">${e.timestamp.toLocaleTimeString()}</div>
        <div class="bars small">${renderBars(e.report.probabilities)}</div>
      </div>
    </div>`,
    )
    .join("\n");
}

export function renderModelInfo(info: ModelInfo): string {
  const p = info.preprocessing;
  return `
    <dl class="model-info">
      <dt>Architecture</dt><dd>${escapeHtml(info.model_name)}</dd>
      <dt>Model hash</dt><dd><code>${escapeHtml(info.model_hash)}</code></dd>
      <dt>Input</dt>
      <dd>${p.width}&times;${p.height}, ${p.channels} channel(s), scale ${escapeHtml(p.scale)}</dd>
      <dt>Classes</dt><dd>${info.classes.map(escapeHtml).join(", ")}</dd>
    </dl>`;
}

export function renderError(code: string, detail: string): string {
  return `
    <div class="error" data-code="${escapeHtml(code)}">
      <strong>${escapeHtml(code)}</strong>: ${escapeHtml(detail)}
    </div>`;
}

export function renderUnavailableBanner(): string {
  return `<div class="banner error" data-code="service_unavailable">
    service unavailable &mdash; the prediction service is not reachable
  </div>`;
}

export function renderRetry(): string {
  return `<button class="retry" type="button">Retry</button>`;
}
