/** Pure SVG renderers: every view is a deterministic string function of
 * (documents, ViewState). No network, no DOM reads, no model math — the
 * client draws exactly what the server returned. */

import { extent, formatTick, linearScale, polylinePath, px, Scale, ticks } from "./scales";
import { EnsembleDocument, SeriesDocument, Units, ViewState } from "./types";

export const PANEL = { width: 420, height: 180, left: 58, right: 12, top: 18, bottom: 26 };
export const RISK_PANEL = { width: 420, height: 150, left: 58, right: 12, top: 18, bottom: 26 };

export interface PanelScales {
  x: Scale;
  y: Scale;
}

export function panelScales(doc: EnsembleDocument, feature: number,
                            series: SeriesDocument | null): PanelScales {
  const values: number[] = [];
  for (const member of doc.members) {
    for (const row of member) values.push(row[feature]);
  }
  if (series) {
    for (let i = 0; i < series.times.length; i++) {
      if (series.mask[i][feature] === 1) values.push(series.values[i][feature]);
    }
  }
  const x = linearScale([doc.times[0], doc.times[doc.times.length - 1]],
                        [PANEL.left, PANEL.width - PANEL.right]);
  const y = linearScale(extent(values), [PANEL.height - PANEL.bottom, PANEL.top]);
  return { x, y };
}

/** Convert a normalized feature value to its display label in the chosen units. */
export function valueLabel(v: number, feature: number, doc: EnsembleDocument,
                           units: Units): string {
  if (units === "raw" && doc.norm_stats) {
    return formatTick(v * doc.norm_stats.std[feature] + doc.norm_stats.mean[feature]);
  }
  return formatTick(v);
}

export function timeLabel(t: number, doc: EnsembleDocument, units: Units): string {
  if (units === "raw" && doc.norm_stats) {
    return formatTick(t * doc.norm_stats.time_scale + doc.norm_stats.time_origin);
  }
  return formatTick(t);
}

function axes(doc: EnsembleDocument, feature: number, s: PanelScales, units: Units): string {
  const parts: string[] = [];
  const x0 = PANEL.left;
  const x1 = PANEL.width - PANEL.right;
  const y0 = PANEL.height - PANEL.bottom;
  parts.push(`<line class="axis" x1="${px(x0)}" y1="${px(y0)}" x2="${px(x1)}" y2="${px(y0)}"/>`);
  parts.push(`<line class="axis" x1="${px(x0)}" y1="${px(PANEL.top)}" x2="${px(x0)}" y2="${px(y0)}"/>`);
  for (const t of ticks(s.x.domain, 5)) {
    parts.push(`<text class="tick" x="${px(s.x(t))}" y="${px(y0 + 14)}" text-anchor="middle">` +
      `${timeLabel(t, doc, units)}</text>`);
  }
  for (const v of ticks(s.y.domain, 4)) {
    parts.push(`<text class="tick" x="${px(x0 - 6)}" y="${px(s.y(v) + 3)}" text-anchor="end">` +
      `${valueLabel(v, feature, doc, units)}</text>`);
  }
  return parts.join("");
}

/** Split one member's curve at the observed end: solid inside, dashed beyond.
 * The boundary sample appears in both segments so the curve stays connected. */
export function memberSegments(times: number[], values: number[],
                               observedEnd: number): { solid: number[]; dashed: number[] } {
  const solid: number[] = [];
  const dashed: number[] = [];
  const eps = 1e-12;
  for (let i = 0; i < times.length; i++) {
    if (times[i] <= observedEnd + eps) solid.push(i);
    if (times[i] >= observedEnd - eps || (i > 0 && times[i - 1] <= observedEnd + eps
        && times[i] > observedEnd + eps)) {
      dashed.push(i);
    }
  }
  return { solid, dashed };
}

function memberPaths(doc: EnsembleDocument, feature: number, s: PanelScales): string {
  const parts: string[] = [];
  for (let k = 0; k < doc.members.length; k++) {
    const times = doc.times;
    const vals = doc.members[k].map((row) => row[feature]);
    const seg = memberSegments(times, vals, doc.observed_end);
    if (seg.solid.length > 1) {
      const d = polylinePath(seg.solid.map((i) => s.x(times[i])),
                             seg.solid.map((i) => s.y(vals[i])));
      parts.push(`<path class="member member-solid" data-member="${k}" d="${d}"/>`);
    }
    if (seg.dashed.length > 1) {
      const d = polylinePath(seg.dashed.map((i) => s.x(times[i])),
                             seg.dashed.map((i) => s.y(vals[i])));
      parts.push(`<path class="member member-dashed" data-member="${k}" d="${d}"/>`);
    }
  }
  return parts.join("");
}

function observationDots(series: SeriesDocument, feature: number, s: PanelScales): string {
  const parts: string[] = [];
  for (let i = 0; i < series.times.length; i++) {
    if (series.mask[i][feature] === 1) {
      parts.push(`<circle class="obs" cx="${px(s.x(series.times[i]))}" ` +
        `cy="${px(s.y(series.values[i][feature]))}" r="2.5"/>`);
    }
  }
  return parts.join("");
}

/** Shaded band from the horizon of predictability to the grid end. */
export function hopShading(doc: EnsembleDocument, s: PanelScales): string {
  if (doc.hop === null) return "";
  const x = s.x(doc.hop);
  const xEnd = s.x(doc.times[doc.times.length - 1]);
  const w = xEnd - x;
  if (w <= 0) return "";
  return `<rect class="hop-shade" x="${px(x)}" y="${px(PANEL.top)}" width="${px(w)}" ` +
    `height="${px(PANEL.height - PANEL.top - PANEL.bottom)}"/>` +
    `<line class="hop-line" x1="${px(x)}" y1="${px(PANEL.top)}" x2="${px(x)}" ` +
    `y2="${px(PANEL.height - PANEL.bottom)}"/>`;
}

export function renderFeaturePanel(doc: EnsembleDocument, series: SeriesDocument | null,
                                   feature: number, view: ViewState): string {
  const s = panelScales(doc, feature, series);
  const name = doc.feature_names[feature];
  const body = [
    `<text class="panel-title" x="${px(PANEL.left)}" y="12">${name}</text>`,
    axes(doc, feature, s, view.units),
    hopShading(doc, s),
    `<g class="members">${memberPaths(doc, feature, s)}</g>`,
    series ? `<g class="observations">${observationDots(series, feature, s)}</g>` : "",
  ].join("");
  return `<svg class="panel feature-panel" data-feature="${feature}" ` +
    `viewBox="0 0 ${PANEL.width} ${PANEL.height}" xmlns="http://www.w3.org/2000/svg">` +
    `${body}</svg>`;
}

export function renderRiskPanel(doc: EnsembleDocument, view: ViewState): string {
  const P = RISK_PANEL;
  const durations = doc.risk_curve.map((p) => p.duration);
  const x = linearScale([Math.min(...durations, 0), Math.max(...durations, 1)],
                        [P.left, P.width - P.right]);
  const y = linearScale([0, 1], [P.height - P.bottom, P.top]);
  const parts: string[] = [];
  parts.push(`<text class="panel-title" x="${px(P.left)}" y="12">outcome risk</text>`);
  parts.push(`<line class="axis" x1="${px(P.left)}" y1="${px(y(0))}" ` +
    `x2="${px(P.width - P.right)}" y2="${px(y(0))}"/>`);
  for (const v of [0, 0.5, 1]) {
    parts.push(`<text class="tick" x="${px(P.left - 6)}" y="${px(y(v) + 3)}" ` +
      `text-anchor="end">${formatTick(v)}</text>`);
  }
  for (const t of ticks(x.domain, 5)) {
    parts.push(`<text class="tick" x="${px(x(t))}" y="${px(y(0) + 14)}" ` +
      `text-anchor="middle">${timeLabel(t, doc, view.units)}</text>`);
  }
  const ty = y(doc.risk_threshold);
  parts.push(`<line class="threshold" x1="${px(P.left)}" y1="${px(ty)}" ` +
    `x2="${px(P.width - P.right)}" y2="${px(ty)}"/>`);
  const d = polylinePath(doc.risk_curve.map((p) => x(p.duration)),
                         doc.risk_curve.map((p) => y(p.probability)));
  parts.push(`<path class="risk-curve" d="${d}"/>`);
  for (const p of doc.risk_curve) {
    parts.push(`<circle class="risk-dot" cx="${px(x(p.duration))}" ` +
      `cy="${px(y(p.probability))}" r="2.5"/>`);
  }
  if (doc.risk_first_crossing !== null) {
    const cx = x(doc.risk_first_crossing);
    parts.push(`<line class="crossing-marker" x1="${px(cx)}" y1="${px(P.top)}" ` +
      `x2="${px(cx)}" y2="${px(P.height - P.bottom)}"/>`);
    parts.push(`<text class="crossing-label" x="${px(cx + 4)}" y="${px(P.top + 10)}">` +
      `crosses ${formatTick(doc.risk_threshold)}</text>`);
  }
  return `<svg class="panel risk-panel" viewBox="0 0 ${P.width} ${P.height}" ` +
    `xmlns="http://www.w3.org/2000/svg">${parts.join("")}</svg>`;
}

export interface EnsembleView {
  panels: string[];
  risk: string;
  summary: string;
}

export function validateDocument(doc: unknown): doc is EnsembleDocument {
  const d = doc as EnsembleDocument;
  return Boolean(d && d.schema === "odecast.ensemble/1" && Array.isArray(d.times)
    && Array.isArray(d.members) && d.members.length > 0
    && Array.isArray(d.feature_names) && Array.isArray(d.risk_curve)
    && d.members.every((m) => Array.isArray(m) && m.length === d.times.length));
}

/** The full view for one ensemble document. Throws on malformed documents
 * (the app keeps the previous view and shows a banner). */
export function renderEnsemble(doc: EnsembleDocument, series: SeriesDocument | null,
                               view: ViewState): EnsembleView {
  if (!validateDocument(doc)) {
    throw new Error("malformed ensemble document");
  }
  const panels = doc.feature_names.map((_, f) => renderFeaturePanel(doc, series, f, view));
  const hopText = doc.hop === null ? "beyond grid"
    : `${timeLabel(doc.hop, doc, view.units)}${view.units === "raw" ? " h" : ""}`;
  const summary = `K=${doc.k}, seed=${doc.seed}, dropped=${doc.dropped}, ` +
    `horizon of predictability: ${hopText}`;
  return { panels, risk: renderRiskPanel(doc, view), summary };
}
