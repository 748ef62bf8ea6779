/** Query overlays: the conditioned family, its backward traces, the placed
 * point, and the implausible-point notice. Pure string renderers. */

import { panelScales, PANEL } from "./render";
import { polylinePath, px } from "./scales";
import { ApiErrorBody, EnsembleDocument, PlacedPoint, QueryResponse, SeriesDocument,
         ViewState } from "./types";

/** Overlay drawn on top of one (dimmed) feature panel. Scales come from the
 * unconditioned base document so base and overlay geometry line up. */
export function renderQueryOverlay(base: EnsembleDocument, response: QueryResponse,
                                   series: SeriesDocument | null, feature: number,
                                   view: ViewState): string {
  const s = panelScales(base, feature, series);
  const cond = response.conditioned;
  const parts: string[] = [];
  for (let k = 0; k < cond.members.length; k++) {
    const d = polylinePath(cond.times.map((t) => s.x(t)),
                           cond.members[k].map((row) => s.y(row[feature])));
    parts.push(`<path class="conditioned-member" data-member="${k}" d="${d}"/>`);
  }
  if (view.showBackward) {
    for (const back of response.backward_paths) {
      const d = polylinePath(back.times.map((t) => s.x(t)),
                             back.values.map((row) => s.y(row[feature])));
      parts.push(`<path class="backward-path" data-member="${back.member}" d="${d}"/>`);
    }
  }
  const q = cond.query?.conditioned_on;
  if (q && q.feature === feature) {
    parts.push(`<circle class="query-point" cx="${px(s.x(q.time))}" ` +
      `cy="${px(s.y(q.value))}" r="5"/>`);
    parts.push(`<circle class="query-tolerance" cx="${px(s.x(q.time))}" ` +
      `cy="${px(s.y(q.value))}" r="${px(Math.abs(s.y(q.value - q.tolerance) - s.y(q.value)))}"/>`);
  }
  return `<svg class="panel overlay-panel" data-feature="${feature}" ` +
    `viewBox="0 0 ${PANEL.width} ${PANEL.height}" xmlns="http://www.w3.org/2000/svg">` +
    `${parts.join("")}</svg>`;
}

export function renderPlacedPointMarker(base: EnsembleDocument, point: PlacedPoint,
                                        series: SeriesDocument | null): string {
  const s = panelScales(base, point.feature, series);
  return `<circle class="placed-point" cx="${px(s.x(point.time))}" ` +
    `cy="${px(s.y(point.value))}" r="4"/>`;
}

/** The 422 path: the model cannot produce trajectories near the point. */
export function renderImplausibleNotice(error: ApiErrorBody): string {
  const dist = error.best_distance === undefined ? "" :
    ` Best achieved distance: ${error.best_distance.toFixed(3)} (normalized units).`;
  return `<div class="notice notice-implausible" role="alert">` +
    `<strong>The model considers this point implausible.</strong>` +
    `${dist} Widen the tolerance or move the point nearer the fan.</div>`;
}

export function renderErrorBanner(message: string, retriable: boolean): string {
  const retry = retriable ? `<button class="retry">retry</button>` : "";
  return `<div class="notice notice-error" role="alert">${message}${retry}</div>`;
}

export function renderQuerySummary(response: QueryResponse): string {
  const info = response.conditioned.query ?? {};
  const support = info.support === undefined ? "" :
    `, support ${info.support.toFixed(1)} of ${info.proposals} proposals`;
  return `<div class="query-summary">conditioned family of ` +
    `${response.conditioned.k} (seed ${response.seed}${support}); ` +
    `${response.backward_paths.length} backward traces</div>`;
}
