/** Browser wiring: controls on the left, feature panels and the risk panel
 * in the middle, query overlays on click. All rendering goes through the
 * pure functions in render.ts / overlay.ts; this file only moves strings
 * into the DOM and state out of inputs. */

import { ApiClient, ApiError } from "./api";
import { renderErrorBanner, renderImplausibleNotice, renderQueryOverlay,
         renderQuerySummary } from "./overlay";
import { panelScales, renderEnsemble } from "./render";
import { EnsembleDocument, initialViewState, QueryResponse, SeriesDocument,
         ViewState } from "./types";

const API_BASE = (window as { ODECAST_API?: string }).ODECAST_API ?? "http://127.0.0.1:8350";

const state: ViewState = initialViewState();
let client = new ApiClient(API_BASE);
let currentDoc: EnsembleDocument | null = null;
let currentSeries: SeriesDocument | null = null;
let currentQuery: QueryResponse | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function banner(html: string): void {
  el("banner").innerHTML = html;
}

function clearBanner(): void {
  el("banner").innerHTML = "";
}

function renderAll(): void {
  if (!currentDoc) return;
  let view;
  try {
    view = renderEnsemble(currentDoc, currentSeries, state);
  } catch (err) {
    banner(renderErrorBanner(`malformed document: ${err}`, false));
    return; // previous panels stay in place
  }
  const panels = el("panels");
  panels.innerHTML = "";
  view.panels.forEach((svg, feature) => {
    const wrap = document.createElement("div");
    wrap.className = "panel-wrap" + (currentQuery ? " dimmed-base" : "");
    wrap.innerHTML = svg;
    if (currentQuery) {
      const overlay = document.createElement("div");
      overlay.className = "overlay-holder";
      overlay.innerHTML = renderQueryOverlay(currentDoc!, currentQuery, currentSeries,
                                             feature, state);
      wrap.appendChild(overlay);
    }
    wrap.addEventListener("click", (ev) => onPanelClick(ev, feature, wrap));
    panels.appendChild(wrap);
  });
  el("risk").innerHTML = view.risk;
  el("summary").textContent = view.summary;
  el("query-summary").innerHTML = currentQuery ? renderQuerySummary(currentQuery) : "";
}

async function refreshEnsemble(): Promise<void> {
  if (!state.seriesId) return;
  clearBanner();
  try {
    currentDoc = await client.ensemble(state.seriesId, {
      fraction: state.fraction,
      k: state.k,
      horizon_mult: state.horizonMult,
      seed: state.seed,
    });
    currentQuery = null;
    renderAll();
  } catch (err) {
    if (err instanceof ApiError) {
      banner(renderErrorBanner(`${err.body.code}: ${err.body.message}`, err.status === 0));
    } else {
      banner(renderErrorBanner(String(err), true));
    }
  }
}

function onPanelClick(ev: MouseEvent, feature: number, wrap: HTMLDivElement): void {
  if (!currentDoc || !state.seriesId) return;
  const svg = wrap.querySelector("svg.feature-panel") as SVGSVGElement | null;
  if (!svg) return;
  const rect = svg.getBoundingClientRect();
  const sx = ((ev.clientX - rect.left) / rect.width) * 420;
  const sy = ((ev.clientY - rect.top) / rect.height) * 180;
  const scales = panelScales(currentDoc, feature, currentSeries);
  const time = scales.x.invert(sx);
  const value = scales.y.invert(sy);
  const tolerance = Number((el<HTMLInputElement>("tolerance")).value) || 0.25;
  state.placedPoint = { time, feature, value, tolerance };
  void runQuery();
}

async function runQuery(): Promise<void> {
  if (!state.placedPoint || !state.seriesId) return;
  clearBanner();
  try {
    currentQuery = await client.query(state.seriesId, state.placedPoint, state.k,
                                      state.seed, state.fraction);
    renderAll();
  } catch (err) {
    if (err instanceof ApiError && err.status === 422
        && err.body.code === "query_infeasible") {
      banner(renderImplausibleNotice(err.body));
    } else if (err instanceof ApiError) {
      banner(renderErrorBanner(`${err.body.code}: ${err.body.message}`, err.status === 0));
    } else {
      banner(renderErrorBanner(String(err), true));
    }
  }
}

async function loadSeriesFile(file: File): Promise<void> {
  const text = await file.text();
  const doc = JSON.parse(text) as SeriesDocument;
  const { id } = await client.putSeries(doc);
  currentSeries = doc;
  state.seriesId = id;
  el("series-label").textContent = `${doc.series_id ?? "series"} -> ${id}`;
  await refreshEnsemble();
}

function wire(): void {
  const fraction = el<HTMLInputElement>("fraction");
  fraction.addEventListener("change", () => {
    state.fraction = Number(fraction.value);
    el("fraction-label").textContent = fraction.value;
    void refreshEnsemble();
  });
  const k = el<HTMLInputElement>("k");
  k.addEventListener("change", () => {
    state.k = Number(k.value);
    void refreshEnsemble();
  });
  const horizon = el<HTMLInputElement>("horizon");
  horizon.addEventListener("change", () => {
    state.horizonMult = Number(horizon.value);
    void refreshEnsemble();
  });
  const seed = el<HTMLInputElement>("seed");
  seed.addEventListener("change", () => {
    state.seed = Number(seed.value);
    void refreshEnsemble();
  });
  const units = el<HTMLInputElement>("units");
  units.addEventListener("change", () => {
    state.units = units.checked ? "raw" : "normalized";
    renderAll(); // labels only; geometry unchanged
  });
  const backward = el<HTMLInputElement>("backward");
  backward.addEventListener("change", () => {
    state.showBackward = backward.checked;
    renderAll();
  });
  el<HTMLButtonElement>("clear-query").addEventListener("click", () => {
    state.placedPoint = null;
    currentQuery = null;
    clearBanner();
    renderAll();
  });
  el<HTMLInputElement>("series-file").addEventListener("change", (ev) => {
    const input = ev.target as HTMLInputElement;
    if (input.files && input.files[0]) void loadSeriesFile(input.files[0]);
  });
  void client.health().then(
    (h) => { el("health").textContent = `ready (checkpoint ${h.checkpoint_hash.slice(0, 8)})`; },
    () => { el("health").textContent = "API unreachable"; });
}

wire();
