/**
 * UI state models. State objects are immutable; interactions produce new
 * states, and the grid re-renders all twelve panels from one state in one
 * pass, which is what keeps zooming synchronized by construction.
 */

import type { ViewName } from "./api.js";

export const DURATION_S = 10;
export const GRID_ROWS = 2;
export const GRID_COLS = 6;
export const MIN_ZOOM_SPAN_S = 0.1;

export interface ZoomWindow {
  tStart: number;
  tEnd: number;
}

export interface GridViewState {
  rows: typeof GRID_ROWS;
  cols: typeof GRID_COLS;
  zoom: ZoomWindow;
  amplitudeMv: number;
  view: ViewName;
}

export function initialGridState(view: ViewName = "raw"): GridViewState {
  return {
    rows: GRID_ROWS,
    cols: GRID_COLS,
    zoom: { tStart: 0, tEnd: DURATION_S },
    amplitudeMv: 2.0,
    view,
  };
}

/** Clamp a requested window into [0, DURATION_S] with a minimum span. */
export function applyZoom(state: GridViewState, tStart: number, tEnd: number): GridViewState {
  let start = Math.max(0, Math.min(tStart, tEnd));
  let end = Math.min(DURATION_S, Math.max(tStart, tEnd));
  if (end - start < MIN_ZOOM_SPAN_S) {
    const center = (start + end) / 2;
    start = Math.max(0, center - MIN_ZOOM_SPAN_S / 2);
    end = Math.min(DURATION_S, start + MIN_ZOOM_SPAN_S);
    start = end - MIN_ZOOM_SPAN_S;
  }
  return { ...state, zoom: { tStart: start, tEnd: end } };
}

/** Zoom by a factor around a time point (factor < 1 zooms in). */
export function zoomBy(state: GridViewState, factor: number, centerT: number): GridViewState {
  const span = (state.zoom.tEnd - state.zoom.tStart) * factor;
  const ratio =
    (centerT - state.zoom.tStart) / (state.zoom.tEnd - state.zoom.tStart || 1);
  return applyZoom(state, centerT - span * ratio, centerT + span * (1 - ratio));
}

/** Pan the current window, preserving its span. */
export function panBy(state: GridViewState, deltaT: number): GridViewState {
  const span = state.zoom.tEnd - state.zoom.tStart;
  let start = state.zoom.tStart + deltaT;
  start = Math.max(0, Math.min(start, DURATION_S - span));
  return applyZoom(state, start, start + span);
}

export function setView(state: GridViewState, view: ViewName): GridViewState {
  return { ...state, view };
}

export function setAmplitude(state: GridViewState, amplitudeMv: number): GridViewState {
  return { ...state, amplitudeMv: Math.max(0.1, amplitudeMv) };
}

// ---------------------------------------------------------------------------
// Fine-tune console state

export type TrainingMethod = "head" | "full";

export interface FinetunePanelState {
  baseModel: string | null;
  method: TrainingMethod;
  customName: string;
  /** filename or recording id -> class list, as loaded by the user */
  datasetLabels: Record<string, string[]>;
  jobId: string | null;
}

export function initialFinetuneState(): FinetunePanelState {
  return { baseModel: null, method: "head", customName: "", datasetLabels: {}, jobId: null };
}

export interface DatasetSummary {
  nEcgs: number;
  nLabels: number;
  counts: Record<string, number>;
}

/** Label distribution and totals for the bar chart; counts are exact. */
export function datasetSummary(labels: Record<string, string[]>): DatasetSummary {
  const counts: Record<string, number> = {};
  let nLabels = 0;
  for (const classes of Object.values(labels)) {
    for (const cls of classes) {
      counts[cls] = (counts[cls] ?? 0) + 1;
      nLabels += 1;
    }
  }
  return { nEcgs: Object.keys(labels).length, nLabels, counts };
}

/** Launch stays disabled until a model, a name, and two classes exist. */
export function canLaunch(state: FinetunePanelState): boolean {
  const classes = new Set(Object.values(state.datasetLabels).flat());
  return Boolean(state.baseModel) && state.customName.trim().length > 0 && classes.size >= 2;
}

export function launchRequest(state: FinetunePanelState): {
  name: string;
  model: string;
  recording_ids: string[];
  labels: Record<string, string[]>;
  config: Record<string, unknown>;
} {
  if (!canLaunch(state)) {
    throw new Error("launch requires a base model, a name, and at least two classes");
  }
  return {
    name: state.customName.trim(),
    model: state.baseModel as string,
    recording_ids: Object.keys(state.datasetLabels),
    labels: state.datasetLabels,
    config: { method: state.method },
  };
}
