/**
 * Browser wiring. Everything here is thin: state transitions and
 * rendering live in the pure modules; this file moves DOM events in and
 * SVG/table markup out. A full page refresh rebuilds every view from the
 * service responses alone.
 */

import { ApiClient, ApiError, RawView, ViewName, ViewPayload } from "./api.js";
import { PanelRender, errorPanels, renderGrid } from "./grid.js";
import { barChart, f1Table, lossCurve, pollJob, PollHandle } from "./finetune.js";
import { sortByClass, tableModel, PredictionTable } from "./predict.js";
import {
  FinetunePanelState,
  GridViewState,
  applyZoom,
  canLaunch,
  datasetSummary,
  initialFinetuneState,
  initialGridState,
  launchRequest,
  panBy,
  setView,
  zoomBy,
} from "./state.js";

const api = new ApiClient();
const GRID_W = 1320;
const GRID_H = 420;

let gridState: GridViewState = initialGridState();
let finetuneState: FinetunePanelState = initialFinetuneState();
let currentRecording: string | null = null;
let currentPayload: ViewPayload | null = null;
let rawPayload: RawView | null = null;
let activePoll: PollHandle | null = null;
let renderQueued = false;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function svgForPanels(panels: PanelRender[]): string {
  const parts: string[] = [
    `<svg viewBox="0 0 ${GRID_W} ${GRID_H}" width="100%" role="img">`,
  ];
  for (const panel of panels) {
    const g = panel.geometry;
    const frame = panel.emphasized ? "panel-frame emphasized" : "panel-frame";
    parts.push(`<g transform="translate(${g.x},${g.y})">`);
    parts.push(`<rect class="${frame}" width="${g.width}" height="${g.height}"/>`);
    parts.push(`<text class="panel-label" x="4" y="12">${panel.lead}</text>`);
    if (panel.message) {
      parts.push(`<text class="panel-message" x="4" y="${g.height / 2}">${panel.message}</text>`);
    }
    for (const path of panel.paths) {
      if (path) parts.push(`<path class="trace" d="${path}"/>`);
    }
    for (const marker of panel.markers) {
      parts.push(`<line class="marker" x1="${marker.x}" y1="0" x2="${marker.x}" y2="${g.height}"/>`);
    }
    parts.push("</g>");
  }
  parts.push("</svg>");
  return parts.join("");
}

/** One rAF flush per interaction: every panel updates in the same frame. */
function scheduleRender(): void {
  if (renderQueued) return;
  renderQueued = true;
  requestAnimationFrame(() => {
    renderQueued = false;
    drawGrid();
  });
}

function drawGrid(): void {
  const host = el<HTMLDivElement>("grid");
  if (!currentPayload) {
    host.innerHTML = "<p class='hint'>Upload a recording to see its leads.</p>";
    return;
  }
  const panels = renderGrid(currentPayload, gridState, GRID_W, GRID_H,
    rawPayload ?? undefined);
  host.innerHTML = svgForPanels(panels);
  el<HTMLSpanElement>("zoom-range").textContent =
    `${gridState.zoom.tStart.toFixed(2)}s – ${gridState.zoom.tEnd.toFixed(2)}s`;
}

async function loadView(view: ViewName): Promise<void> {
  if (!currentRecording) return;
  gridState = setView(gridState, view);
  try {
    currentPayload = await api.getView(currentRecording, view);
    if (view !== "raw" && !rawPayload) {
      rawPayload = (await api.getView(currentRecording, "raw")) as RawView;
    }
    if (view === "raw") rawPayload = currentPayload as RawView;
  } catch (err) {
    if (err instanceof ApiError) {
      el<HTMLDivElement>("grid").innerHTML =
        svgForPanels(errorPanels(`${err.code}: ${err.detail}`, GRID_W, GRID_H));
      return;
    }
    throw err;
  }
  scheduleRender();
}

function wireZoom(): void {
  const host = el<HTMLDivElement>("grid");
  host.addEventListener("wheel", (event) => {
    event.preventDefault();
    const rect = host.getBoundingClientRect();
    const frac = (event.clientX - rect.left) / rect.width;
    const t = gridState.zoom.tStart +
      frac * (gridState.zoom.tEnd - gridState.zoom.tStart);
    gridState = zoomBy(gridState, event.deltaY > 0 ? 1.25 : 0.8, t);
    scheduleRender();
  }, { passive: false });

  let dragStartX: number | null = null;
  host.addEventListener("pointerdown", (event) => {
    dragStartX = event.clientX;
  });
  host.addEventListener("pointermove", (event) => {
    if (dragStartX === null) return;
    const rect = host.getBoundingClientRect();
    const span = gridState.zoom.tEnd - gridState.zoom.tStart;
    const deltaT = (-(event.clientX - dragStartX) / rect.width) * span;
    dragStartX = event.clientX;
    gridState = panBy(gridState, deltaT);
    scheduleRender();
  });
  host.addEventListener("pointerup", () => {
    dragStartX = null;
  });
  el<HTMLButtonElement>("zoom-reset").addEventListener("click", () => {
    gridState = applyZoom(gridState, 0, 10);
    scheduleRender();
  });
}

async function wireUpload(): Promise<void> {
  const input = el<HTMLInputElement>("file-input");
  input.addEventListener("change", async () => {
    const file = input.files?.[0];
    if (!file) return;
    const form = new FormData();
    form.append("file", file);
    const rate = el<HTMLInputElement>("rate-input").value;
    if (rate) form.append("rate_hz", rate);
    try {
      const { id, warnings } = await api.uploadRecording(form);
      currentRecording = id;
      rawPayload = null;
      el<HTMLSpanElement>("upload-status").textContent =
        warnings.length ? `uploaded (${warnings.join("; ")})` : "uploaded";
      await loadView(gridState.view);
    } catch (err) {
      if (err instanceof ApiError) {
        el<HTMLSpanElement>("upload-status").textContent = `${err.code}: ${err.detail}`;
      } else {
        throw err;
      }
    }
  });
}

function renderFinetunePanel(): void {
  const summary = datasetSummary(finetuneState.datasetLabels);
  el<HTMLSpanElement>("dataset-summary").textContent =
    `${summary.nEcgs} ECGs, ${summary.nLabels} labels`;
  const bars = barChart(summary.counts);
  el<HTMLDivElement>("label-bars").innerHTML = bars.map((bar) =>
    `<div class="bar" style="height:${bar.height}px" title="${bar.label}: ${bar.count}">` +
    `<span class="bar-count">${bar.count}</span><span class="bar-label">${bar.label}</span></div>`,
  ).join("");
  el<HTMLButtonElement>("launch").disabled = !canLaunch(finetuneState);
}

function wireFinetune(): void {
  el<HTMLInputElement>("model-name").addEventListener("input", (event) => {
    finetuneState = { ...finetuneState, customName: (event.target as HTMLInputElement).value };
    renderFinetunePanel();
  });
  el<HTMLSelectElement>("base-model").addEventListener("change", (event) => {
    finetuneState = { ...finetuneState, baseModel: (event.target as HTMLSelectElement).value };
    renderFinetunePanel();
  });
  el<HTMLSelectElement>("method").addEventListener("change", (event) => {
    const method = (event.target as HTMLSelectElement).value as "head" | "full";
    finetuneState = { ...finetuneState, method };
  });
  el<HTMLInputElement>("labels-input").addEventListener("change", async (event) => {
    const file = (event.target as HTMLInputElement).files?.[0];
    if (!file) return;
    finetuneState = { ...finetuneState, datasetLabels: JSON.parse(await file.text()) };
    renderFinetunePanel();
  });
  el<HTMLButtonElement>("launch").addEventListener("click", async () => {
    try {
      const { job_id } = await api.startFinetune(launchRequest(finetuneState));
      finetuneState = { ...finetuneState, jobId: job_id };
      activePoll?.cancel();
      activePoll = pollJob(api, job_id, (status) => {
        el<HTMLSpanElement>("job-status").textContent =
          `${status.state} (epoch ${status.progress})${status.error ? `: ${status.error}` : ""}`;
      });
      const final = await activePoll.done;
      if (final.state === "succeeded") {
        const report = await api.jobReport(job_id);
        el<HTMLPreElement>("report").textContent = JSON.stringify(report, null, 2);
        el<HTMLDivElement>("loss-curve").textContent = lossCurve(report)
          .map((p) => `${p.epoch}: train ${p.train.toFixed(4)} val ${p.val.toFixed(4)}`)
          .join("\n");
        el<HTMLDivElement>("f1-table").innerHTML = f1Table(report)
          .map((row) => `<div>${row.label}: ${row.f1.toFixed(3)}</div>`)
          .join("");
      }
    } catch (err) {
      if (err instanceof ApiError) {
        el<HTMLSpanElement>("job-status").textContent = `${err.code}: ${err.detail}`;
      } else {
        throw err;
      }
    }
  });
}

let predictionTable: PredictionTable | null = null;

function drawPredictions(): void {
  if (!predictionTable) return;
  const table = predictionTable;
  const header = ["recording", ...table.classes]
    .map((cls, i) => `<th data-col="${i - 1}">${cls}</th>`).join("");
  const body = table.rows.map((row) =>
    `<tr><td>${row.recordingId}</td>` + row.cells.map((cell) =>
      `<td style="background:${cell.color}">${cell.value.toFixed(3)}</td>`).join("") + "</tr>",
  ).join("");
  el<HTMLTableElement>("prediction-table").innerHTML =
    `<thead><tr>${header}</tr></thead><tbody>${body}</tbody>`;
  el<HTMLTableElement>("prediction-table").querySelectorAll("th[data-col]").forEach((th) => {
    th.addEventListener("click", () => {
      const col = Number((th as HTMLElement).dataset.col);
      if (col >= 0 && predictionTable) {
        predictionTable = sortByClass(predictionTable, col);
        drawPredictions();
      }
    });
  });
}

function wirePredict(): void {
  el<HTMLButtonElement>("predict").addEventListener("click", async () => {
    if (!currentRecording) return;
    const model = el<HTMLSelectElement>("predict-model").value;
    try {
      predictionTable = tableModel(await api.predict([currentRecording], model));
      drawPredictions();
    } catch (err) {
      if (err instanceof ApiError) {
        el<HTMLTableElement>("prediction-table").innerHTML =
          `<caption>${err.code}: ${err.detail}</caption>`;
      } else {
        throw err;
      }
    }
  });
}

async function refreshModels(): Promise<void> {
  const listing = await api.listModels();
  const options = listing.models
    .map((m) => `<option value="${m.name}">${m.name} (${m.state})</option>`)
    .join("");
  el<HTMLSelectElement>("base-model").innerHTML =
    `<option value="">choose…</option>${options}`;
  el<HTMLSelectElement>("predict-model").innerHTML = options;
}

const viewButtons: ViewName[] = ["raw", "qrs", "median", "aligned", "fiducials"];

export function boot(): void {
  for (const view of viewButtons) {
    el<HTMLButtonElement>(`view-${view}`).addEventListener("click", () => {
      activePoll?.cancel();
      void loadView(view);
    });
  }
  wireZoom();
  void wireUpload();
  wireFinetune();
  wirePredict();
  void refreshModels();
  drawGrid();
}

if (typeof document !== "undefined" && document.getElementById("grid")) {
  boot();
}
