/**
 * Pure rendering of the 2x6 lead grid: geometry, SVG path strings, and
 * markers. All twelve panels derive from one GridViewState in a single
 * call, so any zoom change reaches every panel in the same frame. Values
 * map straight from the service payload; the only math here is the
 * display transform (time to x, millivolts to y).
 */

import type {
  AlignedView,
  FiducialsView,
  MedianView,
  QrsView,
  RawView,
  ViewPayload,
} from "./api.js";
import type { GridViewState, ZoomWindow } from "./state.js";

export interface PanelGeometry {
  index: number;
  row: number;
  col: number;
  x: number;
  y: number;
  width: number;
  height: number;
}

export interface PanelRender {
  lead: string;
  geometry: PanelGeometry;
  /** SVG path per trace; qrs views overlay one per beat. */
  paths: string[];
  /** Marker x/y positions inside the panel (R-peaks, template positions). */
  markers: { x: number; y: number }[];
  /** Lead II carries the fiducial emphasis by convention. */
  emphasized: boolean;
  /** Shared time domain, identical across all panels of one render. */
  domain: ZoomWindow;
  message?: string;
}

export function gridLayout(width: number, height: number, gap = 4): PanelGeometry[] {
  const panelW = (width - gap * 7) / 6;
  const panelH = (height - gap * 3) / 2;
  const panels: PanelGeometry[] = [];
  for (let index = 0; index < 12; index += 1) {
    const row = Math.floor(index / 6);
    const col = index % 6;
    panels.push({
      index,
      row,
      col,
      x: gap + col * (panelW + gap),
      y: gap + row * (panelH + gap),
      width: panelW,
      height: panelH,
    });
  }
  return panels;
}

function mapX(t: number, zoom: ZoomWindow, width: number): number {
  const span = zoom.tEnd - zoom.tStart || 1;
  return ((t - zoom.tStart) / span) * width;
}

function mapY(mv: number, amplitudeMv: number, height: number): number {
  return height / 2 - (mv / amplitudeMv) * (height / 2);
}

/** SVG path for one lead over the zoom window. */
export function waveformPath(
  samples: number[],
  rateHz: number,
  zoom: ZoomWindow,
  amplitudeMv: number,
  width: number,
  height: number,
  tOffset = 0,
): string {
  const parts: string[] = [];
  for (let i = 0; i < samples.length; i += 1) {
    const t = tOffset + i / rateHz;
    if (t < zoom.tStart || t > zoom.tEnd) continue;
    const x = mapX(t, zoom, width);
    const y = mapY(samples[i], amplitudeMv, height);
    parts.push(`${parts.length === 0 ? "M" : "L"}${x.toFixed(2)},${y.toFixed(2)}`);
  }
  return parts.join(" ");
}

function isRaw(p: ViewPayload): p is RawView {
  return "rate_hz" in p && "samples" in p;
}

function isQrs(p: ViewPayload): p is QrsView {
  return "windows" in p;
}

function isMedian(p: ViewPayload): p is MedianView {
  return "r_position" in p;
}

function isAligned(p: ViewPayload): p is AlignedView {
  return "template_rpeaks" in p;
}

function isFiducials(p: ViewPayload): p is FiducialsView {
  return "r_peaks" in p && !("samples" in p);
}

export const SERVICE_RATE_HZ = 100;

/**
 * Render all twelve panels from one payload and one state.
 *
 * The fiducials view needs the raw samples to draw under its markers, so
 * callers pass the raw payload alongside when available.
 */
export function renderGrid(
  payload: ViewPayload,
  state: GridViewState,
  width: number,
  height: number,
  rawForMarkers?: RawView,
): PanelRender[] {
  const geometry = gridLayout(width, height);
  const zoom = state.zoom;
  const leads = "leads" in payload && payload.leads.length === 12
    ? payload.leads
    : ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"];

  return geometry.map((geo, i): PanelRender => {
    const base: PanelRender = {
      lead: leads[i],
      geometry: geo,
      paths: [],
      markers: [],
      emphasized: false,
      domain: { ...zoom },
    };
    if (isQrs(payload)) {
      // Overlaid beats on a beat-local axis spanning the window length.
      const windowSpan = payload.window_ms / 1000;
      const beatZoom = { tStart: 0, tEnd: windowSpan };
      base.paths = payload.windows.map((beat) =>
        waveformPath(beat[i], SERVICE_RATE_HZ, beatZoom, state.amplitudeMv,
          geo.width, geo.height));
      base.domain = beatZoom;
      return base;
    }
    if (isMedian(payload)) {
      const span = payload.samples[i].length / SERVICE_RATE_HZ;
      const beatZoom = { tStart: 0, tEnd: span };
      base.paths = [waveformPath(payload.samples[i], SERVICE_RATE_HZ, beatZoom,
        state.amplitudeMv, geo.width, geo.height)];
      base.markers = [{
        x: mapX(payload.r_position / SERVICE_RATE_HZ, beatZoom, geo.width),
        y: 0,
      }];
      base.domain = beatZoom;
      return base;
    }
    if (isAligned(payload)) {
      base.paths = [waveformPath(payload.samples[i], SERVICE_RATE_HZ, zoom,
        state.amplitudeMv, geo.width, geo.height)];
      base.markers = payload.template_rpeaks
        .map((idx) => idx / SERVICE_RATE_HZ)
        .filter((t) => t >= zoom.tStart && t <= zoom.tEnd)
        .map((t) => ({ x: mapX(t, zoom, geo.width), y: 0 }));
      return base;
    }
    if (isFiducials(payload)) {
      // Markers at the returned indices; lead II is visually emphasized.
      if (rawForMarkers) {
        base.paths = [waveformPath(rawForMarkers.samples[i], rawForMarkers.rate_hz,
          zoom, state.amplitudeMv, geo.width, geo.height)];
      }
      base.markers = payload.r_peaks
        .map((idx) => idx / payload.rate_hz)
        .filter((t) => t >= zoom.tStart && t <= zoom.tEnd)
        .map((t) => ({ x: mapX(t, zoom, geo.width), y: 0 }));
      base.emphasized = leads[i] === "II";
      return base;
    }
    if (isRaw(payload)) {
      base.paths = [waveformPath(payload.samples[i], payload.rate_hz, zoom,
        state.amplitudeMv, geo.width, geo.height)];
      return base;
    }
    return base;
  });
}

/** Inline panel message for view errors (e.g. a 422 from the service). */
export function errorPanels(message: string, width: number, height: number): PanelRender[] {
  return gridLayout(width, height).map((geo, i) => ({
    lead: `panel ${i + 1}`,
    geometry: geo,
    paths: [],
    markers: [],
    emphasized: false,
    domain: { tStart: 0, tEnd: 0 },
    message,
  }));
}
