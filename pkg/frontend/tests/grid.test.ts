import { describe, expect, test } from "vitest";

import type { FiducialsView, QrsView, RawView } from "../src/api";
import { errorPanels, gridLayout, renderGrid, waveformPath } from "../src/grid";
import { applyZoom, initialGridState, setView } from "../src/state";

function rawPayload(): RawView {
  const leads = ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"];
  const samples = leads.map((_, lead) =>
    Array.from({ length: 1000 }, (_, i) => Math.sin((2 * Math.PI * i) / 100) * (lead + 1) * 0.1));
  return { leads, rate_hz: 100, samples };
}

describe("grid layout", () => {
  test("twelve panels in a 2x6 arrangement", () => {
    const panels = gridLayout(1320, 420);
    expect(panels).toHaveLength(12);
    expect(new Set(panels.map((p) => p.row))).toEqual(new Set([0, 1]));
    expect(new Set(panels.map((p) => p.col))).toEqual(new Set([0, 1, 2, 3, 4, 5]));
    const first = panels[0];
    for (const panel of panels) {
      expect(panel.width).toBeCloseTo(first.width);
      expect(panel.height).toBeCloseTo(first.height);
    }
  });
});

describe("synchronized zoom", () => {
  test("a zoom change reaches all 12 panels in a single render pass", () => {
    const state = applyZoom(initialGridState(), 2, 4);
    const panels = renderGrid(rawPayload(), state, 1320, 420);
    expect(panels).toHaveLength(12);
    for (const panel of panels) {
      expect(panel.domain).toEqual({ tStart: 2, tEnd: 4 });
    }
  });

  test("identical zoom maps identical times to identical x in every panel", () => {
    const state = applyZoom(initialGridState(), 1, 9);
    const payload = rawPayload();
    const panels = renderGrid(payload, state, 1320, 420);
    const firstX = panels.map((p) => p.paths[0].split(" ")[0].slice(1).split(",")[0]);
    expect(new Set(firstX).size).toBe(1);
  });
});

describe("waveform path", () => {
  test("maps the window onto panel coordinates", () => {
    const path = waveformPath([0, 1, 0, -1, 0], 1, { tStart: 0, tEnd: 4 }, 1, 100, 50);
    const points = path.split(" ");
    expect(points[0]).toBe("M0.00,25.00");      // t=0, 0 mV at mid-height
    expect(points[1]).toBe("L25.00,0.00");      // t=1, +1 mV at the top
    expect(points[3]).toBe("L75.00,50.00");     // t=3, -1 mV at the bottom
  });

  test("samples outside the window are dropped", () => {
    const path = waveformPath([0, 1, 2, 3], 1, { tStart: 1, tEnd: 2 }, 5, 100, 50);
    expect(path.split(" ")).toHaveLength(2);
  });
});

describe("view-specific rendering", () => {
  test("qrs view overlays one trace per beat", () => {
    const beat = Array.from({ length: 60 }, (_, i) => (i === 20 ? 1 : 0));
    const payload: QrsView = {
      leads: rawPayload().leads,
      window_ms: 600,
      windows: [rawPayload().leads.map(() => beat), rawPayload().leads.map(() => beat)],
    };
    const panels = renderGrid(payload, initialGridState("qrs"), 1320, 420);
    for (const panel of panels) {
      expect(panel.paths).toHaveLength(2);
    }
  });

  test("fiducials view marks returned peaks and emphasizes lead II", () => {
    const fid: FiducialsView = { rate_hz: 100, r_peaks: [50, 150, 250, 850] };
    const state = setView(initialGridState(), "fiducials");
    const panels = renderGrid(fid, state, 1320, 420, rawPayload());
    for (const panel of panels) {
      expect(panel.markers).toHaveLength(4);
      expect(panel.emphasized).toBe(panel.lead === "II");
    }
    const zoomed = applyZoom(state, 0, 3);
    const zoomedPanels = renderGrid(fid, zoomed, 1320, 420, rawPayload());
    expect(zoomedPanels[0].markers).toHaveLength(3); // the 8.5 s peak left the window
  });

  test("service errors render as inline panel messages", () => {
    const panels = errorPanels("no_beats_found: lead II is constant", 1320, 420);
    expect(panels).toHaveLength(12);
    for (const panel of panels) {
      expect(panel.message).toContain("no_beats_found");
      expect(panel.paths).toHaveLength(0);
    }
  });
});
