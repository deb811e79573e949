/**
 * Prediction table model: color-coded cells from the service's buckets
 * (the thresholds live server-side; the UI never recomputes them) and
 * stable per-class sorting.
 */

import type { Bucket, PredictResponse } from "./api.js";

export const BUCKET_COLORS: Record<Bucket, string> = {
  low: "#e8f0e9",
  mid: "#f5c36b",
  high: "#d9534f",
};

export interface PredictionCell {
  value: number;
  bucket: Bucket;
  color: string;
}

export interface PredictionRow {
  recordingId: string;
  cells: PredictionCell[];
}

export interface PredictionTable {
  model: string;
  classes: string[];
  rows: PredictionRow[];
}

export function tableModel(response: PredictResponse): PredictionTable {
  return {
    model: response.model,
    classes: response.classes,
    rows: response.rows.map((row) => ({
      recordingId: row.recording_id,
      cells: row.probabilities.map((value, i) => ({
        value,
        bucket: row.buckets[i],
        color: BUCKET_COLORS[row.buckets[i]],
      })),
    })),
  };
}

/** Stable sort by one class column; equal values keep their order. */
export function sortByClass(
  table: PredictionTable,
  classIndex: number,
  direction: "asc" | "desc" = "desc",
): PredictionTable {
  const keyed = table.rows.map((row, index) => ({ row, index }));
  keyed.sort((a, b) => {
    const diff = a.row.cells[classIndex].value - b.row.cells[classIndex].value;
    if (diff !== 0) return direction === "asc" ? diff : -diff;
    return a.index - b.index;
  });
  return { ...table, rows: keyed.map((k) => k.row) };
}
