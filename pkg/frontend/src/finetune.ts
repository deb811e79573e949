/**
 * Fine-tuning console: the label-distribution bar chart, job polling, and
 * the loss-curve rendering for completed reports.
 */

import type { ApiClient, JobStatus, TrainingReport } from "./api.js";

export interface BarDatum {
  label: string;
  count: number;
  /** pixel height, proportional to count */
  height: number;
}

/**
 * Bar chart data for a label distribution. Counts pass through exactly as
 * given; only the pixel height is a display transform.
 */
export function barChart(counts: Record<string, number>, maxHeight = 120): BarDatum[] {
  const labels = Object.keys(counts).sort((a, b) => counts[b] - counts[a] || a.localeCompare(b));
  const top = labels.length ? Math.max(...labels.map((l) => counts[l])) : 1;
  return labels.map((label) => ({
    label,
    count: counts[label],
    height: top > 0 ? (counts[label] / top) * maxHeight : 0,
  }));
}

export const TERMINAL_STATES = new Set(["succeeded", "failed", "cancelled"]);

export interface PollHandle {
  cancel(): void;
  done: Promise<JobStatus>;
}

type Scheduler = (fn: () => void, ms: number) => unknown;

/**
 * Poll a job until it terminates. The handle cancels on navigation; the
 * interval defaults to one second and is configurable.
 */
export function pollJob(
  api: ApiClient,
  jobId: string,
  onUpdate: (status: JobStatus) => void,
  intervalMs = 1000,
  schedule: Scheduler = (fn, ms) => setTimeout(fn, ms),
): PollHandle {
  let cancelled = false;
  let resolveDone: (status: JobStatus) => void;
  let rejectDone: (err: unknown) => void;
  const done = new Promise<JobStatus>((resolve, reject) => {
    resolveDone = resolve;
    rejectDone = reject;
  });

  const tick = async () => {
    if (cancelled) return;
    try {
      const status = await api.jobStatus(jobId);
      if (cancelled) return;
      onUpdate(status);
      if (TERMINAL_STATES.has(status.state)) {
        resolveDone(status);
        return;
      }
      schedule(tick, intervalMs);
    } catch (err) {
      rejectDone(err);
    }
  };
  void tick();
  return {
    cancel: () => {
      cancelled = true;
    },
    done,
  };
}

export interface LossPoint {
  epoch: number;
  train: number;
  val: number;
}

/** Per-epoch loss pairs straight from the report. */
export function lossCurve(report: TrainingReport): LossPoint[] {
  return report.train_loss_per_epoch.map((train, epoch) => ({
    epoch,
    train,
    val: report.val_loss_per_epoch[epoch],
  }));
}

/** Rows of the F1 table rendered from a completed report. */
export function f1Table(report: TrainingReport): { label: string; f1: number }[] {
  const rows = Object.entries(report.eval_f1.per_class).map(([label, f1]) => ({ label, f1 }));
  rows.push({ label: "macro", f1: report.eval_f1.macro });
  rows.push({ label: "weighted", f1: report.eval_f1.weighted });
  return rows;
}
