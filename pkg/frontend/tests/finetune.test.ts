import { describe, expect, test } from "vitest";

import { ApiClient, JobStatus, TrainingReport } from "../src/api";
import { barChart, f1Table, lossCurve, pollJob } from "../src/finetune";

describe("label distribution bar chart", () => {
  test("bar counts equal the distribution exactly (30/19/18 fixture)", () => {
    const bars = barChart({ CLBBB: 30, CRBBB: 19, IRBBB: 18 });
    expect(bars.map((b) => [b.label, b.count])).toEqual([
      ["CLBBB", 30],
      ["CRBBB", 19],
      ["IRBBB", 18],
    ]);
  });

  test("heights are proportional with the tallest at the cap", () => {
    const bars = barChart({ A: 10, B: 5 }, 100);
    expect(bars[0].height).toBe(100);
    expect(bars[1].height).toBe(50);
  });

  test("empty distribution yields no bars", () => {
    expect(barChart({})).toEqual([]);
  });
});

function fakeApi(states: JobStatus[]): ApiClient {
  let call = 0;
  const fetchFn = async (input: string): Promise<Response> => {
    expect(input).toContain("/finetune/job1/status");
    const status = states[Math.min(call, states.length - 1)];
    call += 1;
    return new Response(JSON.stringify(status), { status: 200 });
  };
  return new ApiClient("/api/v1", fetchFn);
}

function status(state: JobStatus["state"], progress: number): JobStatus {
  return { id: "job1", state, progress, error: null, model_name: "m" };
}

describe("job polling", () => {
  test("polls until the job terminates", async () => {
    const api = fakeApi([status("queued", 0), status("running", 1),
                         status("running", 3), status("succeeded", 5)]);
    const seen: string[] = [];
    const handle = pollJob(api, "job1", (s) => seen.push(s.state), 1,
      (fn) => setTimeout(fn, 0));
    const final = await handle.done;
    expect(final.state).toBe("succeeded");
    expect(seen).toEqual(["queued", "running", "running", "succeeded"]);
  });

  test("cancel stops the loop before the next tick", async () => {
    const updates: number[] = [];
    let scheduled: (() => void) | null = null;
    const api = fakeApi([status("running", 1), status("running", 2)]);
    const handle = pollJob(api, "job1", (s) => updates.push(s.progress), 1000,
      (fn) => { scheduled = fn; });
    await new Promise((resolve) => setTimeout(resolve, 0));
    expect(updates).toEqual([1]);
    handle.cancel();
    scheduled!();
    await new Promise((resolve) => setTimeout(resolve, 0));
    expect(updates).toEqual([1]); // no further updates after cancel
  });
});

describe("report rendering models", () => {
  const report: TrainingReport = {
    n_samples: 67,
    label_distribution: { CLBBB: 30, CRBBB: 19, IRBBB: 18 },
    base_model: "base-encoder",
    train_loss_per_epoch: [0.9, 0.5, 0.3],
    val_loss_per_epoch: [1.0, 0.6, 0.4],
    eval_f1: { per_class: { CLBBB: 0.9, CRBBB: 0.8, IRBBB: 0.7 }, macro: 0.8, weighted: 0.82 },
    best_epoch: 2,
    lr_used: 0.01,
  };

  test("loss curve pairs train and validation per epoch", () => {
    expect(lossCurve(report)).toEqual([
      { epoch: 0, train: 0.9, val: 1.0 },
      { epoch: 1, train: 0.5, val: 0.6 },
      { epoch: 2, train: 0.3, val: 0.4 },
    ]);
  });

  test("f1 table lists per-class rows plus macro and weighted", () => {
    const rows = f1Table(report);
    expect(rows).toHaveLength(5);
    expect(rows[3]).toEqual({ label: "macro", f1: 0.8 });
    expect(rows[4]).toEqual({ label: "weighted", f1: 0.82 });
  });
});
