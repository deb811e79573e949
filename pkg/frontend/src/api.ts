/**
 * Typed client for the ecgkit service API (/api/v1).
 *
 * The UI keeps no truth of its own: every view model is rebuilt from these
 * responses, and service errors surface verbatim through ApiError.
 */

export type ViewName = "raw" | "qrs" | "median" | "aligned" | "fiducials";

export interface RawView {
  leads: string[];
  rate_hz: number;
  samples: number[][];
}

export interface QrsView {
  leads: string[];
  window_ms: number;
  windows: number[][][];
}

export interface MedianView {
  leads: string[];
  samples: number[][];
  r_position: number;
}

export interface AlignedView {
  leads: string[];
  samples: number[][];
  template_rpeaks: number[];
  beats_used: number;
}

export interface FiducialsView {
  rate_hz: number;
  r_peaks: number[];
  qrs_onsets?: number[];
  qrs_offsets?: number[];
}

export type ViewPayload = RawView | QrsView | MedianView | AlignedView | FiducialsView;

export interface JobStatus {
  id: string;
  state: "queued" | "running" | "succeeded" | "failed" | "cancelled";
  progress: number;
  error: string | null;
  model_name: string;
}

export interface TrainingReport {
  n_samples: number;
  label_distribution: Record<string, number>;
  base_model: string;
  train_loss_per_epoch: number[];
  val_loss_per_epoch: number[];
  eval_f1: { per_class: Record<string, number>; macro: number; weighted: number };
  best_epoch: number;
  lr_used: number;
}

export type Bucket = "low" | "mid" | "high";

export interface PredictRow {
  recording_id: string;
  probabilities: number[];
  buckets: Bucket[];
}

export interface PredictResponse {
  model: string;
  classes: string[];
  rows: PredictRow[];
}

export interface ModelEntry {
  name: string;
  version: string;
  kind: string;
  labels: string[];
  state: string;
}

export interface ModelListing {
  models: ModelEntry[];
  degraded: boolean;
  warnings: string[];
}

export interface FinetuneRequest {
  name: string;
  model?: string;
  recording_ids?: string[];
  labels?: Record<string, string[]>;
  config?: Record<string, unknown>;
}

/** A service error, carrying the backend's machine-readable code verbatim. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly base: string = "/api/v1",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.base + path, init);
    if (!response.ok) {
      let code = "http_error";
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { error?: string; detail?: string };
        if (body.error) code = body.error;
        if (body.detail) detail = body.detail;
      } catch {
        /* non-JSON error body: keep the defaults */
      }
      throw new ApiError(response.status, code, detail);
    }
    return (await response.json()) as T;
  }

  uploadRecording(form: FormData): Promise<{ id: string; warnings: string[] }> {
    return this.request("/recordings", { method: "POST", body: form });
  }

  getView(recordingId: string, view: ViewName): Promise<ViewPayload> {
    return this.request(`/recordings/${recordingId}/views/${view}`);
  }

  startFinetune(body: FinetuneRequest): Promise<{ job_id: string }> {
    return this.request("/finetune", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  jobStatus(jobId: string): Promise<JobStatus> {
    return this.request(`/finetune/${jobId}/status`);
  }

  jobReport(jobId: string): Promise<TrainingReport> {
    return this.request(`/finetune/${jobId}/report`);
  }

  cancelJob(jobId: string): Promise<{ id: string; state: string }> {
    return this.request(`/finetune/${jobId}/cancel`, { method: "POST" });
  }

  predict(recordingIds: string[], model: string): Promise<PredictResponse> {
    return this.request("/predict", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ recording_ids: recordingIds, model }),
    });
  }

  listModels(): Promise<ModelListing> {
    return this.request("/models");
  }

  syncModels(): Promise<{ downloaded: string[]; skipped: string[]; warnings: string[] }> {
    return this.request("/models/sync", { method: "POST" });
  }
}
