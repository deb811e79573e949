"""HTTP service binding every module: uploads, analysis views, fine-tune
jobs, prediction, and the model registry.

All endpoints live under /api/v1. Every error body carries a
machine-readable ``error`` code from the closed set in
:func:`ecgkit.errors.error_codes`. Job state moves only along
queued -> running -> {succeeded | failed | cancelled} (cancellation may
skip the running stage) and progress is monotone.
"""

from __future__ import annotations

import io
import json
import os
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.responses import JSONResponse

from . import analysis, exchange, formats
from .errors import EcgKitError, error_codes
from .finetune import FineTuneConfig, LinearHead, embed, predict, train_head
from .signal import NormalizationOptions, StandardEcg, normalize

API_PREFIX = "/api/v1"

TERMINAL_STATES = {"succeeded", "failed", "cancelled"}
BUCKET_LOW = 0.3
BUCKET_HIGH = 0.7


class NotFound(EcgKitError):
    code = "not_found"


class UploadTooLarge(EcgKitError):
    code = "upload_too_large"


class BadRequest(EcgKitError):
    code = "bad_request"


class ReportNotReady(EcgKitError):
    code = "report_not_ready"


class DuplicateModelName(EcgKitError):
    code = "duplicate_model_name"


class OnnxNotExecutable(EcgKitError):
    code = "onnx_not_executable"


class JobCancelled(EcgKitError):
    code = "job_cancelled"


_STATUS_BY_CODE = {
    "not_found": 404,
    "upload_too_large": 413,
    "report_not_ready": 409,
    "duplicate_model_name": 409,
    "model_conflict": 409,
    "onnx_not_executable": 422,
    "no_beats_found": 422,
    "too_few_beats": 422,
    "registry_unreachable": 502,
}


def _http_status(exc: EcgKitError) -> int:
    return _STATUS_BY_CODE.get(exc.code, 400)


@dataclass
class ServiceConfig:
    data_dir: str
    port: int = 8080
    exchange_url: str | None = None
    exchange_user: str | None = None
    exchange_pass: str | None = None
    max_upload_mb: int = 64
    workers: int | None = None
    frontend_dir: str | None = None  # serve the web UI from here when set


def load_config(path: str | None = None, env=None) -> ServiceConfig:
    """Configuration file first, environment variables override."""
    env = os.environ if env is None else env
    doc: dict = {}
    if path:
        doc = json.loads(Path(path).read_text())
    data_dir = env.get("DATA_DIR", doc.get("data_dir", "./ecgkit-data"))
    return ServiceConfig(
        data_dir=data_dir,
        port=int(env.get("PORT", doc.get("port", 8080))),
        exchange_url=env.get("EXCHANGE_URL", doc.get("exchange_url")),
        exchange_user=env.get("EXCHANGE_USER", doc.get("exchange_user")),
        exchange_pass=env.get("EXCHANGE_PASS", doc.get("exchange_pass")),
        max_upload_mb=int(env.get("MAX_UPLOAD_MB", doc.get("max_upload_mb", 64))),
        workers=int(env["WORKERS"]) if "WORKERS" in env else doc.get("workers"),
        frontend_dir=env.get("FRONTEND_DIR", doc.get("frontend_dir")),
    )


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


class RecordingStore:
    """Immutable normalized recordings under DATA_DIR/recordings."""

    def __init__(self, root: Path):
        self.root = root / "recordings"
        self.root.mkdir(parents=True, exist_ok=True)
        self._embeddings: dict[str, np.ndarray] = {}
        self._views: dict[tuple, dict] = {}
        self._lock = threading.Lock()

    def add(self, ecg: StandardEcg, filename: str, warnings: list, labels=None) -> str:
        rid = uuid.uuid4().hex
        _atomic_write(self.root / f"{rid}.npy", _npy_bytes(ecg.samples))
        meta = {
            "filename": filename,
            "warnings": warnings,
            "labels": labels or [],
            "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        _atomic_write(self.root / f"{rid}.json", json.dumps(meta).encode())
        return rid

    def get(self, rid: str) -> StandardEcg:
        path = self.root / f"{rid}.npy"
        if not path.exists():
            raise NotFound(f"recording {rid} does not exist")
        arr = np.load(io.BytesIO(path.read_bytes()))
        return StandardEcg(arr)

    def exists(self, rid: str) -> bool:
        return (self.root / f"{rid}.npy").exists()

    def embedding(self, rid: str) -> np.ndarray:
        with self._lock:
            cached = self._embeddings.get(rid)
        if cached is not None:
            return cached
        vec = embed(self.get(rid))
        with self._lock:
            self._embeddings[rid] = vec
        return vec

    def view(self, rid: str, name: str) -> dict:
        key = (rid, name)
        with self._lock:
            if key in self._views:
                return self._views[key]
        doc = view_payload(self.get(rid), name)
        with self._lock:
            self._views[key] = doc
        return doc


def view_payload(ecg: StandardEcg, name: str) -> dict:
    """JSON-ready analysis view of a normalized recording."""
    if name == "raw":
        return {"leads": list(ecg.lead_names), "rate_hz": StandardEcg.RATE_HZ,
                "samples": ecg.samples.tolist()}
    fid = analysis.detect_rpeaks(ecg)
    if name == "fiducials":
        doc = {"rate_hz": fid.rate_hz, "r_peaks": fid.r_peaks.tolist()}
        if fid.qrs_onsets is not None:
            doc["qrs_onsets"] = fid.qrs_onsets.tolist()
            doc["qrs_offsets"] = fid.qrs_offsets.tolist()
        return doc
    if name == "qrs":
        windows = analysis.extract_qrs_windows(ecg, fid)
        return {"leads": list(ecg.lead_names), "window_ms": 600,
                "windows": [w.tolist() for w in windows]}
    if name == "median":
        beat = analysis.median_beat(ecg, fid)
        return {"leads": list(ecg.lead_names), "samples": beat.samples.tolist(),
                "r_position": beat.r_position}
    if name == "aligned":
        aligned = analysis.rlign_transform(ecg, fid)
        return {"leads": list(ecg.lead_names), "samples": aligned.samples.tolist(),
                "template_rpeaks": list(aligned.template_rpeaks),
                "beats_used": aligned.beats_used}
    raise NotFound(f"unknown view {name!r}")


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr, dtype=np.float64))
    return buf.getvalue()


class ModelStore:
    """Locally trained models plus the synced registry cache."""

    def __init__(self, root: Path):
        self.local_dir = root / "models"
        self.cache_dir = root / "registry-cache"
        self.local_dir.mkdir(parents=True, exist_ok=True)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def save_local(self, model, name: str, version: str = "1.0") -> exchange.ModelManifest:
        payload, manifest = exchange.manifest_for(model, name, version)
        _atomic_write(self.local_dir / manifest.payload_name, payload)
        _atomic_write(self.local_dir / manifest.manifest_name,
                      json.dumps(manifest.to_dict(), indent=2).encode())
        return manifest

    def has_name(self, name: str) -> bool:
        return any(e.manifest.name == name for e in self.all_entries()[0])

    def all_entries(self):
        local = exchange.list_cached(self.local_dir)
        cached = exchange.list_cached(self.cache_dir)
        entries = [exchange.RegistryEntry(manifest=e.manifest, remote_path=e.remote_path,
                                          local_path=e.local_path, state="local_only")
                   for e in local.entries]
        entries += list(cached.entries)
        return entries, list(local.warnings) + list(cached.warnings)

    def resolve(self, name: str):
        """Find a model by name (latest entry wins) and load its payload."""
        entries, _ = self.all_entries()
        matches = [e for e in entries if e.manifest.name == name]
        if not matches:
            raise NotFound(f"model {name!r} does not exist")
        entry = matches[-1]
        if entry.manifest.kind == "external_onnx":
            raise OnnxNotExecutable(
                "external ONNX models are stored and served but not executable here")
        payload = Path(entry.local_path).read_bytes()
        return exchange.load_model(payload, entry.manifest), entry.manifest


@dataclass
class JobRecord:
    id: str
    state: str = "queued"
    model_name: str = ""
    base_model: str = ""
    config: dict = field(default_factory=dict)
    progress: int = 0
    report: dict | None = None
    error: str | None = None
    created_at: str = ""

    def to_dict(self) -> dict:
        return {
            "id": self.id, "state": self.state, "model_name": self.model_name,
            "base_model": self.base_model, "config": self.config,
            "progress": self.progress, "report": self.report, "error": self.error,
            "created_at": self.created_at,
        }


class JobManager:
    """FIFO fine-tune jobs on a bounded worker pool with durable records."""

    def __init__(self, root: Path, models: ModelStore, workers: int | None = None):
        self.dir = root / "jobs"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.models = models
        self.lock = threading.RLock()
        self.jobs: dict[str, JobRecord] = {}
        self.pool = ThreadPoolExecutor(max_workers=workers or os.cpu_count() or 2)
        self._recover()

    def _recover(self) -> None:
        for path in sorted(self.dir.glob("*.json")):
            doc = json.loads(path.read_text())
            record = JobRecord(**doc)
            if record.state not in TERMINAL_STATES:
                record.state = "failed"
                record.error = "interrupted by service restart"
            self.jobs[record.id] = record
            self._persist(record)

    def _persist(self, record: JobRecord) -> None:
        _atomic_write(self.dir / f"{record.id}.json", json.dumps(record.to_dict()).encode())

    def get(self, job_id: str) -> JobRecord:
        with self.lock:
            record = self.jobs.get(job_id)
            if record is None:
                raise NotFound(f"job {job_id} does not exist")
            return record

    def snapshot(self, job_id: str) -> dict:
        with self.lock:
            return dict(self.get(job_id).to_dict())

    def submit(self, dataset_loader, cfg: FineTuneConfig, model_name: str,
               base_model: str) -> str:
        """Queue a job; ``dataset_loader`` runs on the worker and returns
        (embeddings, labels), so feature extraction happens off-request."""
        job_id = uuid.uuid4().hex
        record = JobRecord(id=job_id, model_name=model_name, base_model=base_model,
                           config={"max_epochs": cfg.max_epochs, "gamma": cfg.gamma,
                                   "batch_size": cfg.batch_size, "seed": cfg.seed,
                                   "lr": cfg.lr, "patience": cfg.patience},
                           created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"))
        with self.lock:
            self.jobs[job_id] = record
            self._persist(record)
        self.pool.submit(self._run, job_id, dataset_loader, cfg)
        return job_id

    def cancel(self, job_id: str) -> dict:
        with self.lock:
            record = self.get(job_id)
            if record.state in ("queued", "running"):
                record.state = "cancelled"
                self._persist(record)
            return dict(record.to_dict())

    def _transition(self, job_id: str, allowed_from, to_state: str, **updates) -> bool:
        with self.lock:
            record = self.jobs[job_id]
            if record.state not in allowed_from:
                return False
            record.state = to_state
            for key, value in updates.items():
                setattr(record, key, value)
            self._persist(record)
            return True

    def _bump_progress(self, job_id: str, epoch: int) -> None:
        with self.lock:
            record = self.jobs[job_id]
            if record.state == "cancelled":
                raise JobCancelled("cancelled between epochs")
            record.progress = max(record.progress, epoch + 1)
            self._persist(record)

    def _run(self, job_id: str, dataset_loader, cfg: FineTuneConfig) -> None:
        if not self._transition(job_id, {"queued"}, "running"):
            return  # cancelled before it started; never runs
        try:
            record = self.get(job_id)
            embeddings, labels = dataset_loader()
            head, report = train_head(
                embeddings, labels, cfg, base_model=record.base_model,
                on_epoch=lambda epoch, tl, vl: self._bump_progress(job_id, epoch))
            self.models.save_local(head, record.model_name)
            self._transition(job_id, {"running"}, "succeeded", report=report.to_dict())
        except JobCancelled:
            pass  # state already moved to cancelled
        except EcgKitError as exc:
            self._transition(job_id, {"running"}, "failed", error=f"{exc.code}: {exc}")
        except Exception as exc:  # noqa: BLE001 - job isolation boundary
            self._transition(job_id, {"running"}, "failed", error=str(exc))

    def shutdown(self) -> None:
        self.pool.shutdown(wait=True)


def _bucket(p: float) -> str:
    if p >= BUCKET_HIGH:
        return "high"
    if p < BUCKET_LOW:
        return "low"
    return "mid"


def create_app(config: ServiceConfig) -> FastAPI:
    root = Path(config.data_dir)
    root.mkdir(parents=True, exist_ok=True)
    recordings = RecordingStore(root)
    models = ModelStore(root)
    jobs = JobManager(root, models, workers=config.workers)

    app = FastAPI(title="ecgkit", version="0.1.0")
    app.state.config = config
    app.state.recordings = recordings
    app.state.models = models
    app.state.jobs = jobs

    def exchange_client() -> exchange.WebDavClient:
        if not config.exchange_url:
            raise exchange.Unreachable("no exchange registry configured")
        return exchange.WebDavClient(config.exchange_url, username=config.exchange_user,
                                     password=config.exchange_pass, timeout=5.0)

    @app.exception_handler(EcgKitError)
    async def _structured_error(_request: Request, exc: EcgKitError):
        return JSONResponse(status_code=_http_status(exc),
                            content={"error": exc.code, "detail": str(exc)})

    @app.post(API_PREFIX + "/recordings", status_code=201)
    def upload_recording(file: UploadFile = File(...),
                         format: str | None = Form(default=None),
                         labels: str | None = Form(default=None),
                         rate_hz: float | None = Form(default=None),
                         dat: UploadFile | None = File(default=None)):
        cap = config.max_upload_mb * 1024 * 1024
        data = file.file.read(cap + 1)
        if len(data) > cap:
            raise UploadTooLarge(f"upload exceeds {config.max_upload_mb} MiB")
        dat_bytes = dat.file.read(cap + 1) if dat is not None else None
        if dat_bytes is not None and len(dat_bytes) > cap:
            raise UploadTooLarge(f"upload exceeds {config.max_upload_mb} MiB")
        # A bare format name becomes a synthetic extension for detection.
        hint = f"upload.{format}" if format else (file.filename or "")
        rec = formats.parse(data, hint, dat=dat_bytes, rate_hz=rate_hz)
        ecg = normalize(rec, NormalizationOptions())
        label_list = json.loads(labels) if labels else []
        warnings = [f"{k}: {v}" for k, v in rec.metadata.items() if "assumed" in k or "dropped" in k]
        rid = recordings.add(ecg, file.filename or "upload", warnings, labels=label_list)
        return {"id": rid, "warnings": warnings}

    @app.get(API_PREFIX + "/recordings/{rid}/views/{view}")
    def recording_view(rid: str, view: str):
        if view not in ("raw", "qrs", "median", "aligned", "fiducials"):
            raise NotFound(f"unknown view {view!r}")
        if not recordings.exists(rid):
            raise NotFound(f"recording {rid} does not exist")
        return recordings.view(rid, view)

    @app.post(API_PREFIX + "/finetune", status_code=201)
    async def start_finetune(request: Request):
        body = await request.json()
        name = body.get("name") or ""
        if not name:
            raise BadRequest("a custom model name is required")
        if models.has_name(name):
            raise DuplicateModelName(f"model {name!r} already exists")
        base_model = body.get("model", "median-beat-embedding")
        overrides = dict(body.get("config") or {})
        try:
            cfg = FineTuneConfig(**overrides)
        except (TypeError, ValueError) as exc:
            raise BadRequest(f"bad config: {exc}") from None

        if body.get("dataset"):
            dataset = body["dataset"]
            embeddings = np.asarray(dataset.get("embeddings", []), dtype=np.float64)
            labels = list(dataset.get("labels", []))
            if len(embeddings) != len(labels):
                raise BadRequest("embeddings and labels must align")

            def loader(embeddings=embeddings, labels=labels):
                return embeddings, labels
        else:
            rids = body.get("recording_ids") or []
            label_map = body.get("labels") or {}
            missing = [rid for rid in rids if not recordings.exists(rid)]
            if missing:
                raise NotFound(f"recordings do not exist: {missing}")
            if not rids:
                raise BadRequest("recording_ids or dataset is required")
            labels = [label_map.get(rid, []) for rid in rids]

            def loader(rids=tuple(rids), labels=labels):
                # Feature extraction happens on the worker, not the request.
                return np.stack([recordings.embedding(rid) for rid in rids]), labels
        flat = {cls for lab in labels for cls in ([lab] if isinstance(lab, str) else lab)}
        if len(flat) < 2:
            raise BadRequest("labels must cover at least two classes")
        job_id = jobs.submit(loader, cfg, model_name=name, base_model=base_model)
        return {"job_id": job_id}

    @app.get(API_PREFIX + "/finetune/{job_id}/status")
    def job_status(job_id: str):
        doc = jobs.snapshot(job_id)
        return {"id": doc["id"], "state": doc["state"], "progress": doc["progress"],
                "error": doc["error"], "model_name": doc["model_name"]}

    @app.get(API_PREFIX + "/finetune/{job_id}/report")
    def job_report(job_id: str):
        doc = jobs.snapshot(job_id)
        if doc["state"] != "succeeded":
            raise ReportNotReady(f"job is {doc['state']}; the report needs a successful run")
        return doc["report"]

    @app.post(API_PREFIX + "/finetune/{job_id}/cancel")
    def job_cancel(job_id: str):
        doc = jobs.cancel(job_id)
        return {"id": doc["id"], "state": doc["state"]}

    @app.post(API_PREFIX + "/predict")
    async def predict_endpoint(request: Request):
        body = await request.json()
        rids = body.get("recording_ids") or []
        name = body.get("model") or ""
        model, manifest = models.resolve(name)
        rows = []
        for rid in rids:
            if not recordings.exists(rid):
                raise NotFound(f"recording {rid} does not exist")
            vec = recordings.embedding(rid)
            probs = (predict(model, vec[None, :]) if isinstance(model, LinearHead)
                     else model.predict(vec[None, :]))[0]
            rows.append({
                "recording_id": rid,
                "probabilities": [float(p) for p in probs],
                "buckets": [_bucket(float(p)) for p in probs],
            })
        return {"model": name, "classes": list(manifest.labels), "rows": rows}

    @app.get(API_PREFIX + "/models")
    def list_models():
        entries, warnings = models.all_entries()
        degraded = False
        if config.exchange_url:
            try:
                remote = exchange.list_remote(exchange_client())
                warnings += list(remote.warnings)
                known = {e.remote_path for e in entries}
                entries += [e for e in remote.entries if e.remote_path not in known]
            except EcgKitError as exc:
                degraded = True
                warnings.append(f"registry unreachable: {exc}")
        return {
            "models": [{
                "name": e.manifest.name, "version": e.manifest.version,
                "kind": e.manifest.kind, "labels": list(e.manifest.labels),
                "state": e.state,
            } for e in entries],
            "degraded": degraded,
            "warnings": warnings,
        }

    @app.post(API_PREFIX + "/models/sync")
    def sync_models():
        summary = exchange.sync(exchange_client(), models.cache_dir)
        return {"downloaded": list(summary.downloaded), "skipped": list(summary.skipped),
                "warnings": list(summary.warnings)}

    @app.get(API_PREFIX + "/health")
    def health():
        return {"status": "ok", "error_codes": sorted(error_codes())}

    if config.frontend_dir and Path(config.frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.frontend_dir, html=True), name="ui")

    return app


def serve(config: ServiceConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host="0.0.0.0", port=config.port)
