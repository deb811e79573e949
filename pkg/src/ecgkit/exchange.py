"""Model exchange: a manifest-validated registry over WebDAV.

Remote layout is a flat collection of model payloads, each paired with a
JSON sidecar named ``<payload>.manifest.json``. The local cache mirrors
that layout; every cached payload's SHA-256 must match its manifest at
all times. Sync and publish serialize on a cache-wide file lock; reads of
cached files need no locking because cached files are immutable.
"""

from __future__ import annotations

import hashlib
import io
import json
import re
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import unquote

import numpy as np
import requests
from filelock import FileLock

from .errors import EcgKitError
from .finetune import LinearHead

MODEL_KINDS = ("linear_head", "mlp", "external_onnx")
MAX_OPSET = 20
DEFAULT_INPUT_SPEC = {"leads": 12, "samples": 1000, "rate": 100, "unit": "mV"}

_MAGIC = b"ECGM"
_SHA256_RE = re.compile(r"^[0-9a-f]{64}$")


class OpsetTooHigh(EcgKitError):
    code = "opset_too_high"


class MissingField(EcgKitError):
    code = "missing_manifest_field"


class BadHash(EcgKitError):
    code = "bad_hash"


class Unreachable(EcgKitError):
    code = "registry_unreachable"


class AuthFailed(EcgKitError):
    code = "auth_failed"


class ProtocolError(EcgKitError):
    code = "webdav_protocol_error"


class HashMismatch(EcgKitError):
    code = "hash_mismatch"


class Conflict(EcgKitError):
    code = "model_conflict"


class CorruptPayload(EcgKitError):
    code = "corrupt_payload"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class ModelManifest:
    name: str
    version: str
    kind: str
    labels: tuple
    sha256: str
    input_spec: dict = field(default_factory=lambda: dict(DEFAULT_INPUT_SPEC))
    opset: int | None = None
    preprocessing: str = "standard-v1"
    created_at: str = ""

    def to_dict(self) -> dict:
        doc = {
            "name": self.name,
            "version": self.version,
            "kind": self.kind,
            "labels": list(self.labels),
            "sha256": self.sha256,
            "input_spec": dict(self.input_spec),
            "preprocessing": self.preprocessing,
            "created_at": self.created_at,
        }
        if self.opset is not None:
            doc["opset"] = self.opset
        return doc

    @property
    def payload_name(self) -> str:
        ext = "onnx" if self.kind == "external_onnx" else "ecgm"
        return f"{self.name}-{self.version}.{ext}"

    @property
    def manifest_name(self) -> str:
        return self.payload_name + ".manifest.json"


def validate_manifest(doc: dict) -> ModelManifest:
    """Parse and invariant-check a manifest document."""
    if not isinstance(doc, dict):
        raise MissingField("manifest must be a JSON object")
    for key in ("name", "version", "kind", "labels", "sha256"):
        if key not in doc or doc[key] in (None, "", []):
            raise MissingField(f"manifest lacks required field {key!r}")
    if doc["kind"] not in MODEL_KINDS:
        raise MissingField(f"kind must be one of {MODEL_KINDS}, got {doc['kind']!r}")
    labels = tuple(str(lab) for lab in doc["labels"])
    sha = str(doc["sha256"])
    if not _SHA256_RE.match(sha):
        raise BadHash(f"sha256 must be 64 lowercase hex characters, got {sha!r}")
    opset = doc.get("opset")
    if opset is not None:
        opset = int(opset)
        if opset > MAX_OPSET:
            raise OpsetTooHigh(f"opset {opset} exceeds the supported maximum {MAX_OPSET}")
    return ModelManifest(
        name=str(doc["name"]),
        version=str(doc["version"]),
        kind=doc["kind"],
        labels=labels,
        sha256=sha,
        input_spec=dict(doc.get("input_spec", DEFAULT_INPUT_SPEC)),
        opset=opset,
        preprocessing=str(doc.get("preprocessing", "standard-v1")),
        created_at=str(doc.get("created_at", "")),
    )


@dataclass(frozen=True)
class RegistryEntry:
    manifest: ModelManifest
    remote_path: str | None = None
    local_path: str | None = None
    state: str = "remote_only"  # remote_only | cached | local_only | publishing


@dataclass(frozen=True)
class Listing:
    entries: tuple
    warnings: tuple


@dataclass(frozen=True)
class SyncSummary:
    downloaded: tuple
    skipped: tuple
    warnings: tuple


class WebDavClient:
    """Minimal WebDAV subset: PROPFIND (depth 1), GET, PUT, basic auth."""

    def __init__(self, base_url: str, username: str | None = None,
                 password: str | None = None, timeout: float = 10.0,
                 session: requests.Session | None = None):
        self.base_url = base_url.rstrip("/") + "/"
        self.auth = (username, password) if username else None
        self.timeout = timeout
        self.session = session or requests.Session()

    def _request(self, method: str, name: str = "", **kwargs) -> requests.Response:
        url = self.base_url + name
        try:
            response = self.session.request(method, url, auth=self.auth,
                                            timeout=self.timeout, **kwargs)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise Unreachable(f"{method} {url}: {exc}") from None
        if response.status_code == 401:
            raise AuthFailed(f"{method} {url}: authentication rejected")
        return response

    def propfind(self, depth: int = 1) -> list[str]:
        """Collection listing; returns member names (files only)."""
        response = self._request("PROPFIND", headers={"Depth": str(depth)})
        if response.status_code != 207:
            raise ProtocolError(f"PROPFIND returned {response.status_code}, expected 207")
        try:
            root = ET.fromstring(response.content)
        except ET.ParseError as exc:
            raise ProtocolError(f"unparseable multistatus body: {exc}") from None
        names = []
        for href in root.iter("{DAV:}href"):
            path = unquote((href.text or "").strip())
            if not path or path.endswith("/"):
                continue  # the collection itself
            names.append(path.rstrip("/").rsplit("/", 1)[-1])
        return names

    def get(self, name: str) -> bytes:
        response = self._request("GET", name)
        if response.status_code == 404:
            raise ProtocolError(f"GET {name}: not found")
        if response.status_code != 200:
            raise ProtocolError(f"GET {name}: status {response.status_code}")
        return response.content

    def put(self, name: str, data: bytes) -> None:
        response = self._request("PUT", name, data=data)
        if response.status_code not in (200, 201, 204):
            raise ProtocolError(f"PUT {name}: status {response.status_code}")

    def exists(self, name: str) -> bool:
        response = self._request("GET", name)
        return response.status_code == 200


def list_remote(server: WebDavClient) -> Listing:
    """List remote models, pairing payloads with their manifest sidecars.

    Payloads without a readable, valid manifest are reported as warnings
    and not returned.
    """
    names = server.propfind(depth=1)
    payloads = [n for n in names if not n.endswith(".manifest.json")]
    entries, warnings = [], []
    for payload in payloads:
        sidecar = payload + ".manifest.json"
        if sidecar not in names:
            warnings.append(f"{payload}: no manifest sidecar")
            continue
        try:
            manifest = validate_manifest(json.loads(server.get(sidecar)))
        except (json.JSONDecodeError, EcgKitError) as exc:
            warnings.append(f"{payload}: invalid manifest ({exc})")
            continue
        entries.append(RegistryEntry(manifest=manifest, remote_path=payload,
                                     state="remote_only"))
    return Listing(entries=tuple(entries), warnings=tuple(warnings))


def _cache_lock(cache_dir: Path) -> FileLock:
    cache_dir.mkdir(parents=True, exist_ok=True)
    return FileLock(str(cache_dir / ".ecgkit.lock"))


def list_cached(cache_dir) -> Listing:
    """Entries present in the local cache, hash-verified on load."""
    cache_dir = Path(cache_dir)
    entries, warnings = [], []
    if not cache_dir.is_dir():
        return Listing(entries=(), warnings=())
    for sidecar in sorted(cache_dir.glob("*.manifest.json")):
        payload_path = cache_dir / sidecar.name[: -len(".manifest.json")]
        try:
            manifest = validate_manifest(json.loads(sidecar.read_text()))
        except (json.JSONDecodeError, EcgKitError) as exc:
            warnings.append(f"{sidecar.name}: invalid manifest ({exc})")
            continue
        if not payload_path.exists():
            warnings.append(f"{payload_path.name}: manifest without payload")
            continue
        if sha256_hex(payload_path.read_bytes()) != manifest.sha256:
            warnings.append(f"{payload_path.name}: cached payload fails its hash check")
            continue
        entries.append(RegistryEntry(manifest=manifest, remote_path=payload_path.name,
                                     local_path=str(payload_path), state="cached"))
    return Listing(entries=tuple(entries), warnings=tuple(warnings))


def sync(server: WebDavClient, cache_dir) -> SyncSummary:
    """Download remote models missing or stale locally; never delete.

    Payloads are verified against their manifest hash before they replace
    anything; a tampered download leaves the cache untouched and the sync
    raises HashMismatch after processing the remaining entries.
    """
    cache_dir = Path(cache_dir)
    listing = list_remote(server)
    downloaded, skipped, warnings = [], [], list(listing.warnings)
    failures = []
    with _cache_lock(cache_dir):
        for entry in listing.entries:
            target = cache_dir / entry.remote_path
            manifest_target = cache_dir / (entry.remote_path + ".manifest.json")
            if target.exists() and sha256_hex(target.read_bytes()) == entry.manifest.sha256:
                skipped.append(entry.remote_path)
                continue
            payload = server.get(entry.remote_path)
            if sha256_hex(payload) != entry.manifest.sha256:
                failures.append(entry.remote_path)
                continue
            tmp = target.with_suffix(target.suffix + ".part")
            tmp.write_bytes(payload)
            tmp.replace(target)
            manifest_target.write_text(json.dumps(entry.manifest.to_dict(), indent=2))
            downloaded.append(entry.remote_path)
    if failures:
        raise HashMismatch(f"payload hash mismatch for: {', '.join(failures)}")
    return SyncSummary(downloaded=tuple(downloaded), skipped=tuple(skipped),
                       warnings=tuple(warnings))


def publish(server: WebDavClient, payload: bytes, manifest: ModelManifest) -> str:
    """Upload payload then manifest (in that order) to the registry."""
    manifest = validate_manifest(manifest.to_dict() if isinstance(manifest, ModelManifest)
                                 else manifest)
    if sha256_hex(payload) != manifest.sha256:
        raise BadHash("payload does not match the manifest sha256")
    if server.exists(manifest.manifest_name) or server.exists(manifest.payload_name):
        raise Conflict(f"{manifest.name} {manifest.version} already published")
    server.put(manifest.payload_name, payload)
    server.put(manifest.manifest_name, json.dumps(manifest.to_dict(), indent=2).encode())
    return manifest.payload_name


# ---------------------------------------------------------------------------
# Native model payload format: 4-byte magic, uint32 LE header length, JSON
# header, then a row-major little-endian float64 weight block.


@dataclass(frozen=True)
class MlpModel:
    """Small fully connected net: ReLU hidden layers, probability output."""

    layers: tuple  # ((W, b), ...)
    class_names: tuple
    activation: str = "softmax"

    def predict(self, x: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        for i, (w, b) in enumerate(self.layers):
            h = h @ w.T + b
            if i < len(self.layers) - 1:
                h = np.maximum(h, 0.0)
        if self.activation == "softmax":
            e = np.exp(h - h.max(axis=1, keepdims=True))
            return e / e.sum(axis=1, keepdims=True)
        return 0.5 * (1.0 + np.tanh(0.5 * h))


def save_model(model) -> bytes:
    """Serialize a LinearHead or MlpModel into the native payload format."""
    if isinstance(model, LinearHead):
        header = {
            "kind": "linear_head",
            "class_names": list(model.class_names),
            "activation": model.activation,
            "dims": [int(model.weights.shape[0]), int(model.weights.shape[1])],
        }
        blocks = [model.weights, model.bias]
    elif isinstance(model, MlpModel):
        header = {
            "kind": "mlp",
            "class_names": list(model.class_names),
            "activation": model.activation,
            "layer_dims": [[int(w.shape[0]), int(w.shape[1])] for w, _ in model.layers],
        }
        blocks = [arr for pair in model.layers for arr in pair]
    else:
        raise CorruptPayload(f"cannot serialize {type(model).__name__}")
    head = json.dumps(header).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", len(head)))
    buf.write(head)
    for block in blocks:
        buf.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
    return buf.getvalue()


def load_model(payload: bytes, manifest: ModelManifest | None = None):
    """Inverse of save_model; optionally cross-checked against a manifest."""
    if len(payload) < 8 or payload[:4] != _MAGIC:
        raise CorruptPayload("missing model magic")
    (hlen,) = struct.unpack_from("<I", payload, 4)
    if len(payload) < 8 + hlen:
        raise CorruptPayload("truncated model header")
    try:
        header = json.loads(payload[8: 8 + hlen])
    except json.JSONDecodeError as exc:
        raise CorruptPayload(f"unreadable model header: {exc}") from None
    offset = 8 + hlen
    body = payload[offset:]

    def take(shape):
        nonlocal body
        count = int(np.prod(shape))
        nbytes = count * 8
        if len(body) < nbytes:
            raise CorruptPayload("truncated weight block")
        arr = np.frombuffer(body[:nbytes], dtype="<f8").reshape(shape)
        body = body[nbytes:]
        return arr

    kind = header.get("kind")
    classes = tuple(header.get("class_names", ()))
    activation = header.get("activation", "softmax")
    if manifest is not None and tuple(manifest.labels) != classes:
        raise CorruptPayload("manifest labels disagree with the stored class names")
    if kind == "linear_head":
        c, d = header["dims"]
        weights = take((c, d))
        bias = take((c,))
        if body:
            raise CorruptPayload("trailing bytes after the weight block")
        try:
            return LinearHead(weights=weights, bias=bias, class_names=classes,
                              activation=activation)
        except ValueError as exc:
            raise CorruptPayload(str(exc)) from None
    if kind == "mlp":
        layers = []
        for out_dim, in_dim in header["layer_dims"]:
            w = take((out_dim, in_dim))
            b = take((out_dim,))
            layers.append((w, b))
        if body:
            raise CorruptPayload("trailing bytes after the weight block")
        return MlpModel(layers=tuple(layers), class_names=classes, activation=activation)
    raise CorruptPayload(f"unknown model kind {kind!r}")


def manifest_for(model, name: str, version: str, preprocessing: str = "standard-v1",
                 timestamp: bool = True) -> tuple[bytes, ModelManifest]:
    """Serialize a model and build its manifest in one step.

    ``timestamp=False`` leaves created_at empty so the output is a pure
    function of the model (reproducible batch exports).
    """
    payload = save_model(model)
    kind = "linear_head" if isinstance(model, LinearHead) else "mlp"
    manifest = ModelManifest(
        name=name,
        version=version,
        kind=kind,
        labels=tuple(model.class_names),
        sha256=sha256_hex(payload),
        preprocessing=preprocessing,
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds") if timestamp else "",
    )
    return payload, manifest
