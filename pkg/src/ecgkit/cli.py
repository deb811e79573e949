"""Command-line access to every pipeline stage.

Reports go to stdout, logs to stderr, so pipelines compose. Exit codes:
0 success, 1 usage or configuration error, 2 operation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, exchange, formats, metrics
from .errors import EcgKitError
from .finetune import FineTuneConfig, embed, predict, train_head
from .service import view_payload
from .signal import NormalizationOptions, normalize

VIEWS = ("raw", "qrs", "median", "aligned", "fiducials")


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors on exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _read_input(path: Path, fmt: str | None, rate: float | None):
    """Read and parse one ECG file; .hea inputs pull in the sibling .dat."""
    data = path.read_bytes()
    dat = None
    hint = f"file.{fmt}" if fmt else path.name
    if fmt == "wfdb" or path.suffix.lower() == ".hea":
        sibling = path.with_suffix(".dat")
        if not sibling.exists():
            raise formats.HeaderMismatch(f"no signal file next to {path.name}: {sibling.name}")
        dat = sibling.read_bytes()
        hint = "file.hea"
    elif path.suffix.lower() == ".dat":
        header = path.with_suffix(".hea")
        if not header.exists():
            raise formats.HeaderMismatch(f"no header next to {path.name}: {header.name}")
        dat = data
        data = header.read_bytes()
        hint = "file.hea"
    return formats.parse(data, hint, dat=dat, rate_hz=rate)


def _normalization_options(args) -> NormalizationOptions:
    return NormalizationOptions(enable_baseline_removal=not args.no_baseline,
                                enable_clipping=not args.no_clip)


def cmd_convert(args) -> int:
    rec = _read_input(Path(args.infile), args.format, args.rate)
    ecg = normalize(rec, _normalization_options(args))
    payload = formats.export(ecg, formats.ExportRequest("standard", args.to))
    Path(args.out).write_bytes(payload)
    _log(f"wrote {args.out} ({len(payload)} bytes, {args.to})")
    return 0


def cmd_analyze(args) -> int:
    rec = _read_input(Path(args.infile), args.format, args.rate)
    ecg = normalize(rec, _normalization_options(args))
    doc = view_payload(ecg, args.view)
    text = json.dumps(doc)
    if args.out:
        Path(args.out).write_text(text)
        _log(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _load_dataset(data_dir: Path, labels_path: Path, rate: float | None):
    label_map = json.loads(labels_path.read_text())
    if not isinstance(label_map, dict):
        raise ValueError("labels file must map filenames to arrays of class names")
    embeddings, labels = [], []
    for filename in sorted(label_map):
        path = data_dir / filename
        if not path.exists():
            raise formats.UnknownFormat(f"labelled file missing from data dir: {filename}")
        rec = _read_input(path, None, rate)
        embeddings.append(embed(normalize(rec)))
        value = label_map[filename]
        labels.append([value] if isinstance(value, str) else list(value))
    return np.stack(embeddings), labels


def cmd_finetune(args) -> int:
    cfg = FineTuneConfig(max_epochs=args.epochs, gamma=args.gamma, lr=args.lr,
                         batch_size=args.batch_size, seed=args.seed)
    embeddings, labels = _load_dataset(Path(args.data), Path(args.labels), args.rate)
    _log(f"training on {len(labels)} samples")
    head, report = train_head(embeddings, labels, cfg, base_model=args.model)
    out = Path(args.out)
    payload, manifest = exchange.manifest_for(head, args.name or out.stem, "1.0",
                                              timestamp=False)
    out.write_bytes(payload)
    out.with_name(out.name + ".manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2))
    _log(f"wrote model {out} and its manifest")
    print(json.dumps(report.to_dict()))
    return 0


def cmd_predict(args) -> int:
    payload = Path(args.model).read_bytes()
    manifest = None
    sidecar = Path(args.model + ".manifest.json")
    if sidecar.exists():
        manifest = exchange.validate_manifest(json.loads(sidecar.read_text()))
        if manifest.kind == "external_onnx":
            raise exchange.CorruptPayload("external ONNX models are not executable here")
    model = exchange.load_model(payload, manifest)
    rows = []
    for infile in args.infiles:
        rec = _read_input(Path(infile), args.format, args.rate)
        vec = embed(normalize(rec))
        probs = (predict(model, vec[None, :]) if hasattr(model, "weights")
                 else model.predict(vec[None, :]))[0]
        rows.append({"file": infile, "probabilities": [float(p) for p in probs]})
    print(json.dumps({"classes": list(model.class_names), "rows": rows}))
    return 0


def _load_json(path: str):
    return json.loads(Path(path).read_text())


def cmd_eval(args) -> int:
    truth = _load_json(args.truth)
    if args.pred is None:
        if not (isinstance(truth, list) and all(isinstance(v, (int, float)) for v in truth)):
            raise metrics.LengthMismatch("without --pred the truth file must be a list of scores")
        stats = metrics.aggregate(truth)
        print(json.dumps({"average": stats.average, "median": stats.median,
                          "iqr": stats.iqr, "cv": stats.cv}))
        return 0
    pred = _load_json(args.pred)
    classes = args.classes.split(",") if args.classes else None
    if args.labelmap:
        label_map = metrics.load_label_rules(args.labelmap, classes=set(classes) if classes else None)
        truth = [sorted(s) for s in metrics.map_labels(truth, label_map)]
    if isinstance(pred, dict) and "rows" in pred:
        classes = classes or pred.get("classes")
        report = metrics.evaluate_dataset(truth, pred["rows"], classes,
                                          threshold=args.threshold)
        print(json.dumps(report))
        return 0
    if classes is None:
        flat = {c for row in list(truth) + list(pred)
                for c in ([row] if isinstance(row, str) else row)}
        classes = sorted(flat)
    scores = metrics.f1_scores(truth, pred, classes)
    print(json.dumps({"per_class": scores["per_class"], "macro_f1": scores["macro"],
                      "weighted_f1": scores["weighted"]}))
    return 0


def cmd_sync(args) -> int:
    client = exchange.WebDavClient(args.server, username=args.user, password=args.password)
    summary = exchange.sync(client, args.cache)
    print(json.dumps({"downloaded": list(summary.downloaded),
                      "skipped": list(summary.skipped),
                      "warnings": list(summary.warnings)}))
    return 0


def cmd_serve(args) -> int:
    from .service import ServiceConfig, serve

    config = ServiceConfig(data_dir=args.data_dir, port=args.port,
                           exchange_url=args.exchange_url, exchange_user=args.user,
                           exchange_pass=args.password, max_upload_mb=args.max_upload_mb,
                           workers=args.workers, frontend_dir=args.frontend_dir)
    serve(config)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ecgkit", description="End-to-end 12-lead ECG toolkit.")
    parser.add_argument("--version", action="version", version=f"ecgkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    convert = sub.add_parser("convert", help="parse, normalize, and export a recording")
    convert.add_argument("--in", dest="infile", required=True, help="input ECG file")
    convert.add_argument("--format", choices=sorted({"csv", "npy", "npz", "wfdb",
                                                     "dicom", "mat", "xml"}),
                         help="input format override (default: detect)")
    convert.add_argument("--out", required=True, help="output file")
    convert.add_argument("--to", choices=("csv", "npy", "json"), default="npy",
                         help="output format (default npy)")
    convert.add_argument("--rate", type=float, help="sampling rate for rate-less formats")
    convert.add_argument("--no-baseline", action="store_true",
                         help="skip baseline wander removal")
    convert.add_argument("--no-clip", action="store_true", help="skip quantile clipping")
    convert.set_defaults(func=cmd_convert)

    analyze = sub.add_parser("analyze", help="compute an analysis view as JSON")
    analyze.add_argument("--in", dest="infile", required=True, help="input ECG file")
    analyze.add_argument("--format", help="input format override")
    analyze.add_argument("--rate", type=float, help="sampling rate for rate-less formats")
    analyze.add_argument("--view", choices=VIEWS, default="fiducials",
                         help="which view to compute (default fiducials)")
    analyze.add_argument("--out", help="write JSON here instead of stdout")
    analyze.add_argument("--no-baseline", action="store_true",
                         help="skip baseline wander removal")
    analyze.add_argument("--no-clip", action="store_true", help="skip quantile clipping")
    analyze.set_defaults(func=cmd_analyze)

    finetune = sub.add_parser("finetune", help="train a classification head")
    finetune.add_argument("--data", required=True, help="directory of ECG files")
    finetune.add_argument("--labels", required=True,
                          help="JSON file mapping filenames to class lists")
    finetune.add_argument("--model", required=True, help="base model name for the report")
    finetune.add_argument("--out", required=True, help="output model file")
    finetune.add_argument("--name", help="custom model name (default: output stem)")
    finetune.add_argument("--rate", type=float,
                          help="sampling rate for rate-less training files")
    finetune.add_argument("--epochs", type=int, default=50, help="epoch cap (default 50)")
    finetune.add_argument("--gamma", type=float, default=0.9,
                          help="exponential lr decay per epoch (default 0.9)")
    finetune.add_argument("--lr", type=float, help="initial learning rate (default: finder)")
    finetune.add_argument("--batch-size", type=int, default=64, help="batch size (default 64)")
    finetune.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    finetune.set_defaults(func=cmd_finetune)

    predict_cmd = sub.add_parser("predict", help="predict class probabilities")
    predict_cmd.add_argument("--model", required=True, help="model payload file")
    predict_cmd.add_argument("--in", dest="infiles", nargs="+", required=True,
                             help="ECG files to score")
    predict_cmd.add_argument("--format", help="input format override")
    predict_cmd.add_argument("--rate", type=float, help="sampling rate for rate-less formats")
    predict_cmd.set_defaults(func=cmd_predict)

    eval_cmd = sub.add_parser("eval", help="score predictions or aggregate values")
    eval_cmd.add_argument("--truth", required=True,
                          help="JSON: labels, codes, or a plain list of scores")
    eval_cmd.add_argument("--pred", help="JSON: labels or probability rows")
    eval_cmd.add_argument("--labelmap", choices=("icd10", "physionet", "edms"),
                          help="map truth codes onto model classes first")
    eval_cmd.add_argument("--classes", help="comma-separated class list")
    eval_cmd.add_argument("--threshold", type=float, default=0.5,
                          help="probability threshold (default 0.5)")
    eval_cmd.set_defaults(func=cmd_eval)

    sync_cmd = sub.add_parser("sync", help="sync models from a WebDAV registry")
    sync_cmd.add_argument("--server", required=True, help="registry base URL")
    sync_cmd.add_argument("--cache", required=True, help="local cache directory")
    sync_cmd.add_argument("--user", help="basic auth user")
    sync_cmd.add_argument("--password", help="basic auth password")
    sync_cmd.set_defaults(func=cmd_sync)

    serve_cmd = sub.add_parser("serve", help="run the HTTP service")
    serve_cmd.add_argument("--data-dir", default="./ecgkit-data",
                           help="storage directory (default ./ecgkit-data)")
    serve_cmd.add_argument("--port", type=int, default=8080, help="port (default 8080)")
    serve_cmd.add_argument("--exchange-url", help="WebDAV registry URL")
    serve_cmd.add_argument("--user", help="registry auth user")
    serve_cmd.add_argument("--password", help="registry auth password")
    serve_cmd.add_argument("--max-upload-mb", type=int, default=64,
                           help="upload size cap (default 64)")
    serve_cmd.add_argument("--workers", type=int, help="fine-tune worker count")
    serve_cmd.add_argument("--frontend-dir", help="serve the web UI from this directory")
    serve_cmd.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EcgKitError as exc:
        _log(f"{exc.code}: {exc}")
        return 2
    except ValueError as exc:
        _log(f"invalid arguments: {exc}")
        return 1
    except OSError as exc:
        _log(f"io error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
