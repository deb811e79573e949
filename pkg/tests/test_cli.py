import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ecgkit.cli import main
from ecgkit.formats import parse_npy

from conftest import build_wfdb, synthetic_ecg

HELP_DIR = Path(__file__).parent / "data" / "help"
COMMANDS = ("convert", "analyze", "finetune", "predict", "eval", "sync", "serve")


def run_cli(args, capsys) -> tuple[int, str, str]:
    code = main(list(args))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_npy(path: Path, arr) -> None:
    buf = io.BytesIO()
    np.save(buf, arr)
    path.write_bytes(buf.getvalue())


@pytest.fixture
def ecg_file(tmp_path):
    ecg, _ = synthetic_ecg(bpm=60.0)
    path = tmp_path / "rec.npy"
    write_npy(path, ecg.samples)
    return path


class TestHelp:
    def test_main_help_exits_zero(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["--help"])
        assert excinfo.value.code == 0

    @pytest.mark.parametrize("command", COMMANDS)
    def test_command_help_matches_golden(self, command, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main([command, "--help"])
        assert excinfo.value.code == 0
        out = capsys.readouterr().out
        golden = (HELP_DIR / f"{command}.txt").read_text()
        assert out == golden

    @pytest.mark.parametrize("command", COMMANDS)
    def test_every_flag_documented(self, command, capsys):
        with pytest.raises(SystemExit):
            main([command, "--help"])
        out = capsys.readouterr().out
        flags = {
            "convert": ["--in", "--format", "--out", "--to", "--no-baseline", "--no-clip"],
            "analyze": ["--in", "--view", "--out"],
            "finetune": ["--data", "--labels", "--model", "--out", "--epochs", "--gamma"],
            "predict": ["--model", "--in"],
            "eval": ["--truth", "--pred", "--labelmap"],
            "sync": ["--server", "--cache"],
            "serve": ["--port", "--data-dir"],
        }[command]
        for flag in flags:
            assert flag in out


class TestConvert:
    def test_wfdb_pair_to_npy(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        signals = rng.integers(-2000, 2000, size=(12, 5000)).astype(np.int16)
        header, dat = build_wfdb(signals, fs=500.0, gain=1000.0)
        (tmp_path / "rec.hea").write_bytes(header)
        (tmp_path / "rec.dat").write_bytes(dat)
        out = tmp_path / "standard.npy"
        code, _, err = run_cli(["convert", "--in", str(tmp_path / "rec.hea"),
                                "--out", str(out)], capsys)
        assert code == 0, err
        rec = parse_npy(out.read_bytes())
        assert rec.samples.shape == (12, 1000)

    def test_unknown_extension_without_format_exits_one(self, tmp_path, capsys):
        weird = tmp_path / "data.weird"
        weird.write_bytes(b"\x01\x02\x03")
        code, _, err = run_cli(["convert", "--in", str(weird),
                                "--out", str(tmp_path / "o.npy")], capsys)
        assert code == 2  # operation error: undetectable format
        assert "unknown_format" in err

    def test_missing_required_flag_exits_one(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["convert", "--in", "x.npy"])
        assert excinfo.value.code == 1

    def test_deterministic_output(self, ecg_file, tmp_path, capsys):
        out_a = tmp_path / "a.npy"
        out_b = tmp_path / "b.npy"
        for out in (out_a, out_b):
            code, _, _ = run_cli(["convert", "--in", str(ecg_file), "--rate", "100",
                                  "--out", str(out)], capsys)
            assert code == 0
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_csv_export(self, ecg_file, tmp_path, capsys):
        out = tmp_path / "out.csv"
        code, _, _ = run_cli(["convert", "--in", str(ecg_file), "--rate", "100",
                              "--to", "csv", "--out", str(out)], capsys)
        assert code == 0
        assert out.read_text().splitlines()[0].startswith("I,II,III")


class TestAnalyze:
    def test_fiducials_to_stdout(self, ecg_file, capsys):
        code, out, _ = run_cli(["analyze", "--in", str(ecg_file), "--rate", "100",
                                "--view", "fiducials"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert len(doc["r_peaks"]) == 10

    def test_median_view_shape(self, ecg_file, capsys):
        code, out, _ = run_cli(["analyze", "--in", str(ecg_file), "--rate", "100",
                                "--view", "median"], capsys)
        doc = json.loads(out)
        assert len(doc["samples"]) == 12 and len(doc["samples"][0]) == 60


class TestFinetune:
    def _dataset(self, tmp_path, n_per_class=6):
        data_dir = tmp_path / "data"
        data_dir.mkdir()
        labels = {}
        shape_a = np.linspace(0.3, 1.0, 12)
        shape_b = np.linspace(1.0, 0.3, 12)
        for i in range(n_per_class):
            for cls, shape in (("A", shape_a), ("B", shape_b)):
                ecg, _ = synthetic_ecg(bpm=60 + 3 * i, noise=0.01, seed=i, beat_shape=shape)
                name = f"{cls}_{i}.npy"
                write_npy(data_dir / name, ecg.samples)
                labels[name] = [cls]
        labels_file = tmp_path / "labels.json"
        labels_file.write_text(json.dumps(labels))
        return data_dir, labels_file

    def test_end_to_end_report(self, tmp_path, capsys):
        data_dir, labels_file = self._dataset(tmp_path)
        out = tmp_path / "model.ecgm"
        code, stdout, err = run_cli([
            "finetune", "--data", str(data_dir), "--labels", str(labels_file),
            "--model", "base", "--out", str(out), "--rate", "100",
            "--epochs", "10", "--lr", "0.1", "--seed", "1"], capsys)
        assert code == 0, err
        report = json.loads(stdout)
        assert set(report) == {"n_samples", "label_distribution", "base_model",
                               "train_loss_per_epoch", "val_loss_per_epoch",
                               "eval_f1", "best_epoch", "lr_used"}
        assert out.exists()
        assert (tmp_path / "model.ecgm.manifest.json").exists()

    def test_gamma_zero_exits_one(self, tmp_path, capsys):
        data_dir, labels_file = self._dataset(tmp_path)
        code, _, err = run_cli([
            "finetune", "--data", str(data_dir), "--labels", str(labels_file),
            "--model", "base", "--out", str(tmp_path / "m.ecgm"), "--gamma", "0"], capsys)
        assert code == 1
        assert "gamma" in err

    def test_single_epoch_report(self, tmp_path, capsys):
        data_dir, labels_file = self._dataset(tmp_path)
        code, stdout, _ = run_cli([
            "finetune", "--data", str(data_dir), "--labels", str(labels_file),
            "--model", "base", "--out", str(tmp_path / "m.ecgm"),
            "--epochs", "1", "--lr", "0.05"], capsys)
        assert code == 0
        report = json.loads(stdout)
        assert len(report["train_loss_per_epoch"]) == 1

    def test_predict_round_trip(self, tmp_path, capsys):
        data_dir, labels_file = self._dataset(tmp_path)
        out = tmp_path / "model.ecgm"
        code, _, err = run_cli(
            ["finetune", "--data", str(data_dir), "--labels", str(labels_file),
             "--model", "base", "--out", str(out), "--rate", "100",
             "--epochs", "15", "--lr", "0.1"], capsys)
        assert code == 0, err
        samples = [sorted(data_dir.glob("A_*.npy"))[0], sorted(data_dir.glob("B_*.npy"))[0]]
        code, stdout, err = run_cli(["predict", "--model", str(out),
                                     "--in", *map(str, samples), "--rate", "100"], capsys)
        assert code == 0, err
        table = json.loads(stdout)
        assert table["classes"] == ["A", "B"]
        picks = [table["classes"][int(np.argmax(r["probabilities"]))] for r in table["rows"]]
        assert picks == ["A", "B"]

    def test_rateless_npy_without_rate_flag_degrades(self, tmp_path, capsys):
        # Without --rate, bare arrays assume 500 Hz and squash; the run
        # still completes and reports, it just cannot classify well.
        data_dir, labels_file = self._dataset(tmp_path)
        code, stdout, _ = run_cli([
            "finetune", "--data", str(data_dir), "--labels", str(labels_file),
            "--model", "base", "--out", str(tmp_path / "m.ecgm"),
            "--epochs", "5", "--lr", "0.1"], capsys)
        assert code == 0
        assert "n_samples" in json.loads(stdout)


class TestEval:
    def test_aggregate_matches_published_column(self, tmp_path, capsys):
        from published_values import WEIGHTED_F1_COLUMNS
        values, published = WEIGHTED_F1_COLUMNS["xceptiontime_baseline"]
        truth = tmp_path / "values.json"
        truth.write_text(json.dumps(values))
        code, out, _ = run_cli(["eval", "--truth", str(truth)], capsys)
        assert code == 0
        doc = json.loads(out)
        for key, want in zip(("average", "median", "iqr", "cv"), published):
            assert doc[key] == pytest.approx(want, abs=0.0015)

    def test_perfect_predictions(self, tmp_path, capsys):
        truth = tmp_path / "t.json"
        pred = tmp_path / "p.json"
        truth.write_text(json.dumps(["MI", "CD", "MI"]))
        pred.write_text(json.dumps(["MI", "CD", "MI"]))
        code, out, _ = run_cli(["eval", "--truth", str(truth), "--pred", str(pred)], capsys)
        assert code == 0
        assert json.loads(out)["weighted_f1"] == 1.0

    def test_labelmap_applied(self, tmp_path, capsys):
        truth = tmp_path / "t.json"
        pred = tmp_path / "p.json"
        truth.write_text(json.dumps(["I44.7", "I45.1"]))
        pred.write_text(json.dumps([["LBBB"], ["RBBB"]]))
        code, out, _ = run_cli(["eval", "--truth", str(truth), "--pred", str(pred),
                                "--labelmap", "icd10", "--classes", "LBBB,RBBB"], capsys)
        assert code == 0
        assert json.loads(out)["weighted_f1"] == 1.0

    def test_mismatched_lengths_exit_two(self, tmp_path, capsys):
        truth = tmp_path / "t.json"
        pred = tmp_path / "p.json"
        truth.write_text(json.dumps(["A", "B"]))
        pred.write_text(json.dumps(["A"]))
        code, _, err = run_cli(["eval", "--truth", str(truth), "--pred", str(pred)], capsys)
        assert code == 2
        assert "length_mismatch" in err


class TestSync:
    def test_sync_against_test_server(self, tmp_path, capsys):
        from davserver import DavTestServer
        from ecgkit.exchange import WebDavClient, manifest_for, publish
        from ecgkit.finetune import LinearHead

        with DavTestServer() as server:
            head = LinearHead(weights=np.zeros((2, 4)), bias=np.zeros(2),
                              class_names=("A", "B"))
            payload, manifest = manifest_for(head, "cli-model", "1.0")
            publish(WebDavClient(server.url), payload, manifest)
            cache = tmp_path / "cache"
            code, out, _ = run_cli(["sync", "--server", server.url,
                                    "--cache", str(cache)], capsys)
            assert code == 0
            assert json.loads(out)["downloaded"] == [manifest.payload_name]

    def test_unreachable_exits_two(self, tmp_path, capsys):
        code, _, err = run_cli(["sync", "--server", "http://127.0.0.1:9/",
                                "--cache", str(tmp_path / "c")], capsys)
        assert code == 2
        assert "registry_unreachable" in err


class TestInstalledEntryPoint:
    def test_module_invocation(self):
        result = subprocess.run([sys.executable, "-m", "ecgkit.cli", "--version"],
                                capture_output=True, text=True)
        assert result.returncode == 0
        assert "ecgkit" in result.stdout
