import json
import os
import signal
import subprocess
import sys
import time

import pytest

from ssmret import model as model_mod
from ssmret.cli import main, read_config_file
from ssmret.model import atomic_write, load_encoder


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-data", "--out", str(data), "--n-docs", "40", "--n-queries", "12", "--n-train", "8", "--seed", "3"]) == 0
    ckpt = root / "model.ssmr"
    args = [
        "train", "--data", str(data), "--out", str(ckpt), "--max-steps", "2", "--model-dim", "8",
        "--state-size", "4", "--layers", "1", "--max-len", "48", "--query-max-len", "48", "--batch-size", "4",
        "--save-init", str(root / "init.ssmr"),
    ]
    assert main(args) == 0
    index = root / "corpus.eidx"
    assert main(["index", "--model", str(ckpt), "--corpus", str(data / "corpus.jsonl"), "--out", str(index)]) == 0
    return root, data, ckpt, index


class TestPipeline:
    def test_gen_data_files(self, workspace):
        _, data, _, _ = workspace
        names = {p.name for p in data.iterdir()}
        assert {"corpus.jsonl", "qrels.tsv", "train_queries.jsonl", "test_queries.jsonl", "manifest.json"} <= names
        manifest = json.loads((data / "manifest.json").read_text())
        assert manifest["seed"] == 3 and len(manifest["artifacts"]) == 5

    def test_gen_data_refuses_overwrite(self, workspace):
        _, data, _, _ = workspace
        assert main(["gen-data", "--out", str(data), "--n-docs", "40", "--n-queries", "12"]) == 2

    def test_train_outputs(self, workspace):
        root, _, ckpt, _ = workspace
        assert load_encoder(ckpt).config.model_dim == 8
        assert (root / "init.ssmr").exists()
        loss = (root / "model.ssmr.loss.csv").read_text().splitlines()
        assert loss[0] == "step,loss" and len(loss) == 3
        manifest = json.loads((root / "model.ssmr.manifest.json").read_text())
        assert set(manifest["artifacts"]) == {"model.ssmr", "model.ssmr.loss.csv", "init.ssmr"}

    def test_search_and_eval(self, workspace, capsys):
        root, data, ckpt, index = workspace
        run = root / "run.txt"
        args = ["search", "--model", str(ckpt), "--index", str(index), "--queries", str(data / "test_queries.jsonl"), "--k", "5", "--out", str(run)]
        assert main(args) == 0
        lines = run.read_text().splitlines()
        assert len(lines) == 4 * 5
        qid, q0, _, rank, score, tag = lines[0].split()
        assert q0 == "Q0" and rank == "1" and tag == "ssmret" and -1.0 <= float(score) <= 1.0
        capsys.readouterr()
        assert main(["eval", "--run", str(run), "--qrels", str(data / "qrels.tsv")]) == 0
        metrics = json.loads(capsys.readouterr().out)
        assert 0.0 <= metrics["mrr_at_10"] <= 1.0 and set(metrics["per_query"]) == {f"q{i:05d}" for i in range(8, 12)}

    def test_single_query_to_stdout(self, workspace, capsys):
        _, _, ckpt, index = workspace
        assert main(["search", "--model", str(ckpt), "--index", str(index), "--query", "hello", "--k", "3"]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 3

    def test_index_dim_mismatch(self, workspace, tmp_path):
        root, data, _, index = workspace
        other = tmp_path / "wide.ssmr"
        assert main(["train", "--data", str(data), "--out", str(other), "--max-steps", "1", "--model-dim", "12", "--state-size", "4", "--layers", "1"]) == 0
        assert main(["search", "--model", str(other), "--index", str(index), "--query", "x"]) == 1

    def test_deterministic_training(self, workspace, tmp_path):
        _, data, ckpt, _ = workspace
        again = tmp_path / "again.ssmr"
        args = [
            "train", "--data", str(data), "--out", str(again), "--max-steps", "2", "--model-dim", "8",
            "--state-size", "4", "--layers", "1", "--max-len", "48", "--query-max-len", "48", "--batch-size", "4",
        ]
        assert main(args) == 0
        assert again.read_bytes() == ckpt.read_bytes()

    def test_bench(self, tmp_path):
        out = tmp_path / "bench"
        assert main(["bench", "--out", str(out), "--lengths", "16,32,64", "--model-dim", "8", "--layers", "1"]) == 0
        summary = (out / "summary.csv").read_text().splitlines()
        assert summary[0] == "model,alpha,r_squared" and [s.split(",")[0] for s in summary[1:]] == ["ssm", "attn"]


class TestConfigAndErrors:
    def test_config_file_and_override(self, tmp_path, workspace):
        _, data, _, _ = workspace
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# training\nmax-steps = 1\nmodel_dim = 8\nstate_size = 4\nlayers = 1\nlr = 0.5\n")
        assert read_config_file(cfg)["max_steps"] == "1"
        out = tmp_path / "m.ssmr"
        assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(out), "--lr", "0.001"]) == 0
        resolved = json.loads((tmp_path / "m.ssmr.manifest.json").read_text())["config"]
        assert resolved["lr"] == 0.001 and resolved["max_steps"] == 1 and resolved["model_dim"] == 8

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour = blue\n")
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 2

    def test_usage_errors(self, tmp_path):
        assert main(["frobnicate"]) == 2
        assert main(["gen-data"]) == 2
        assert main(["gen-data", "--out", str(tmp_path / "d"), "--n-docs", "3", "--n-queries", "5"]) == 2

    def test_runtime_errors(self, tmp_path):
        bad = tmp_path / "bad.ssmr"
        bad.write_bytes(b"XXXXX")
        assert main(["index", "--model", str(bad), "--corpus", str(bad), "--out", str(tmp_path / "i.eidx")]) == 1
        assert main(["eval", "--run", str(tmp_path / "missing"), "--qrels", str(tmp_path / "missing")]) == 1

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "ssmret", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "gen-data" in proc.stdout


class TestAtomicWrites:
    def test_failed_write_keeps_old_file(self, tmp_path, monkeypatch):
        target = tmp_path / "ckpt.bin"
        target.write_bytes(b"old")

        def boom(fd):
            raise KeyboardInterrupt

        monkeypatch.setattr(model_mod.os, "fsync", boom)
        with pytest.raises(KeyboardInterrupt):
            atomic_write(target, b"new contents")
        assert target.read_bytes() == b"old"
        assert [p.name for p in tmp_path.iterdir()] == ["ckpt.bin"]

    def test_killed_process_leaves_no_partial_file(self, tmp_path):
        # the child writes 64 MB in slow chunks so the kill lands mid-write
        target = tmp_path / "big.bin"
        script = (
            "import os, time\n"
            "from ssmret import model\n"
            "real = os.fdopen\n"
            "class Slow:\n"
            "    def __init__(self, fh): self.fh = fh\n"
            "    def __enter__(self): return self\n"
            "    def __exit__(self, *a): self.fh.close()\n"
            "    def write(self, data):\n"
            "        print('writing', flush=True)\n"
            "        for i in range(0, len(data), 1 << 16): self.fh.write(data[i:i + (1 << 16)]); time.sleep(0.001)\n"
            "    def flush(self): self.fh.flush()\n"
            "    def fileno(self): return self.fh.fileno()\n"
            "model.os.fdopen = lambda fd, mode: Slow(real(fd, mode))\n"
            f"model.atomic_write({str(target)!r}, b'x' * (64 << 20))\n"
        )
        proc = subprocess.Popen([sys.executable, "-c", script], stdout=subprocess.PIPE, text=True)
        assert proc.stdout.readline().strip() == "writing"
        time.sleep(0.05)
        os.kill(proc.pid, signal.SIGKILL)
        proc.wait()
        assert not target.exists()
        # the orphaned temp file is hidden and never mistaken for the target
        assert all(p.name.startswith(".big.bin.") for p in tmp_path.iterdir())
