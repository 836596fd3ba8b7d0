import csv
import json
import subprocess
import sys

import pytest

from tsmix.cli import main
from tsmix.data import load_csv
from tsmix.experiments import ExperimentConfig, plan_jobs

TINY = ["--n-layers", "1", "--n-heads", "2", "--d-model", "10", "--max-epochs", "2", "--batch-size", "16"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(out), "--n-classes", "3", "--n-per-class", "25",
                 "--seq-len", "8", "--n-channels", "2", "--seed", "1"]) == 0
    return out


def data_flags(d):
    return ["--data", str(d / "data.csv"), "--meta", str(d / "meta.json")]


def read_summary(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gen_data_reloads_and_is_byte_stable(data_dir, tmp_path):
    ds = load_csv(data_dir / "data.csv", data_dir / "meta.json")
    assert ds.x.shape == (75, 8, 2)
    assert main(["gen-data", "--out", str(tmp_path), "--n-classes", "3", "--n-per-class", "25",
                 "--seq-len", "8", "--n-channels", "2", "--seed", "1"]) == 0
    assert (tmp_path / "data.csv").read_bytes() == (data_dir / "data.csv").read_bytes()


def test_train_writes_seed_files_and_summary(data_dir, tmp_path):
    out = tmp_path / "run"
    args = ["train", *data_flags(data_dir), *TINY, "--seeds", "0,1,2", "--out", str(out)]
    assert main(args) == 0
    assert sorted(p.name for p in out.glob("seed_*.jsonl")) == ["seed_0.jsonl", "seed_1.jsonl", "seed_2.jsonl"]
    assert len(list(out.glob("checkpoint_seed_*.npz"))) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "train" and len(manifest["seed_files"]) == 3
    header = (out / "summary.csv").read_text().splitlines()[0].split(",")
    metric_cols = [c for c in header if c.endswith("_mean")]
    assert metric_cols == ["accuracy_mean", "f1_macro_mean", "kappa_mean"]
    records = [json.loads(l) for l in (out / "seed_0.jsonl").read_text().splitlines()]
    assert records[0]["type"] == "run" and records[-1]["type"] == "test"
    assert [r["epoch"] for r in records[1:-1]] == [0, 1]

    first = (out / "summary.csv").read_bytes()
    assert main(args) == 2  # output exists, no --overwrite
    assert main(args + ["--overwrite"]) == 0
    assert (out / "summary.csv").read_bytes() == first


def test_tabulate_rebuilds_summary(data_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["train", *data_flags(data_dir), *TINY, "--seeds", "3,4", "--out", str(out)]) == 0
    before = (out / "summary.csv").read_bytes()
    (out / "summary.csv").unlink()
    assert main(["tabulate", "--out", str(out)]) == 0
    assert (out / "summary.csv").read_bytes() == before


def test_ablate_labels_grid(data_dir, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate-labels", *data_flags(data_dir), *TINY, "--seeds", "0", "--modes", "supervised,mixup_pp",
                 "--label-pct", "20,100", "--out", str(out), "--max-epochs", "1"]) == 0
    rows = read_summary(out / "curves.csv")
    assert [(r["label_pct"], r["mode"]) for r in rows] == [
        ("20", "supervised"), ("20", "mixup_pp"), ("100", "supervised"), ("100", "mixup_pp")]


def test_ablate_batches_echoes_k(data_dir, tmp_path):
    out = tmp_path / "kb"
    assert main(["ablate-batches", *data_flags(data_dir), *TINY, "--seeds", "0", "--modes", "mixup_pp",
                 "--k-grid", "1,3", "--out", str(out), "--max-epochs", "1"]) == 0
    assert [r["k"] for r in read_summary(out / "curves.csv")] == ["1", "3"]


def test_semisup_runs(data_dir, tmp_path):
    out = tmp_path / "ss"
    assert main(["semisup", *data_flags(data_dir), *TINY, "--seeds", "0", "--label-pct", "20",
                 "--warmup-epochs", "1", "--tau", "0.6", "--out", str(out)]) == 0
    records = [json.loads(l) for l in next(out.rglob("seed_0.jsonl")).read_text().splitlines()]
    assert any("pseudo_labels" in r for r in records if r["type"] == "epoch")


def test_job_planning_counts():
    cfg = ExperimentConfig(label_pct=[1, 5, 25, 50, 100], seeds=[0, 1], modes=["supervised", "latent_mixup_pp"])
    assert len(plan_jobs(cfg, "ablate-labels")) == 5 * 2 * 2
    cfg = ExperimentConfig(seeds=[0], modes=["mixup_pp"])
    assert len(plan_jobs(cfg, "ablate-batches")) == 4


@pytest.mark.parametrize("extra, code", [
    (["--mode", "cutmix"], 2),
    (["--seeds", "1,1"], 2),
    (["--label-pct", "0"], 2),
    (["--alpha", "-1"], 2),
])
def test_config_errors_exit_2(data_dir, tmp_path, extra, code):
    assert main(["train", *data_flags(data_dir), *TINY, "--out", str(tmp_path / "x"), *extra]) == code
    assert not (tmp_path / "x").exists()


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"learning_rate": 0.1}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_bad_data_exits_3(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"n_classes": 2, "n_channels": 1, "seq_len": 2}))
    (tmp_path / "d.csv").write_text("0,1.0\n")
    assert main(["train", "--data", str(tmp_path / "d.csv"), "--meta", str(tmp_path / "m.json"),
                 "--out", str(tmp_path / "o")]) == 3


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tsmix", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gen-data" in proc.stdout
