"""Experiment orchestration behind the command line.

A run directory holds ``manifest.json``, one ``seed_<s>.jsonl`` per
(cell, seed) and a ``summary.csv`` computed only from those files, so
``tabulate`` reproduces it exactly.
"""

from __future__ import annotations

import csv
import io
import json
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .data import (
    Dataset,
    SplitSpec,
    UnlabeledSet,
    load_csv,
    save_csv,
    stratified_split,
    subsample_labels,
    synth_generate,
)
from .errors import ConfigError
from .metrics import METRICS, aggregate_seeds
from .model import ModelConfig, TransformerClassifier, save_checkpoint
from .semisup import SEMISUP_MODES, PseudoLabelConfig, fit_semisup
from .training import MODES, TrainConfig, evaluate, fit

COMMANDS = ("train", "ablate-labels", "ablate-batches", "semisup")
DEFAULT_MODES = {
    "train": ["supervised"],
    "ablate-labels": ["supervised", "mixup_pp", "latent_mixup_pp"],
    "ablate-batches": ["mixup_pp", "latent_mixup_pp"],
    "semisup": ["latent_mixup_pp"],
}
SUMMARY_FIELDS = ["mode", "label_pct", "k"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")] + ["n_seeds"]


@dataclass
class ExperimentConfig:
    # data: CSV files, or the synthetic generator when ``data`` is unset
    data: str | None = None
    meta: str | None = None
    test_data: str | None = None
    test_meta: str | None = None
    synth_n_classes: int = 3
    synth_n_per_class: int = 300
    synth_seq_len: int = 64
    synth_n_channels: int = 2
    synth_noise_sd: float = 0.3
    synth_seed: int = 0
    split_seed: int = 0
    test_fraction: float = 0.2
    val_fraction: float = 0.2
    stratify_by: str = "label"
    # model
    n_layers: int = 5
    n_heads: int = 5
    d_model: int = 100
    dropout: float = 0.15
    # training
    mode: str | None = None
    modes: list[str] | None = None
    k: int = 2
    k_grid: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    alpha: float = 0.2
    lr: float = 2e-4
    batch_size: int = 32
    max_epochs: int = 100
    patience: int | None = 10
    n_segments: int = 4
    # pseudo-labeling
    tau: float = 0.99
    relabel_every: int = 1
    warmup_epochs: int = 10
    # protocol
    label_pct: list[float] = field(default_factory=lambda: [100.0])
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    out: str = "runs/experiment"
    overwrite: bool = False
    workers: int = 1
    save_checkpoints: bool = True

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**raw)

    def resolved_modes(self, command: str) -> list[str]:
        if self.modes:
            return list(self.modes)
        return [self.mode] if self.mode else list(DEFAULT_MODES[command])

    def validate(self, command: str) -> None:
        """Raise ``ConfigError`` on any bad field before training starts."""
        if not self.seeds:
            raise ConfigError("seeds: at least one seed required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct: {self.seeds}")
        if not self.label_pct or any(not 0 < p <= 100 for p in self.label_pct):
            raise ConfigError(f"label_pct values must be in (0, 100]: {self.label_pct}")
        if (self.data is None) != (self.meta is None):
            raise ConfigError("data and meta must be given together")
        if (self.test_data is None) != (self.test_meta is None):
            raise ConfigError("test_data and test_meta must be given together")
        for name in ("test_fraction", "val_fraction"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must be in (0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        modes = self.resolved_modes(command)
        for mode in modes:
            if mode not in MODES:
                raise ConfigError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
        if command == "train" and len(self.label_pct) != 1:
            raise ConfigError("train takes a single label_pct; use ablate-labels for a grid")
        if command == "ablate-batches":
            if any(not m.endswith("_pp") for m in modes):
                raise ConfigError("ablate-batches needs *_pp modes")
            if not self.k_grid or any(int(k) != k or k < 1 for k in self.k_grid):
                raise ConfigError(f"k_grid must hold positive integers: {self.k_grid}")
        if command == "semisup":
            if any(p >= 100 for p in self.label_pct):
                raise ConfigError("semisup needs label_pct < 100 so that an unlabeled pool exists")
            if any(m not in SEMISUP_MODES for m in modes):
                raise ConfigError(f"semisup modes must be among {SEMISUP_MODES}")
            PseudoLabelConfig(self.tau, self.relabel_every, self.warmup_epochs)
        SplitSpec(1 - self.val_fraction, self.stratify_by, self.split_seed)
        self.model_config(2, 1, 1)
        for mode in modes:
            for k in (self.k_grid if command == "ablate-batches" else [self.k]):
                self.train_config(mode, int(k), 0)

    def model_config(self, n_classes, n_channels, seq_len) -> ModelConfig:
        return ModelConfig(n_classes, n_channels, seq_len, self.n_layers, self.n_heads,
                           self.d_model, self.dropout)

    def train_config(self, mode: str, k: int, seed: int) -> TrainConfig:
        return TrainConfig(mode=mode, k=k, alpha=self.alpha, lr=self.lr, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience, seed=seed,
                           n_segments=self.n_segments)


# -- data ----------------------------------------------------------------------------


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Return (train+validation pool, test set)."""
    if cfg.data is not None:
        full = load_csv(cfg.data, cfg.meta)
    else:
        full = synth_generate(cfg.synth_n_classes, cfg.synth_n_per_class, cfg.synth_seq_len,
                              cfg.synth_n_channels, cfg.synth_noise_sd, cfg.synth_seed)
    if cfg.test_data is not None:
        return full, load_csv(cfg.test_data, cfg.test_meta)
    return stratified_split(full, SplitSpec(1 - cfg.test_fraction, cfg.stratify_by, cfg.split_seed))


# -- a single (cell, seed) run ----------------------------------------------------------


@dataclass(frozen=True)
class Job:
    command: str
    mode: str
    label_pct: float
    k: int
    seed: int
    path: str


def _pct_name(p: float) -> str:
    return f"{p:g}"


def plan_jobs(cfg: ExperimentConfig, command: str) -> list[Job]:
    out = Path(cfg.out)
    modes = cfg.resolved_modes(command)
    jobs = []
    if command == "train":
        for s in cfg.seeds:
            jobs.append(Job(command, modes[0], float(cfg.label_pct[0]), cfg.k, s, str(out / f"seed_{s}.jsonl")))
        if len(modes) > 1:
            raise ConfigError("train runs one mode; use ablate-labels to compare modes")
        return jobs
    grid = cfg.k_grid if command == "ablate-batches" else cfg.label_pct
    for x in grid:
        for mode in modes:
            if command == "ablate-batches":
                cell = out / f"k_{int(x)}" / mode
                pct, k = float(cfg.label_pct[0]), int(x)
            else:
                cell = out / f"pct_{_pct_name(x)}" / mode
                pct, k = float(x), cfg.k
            for s in cfg.seeds:
                jobs.append(Job(command, mode, pct, k, s, str(cell / f"seed_{s}.jsonl")))
    return jobs


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def run_job(cfg: ExperimentConfig, job: Job, trainval: Dataset | None = None,
            test: Dataset | None = None) -> dict:
    """Train and test one seed of one cell; write its metrics file; return the test record."""
    if trainval is None:
        trainval, test = load_data(cfg)
    train, val = stratified_split(trainval, SplitSpec(1 - cfg.val_fraction, cfg.stratify_by, cfg.split_seed))
    if job.label_pct < 100:
        labeled, unlabeled = subsample_labels(train, job.label_pct, job.seed)
    else:
        labeled, unlabeled = train, empty_unlabeled(train)
    meta = trainval.meta
    model = TransformerClassifier(cfg.model_config(meta.n_classes, meta.n_channels, meta.seq_len), job.seed)
    tcfg = cfg.train_config(job.mode, job.k, job.seed)
    records = [{
        "type": "run", "command": job.command, "mode": job.mode, "label_pct": job.label_pct,
        "k": job.k, "seed": job.seed, "n_labeled": len(labeled), "n_unlabeled": len(unlabeled),
        "n_val": len(val), "n_test": len(test), "n_parameters": model.n_parameters,
    }]
    on_epoch = lambda r: records.append(r.to_record())  # noqa: E731
    if job.command == "semisup":
        pcfg = PseudoLabelConfig(cfg.tau, cfg.relabel_every, cfg.warmup_epochs)
        result = fit_semisup(model, labeled, unlabeled, val, tcfg, pcfg, on_epoch=on_epoch)
    else:
        result = fit(model, labeled, val, tcfg, on_epoch=on_epoch)
    scores = evaluate(model, test)
    final = {"type": "test", "best_epoch": result.best_epoch, "epochs_run": len(result.history),
             "accuracy": scores["accuracy"], "f1_macro": scores["f1_macro"], "kappa": scores["kappa"],
             "confusion": scores["confusion"]}
    records.append(final)
    path = Path(job.path)
    _write_atomic(path, _jsonl(records))
    if cfg.save_checkpoints:
        save_checkpoint(model, path.with_name(f"checkpoint_{path.stem}.npz"))
    return {**records[0], **final}


def _run_job_worker(args):
    cfg, job = args
    return run_job(cfg, job)


# -- tabulation ------------------------------------------------------------------------------


def read_seed_file(path) -> dict:
    header, test = None, None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["type"] == "run":
                header = rec
            elif rec["type"] == "test":
                test = rec
    if header is None or test is None:
        raise ConfigError(f"{path} is incomplete (missing run or test record)")
    return {**header, **test}


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def summary_rows(run_dir) -> list[dict]:
    """Aggregate every seed file under ``run_dir`` by (mode, label_pct, k)."""
    groups: dict[tuple, list[dict]] = {}
    for path in sorted(Path(run_dir).rglob("seed_*.jsonl")):
        rec = read_seed_file(path)
        groups.setdefault((rec["mode"], float(rec["label_pct"]), int(rec["k"])), []).append(rec)

    def order(key):
        mode, pct, k = key
        return (pct, k, MODES.index(mode) if mode in MODES else len(MODES), mode)

    rows = []
    for key in sorted(groups, key=order):
        runs = sorted(groups[key], key=lambda r: r["seed"])
        agg = aggregate_seeds(runs)
        row = {"mode": key[0], "label_pct": _pct_name(key[1]), "k": str(key[2])}
        for m in METRICS:
            row[f"{m}_mean"] = _fmt(agg[m].mean)
            row[f"{m}_std"] = _fmt(agg[m].std)
        row["n_seeds"] = str(len(runs))
        rows.append(row)
    return rows


def _csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def tabulate(run_dir, command: str | None = None) -> list[dict]:
    """(Re)write ``summary.csv`` and, for ablations, ``curves.csv`` from the seed files."""
    run_dir = Path(run_dir)
    if command is None:
        manifest = run_dir / "manifest.json"
        if manifest.exists():
            command = json.loads(manifest.read_text(encoding="utf-8")).get("command")
    rows = summary_rows(run_dir)
    if not rows:
        raise ConfigError(f"no seed_*.jsonl files under {run_dir}")
    _write_atomic(run_dir / "summary.csv", _csv_text(rows, SUMMARY_FIELDS))
    metric_cols = [c for c in SUMMARY_FIELDS if c.endswith(("_mean", "_std"))]
    if command in ("ablate-labels", "semisup"):
        _write_atomic(run_dir / "curves.csv", _csv_text(rows, ["label_pct", "mode"] + metric_cols + ["n_seeds"]))
    elif command == "ablate-batches":
        _write_atomic(run_dir / "curves.csv", _csv_text(rows, ["k", "mode"] + metric_cols + ["n_seeds"]))
    return rows


# -- commands ------------------------------------------------------------------------------


def prepare_out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    if out.exists() and any(out.iterdir()):
        if not cfg.overwrite:
            raise ConfigError(f"output directory {out} is not empty; pass --overwrite to replace it")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_command(cfg: ExperimentConfig, command: str) -> list[dict]:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    cfg.validate(command)
    jobs = plan_jobs(cfg, command)
    trainval, test = load_data(cfg)  # fail on bad data before touching the output directory
    out = prepare_out_dir(cfg)
    manifest = {
        "command": command,
        "config": asdict(cfg),
        "modes": cfg.resolved_modes(command),
        "version": __version__,
        "kernel_backend": kernels.BACKEND,
        "model_selection": "best validation macro-F1 epoch",
        "seed_files": [os.path.relpath(j.path, out) for j in jobs],
    }
    _write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(_run_job_worker, [(cfg, j) for j in jobs]))
    else:
        for job in jobs:
            run_job(cfg, job, trainval, test)
    return tabulate(out, command)


def generate_dataset(out_dir, n_classes: int, n_per_class: int, seq_len: int, n_channels: int,
                     noise_sd: float, seed: int) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = synth_generate(n_classes, n_per_class, seq_len, n_channels, noise_sd, seed)
    data_path, meta_path = out / "data.csv", out / "meta.json"
    save_csv(ds, data_path, meta_path)
    return data_path, meta_path


def format_table(rows: list[dict]) -> str:
    """Human-readable mean ± std table in percent (Accuracy, F1 Macro, Kappa)."""
    lines = [f"{'mode':16s} {'label%':>6s} {'k':>3s} {'Accuracy':>15s} {'F1 Macro':>15s} {'Kappa':>15s}"]
    for r in rows:
        cells = []
        for m in METRICS:
            mean = float(r[f"{m}_mean"]) * 100
            std = r[f"{m}_std"]
            cells.append(f"{mean:6.2f} ± {float(std) * 100:5.2f}" if std else f"{mean:6.2f}")
        lines.append(f"{r['mode']:16s} {r['label_pct']:>6s} {r['k']:>3s} " + " ".join(f"{c:>15s}" for c in cells))
    return "\n".join(lines)


def empty_unlabeled(ds: Dataset) -> UnlabeledSet:
    return UnlabeledSet(ds.x[:0], np.zeros(0, dtype=np.intp))
