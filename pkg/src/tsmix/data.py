"""Dataset container, CSV/JSON I/O, splits, label subsampling and synthetic data.

CSV rows have no header: ``label,[subject,]v(0,0),v(0,1),...,v(C-1,T-1)``
with channel-major values (all timesteps of channel 0 first). The JSON
sidecar holds ``n_classes``, ``n_channels``, ``seq_len``, ``class_names``
and ``has_subject``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ValidationError


@dataclass(frozen=True)
class DatasetMeta:
    n_classes: int
    n_channels: int
    seq_len: int
    class_names: tuple[str, ...] = ()
    has_subject: bool = False

    def __post_init__(self):
        if min(self.n_classes, self.n_channels, self.seq_len) < 1:
            raise DataError(f"meta counts must be positive: {self}")
        names = tuple(self.class_names) or tuple(f"class_{i}" for i in range(self.n_classes))
        if len(names) != self.n_classes:
            raise DataError(f"{len(names)} class names for {self.n_classes} classes")
        object.__setattr__(self, "class_names", names)

    @property
    def row_width(self) -> int:
        return 1 + int(self.has_subject) + self.seq_len * self.n_channels

    def to_json(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "n_channels": self.n_channels,
            "seq_len": self.seq_len,
            "class_names": list(self.class_names),
            "has_subject": self.has_subject,
        }


@dataclass
class Dataset:
    """Labeled series ``x[N, T, C]`` with integer labels.

    ``index`` records each row's position in the dataset it was cut from,
    so subsets can be traced back.
    """

    x: np.ndarray
    labels: np.ndarray
    meta: DatasetMeta
    subjects: np.ndarray | None = None
    index: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        m = self.meta
        if self.x.ndim != 3 or self.x.shape[1:] != (m.seq_len, m.n_channels):
            raise DataError(f"x shape {self.x.shape} does not match meta (T={m.seq_len}, C={m.n_channels})")
        if self.labels.shape != (len(self.x),):
            raise DataError("labels must be one per sample")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= m.n_classes):
            raise DataError(f"labels outside [0, {m.n_classes})")
        if self.index is None:
            self.index = np.arange(len(self.x))

    def __len__(self) -> int:
        return len(self.x)

    @property
    def onehot(self) -> np.ndarray:
        return np.eye(self.meta.n_classes)[self.labels]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(
            self.x[rows],
            self.labels[rows],
            self.meta,
            None if self.subjects is None else self.subjects[rows],
            self.index[rows],
        )


@dataclass
class UnlabeledSet:
    """Inputs whose labels are withheld from training.

    ``index`` points into the dataset the set was drawn from; ground truth
    for evaluation is looked up there, never through this object.
    """

    x: np.ndarray
    index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))

    def __len__(self) -> int:
        return len(self.x)


# -- CSV I/O -------------------------------------------------------------------


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_csv(ds: Dataset, data_path, meta_path) -> None:
    data_path, meta_path = Path(data_path), Path(meta_path)
    lines = []
    flat = ds.x.transpose(0, 2, 1).reshape(len(ds), -1)
    for i in range(len(ds)):
        head = [str(int(ds.labels[i]))]
        if ds.meta.has_subject:
            head.append(str(int(ds.subjects[i])))
        lines.append(",".join(head + [repr(float(v)) for v in flat[i]]))
    _atomic_write_text(data_path, "\n".join(lines) + ("\n" if lines else ""))
    _atomic_write_text(meta_path, json.dumps(ds.meta.to_json(), indent=2, sort_keys=True) + "\n")


def load_meta(meta_path) -> DatasetMeta:
    try:
        raw = json.loads(Path(meta_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read meta file {meta_path}: {exc}") from exc
    try:
        return DatasetMeta(
            n_classes=int(raw["n_classes"]),
            n_channels=int(raw["n_channels"]),
            seq_len=int(raw["seq_len"]),
            class_names=tuple(raw.get("class_names", ())),
            has_subject=bool(raw.get("has_subject", False)),
        )
    except KeyError as exc:
        raise DataError(f"meta file {meta_path} lacks key {exc}") from exc


def _parse_int(tok: str, what: str, row: int) -> int:
    try:
        val = int(tok)
    except ValueError:
        raise DataError(f"row {row}: {what} {tok!r} is not an integer") from None
    if val < 0:
        raise DataError(f"row {row}: {what} must be nonnegative, got {val}")
    return val


def load_csv(data_path, meta_path) -> Dataset:
    """Parse a dataset; rows are numbered from 1 in error messages."""
    meta = load_meta(meta_path)
    width = meta.row_width
    off = 1 + int(meta.has_subject)
    labels, subjects, rows = [], [], []
    try:
        fh = open(data_path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {data_path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            toks = line.split(",")
            if len(toks) != width:
                raise DataError(f"row {lineno}: expected {width} fields, found {len(toks)}")
            label = _parse_int(toks[0], "label", lineno)
            if label >= meta.n_classes:
                raise DataError(f"row {lineno}: label {label} outside [0, {meta.n_classes})")
            labels.append(label)
            if meta.has_subject:
                subjects.append(_parse_int(toks[1], "subject", lineno))
            try:
                rows.append([float(t) for t in toks[off:]])
            except ValueError as exc:
                raise DataError(f"row {lineno}: {exc}") from None
    values = np.array(rows, dtype=np.float64).reshape(-1, meta.n_channels, meta.seq_len)
    return Dataset(
        values.transpose(0, 2, 1),
        np.array(labels, dtype=np.int64),
        meta,
        np.array(subjects, dtype=np.int64) if meta.has_subject else None,
    )


# -- splits ----------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    stratify_by: str = "label"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.stratify_by not in ("label", "subject"):
            raise ConfigError(f"stratify_by must be 'label' or 'subject', got {self.stratify_by!r}")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(spec.seed)
    if spec.stratify_by == "subject":
        return _subject_split(ds, spec.train_fraction, rng)
    train, hold = [], []
    for c in range(ds.meta.n_classes):
        rows = np.flatnonzero(ds.labels == c)
        if len(rows) == 0:
            continue
        if len(rows) < 2:
            raise ValidationError(f"class {c} has {len(rows)} sample(s); label stratification needs >= 2")
        rows = rng.permutation(rows)
        n_train = min(max(_round_half_up(spec.train_fraction * len(rows)), 1), len(rows) - 1)
        train.append(rows[:n_train])
        hold.append(rows[n_train:])
    return ds.subset(np.sort(np.concatenate(train))), ds.subset(np.sort(np.concatenate(hold)))


def _subject_split(ds: Dataset, fraction: float, rng) -> tuple[Dataset, Dataset]:
    if ds.subjects is None:
        raise ValidationError("subject stratification needs subject ids")
    subjects, counts = np.unique(ds.subjects, return_counts=True)
    if len(subjects) < 2:
        raise ValidationError("subject stratification needs at least two subjects")
    order = rng.permutation(len(subjects))
    target = fraction * len(ds)
    chosen, total = [], 0
    for i in order[:-1]:
        if total >= target:
            break
        # add the subject only if it moves the count closer to the target
        if chosen and abs(total + counts[i] - target) > abs(total - target):
            break
        chosen.append(subjects[i])
        total += counts[i]
    in_train = np.isin(ds.subjects, chosen)
    return ds.subset(np.flatnonzero(in_train)), ds.subset(np.flatnonzero(~in_train))


def subsample_labels(ds: Dataset, pct: float, seed: int) -> tuple[Dataset, UnlabeledSet]:
    """Keep ``pct`` percent of each class labeled; the rest loses its labels."""
    if not 0.0 < pct <= 100.0:
        raise ConfigError(f"label percentage must be in (0, 100], got {pct}")
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(ds.meta.n_classes):
        rows = np.flatnonzero(ds.labels == c)
        if len(rows) == 0:
            continue
        n = min(_round_half_up(len(rows) * pct / 100.0), len(rows))
        if n == 0:
            raise ValidationError(f"{pct}% of class {c} ({len(rows)} samples) leaves no labeled sample")
        keep.append(rng.permutation(rows)[:n])
    keep = np.sort(np.concatenate(keep))
    rest = np.setdiff1d(np.arange(len(ds)), keep)
    return ds.subset(keep), UnlabeledSet(ds.x[rest], ds.index[rest])


# -- synthetic data ------------------------------------------------------------


def synth_generate(n_classes: int, n_per_class: int, seq_len: int, n_channels: int,
                   noise_sd: float, seed: int) -> Dataset:
    """Frequency-coded sinusoids: class ``c`` makes ``c + 1`` cycles per window.

    Each (class, channel) pair has its own phase offset; ``noise_sd`` sets
    the i.i.d. Gaussian noise level.
    """
    if min(n_classes, n_per_class, seq_len, n_channels) < 1:
        raise ConfigError("synthetic dataset counts must be positive")
    if noise_sd < 0:
        raise ConfigError(f"noise_sd must be >= 0, got {noise_sd}")
    rng = np.random.default_rng(seed)
    t = np.arange(seq_len) / seq_len
    cls = np.arange(n_classes)[:, None, None]
    ch = np.arange(n_channels)[None, None, :]
    phase = 2.0 * np.pi * (cls * n_channels + ch) / (n_classes * n_channels)
    templates = np.sin(2.0 * np.pi * (cls + 1) * t[None, :, None] + phase)  # [K, T, C]
    labels = np.repeat(np.arange(n_classes), n_per_class)
    labels = labels[rng.permutation(len(labels))]
    x = templates[labels] + noise_sd * rng.standard_normal((len(labels), seq_len, n_channels))
    meta = DatasetMeta(n_classes, n_channels, seq_len, tuple(f"class_{i}" for i in range(n_classes)))
    return Dataset(x, labels, meta)
