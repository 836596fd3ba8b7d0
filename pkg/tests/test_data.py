import json

import numpy as np
import pytest

from tsmix.data import (
    Dataset,
    DatasetMeta,
    SplitSpec,
    load_csv,
    load_meta,
    save_csv,
    stratified_split,
    subsample_labels,
    synth_generate,
)
from tsmix.errors import ConfigError, DataError, ValidationError


def nn1_accuracy(train: Dataset, test: Dataset) -> float:
    a = train.x.reshape(len(train), -1)
    b = test.x.reshape(len(test), -1)
    d = (b * b).sum(1)[:, None] - 2 * b @ a.T + (a * a).sum(1)[None, :]
    return float((train.labels[d.argmin(axis=1)] == test.labels).mean())


def write_meta(path, **kw):
    meta = {"n_classes": 2, "n_channels": 2, "seq_len": 2, "class_names": ["a", "b"], "has_subject": False}
    meta.update(kw)
    path.write_text(json.dumps(meta))


def test_round_trip_is_value_exact(tmp_path):
    meta = DatasetMeta(2, 2, 3, ("a", "b"))
    x = np.array([[[0.1, 1e-17], [1 / 3, -2.5], [7.0, np.pi]], [[-0.0, 5e300], [2.0, 3.0], [4.0, 5.0]]])
    ds = Dataset(x, [1, 0], meta)
    save_csv(ds, tmp_path / "d.csv", tmp_path / "m.json")
    back = load_csv(tmp_path / "d.csv", tmp_path / "m.json")
    np.testing.assert_array_equal(back.x, x)
    np.testing.assert_array_equal(back.labels, [1, 0])
    assert back.meta == meta


def test_csv_layout_is_channel_major(tmp_path):
    meta = DatasetMeta(2, 2, 2)
    ds = Dataset(np.array([[[1.0, 10.0], [2.0, 20.0]]]), [1], meta)
    save_csv(ds, tmp_path / "d.csv", tmp_path / "m.json")
    assert (tmp_path / "d.csv").read_text().strip() == "1,1.0,2.0,10.0,20.0"


def test_subject_column_round_trips(tmp_path):
    meta = DatasetMeta(2, 1, 2, has_subject=True)
    ds = Dataset(np.ones((3, 2, 1)), [0, 1, 1], meta, subjects=np.array([4, 4, 9]))
    save_csv(ds, tmp_path / "d.csv", tmp_path / "m.json")
    back = load_csv(tmp_path / "d.csv", tmp_path / "m.json")
    np.testing.assert_array_equal(back.subjects, [4, 4, 9])


def test_bad_width_names_row(tmp_path):
    write_meta(tmp_path / "m.json")
    (tmp_path / "d.csv").write_text("0,1,2,3,4\n1,1,2,3\n")
    with pytest.raises(DataError, match="row 2"):
        load_csv(tmp_path / "d.csv", tmp_path / "m.json")


def test_bad_label_names_row(tmp_path):
    write_meta(tmp_path / "m.json")
    (tmp_path / "d.csv").write_text("0,1,2,3,4\n0,1,2,3,4\n5,1,2,3,4\n")
    with pytest.raises(DataError, match="row 3"):
        load_csv(tmp_path / "d.csv", tmp_path / "m.json")
    (tmp_path / "d.csv").write_text("-1,1,2,3,4\n")
    with pytest.raises(DataError, match="row 1"):
        load_csv(tmp_path / "d.csv", tmp_path / "m.json")


def test_six_channel_meta_accepted(tmp_path):
    write_meta(tmp_path / "m.json", n_classes=6, n_channels=6, seq_len=4, class_names=list("abcdef"))
    (tmp_path / "d.csv").write_text("5," + ",".join(["0.5"] * 24) + "\n")
    ds = load_csv(tmp_path / "d.csv", tmp_path / "m.json")
    assert ds.x.shape == (1, 4, 6)


def test_meta_validation(tmp_path):
    write_meta(tmp_path / "m.json", class_names=["only_one"])
    with pytest.raises(DataError):
        load_meta(tmp_path / "m.json")
    with pytest.raises(DataError):
        load_meta(tmp_path / "missing.json")


def test_stratified_split_exact_proportions():
    meta = DatasetMeta(2, 1, 1)
    ds = Dataset(np.zeros((100, 1, 1)), np.repeat([0, 1], 50), meta)
    train, hold = stratified_split(ds, SplitSpec(0.8, seed=3))
    assert np.bincount(train.labels).tolist() == [40, 40]
    assert np.bincount(hold.labels).tolist() == [10, 10]
    assert sorted(np.concatenate([train.index, hold.index]).tolist()) == list(range(100))
    again, _ = stratified_split(ds, SplitSpec(0.8, seed=3))
    np.testing.assert_array_equal(again.index, train.index)


def test_stratified_split_errors():
    meta = DatasetMeta(2, 1, 1)
    with pytest.raises(ValidationError):
        stratified_split(Dataset(np.zeros((3, 1, 1)), [0, 0, 1], meta), SplitSpec())
    with pytest.raises(ConfigError):
        SplitSpec(1.0)


def test_subject_split_is_disjoint():
    meta = DatasetMeta(2, 1, 1, has_subject=True)
    subjects = np.repeat(np.arange(10), 6)
    ds = Dataset(np.zeros((60, 1, 1)), np.tile([0, 1], 30), meta, subjects=subjects)
    train, hold = stratified_split(ds, SplitSpec(0.8, "subject", seed=1))
    assert not set(train.subjects) & set(hold.subjects)
    assert len(train) + len(hold) == 60 and len(hold) > 0


def test_subsample_labels_partition():
    ds = synth_generate(3, 40, 4, 1, 0.1, seed=2)
    labeled, unlabeled = subsample_labels(ds, 25, seed=5)
    assert np.bincount(labeled.labels).tolist() == [10, 10, 10]
    joined = np.sort(np.concatenate([labeled.index, unlabeled.index]))
    np.testing.assert_array_equal(joined, np.arange(len(ds)))
    full, none = subsample_labels(ds, 100, seed=5)
    assert len(full) == len(ds) and len(none) == 0


def test_subsample_labels_one_percent_grid():
    ds = synth_generate(3, 300, 4, 1, 0.1, seed=2)
    for pct in (1, 5, 25, 50, 100):
        labeled, unlabeled = subsample_labels(ds, pct, seed=0)
        assert len(labeled) == 3 * round(3 * pct)
        assert len(labeled) + len(unlabeled) == len(ds)


def test_subsample_labels_errors():
    ds = synth_generate(2, 10, 4, 1, 0.1, seed=2)
    with pytest.raises(ValidationError):
        subsample_labels(ds, 1, seed=0)
    with pytest.raises(ConfigError):
        subsample_labels(ds, 0, seed=0)


def test_synth_noise_free_classes_are_constant():
    ds = synth_generate(3, 5, 16, 2, 0.0, seed=0)
    for c in range(3):
        rows = ds.x[ds.labels == c]
        assert np.all(rows == rows[0])


def test_synth_is_deterministic():
    a, b = synth_generate(3, 10, 8, 2, 0.3, seed=4), synth_generate(3, 10, 8, 2, 0.3, seed=4)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_synth_is_separable_by_nearest_neighbour():
    ds = synth_generate(3, 300, 64, 2, 0.1, seed=0)
    train, test = stratified_split(ds, SplitSpec(0.8, seed=0))
    assert nn1_accuracy(train, test) > 0.99
