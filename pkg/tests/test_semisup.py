import math
import warnings

import numpy as np
import pytest

from tsmix.augment import LabeledBatch
from tsmix.data import subsample_labels, synth_generate
from tsmix.errors import ConfigError, ValidationError
from tsmix.experiments import empty_unlabeled
from tsmix.model import ModelConfig, TransformerClassifier
from tsmix.semisup import (
    PseudoLabelConfig,
    combined_loss,
    fit_semisup,
    mixup_pool,
    pseudo_mixup_epoch,
    select_pseudo_labels,
)
from tsmix.tensor import no_grad
from tsmix.training import Adam, RngStreams, TrainConfig, predict_proba, train_epoch

MCFG = ModelConfig(2, 2, 8, n_layers=1, n_heads=2, d_model=10, dropout_p=0.15)


@pytest.fixture(scope="module")
def split():
    ds = synth_generate(2, 40, 8, 2, 0.3, seed=1)
    labeled, unlabeled = subsample_labels(ds, 25, seed=0)
    return ds, labeled, unlabeled


def fresh(seed=0):
    return TransformerClassifier(MCFG, seed)


def scalar_ce(logits, label):
    z = max(logits)
    lse = z + math.log(sum(math.exp(v - z) for v in logits))
    return lse - logits[label]


# -- selection -----------------------------------------------------------------------


def test_selection_fixtures():
    sel = select_pseudo_labels(np.array([[0.995, 0.005], [0.6, 0.4]]), 0.99)
    assert sel.indices.tolist() == [0]
    assert sel.labels.tolist() == [[1.0, 0.0]]


def test_selection_extremes():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(4), size=50)
    assert len(select_pseudo_labels(probs, 1e-12)) == 50
    assert len(select_pseudo_labels(probs, 1.0 + 1e-9)) == 0
    exact = np.vstack([probs, [[0.0, 1.0, 0.0, 0.0]]])
    assert select_pseudo_labels(exact, 1.0).indices.tolist() == [50]


def test_selection_is_nested_and_one_hot():
    rng = np.random.default_rng(1)
    probs = rng.dirichlet(np.full(3, 0.2), size=400)
    prev = None
    for tau in (0.5, 0.9, 0.95, 0.97, 0.98, 0.99, 0.995):
        sel = select_pseudo_labels(probs, tau)
        assert np.all((sel.labels == 0) | (sel.labels == 1))
        np.testing.assert_array_equal(sel.labels.sum(axis=1), 1.0)
        np.testing.assert_array_equal(sel.labels.argmax(axis=1), probs[sel.indices].argmax(axis=1))
        if prev is not None:
            assert set(sel.indices) <= set(prev)
        prev = sel.indices


def test_selection_validation():
    with pytest.raises(ValidationError):
        select_pseudo_labels(np.array([[0.7, 0.7]]), 0.5)
    with pytest.raises(ConfigError):
        PseudoLabelConfig(tau=0.0)
    assert PseudoLabelConfig().tau == 0.99


# -- combined loss -------------------------------------------------------------------


def test_combined_loss_matches_two_sum_oracle(split):
    ds, _, _ = split
    model = fresh()
    x_l, y_l = ds.x[:4], ds.labels[:4]
    x_u = ds.x[4:8]
    with no_grad():
        logits_u = model.forward(x_u).data
    probs = np.exp(logits_u - logits_u.max(1, keepdims=True))
    probs /= probs.sum(1, keepdims=True)
    tau = float(np.sort(probs.max(1))[1])  # keeps 3 of the 4 unlabeled rows
    pseudo = select_pseudo_labels(probs, tau)
    assert len(pseudo) == 3
    loss = combined_loss(model, LabeledBatch(x_l, np.eye(2)[y_l]), x_u, pseudo).item()

    logits_l = model.forward(x_l).data
    expected = sum(scalar_ce(logits_l[i].tolist(), int(y_l[i])) for i in range(4))
    for j in range(4):
        if probs[j].max() >= tau:
            expected += scalar_ce(logits_u[j].tolist(), int(probs[j].argmax()))
    assert loss == pytest.approx(expected, abs=1e-10)


def test_combined_loss_degenerate_cases(split):
    ds, _, _ = split
    model = fresh()
    labeled = LabeledBatch(ds.x[:3], np.eye(2)[ds.labels[:3]])
    nothing = select_pseudo_labels(np.array([[0.5, 0.5]]), 0.99)
    only_l = combined_loss(model, labeled, ds.x[:1], nothing).item()
    logits = model.forward(ds.x[:3]).data
    assert only_l == pytest.approx(sum(scalar_ce(logits[i].tolist(), int(ds.labels[i])) for i in range(3)), abs=1e-12)

    confident = select_pseudo_labels(np.array([[0.999, 0.001]]), 0.99)
    empty_l = LabeledBatch(ds.x[:0], np.zeros((0, 2)))
    one = combined_loss(model, empty_l, ds.x[:1], confident).item()
    assert one == pytest.approx(scalar_ce(logits[0].tolist(), 0), abs=1e-12)
    assert one > 0


# -- epochs ----------------------------------------------------------------------------


def run_pseudo_epochs(mode, labeled, unlabeled, pseudo_fn, n_epochs=2, k=2):
    model = fresh()
    cfg = TrainConfig(mode=mode, k=k, batch_size=8, seed=0)
    streams, opt = RngStreams(0), Adam(model.params, cfg.lr)
    losses = []
    for ep in range(n_epochs):
        rep = pseudo_mixup_epoch(model, labeled, unlabeled, cfg, PseudoLabelConfig(), streams, opt, ep,
                                 pseudo_fn(model))
        losses += rep.step_losses
    return np.array(losses), rep


def run_plain_epochs(mode, labeled, n_epochs=2, k=2):
    model = fresh()
    cfg = TrainConfig(mode=mode, k=k, batch_size=8, seed=0)
    streams, opt = RngStreams(0), Adam(model.params, cfg.lr)
    losses = []
    for ep in range(n_epochs):
        losses += train_epoch(model, labeled, cfg, streams, opt, ep).step_losses
    return np.array(losses)


@pytest.mark.parametrize("mode", ["mixup_pp", "latent_mixup_pp", "supervised"])
def test_empty_pool_matches_supervised_epoch(mode, split):
    _, labeled, _ = split
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        got, _ = run_pseudo_epochs(mode, labeled, empty_unlabeled(labeled), lambda m: None)
    assert np.abs(got - run_plain_epochs(mode, labeled)).max() <= 1e-10


def test_empty_pool_warns(split):
    _, labeled, _ = split
    with pytest.warns(UserWarning):
        run_pseudo_epochs("mixup_pp", labeled, empty_unlabeled(labeled), lambda m: None, n_epochs=1)


def test_unreachable_threshold_matches_labeled_only(split):
    _, labeled, unlabeled = split
    none = lambda m: select_pseudo_labels(predict_proba(m, unlabeled.x), 1.0 + 1e-9)  # noqa: E731
    got, rep = run_pseudo_epochs("mixup_pp", labeled, unlabeled, none)
    assert rep.census["n_selected"] == 0
    assert np.abs(got - run_plain_epochs("mixup_pp", labeled)).max() <= 1e-10


def test_pool_composition_and_schedule(split):
    _, labeled, unlabeled = split
    pseudo = select_pseudo_labels(np.tile([[0.995, 0.005]], (len(unlabeled), 1))[:13], 0.99)
    pool = mixup_pool(labeled, unlabeled, pseudo)
    assert len(pool) == len(labeled) + 13
    _, rep = run_pseudo_epochs("mixup_pp", labeled, unlabeled, lambda m: pseudo, n_epochs=1, k=2)
    cycles = max(math.ceil(len(labeled) / 8), math.ceil(13 / 8))
    # labeled step, pseudo step, then k mixed steps per cycle
    assert rep.n_steps == cycles * 4
    assert rep.census["n_selected"] == 13 and rep.census["per_class"] == [13, 0]


def test_census_shrinks_with_tau(split):
    _, labeled, unlabeled = split
    model = fresh()
    cfg = TrainConfig(batch_size=8, lr=3e-3)
    streams, opt = RngStreams(0), Adam(model.params, cfg.lr)
    for ep in range(5):
        train_epoch(model, labeled, cfg, streams, opt, ep)
    probs = predict_proba(model, unlabeled.x)
    counts = [len(select_pseudo_labels(probs, t)) for t in (0.6, 0.8, 0.95, 0.99)]
    assert counts == sorted(counts, reverse=True)


def test_semisup_rejects_other_modes(split):
    _, labeled, unlabeled = split
    with pytest.raises(ConfigError):
        pseudo_mixup_epoch(fresh(), labeled, unlabeled, TrainConfig(mode="permute"), PseudoLabelConfig(),
                           RngStreams(0), Adam(fresh().params))


def test_fit_semisup_warmup_then_pseudo(split):
    ds, labeled, unlabeled = split
    cfg = TrainConfig(mode="latent_mixup_pp", batch_size=8, max_epochs=4, patience=1, lr=1e-3)
    pcfg = PseudoLabelConfig(tau=0.6, warmup_epochs=2)
    result = fit_semisup(fresh(), labeled, unlabeled, ds.subset(np.arange(20)), cfg, pcfg)
    # warm-up epochs never count toward patience, so at least one pseudo epoch runs
    assert len(result.history) >= 3
    assert all(r.census is None for r in result.history[:2])
    assert result.history[2].census is not None
