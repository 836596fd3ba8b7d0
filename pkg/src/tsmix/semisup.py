"""Pseudo-labeling and pseudo-label MixUp.

Each epoch the current model scores the unlabeled pool; rows whose top
class probability reaches ``tau`` become one-hot pseudo-labeled samples.
Training then cycles over batches from three sources: labeled samples,
pseudo-labeled samples, and ``k`` mixed batches drawn from both.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .augment import LabeledBatch
from .data import Dataset, UnlabeledSet
from .errors import ConfigError
from .model import TransformerClassifier
from .tensor import Tensor, check_simplex, cross_entropy_soft
from .training import (
    Adam,
    EpochReport,
    FitResult,
    RngStreams,
    TrainConfig,
    batch_slices,
    fit,
    predict_proba,
    train_batch,
    train_epoch,
)

SEMISUP_MODES = ("supervised", "mixup_pp", "latent_mixup_pp")


@dataclass(frozen=True)
class PseudoLabelConfig:
    tau: float = 0.99
    relabel_every: int = 1
    warmup_epochs: int = 10

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if self.relabel_every < 1 or self.warmup_epochs < 0:
            raise ConfigError("relabel_every >= 1 and warmup_epochs >= 0 required")


@dataclass
class PseudoLabelSet:
    indices: np.ndarray  # rows of the unlabeled pool
    labels: np.ndarray  # one-hot [n_selected, C]
    confidence: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def census(self) -> dict:
        counts = self.labels.sum(axis=0).astype(int).tolist() if len(self) else []
        return {
            "n_selected": len(self),
            "per_class": counts,
            "mean_confidence": float(self.confidence.mean()) if len(self) else None,
        }


def select_pseudo_labels(probs, tau: float) -> PseudoLabelSet:
    """Rows with ``max(probs) >= tau``, labeled one-hot at the argmax.

    ``np.argmax`` returns the first maximum, so ties go to the lowest
    class index. A ``tau`` above 1 selects nothing.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if not tau > 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    check_simplex(probs, what="probability")
    n_classes = probs.shape[1]
    conf = probs.max(axis=1)
    rows = np.flatnonzero(conf >= tau)
    labels = np.eye(n_classes)[probs[rows].argmax(axis=1)] if len(rows) else np.zeros((0, n_classes))
    return PseudoLabelSet(rows, labels, conf[rows])


def combined_loss(model: TransformerClassifier, labeled: LabeledBatch, unlabeled_x: np.ndarray,
                  pseudo: PseudoLabelSet, training: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Summed cross-entropy over labeled samples plus selected pseudo-labeled ones."""
    terms = []
    if len(labeled):
        logits = model.forward(labeled.inputs, training, rng)
        terms.append(cross_entropy_soft(logits, labeled.labels) * float(len(labeled)))
    if len(pseudo):
        logits = model.forward(np.asarray(unlabeled_x)[pseudo.indices], training, rng)
        terms.append(cross_entropy_soft(logits, pseudo.labels) * float(len(pseudo)))
    if not terms:
        return Tensor(0.0)
    return terms[0] if len(terms) == 1 else terms[0] + terms[1]


def mixup_pool(labeled: Dataset, unlabeled: UnlabeledSet, pseudo: PseudoLabelSet) -> LabeledBatch:
    """Labeled samples followed by the selected pseudo-labeled ones."""
    return LabeledBatch(
        np.concatenate([labeled.x, unlabeled.x[pseudo.indices]]),
        np.concatenate([labeled.onehot, pseudo.labels]),
        "original",
    )


def pseudo_mixup_epoch(model: TransformerClassifier, labeled: Dataset, unlabeled: UnlabeledSet,
                       cfg: TrainConfig, pcfg: PseudoLabelConfig, streams: RngStreams, opt: Adam,
                       epoch: int = 0, pseudo: PseudoLabelSet | None = None) -> EpochReport:
    """One epoch over labeled, pseudo-labeled and mixed batches.

    The number of batch cycles is the larger of the labeled and pseudo
    batch counts; the shorter source wraps around. Passing ``pseudo``
    skips re-inference and reuses an earlier selection.
    """
    if cfg.mode not in SEMISUP_MODES:
        raise ConfigError(f"pseudo-label training supports modes {SEMISUP_MODES}, got {cfg.mode!r}")
    if len(unlabeled) == 0:
        warnings.warn("unlabeled pool is empty; running a plain supervised epoch", stacklevel=2)
        return train_epoch(model, labeled, cfg, streams, opt, epoch)
    if pseudo is None:
        pseudo = select_pseudo_labels(predict_proba(model, unlabeled.x), pcfg.tau)
    x_l, y_l = labeled.x, labeled.onehot
    x_p = unlabeled.x[pseudo.indices]

    l_batches = batch_slices(len(x_l), cfg.batch_size, streams.shuffle)
    p_batches = batch_slices(len(x_p), cfg.batch_size, streams.pseudo) if len(pseudo) else []
    losses: list[float] = []
    for i in range(max(len(l_batches), len(p_batches))):
        rows = l_batches[i % len(l_batches)]
        extra = None
        if p_batches:
            prow = p_batches[i % len(p_batches)]
            extra = LabeledBatch(x_p[prow], pseudo.labels[prow], "pseudo")
        losses += train_batch(model, opt, cfg, streams, LabeledBatch(x_l[rows], y_l[rows]), extra)
    report = EpochReport(epoch, float(np.mean(losses)), len(losses), losses)
    report.census = pseudo.census()
    return report


@dataclass
class SemisupState:
    pseudo: PseudoLabelSet | None = None


def fit_semisup(model: TransformerClassifier, labeled: Dataset, unlabeled: UnlabeledSet, val: Dataset,
                cfg: TrainConfig, pcfg: PseudoLabelConfig, on_epoch=None) -> FitResult:
    """Warm up on labeled data, then run pseudo-label epochs with best-validation selection.

    Early stopping only counts epochs after the warm-up.
    """
    if cfg.mode not in SEMISUP_MODES:
        raise ConfigError(f"pseudo-label training supports modes {SEMISUP_MODES}, got {cfg.mode!r}")
    streams = RngStreams(cfg.seed)
    opt = Adam(model.params, cfg.lr)
    state = SemisupState()

    def epoch_fn(ep):
        if ep < pcfg.warmup_epochs:
            return train_epoch(model, labeled, cfg, streams, opt, ep)
        if state.pseudo is None or (ep - pcfg.warmup_epochs) % pcfg.relabel_every == 0:
            state.pseudo = select_pseudo_labels(predict_proba(model, unlabeled.x), pcfg.tau) \
                if len(unlabeled) else None
        return pseudo_mixup_epoch(model, labeled, unlabeled, cfg, pcfg, streams, opt, ep, state.pseudo)

    run_cfg = TrainConfig(**{**cfg.__dict__, "max_epochs": max(cfg.max_epochs, pcfg.warmup_epochs + 1)})
    return fit(model, labeled, val, run_cfg, epoch_fn=epoch_fn, on_epoch=on_epoch,
               streams=streams, opt=opt, grace_epochs=pcfg.warmup_epochs)
