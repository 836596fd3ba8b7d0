"""Supervised training for every augmentation mode, Adam, evaluation, model selection."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import augment
from .augment import BetaParams, LabeledBatch
from .data import Dataset
from .errors import ConfigError, ContractError, ValidationError
from .metrics import ConfusionMatrix, score
from .model import TransformerClassifier
from .tensor import Tensor, backward, cross_entropy_soft, no_grad, softmax

MODES = (
    "supervised",
    "permute",
    "permute_pp",
    "mixup",
    "mixup_pp",
    "latent_mixup",
    "latent_mixup_pp",
)
# modes that train on the original batch before any synthetic ones
KEEPS_ORIGINAL = {"supervised", "permute_pp", "mixup_pp", "latent_mixup_pp"}
PAIRINGS = ("random", "identity")


@dataclass
class TrainConfig:
    mode: str = "supervised"
    k: int = 2
    alpha: float = 0.2
    lr: float = 2e-4
    batch_size: int = 32
    max_epochs: int = 100
    patience: int | None = 10
    seed: int = 0
    n_segments: int = 4
    fixed_lambda: float | None = None
    pairing: str = "random"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if self.mode.endswith("_pp") and self.k < 1:
            raise ConfigError(f"mode {self.mode} needs k >= 1, got {self.k}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 or None")
        if self.n_segments < 1:
            raise ConfigError("n_segments must be >= 1")
        if self.pairing not in PAIRINGS:
            raise ConfigError(f"pairing must be one of {PAIRINGS}")
        BetaParams(self.alpha)
        if self.fixed_lambda is not None and not 0.0 <= self.fixed_lambda <= 1.0:
            raise ConfigError("fixed_lambda must be in [0, 1]")

    @property
    def beta(self) -> BetaParams:
        return BetaParams(self.alpha)

    @property
    def n_synthetic(self) -> int:
        """Synthetic batches per original batch."""
        if self.mode == "supervised":
            return 0
        return self.k if self.mode.endswith("_pp") else 1


class RngStreams:
    """Independent generators for batch order, mixing, dropout and pseudo-label batching.

    Separate streams keep e.g. the dropout masks identical between a mixup
    run and a supervised run that draw different numbers of mixing values.
    """

    def __init__(self, seed: int):
        shuffle, mix, drop, pseudo = np.random.SeedSequence(seed).spawn(4)
        self.shuffle = np.random.default_rng(shuffle)
        self.mix = np.random.default_rng(mix)
        self.dropout = np.random.default_rng(drop)
        self.pseudo = np.random.default_rng(pseudo)


# -- optimizer --------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update; rebinds each ``param.data``."""
    for name, p in params.items():
        g = grads.get(name)
        if g is not None and np.shape(g) != p.shape:
            raise ContractError(f"gradient for {name} has shape {np.shape(g)}, parameter {p.shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        if name not in state.m:
            state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4):
        self.params = params
        self.lr = lr
        self.state = AdamState()

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state, self.lr)


# -- reports -----------------------------------------------------------------------


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    n_steps: int
    step_losses: list[float] = field(default_factory=list, repr=False)
    val_accuracy: float | None = None
    val_f1_macro: float | None = None
    val_kappa: float | None = None
    census: dict | None = None

    def to_record(self) -> dict:
        rec = {k: v for k, v in asdict(self).items() if k not in ("step_losses", "census")}
        rec["type"] = "epoch"
        if self.census is not None:
            rec["pseudo_labels"] = self.census
        return rec


# -- one optimizer step ---------------------------------------------------------


def _step(model: TransformerClassifier, opt: Adam, forward_fn: Callable[[], tuple[Tensor, np.ndarray]]) -> float:
    model.zero_grad()
    loss = cross_entropy_soft(*forward_fn())
    backward(loss)
    opt.step()
    return loss.item()


def _train_original(model, opt, streams, xb, yb) -> float:
    return _step(model, opt, lambda: (model.forward(xb, True, streams.dropout), yb))


def _train_latent(model, opt, streams, pool: LabeledBatch, plan: augment.MixPlan) -> float:
    def forward():
        h = model.encode(pool.inputs, True, streams.dropout)
        mixed, targets = augment.latent_mix_pairs(h, pool.labels, plan)
        return model.classify_head(mixed), targets

    return _step(model, opt, forward)


def _train_synthetic(model, opt, cfg: TrainConfig, streams: RngStreams, pool: LabeledBatch,
                     n: int, losses: list) -> None:
    """``n`` synthetic-batch steps built from ``pool`` according to ``cfg.mode``."""
    if n == 0:
        return
    if cfg.mode.startswith("permute"):
        for _ in range(n):
            pb = augment.permute_batch(pool, cfg.n_segments, streams.mix)
            losses.append(_train_original(model, opt, streams, pb.inputs, pb.labels))
        return
    plans = augment.draw_mix_plans(
        n, len(pool), cfg.beta, streams.mix, cfg.fixed_lambda, cfg.pairing == "identity"
    )
    for plan in plans:
        if cfg.mode.startswith("latent"):
            losses.append(_train_latent(model, opt, streams, pool, plan))
        else:
            mb = augment.mixup_batch(pool, plan.lam, plan.perm)
            losses.append(_train_original(model, opt, streams, mb.inputs, mb.labels))


def train_batch(model, opt, cfg: TrainConfig, streams: RngStreams, batch: LabeledBatch,
                extra: LabeledBatch | None = None) -> list[float]:
    """All steps for one original batch: original first, then synthetic batches.

    ``extra`` (pseudo-labeled samples) gets its own step after the original
    one and joins the pool that synthetic batches are drawn from.
    """
    losses = []
    pool = batch
    if cfg.mode in KEEPS_ORIGINAL:
        losses.append(_train_original(model, opt, streams, batch.inputs, batch.labels))
    if extra is not None and len(extra):
        losses.append(_train_original(model, opt, streams, extra.inputs, extra.labels))
        pool = LabeledBatch(
            np.concatenate([batch.inputs, extra.inputs]),
            np.concatenate([batch.labels, extra.labels]),
            "original",
        )
    _train_synthetic(model, opt, cfg, streams, pool, cfg.n_synthetic, losses)
    return losses


def batch_slices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(model: TransformerClassifier, data: Dataset | LabeledBatch, cfg: TrainConfig,
                streams: RngStreams, opt: Adam, epoch: int = 0) -> EpochReport:
    x, y = _xy(data)
    if len(x) == 0:
        raise ValidationError("no training samples")
    losses: list[float] = []
    for rows in batch_slices(len(x), cfg.batch_size, streams.shuffle):
        losses += train_batch(model, opt, cfg, streams, LabeledBatch(x[rows], y[rows]))
    return EpochReport(epoch, float(np.mean(losses)), len(losses), losses)


def _xy(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, Dataset):
        return data.x, data.onehot
    return data.inputs, data.labels


# -- evaluation --------------------------------------------------------------------


def predict_proba(model: TransformerClassifier, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Class probabilities with dropout off and no graph recording."""
    out = []
    with no_grad():
        for i in range(0, len(x), chunk):
            out.append(softmax(model.forward(x[i:i + chunk], training=False), axis=-1).data)
    if not out:
        return np.zeros((0, model.config.n_classes))
    return np.concatenate(out)


def evaluate(model: TransformerClassifier, data: Dataset) -> dict:
    """Accuracy, macro F1, Cohen's kappa and the confusion matrix of argmax predictions."""
    if len(data) == 0:
        raise ValidationError("cannot evaluate on an empty set")
    pred = predict_proba(model, data.x).argmax(axis=1)
    cm = ConfusionMatrix.from_labels(data.labels, pred, data.meta.n_classes)
    return {**score(cm), "confusion": cm.counts.tolist()}


# -- full run with best-validation selection ---------------------------------------


@dataclass
class FitResult:
    history: list[EpochReport]
    best_epoch: int
    best_val: dict


def fit(model: TransformerClassifier, train: Dataset, val: Dataset, cfg: TrainConfig,
        epoch_fn: Callable | None = None, on_epoch: Callable[[EpochReport], None] | None = None,
        streams: RngStreams | None = None, opt: Adam | None = None,
        grace_epochs: int = 0) -> FitResult:
    """Train up to ``max_epochs``; keep the parameters of the best validation epoch.

    Selection is by validation macro F1 (ties keep the earlier epoch).
    Training stops after ``patience`` epochs without improvement; the first
    ``grace_epochs`` epochs never count toward patience.
    """
    streams = streams or RngStreams(cfg.seed)
    opt = opt or Adam(model.params, cfg.lr)
    epoch_fn = epoch_fn or (lambda ep: train_epoch(model, train, cfg, streams, opt, ep))
    history, best_state, best_val, best_epoch, stale = [], None, None, -1, 0
    for ep in range(cfg.max_epochs):
        report = epoch_fn(ep)
        if not all(math.isfinite(v) for v in report.step_losses):
            raise FloatingPointError(f"non-finite training loss in epoch {ep}")
        scores = evaluate(model, val)
        report.val_accuracy, report.val_f1_macro, report.val_kappa = (
            scores["accuracy"], scores["f1_macro"], scores["kappa"])
        history.append(report)
        if on_epoch is not None:
            on_epoch(report)
        if best_val is None or scores["f1_macro"] > best_val["f1_macro"]:
            best_val, best_epoch, stale = scores, ep, 0
            best_state = model.state_dict()
        elif ep >= grace_epochs:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return FitResult(history, best_epoch, best_val)


def steps_per_epoch(n: int, cfg: TrainConfig) -> int:
    per_batch = int(cfg.mode in KEEPS_ORIGINAL) + cfg.n_synthetic
    return per_batch * math.ceil(n / cfg.batch_size)


def config_dict(cfg: TrainConfig) -> dict:
    return copy.deepcopy(asdict(cfg))
