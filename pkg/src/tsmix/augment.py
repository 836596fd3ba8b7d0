"""Synthetic-sample generators: MixUp in input and latent space, segment permutation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, ValidationError
from .model import LatentBatch
from .tensor import Tensor, check_simplex, take

SOURCES = ("original", "mixed", "permuted", "pseudo")
LABEL_TOL = 1e-9


@dataclass(frozen=True)
class BetaParams:
    alpha: float = 0.2

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"Beta alpha must be > 0, got {self.alpha}")


@dataclass
class LabeledBatch:
    inputs: np.ndarray  # [batch, T, C]
    labels: np.ndarray  # [batch, n_classes], rows on the simplex
    source: str = "original"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"unknown batch source {self.source!r}")
        if len(self.inputs) != len(self.labels):
            raise DimensionError(f"{len(self.inputs)} inputs but {len(self.labels)} label rows")
        check_simplex(self.labels, LABEL_TOL)
        if self.source in ("original", "pseudo") and len(self.labels):
            if not np.all((self.labels == 0) | (self.labels == 1)):
                raise ValidationError(f"{self.source} batches need one-hot labels")

    def __len__(self) -> int:
        return len(self.inputs)


@dataclass(frozen=True)
class MixPlan:
    """One mixed batch: a coefficient and a pairing permutation."""

    lam: float
    perm: np.ndarray


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"mixing coefficient must be in [0, 1], got {lam}")
    return lam


def sample_lambda(params: BetaParams | float, rng: np.random.Generator) -> float:
    """One Beta(alpha, alpha) draw as the ratio of two Gamma(alpha, 1) draws."""
    alpha = params.alpha if isinstance(params, BetaParams) else BetaParams(float(params)).alpha
    g1 = rng.gamma(alpha)
    g2 = rng.gamma(alpha)
    if g1 + g2 == 0.0:  # both draws underflowed; only reachable for tiny alpha
        return float(rng.random() < 0.5)
    return float(g1 / (g1 + g2))


def mix_inputs(x1, x2, lam: float):
    """``lam * x1 + (1 - lam) * x2``; differentiable when given Tensors."""
    lam = _check_lambda(lam)
    if x1.shape != x2.shape:
        raise DimensionError(f"cannot mix shapes {x1.shape} and {x2.shape}")
    if isinstance(x1, Tensor) or isinstance(x2, Tensor):
        return x1 * lam + x2 * (1.0 - lam)
    return lam * np.asarray(x1, dtype=np.float64) + (1.0 - lam) * np.asarray(x2, dtype=np.float64)


def mix_labels(y1, y2, lam: float) -> np.ndarray:
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    if y1.shape != y2.shape:
        raise DimensionError(f"cannot mix label shapes {y1.shape} and {y2.shape}")
    check_simplex(np.atleast_2d(y1), LABEL_TOL)
    check_simplex(np.atleast_2d(y2), LABEL_TOL)
    return mix_inputs(y1, y2, lam)


def _check_perm(perm, n: int) -> np.ndarray:
    perm = np.asarray(perm)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ContractError(f"not a permutation of range({n}): {perm}")
    return perm.astype(np.intp)


def mixup_batch(batch: LabeledBatch, lam: float, perm) -> LabeledBatch:
    """Mix sample ``i`` with sample ``perm[i]`` using one shared coefficient."""
    perm = _check_perm(perm, len(batch))
    return LabeledBatch(
        mix_inputs(batch.inputs, batch.inputs[perm], lam),
        mix_labels(batch.labels, batch.labels[perm], lam),
        "mixed",
    )


def latent_mix(h1: LatentBatch, h2: LatentBatch, y1, y2, lam: float) -> tuple[LatentBatch, np.ndarray]:
    """Convex combination of two latent batches and their labels."""
    if h1.values.shape != h2.values.shape:
        raise DimensionError(f"latent shapes differ: {h1.values.shape} vs {h2.values.shape}")
    return LatentBatch(mix_inputs(h1.values, h2.values, lam), "mixed"), mix_labels(y1, y2, lam)


def latent_mix_pairs(h: LatentBatch, labels, plan: MixPlan) -> tuple[LatentBatch, np.ndarray]:
    """Mix a latent batch with a row-permuted copy of itself (one encode pass)."""
    perm = _check_perm(plan.perm, h.values.shape[0])
    partner = LatentBatch(take(h.values, perm, axis=0), h.provenance)
    labels = np.asarray(labels, dtype=np.float64)
    return latent_mix(h, partner, labels, labels[perm], plan.lam)


def draw_mix_plans(k: int, batch_size: int, params: BetaParams, rng: np.random.Generator,
                   fixed_lambda: float | None = None, identity_pairing: bool = False) -> list[MixPlan]:
    """``k`` independent (lambda, permutation) draws.

    ``fixed_lambda`` and ``identity_pairing`` pin the draw for degenerate
    checks; random draws are still consumed so the stream stays aligned.
    """
    if k < 0:
        raise ConfigError(f"k must be >= 0, got {k}")
    plans = []
    for _ in range(k):
        lam = sample_lambda(params, rng)
        perm = rng.permutation(batch_size)
        if fixed_lambda is not None:
            lam = _check_lambda(fixed_lambda)
        if identity_pairing:
            perm = np.arange(batch_size)
        plans.append(MixPlan(lam, perm))
    return plans


def generate_mixup_batches(batch: LabeledBatch, k: int, params: BetaParams,
                           rng: np.random.Generator) -> list[LabeledBatch]:
    return [mixup_batch(batch, p.lam, p.perm) for p in draw_mix_plans(k, len(batch), params, rng)]


def permute_segments(x: np.ndarray, n_segments: int, rng: np.random.Generator | None = None,
                     order=None) -> np.ndarray:
    """Shuffle contiguous time chunks of a ``[T, C]`` series.

    Chunks follow ``np.array_split`` sizing (the first ``T mod n`` chunks
    are one step longer). ``order`` overrides the random chunk order.
    """
    x = np.asarray(x, dtype=np.float64)
    t = x.shape[0]
    if not 1 <= n_segments <= t:
        raise ConfigError(f"n_segments must be in [1, {t}], got {n_segments}")
    chunks = np.array_split(x, n_segments, axis=0)
    if order is None:
        order = rng.permutation(n_segments)
    return np.concatenate([chunks[i] for i in order], axis=0)


def permute_batch(batch: LabeledBatch, n_segments: int, rng: np.random.Generator) -> LabeledBatch:
    out = np.stack([permute_segments(x, n_segments, rng) for x in batch.inputs])
    return LabeledBatch(out, batch.labels, "permuted")
