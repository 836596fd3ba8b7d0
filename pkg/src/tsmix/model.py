"""Transformer encoder classifier split into an encoder ``h`` and a head ``g``.

``forward(x) == classify_head(encode(x))`` by construction: the encoder
ends with a temporal mean-pool, so latents are ``[batch, d_model]`` and the
head is a single affine map to class logits.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, DataError
from .tensor import (
    Tensor,
    dropout,
    layer_norm,
    linear,
    matmul,
    relu,
    softmax,
)

PROVENANCES = ("real", "mixed")


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int
    n_channels: int
    seq_len: int
    n_layers: int = 5
    n_heads: int = 5
    d_model: int = 100
    dropout_p: float = 0.15
    ff_mult: int = 2

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.seq_len < 1 or self.n_channels < 1:
            raise ConfigError("seq_len and n_channels must be >= 1")
        if self.n_layers < 0 or self.n_heads < 1 or self.d_model < 1 or self.ff_mult < 1:
            raise ConfigError("n_layers >= 0, n_heads >= 1, d_model >= 1, ff_mult >= 1 required")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def d_ff(self) -> int:
        return self.ff_mult * self.d_model


@dataclass
class LatentBatch:
    """Pooled encoder output awaiting the classification head."""

    values: Tensor
    provenance: str = "real"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ConfigError(f"unknown latent provenance {self.provenance!r}")
        if self.values.ndim != 2:
            raise DimensionError(f"latents must be [batch, d_model], got {self.values.shape}")

    @property
    def width(self) -> int:
        return self.values.shape[1]


def sinusoidal_table(seq_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(seq_len)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def self_attention(q, k, v, mask_probs: list | None = None):
    """``softmax(q k^T / sqrt(d_k)) v`` over the last two axes.

    Leading axes (batch, heads) broadcast. When ``mask_probs`` is a list the
    attention weights are appended to it for inspection.
    """
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"self_attention: Q {q.shape} and K {k.shape} differ in d_k")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"self_attention: K {k.shape} and V {v.shape} differ in length")
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = matmul(q, k.transpose(axes)) * (1.0 / math.sqrt(q.shape[-1]))
    weights = softmax(scores, axis=-1)
    if mask_probs is not None:
        mask_probs.append(weights.data)
    return matmul(weights, v)


class TransformerClassifier:
    """Post-norm transformer encoder, mean-pooled, with a linear head."""

    def __init__(self, config: ModelConfig, seed: int | np.random.Generator = 0):
        self.config = config
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        c = config
        self._add_linear(rng, "input", c.n_channels, c.d_model)
        for li in range(c.n_layers):
            p = f"layer{li}."
            for proj in ("q", "k", "v", "o"):
                self._add_linear(rng, p + proj, c.d_model, c.d_model)
            self._add_norm(p + "ln1", c.d_model)
            self._add_linear(rng, p + "ff1", c.d_model, c.d_ff)
            self._add_linear(rng, p + "ff2", c.d_ff, c.d_model)
            self._add_norm(p + "ln2", c.d_model)
        self._add_linear(rng, "head", c.d_model, c.n_classes)
        self.positional = sinusoidal_table(c.seq_len, c.d_model)

    def _add_linear(self, rng, name, fan_in, fan_out):
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        self.params[name + ".weight"] = Tensor(w, requires_grad=True, name=name + ".weight")
        self.params[name + ".bias"] = Tensor(b, requires_grad=True, name=name + ".bias")

    def _add_norm(self, name, width):
        self.params[name + ".gain"] = Tensor(np.ones(width), requires_grad=True, name=name + ".gain")
        self.params[name + ".bias"] = Tensor(np.zeros(width), requires_grad=True, name=name + ".bias")

    def _lin(self, x, name):
        return linear(x, self.params[name + ".weight"], self.params[name + ".bias"])

    def _ln(self, x, name):
        return layer_norm(x, self.params[name + ".gain"], self.params[name + ".bias"])

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    # -- forward pieces -----------------------------------------------------

    def _attention_block(self, x, prefix, attn_log=None):
        b, t, d = x.shape
        h = self.config.n_heads
        dk = d // h

        def heads(name):
            return self._lin(x, prefix + name).reshape(b, t, h, dk).transpose(0, 2, 1, 3)

        ctx = self_attention(heads("q"), heads("k"), heads("v"), attn_log)
        ctx = ctx.transpose(0, 2, 1, 3).reshape(b, t, d)
        return self._lin(ctx, prefix + "o")

    def _check_input(self, x: Tensor):
        c = self.config
        if x.ndim != 3 or x.shape[1:] != (c.seq_len, c.n_channels):
            raise DimensionError(
                f"expected input [batch, {c.seq_len}, {c.n_channels}], got {x.shape}"
            )

    def encode(self, x, training: bool = False, rng: np.random.Generator | None = None,
               attn_log: list | None = None) -> LatentBatch:
        """``h(x)``: projection, positions, encoder layers, mean over time."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        self._check_input(x)
        p = self.config.dropout_p
        z = self._lin(x, "input") + self.positional
        z = dropout(z, p, training, rng)
        for li in range(self.config.n_layers):
            pre = f"layer{li}."
            a = dropout(self._attention_block(z, pre, attn_log), p, training, rng)
            z = self._ln(z + a, pre + "ln1")
            f = self._lin(relu(self._lin(z, pre + "ff1")), pre + "ff2")
            z = self._ln(z + dropout(f, p, training, rng), pre + "ln2")
        return LatentBatch(z.mean(axis=1), "real")

    def classify_head(self, z) -> Tensor:
        """``g(z)``: affine map from latents to class logits."""
        values = z.values if isinstance(z, LatentBatch) else z
        if values.ndim != 2 or values.shape[1] != self.config.d_model:
            raise DimensionError(
                f"head expects width {self.config.d_model}, got latent shape {values.shape}"
            )
        return self._lin(values, "head")

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return self.classify_head(self.encode(x, training, rng))

    __call__ = forward

    # -- parameter snapshots -------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise DataError(f"parameter names differ: {sorted(missing)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise DataError(f"parameter {k}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()


CONFIG_KEY = "__config__"


def save_checkpoint(model: TransformerClassifier, path) -> None:
    """Write parameters plus the JSON model config to an ``.npz`` file."""
    path = Path(path)
    header = json.dumps(asdict(model.config), sort_keys=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **{CONFIG_KEY: np.array(header)}, **model.state_dict())
    tmp.replace(path)


def load_checkpoint(path) -> TransformerClassifier:
    with np.load(path, allow_pickle=False) as npz:
        if CONFIG_KEY not in npz.files:
            raise DataError(f"{path}: missing model config header")
        config = ModelConfig(**json.loads(str(npz[CONFIG_KEY])))
        state = {k: npz[k] for k in npz.files if k != CONFIG_KEY}
    model = TransformerClassifier(config, seed=0)
    model.load_state_dict(state)
    return model
