"""Model families and federated training primitives.

Two model families, both with hand-derived gradients on top of numpy:
multinomial logistic regression and a one-hidden-layer tanh MLP. Training
follows the cooperative round shape: clients take one mini-batch pass over
their retained samples, the cluster satellite takes one pass over the pooled
offloaded samples, then models merge by data-weighted intra-cluster
aggregation and an unweighted global mean.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .cost import ModelFootprint


@dataclass(frozen=True)
class ModelLayout:
    kind: str  # "logistic" | "mlp"
    dims: tuple  # logistic: (in, classes); mlp: (in, hidden, classes)

    def __post_init__(self):
        if self.kind == "logistic":
            if len(self.dims) != 2:
                raise ValueError("logistic layout needs (in_dim, n_classes)")
        elif self.kind == "mlp":
            if len(self.dims) != 3:
                raise ValueError("mlp layout needs (in_dim, hidden, n_classes)")
        else:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if any(int(d) <= 0 for d in self.dims):
            raise ValueError("layout dimensions must be positive")

    @property
    def param_count(self) -> int:
        if self.kind == "logistic":
            d, c = self.dims
            return d * c + c
        d, h, c = self.dims
        return d * h + h + h * c + c

    @property
    def n_classes(self) -> int:
        return self.dims[-1]


@dataclass(frozen=True)
class ModelParams:
    values: np.ndarray  # flat float64 vector
    layout: ModelLayout
    footprint: ModelFootprint

    def __post_init__(self):
        if self.values.shape != (self.layout.param_count,):
            raise ValueError(
                f"parameter vector length {self.values.shape} does not match layout "
                f"({self.layout.param_count})"
            )


@dataclass(frozen=True)
class TrainConfig:
    eta0: float = 0.1
    lr_schedule: str = "inv"  # "inv": eta0/(1+r); "constant": eta0
    momentum: float = 0.9
    prox_mu: float = 0.0  # 0 disables the proximal pull entirely
    batch_size: int = 32
    sat_batch_size: int | None = None  # None: same as batch_size
    single_step: bool = False
    seed: int = 0

    def learning_rate(self, round_index: int) -> float:
        if self.lr_schedule == "constant":
            return self.eta0
        if self.lr_schedule == "inv":
            return self.eta0 / (1.0 + round_index)
        raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")


def init_model(layout: ModelLayout, seed: int = 0, sample_bits: int = 6272) -> ModelParams:
    """Small-uniform deterministic initialization."""
    rng = np.random.default_rng(seed)
    values = rng.uniform(-0.05, 0.05, size=layout.param_count)
    return ModelParams(
        values=values,
        layout=layout,
        footprint=ModelFootprint(layout.param_count, 32, sample_bits),
    )


def _views(values: np.ndarray, layout: ModelLayout):
    if layout.kind == "logistic":
        d, c = layout.dims
        w = values[: d * c].reshape(d, c)
        b = values[d * c:]
        return w, b
    d, h, c = layout.dims
    o = 0
    w1 = values[o:o + d * h].reshape(d, h); o += d * h
    b1 = values[o:o + h]; o += h
    w2 = values[o:o + h * c].reshape(h, c); o += h * c
    b2 = values[o:]
    return w1, b1, w2, b2


def _softmax_ce(logits: np.ndarray, y: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    logden = np.log(expz.sum(axis=1))
    loss = float(np.mean(logden - shifted[np.arange(len(y)), y]))
    return loss, probs


def loss_and_grad(values: np.ndarray, layout: ModelLayout, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its flat gradient."""
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if layout.kind == "logistic":
        w, b = _views(values, layout)
        logits = X @ w + b
        loss, probs = _softmax_ce(logits, y)
        dz = probs
        dz[np.arange(n), y] -= 1.0
        dz /= n
        grad = np.concatenate([(X.T @ dz).ravel(), dz.sum(axis=0)])
        return loss, grad
    w1, b1, w2, b2 = _views(values, layout)
    hidden = np.tanh(X @ w1 + b1)
    logits = hidden @ w2 + b2
    loss, probs = _softmax_ce(logits, y)
    dz = probs
    dz[np.arange(n), y] -= 1.0
    dz /= n
    dh = (dz @ w2.T) * (1.0 - hidden ** 2)
    grad = np.concatenate([
        (X.T @ dh).ravel(), dh.sum(axis=0), (hidden.T @ dz).ravel(), dz.sum(axis=0),
    ])
    return loss, grad


def model_loss(model: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
    loss, _ = loss_and_grad(model.values, model.layout, X, y)
    return loss


def predict(model: ModelParams, X: np.ndarray) -> np.ndarray:
    if model.layout.kind == "logistic":
        w, b = _views(model.values, model.layout)
        logits = X @ w + b
    else:
        w1, b1, w2, b2 = _views(model.values, model.layout)
        logits = np.tanh(X @ w1 + b1) @ w2 + b2
    return np.argmax(logits, axis=1)


def evaluate(model: ModelParams, test_set) -> tuple:
    """Top-1 accuracy and mean loss on a sample set."""
    if len(test_set) == 0:
        raise ValueError("empty test set")
    acc = float(np.mean(predict(model, test_set.features) == test_set.labels))
    loss = model_loss(model, test_set.features, test_set.labels)
    return acc, loss


def local_update(
    model: ModelParams,
    samples,
    config: TrainConfig,
    round_index: int,
    batch_size: int | None = None,
    stream=(0,),
) -> ModelParams:
    """One local update on a sample set.

    Default mode is one shuffled mini-batch pass with momentum (plus an
    optional proximal pull toward the round's starting point). single_step
    mode takes exactly one plain SGD step on one sampled mini-batch.
    """
    n = len(samples)
    if n == 0:
        raise ValueError("local update on empty sample set")
    bs = batch_size if batch_size is not None else config.batch_size
    bs = max(1, min(bs, n))
    eta = config.learning_rate(round_index)
    rng = np.random.default_rng([config.seed, round_index, *stream])
    order = rng.permutation(n)
    X = samples.features
    y = samples.labels
    anchor = model.values

    if config.single_step:
        batch = order[:bs]
        loss, g = loss_and_grad(model.values, model.layout, X[batch], y[batch])
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient in single-step update (loss={loss})"
            )
        if config.prox_mu > 0.0:
            g = g + config.prox_mu * (model.values - anchor)
        new_values = model.values - eta * g
        return ModelParams(new_values, model.layout, model.footprint)

    values = model.values.copy()
    velocity = np.zeros_like(values)
    for start in range(0, n, bs):
        batch = order[start:start + bs]
        loss, g = loss_and_grad(values, model.layout, X[batch], y[batch])
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient at batch offset {start} (loss={loss})"
            )
        if config.prox_mu > 0.0:
            g = g + config.prox_mu * (values - anchor)
        velocity = config.momentum * velocity + g
        values = values - eta * velocity
    return ModelParams(values, model.layout, model.footprint)


def intra_cluster_aggregate(sat_model, client_models, alphas, sizes) -> ModelParams:
    """Data-weighted merge of the satellite model with the cluster's clients.

    Satellite weight is the offloaded mass sum(alpha_k * |D_k|); client k
    weighs (1 - alpha_k) * |D_k|; the total normalizes to sum(|D_k|).
    """
    if len(client_models) != len(alphas) or len(client_models) != len(sizes):
        raise ValueError("client models, alphas and sizes must align")
    sat_weight = float(sum(a * s for a, s in zip(alphas, sizes)))
    denom = float(sum(sizes))
    if denom <= 0:
        raise ValueError("aggregate over zero data")
    ref = client_models[0] if client_models else sat_model
    acc = np.zeros_like(ref.values)
    if sat_weight > 0.0:
        if sat_model is None:
            raise ValueError("positive offload weight but no satellite model")
        acc += sat_weight * sat_model.values
    for m, a, s in zip(client_models, alphas, sizes):
        if m.layout != ref.layout:
            raise ValueError("mismatched layouts in aggregation")
        acc += (1.0 - a) * s * m.values
    return ModelParams(acc / denom, ref.layout, ref.footprint)


def global_aggregate(cluster_models) -> ModelParams:
    """Unweighted mean over cluster models."""
    if not cluster_models:
        raise ValueError("no cluster models to aggregate")
    ref = cluster_models[0]
    acc = np.zeros_like(ref.values)
    for m in cluster_models:
        if m.layout != ref.layout:
            raise ValueError("mismatched layouts in aggregation")
        acc += m.values
    return ModelParams(acc / len(cluster_models), ref.layout, ref.footprint)


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"OFCK"
_KIND_CODE = {"logistic": 1, "mlp": 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def save_checkpoint(path, model: ModelParams) -> None:
    """Binary model dump: magic, layout descriptor, little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BB", _KIND_CODE[model.layout.kind], len(model.layout.dims)))
        for d in model.layout.dims:
            fh.write(struct.pack("<I", int(d)))
        fh.write(struct.pack("<HI", model.footprint.bits_per_param, model.footprint.sample_bits))
        fh.write(struct.pack("<Q", model.layout.param_count))
        fh.write(model.values.astype("<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        kind_code, ndims = struct.unpack("<BB", fh.read(2))
        if kind_code not in _CODE_KIND:
            raise ValueError(f"unknown model kind code {kind_code}")
        dims = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndims))
        bits_per_param, sample_bits = struct.unpack("<HI", fh.read(6))
        count = struct.unpack("<Q", fh.read(8))[0]
        layout = ModelLayout(_CODE_KIND[kind_code], dims)
        if count != layout.param_count:
            raise ValueError("checkpoint parameter count does not match layout")
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise ValueError("checkpoint truncated")
        values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return ModelParams(values, layout, ModelFootprint(count, bits_per_param, sample_bits))
