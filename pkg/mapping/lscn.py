"""
Link-state classification network.

Two fully connected stages on numpy, trained with softmax cross-entropy and
Adam. Stage 1 encodes the strongest path's (tau, theta, phi); stage 2 sees the
remaining 3(K-1) features concatenated with the stage-1 code and ends in a
3-unit linear layer followed by softmax over (LOS, first-order, higher-order).

Gradients are written out by hand; ``gradient_check`` compares them with
central finite differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from channel.estimation import FeatureScaler, LinkState, Snapshot
from common.errors import EmptyDataset, ShapeMismatch
from common.seeding import STREAM_INIT, STREAM_SHUFFLE, STREAM_SPLIT, derive_seed
from common.telemetry import TelemetryLogger, start_run
from common.tracing import stage_span

logger = logging.getLogger(__name__)

N_CLASSES = 3
TRIPLET = 3
LOG_CLAMP = 1e-12

Gradients = List[Tuple[np.ndarray, np.ndarray]]


class Architecture(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    stage1: List[int] = Field(default_factory=lambda: [10])
    stage2: List[int] = Field(default_factory=lambda: [50, 100])


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(default=1e-3, ge=0)
    batch_size: int = Field(default=256, ge=1)
    epochs: int = Field(default=60, ge=1)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    rng_seed: int = 0


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    @property
    def fan_in(self) -> int:
        return int(self.weights.shape[0])

    @property
    def width(self) -> int:
        return int(self.weights.shape[1])


@dataclass
class LscnModel:
    stage1: List[DenseLayer]
    stage2: List[DenseLayer]
    K: int
    scaler: Optional[FeatureScaler] = None

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ShapeMismatch(f"K must be >= 1, got {self.K}")
        expect = TRIPLET
        for layer in self.stage1:
            if layer.fan_in != expect:
                raise ShapeMismatch(f"stage1 layer expects {layer.fan_in} inputs, chain provides {expect}")
            expect = layer.width
        expect += TRIPLET * (self.K - 1)
        if not self.stage2:
            raise ShapeMismatch("stage2 needs at least the output layer")
        for layer in self.stage2:
            if layer.fan_in != expect:
                raise ShapeMismatch(f"stage2 layer expects {layer.fan_in} inputs, chain provides {expect}")
            expect = layer.width
        if expect != N_CLASSES:
            raise ShapeMismatch(f"output width must be {N_CLASSES}, got {expect}")
        if self.scaler is not None and self.scaler.width != self.input_width:
            raise ShapeMismatch(f"scaler width {self.scaler.width} != input width {self.input_width}")

    @property
    def input_width(self) -> int:
        return TRIPLET * self.K

    @property
    def layers(self) -> List[DenseLayer]:
        return [*self.stage1, *self.stage2]

    @property
    def architecture(self) -> Architecture:
        return Architecture(
            stage1=[l.width for l in self.stage1],
            stage2=[l.width for l in self.stage2[:-1]],
        )

    def copy(self) -> "LscnModel":
        def dup(layers: Sequence[DenseLayer]) -> List[DenseLayer]:
            return [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in layers]

        return LscnModel(dup(self.stage1), dup(self.stage2), self.K, self.scaler)


def init_model(K: int, architecture: Architecture, seed: int, scaler: Optional[FeatureScaler] = None) -> LscnModel:
    """He-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)

    def build(fan_in: int, widths: Sequence[int], last_linear: bool) -> Tuple[List[DenseLayer], int]:
        layers = []
        for i, width in enumerate(widths):
            limit = math.sqrt(6.0 / fan_in)
            act = "linear" if last_linear and i == len(widths) - 1 else "relu"
            layers.append(
                DenseLayer(rng.uniform(-limit, limit, (fan_in, width)), np.zeros(width), act)
            )
            fan_in = width
        return layers, fan_in

    stage1, code_width = build(TRIPLET, architecture.stage1, last_linear=False)
    stage2, _ = build(code_width + TRIPLET * (K - 1), [*architecture.stage2, N_CLASSES], last_linear=True)
    return LscnModel(stage1, stage2, K, scaler)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _as_batch(model: LscnModel, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_width:
        raise ShapeMismatch(f"expected {model.input_width} features for K={model.K}, got shape {x.shape}")
    return x


@dataclass
class _Trace:
    """Per-layer inputs and pre-activations of one forward pass."""

    inputs: List[np.ndarray] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)
    probs: Optional[np.ndarray] = None


def _apply(layer: DenseLayer, a: np.ndarray, trace: _Trace) -> np.ndarray:
    z = a @ layer.weights + layer.bias
    trace.inputs.append(a)
    trace.pre.append(z)
    return np.maximum(z, 0.0) if layer.activation == "relu" else z


def _forward_trace(model: LscnModel, x: np.ndarray) -> _Trace:
    trace = _Trace()
    h = x[:, :TRIPLET]
    for layer in model.stage1:
        h = _apply(layer, h, trace)
    a = np.concatenate([x[:, TRIPLET:], h], axis=1)
    for layer in model.stage2:
        a = _apply(layer, a, trace)
    trace.probs = softmax(a)
    return trace


def forward(model: LscnModel, features: np.ndarray) -> np.ndarray:
    """Class probabilities for already-scaled features, shape (3,) or (n, 3)."""
    single = np.asarray(features).ndim == 1
    probs = _forward_trace(model, _as_batch(model, features)).probs
    return probs[0] if single else probs


def _label_index(label) -> int:
    arr = np.asarray(label)
    if arr.ndim == 0:
        return int(arr)
    return int(np.argmax(arr))


def loss(probs: np.ndarray, label) -> float:
    """Cross-entropy of one prediction; ``label`` is one-hot or a class index."""
    p = np.asarray(probs, dtype=np.float64)
    return float(-math.log(max(float(p[_label_index(label)]), LOG_CLAMP)))


def batch_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.asarray(probs, dtype=np.float64)
    idx = np.asarray(labels, dtype=np.int64)
    picked = np.maximum(p[np.arange(len(idx)), idx], LOG_CLAMP)
    return float(-np.mean(np.log(picked)))


def _one_hot(labels: np.ndarray) -> np.ndarray:
    y = np.zeros((len(labels), N_CLASSES), dtype=np.float64)
    y[np.arange(len(labels)), labels] = 1.0
    return y


def _labels_array(label, n: int) -> np.ndarray:
    arr = np.asarray(label)
    if arr.ndim == 0:
        return np.full(n, int(arr), dtype=np.int64)
    if arr.ndim == 1 and n == 1 and arr.shape[0] == N_CLASSES:
        return np.array([int(np.argmax(arr))], dtype=np.int64)
    if arr.ndim == 2:
        return np.argmax(arr, axis=1).astype(np.int64)
    return arr.astype(np.int64)


def backward(model: LscnModel, features: np.ndarray, label) -> Gradients:
    """Gradients of the mean cross-entropy w.r.t. every (weights, bias),
    ordered stage 1 then stage 2."""
    x = _as_batch(model, features)
    labels = _labels_array(label, x.shape[0])
    trace = _forward_trace(model, x)
    n = x.shape[0]

    layers = model.layers
    n1 = len(model.stage1)
    grads: Gradients = [None] * len(layers)  # type: ignore[list-item]
    dz = (trace.probs - _one_hot(labels)) / n
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        grads[i] = (trace.inputs[i].T @ dz, dz.sum(axis=0))
        if i == 0:
            break
        da = dz @ layer.weights.T
        if i == n1:
            # First stage-2 layer: only the trailing stage-1 code flows back.
            if n1 == 0:
                break
            da = da[:, TRIPLET * (model.K - 1):]
        dz = da * (trace.pre[i - 1] > 0.0)
    return grads


def numerical_gradients(model: LscnModel, features: np.ndarray, label, h: float = 1e-5) -> Gradients:
    x = _as_batch(model, features)
    labels = _labels_array(label, x.shape[0])

    def objective() -> float:
        return batch_loss(_forward_trace(model, x).probs, labels)

    out: Gradients = []
    for layer in model.layers:
        pair = []
        for param in (layer.weights, layer.bias):
            g = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                orig = param[idx]
                param[idx] = orig + h
                up = objective()
                param[idx] = orig - h
                down = objective()
                param[idx] = orig
                g[idx] = (up - down) / (2.0 * h)
            pair.append(g)
        out.append((pair[0], pair[1]))
    return out


def gradient_check(model: LscnModel, features: np.ndarray, label, h: float = 1e-5) -> float:
    """Max relative error |a - n| / max(|a|, |n|, 1e-6) over all parameters."""
    analytic = backward(model, features, label)
    numeric = numerical_gradients(model, features, label, h)
    worst = 0.0
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        for a, b in ((aw, nw), (ab, nb)):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
            worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


class Adam:
    def __init__(self, model: LscnModel, cfg: TrainConfig) -> None:
        self.cfg = cfg
        self.t = 0
        self.m = [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in model.layers]
        self.v = [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in model.layers]

    def step(self, model: LscnModel, grads: Gradients) -> None:
        cfg = self.cfg
        self.t += 1
        c1 = 1.0 - cfg.beta1 ** self.t
        c2 = 1.0 - cfg.beta2 ** self.t
        for layer, g, m, v in zip(model.layers, grads, self.m, self.v):
            for param, grad, mom, vel in zip((layer.weights, layer.bias), g, m, v):
                mom *= cfg.beta1
                mom += (1.0 - cfg.beta1) * grad
                vel *= cfg.beta2
                vel += (1.0 - cfg.beta2) * grad * grad
                param -= cfg.learning_rate * (mom / c1) / (np.sqrt(vel / c2) + cfg.eps)


@dataclass
class LscnDataset:
    """Raw (unscaled) features, shape (n, 3K), and integer labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[1] % TRIPLET != 0:
            raise ShapeMismatch(f"features must be (n, 3K), got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeMismatch(f"{self.features.shape[0]} rows but {self.labels.shape[0]} labels")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def K(self) -> int:
        return int(self.features.shape[1] // TRIPLET)

    @classmethod
    def empty(cls, K: int) -> "LscnDataset":
        return cls(np.zeros((0, TRIPLET * K)), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_snapshots(cls, snapshots: Sequence[Snapshot]) -> "LscnDataset":
        if not snapshots:
            raise EmptyDataset("no snapshots")
        return cls(
            np.stack([s.features() for s in snapshots]),
            np.array([int(s.true_link_state) for s in snapshots], dtype=np.int64),
        )

    def truncated(self, K: int) -> "LscnDataset":
        if not 1 <= K <= self.K:
            raise ShapeMismatch(f"cannot truncate K={self.K} dataset to K={K}")
        return LscnDataset(self.features[:, : TRIPLET * K].copy(), self.labels.copy())

    def subset(self, idx: np.ndarray) -> "LscnDataset":
        return LscnDataset(self.features[idx], self.labels[idx])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=N_CLASSES)


def stratified_split(dataset: LscnDataset, seed: int) -> Tuple[LscnDataset, LscnDataset]:
    """Two thirds train, one third validation, per class."""
    rng = np.random.default_rng(derive_seed(seed, STREAM_SPLIT))
    train_idx, val_idx = [], []
    for c in range(N_CLASSES):
        idx = np.flatnonzero(dataset.labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_val = len(idx) // 3
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return dataset.subset(np.sort(np.concatenate(train_idx))), dataset.subset(np.sort(np.concatenate(val_idx)))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    recall_los: float
    recall_first_order: float
    recall_higher_order: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SweepRow:
    K: int
    train_acc: float
    val_acc: float
    recall_los: float
    recall_first_order: float
    recall_higher_order: float

    def to_dict(self) -> dict:
        return asdict(self)


def predict_labels(model: LscnModel, raw_features: np.ndarray) -> np.ndarray:
    """Argmax over classes for raw features; ties go to the lower index."""
    x = np.atleast_2d(np.asarray(raw_features, dtype=np.float64))
    if model.scaler is not None:
        x = model.scaler.transform(x)
    return np.argmax(forward(model, x), axis=1)


def _evaluate(model: LscnModel, data: LscnDataset) -> Tuple[float, float, np.ndarray]:
    nan = float("nan")
    if len(data) == 0:
        return nan, nan, np.full(N_CLASSES, nan)
    x = model.scaler.transform(data.features) if model.scaler is not None else data.features
    probs = forward(model, x)
    pred = np.argmax(probs, axis=1)
    recall = np.full(N_CLASSES, nan)
    for c in range(N_CLASSES):
        mask = data.labels == c
        if mask.any():
            recall[c] = float(np.mean(pred[mask] == c))
    return batch_loss(probs, data.labels), float(np.mean(pred == data.labels)), recall


def train(
    dataset: LscnDataset,
    cfg: TrainConfig,
    architecture: Architecture = Architecture(),
    validation: Optional[LscnDataset] = None,
    telemetry: Optional[TelemetryLogger] = None,
) -> Tuple[LscnModel, List[EpochRecord]]:
    if len(dataset) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if validation is None:
        train_set, val_set = stratified_split(dataset, cfg.rng_seed)
    else:
        if validation.K != dataset.K:
            raise ShapeMismatch(f"validation K={validation.K} != training K={dataset.K}")
        train_set, val_set = dataset, validation
    if len(train_set) == 0:
        raise EmptyDataset("stratified split left no training rows")

    events = start_run(telemetry)
    attrs = {"lscn.K": dataset.K, "lscn.train_rows": len(train_set), "lscn.val_rows": len(val_set)}
    with stage_span("lscn.train", **attrs) as span:
        scaler = FeatureScaler.fit(train_set.features)
        model = init_model(dataset.K, architecture, derive_seed(cfg.rng_seed, STREAM_INIT), scaler)
        x_train = scaler.transform(train_set.features)
        y_train = train_set.labels
        optimizer = Adam(model, cfg)
        shuffle = np.random.default_rng(derive_seed(cfg.rng_seed, STREAM_SHUFFLE))

        history: List[EpochRecord] = []
        for epoch in range(cfg.epochs):
            order = shuffle.permutation(len(train_set))
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                optimizer.step(model, backward(model, x_train[batch], y_train[batch]))

            train_loss, train_acc, _ = _evaluate(model, train_set)
            val_loss, val_acc, recall = _evaluate(model, val_set)
            record = EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc, *map(float, recall))
            history.append(record)
            if events:
                message = f"epoch {epoch}: train_acc={train_acc:.4f} val_acc={val_acc:.4f}"
                events.event("epoch", message, step=epoch, **record.to_dict())
            logger.debug("epoch %d train_loss=%.5f val_loss=%.5f", epoch, train_loss, val_loss)

        if history:
            span.set_attribute("lscn.final_val_acc", history[-1].val_acc)
    return model, history


def predict_state(model: LscnModel, snapshot: Snapshot) -> LinkState:
    if snapshot.K != model.K:
        raise ShapeMismatch(f"snapshot has K={snapshot.K}, model expects K={model.K}")
    flags = [e.padded for e in snapshot.estimates]
    if any(a and not b for a, b in zip(flags, flags[1:])):
        raise ValueError("padding rows must trail the estimated paths")
    real = [e for e in snapshot.estimates if not e.padded]
    snrs = [e.snr_db for e in real]
    if any(a < b for a, b in zip(snrs, snrs[1:])):
        raise ValueError("snapshot paths are not sorted by descending SNR")
    return LinkState(int(predict_labels(model, snapshot.features())[0]))


def k_sweep(
    dataset: LscnDataset,
    K_values: Sequence[int],
    cfg: TrainConfig,
    architecture: Architecture = Architecture(),
    validation: Optional[LscnDataset] = None,
    telemetry: Optional[TelemetryLogger] = None,
) -> List[SweepRow]:
    """Train one model per K on the same snapshots truncated to 3K columns."""
    rows: List[SweepRow] = []
    with stage_span("lscn.k_sweep", **{"lscn.k_values": [int(k) for k in K_values]}):
        for K in K_values:
            val = validation.truncated(K) if validation is not None else None
            _, history = train(dataset.truncated(K), cfg, architecture, val, telemetry)
            last = history[-1]
            rows.append(
                SweepRow(K, last.train_acc, last.val_acc, last.recall_los, last.recall_first_order, last.recall_higher_order)
            )
            logger.info("k_sweep K=%d train_acc=%.4f val_acc=%.4f", K, last.train_acc, last.val_acc)
    return rows
