"""Model assembly, loss, SGD, augmentation, training and evaluation.

Three architectures share one layer protocol:

  ricnn  conic stack -> transition + DFT magnitude -> dense stack
  recnn  conic stack -> flatten -> dense stack
  cnn    raster conv stack -> flatten -> dense stack (baseline)

Backpropagation is hand-derived per layer (no autograd); every source of
randomness is a seeded generator, so runs are reproducible byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable

import numpy as np

from .conic import (
    Activation,
    ConicConvLayer,
    _col2im,
    _im2col,
    conic_backward,
    conic_forward,
    downsampled_extent,
)
from .geometry import InterpScheme
from .tensors import FormatError, load_tensor, make_rng, rot90, save_tensor, spawn_rngs
from .transition import (
    TransitionLayer,
    dft2_magnitude_with_cache,
    dft2_magnitude_vjp,
    transition_forward,
    transition_input_gradient,
)

ARCHITECTURES = ("ricnn", "recnn", "cnn")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ConvSpec:
    filters: int
    size: int
    downsample: int = 1
    subdivisions: int = 1
    activation: str = "relu"


@dataclass
class ModelConfig:
    arch: str = "ricnn"
    input_size: int = 50
    input_depth: int = 1
    classes: int = 50
    conic: list[ConvSpec] = field(default_factory=list)
    conv: list[ConvSpec] = field(default_factory=list)
    transition_filters: int = 20
    transition_subdivisions: int = 1
    fc: list[int] = field(default_factory=list)
    dropout: float = 0.0
    interp: str = "bilinear"
    precision: str = "f32"

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown arch {self.arch!r}, expected one of {ARCHITECTURES}")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be 'f32' or 'f64'")
        self.conic = [c if isinstance(c, ConvSpec) else ConvSpec(**c) for c in self.conic]
        self.conv = [c if isinstance(c, ConvSpec) else ConvSpec(**c) for c in self.conv]

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    @property
    def padded_input_size(self) -> int:
        return self.input_size + 1 - self.input_size % 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class TrainConfig:
    batch_size: int = 50
    learning_rate: float = 5e-3
    weight_decay: float = 5e-4
    steps: int = 3000
    eval_every: int = 250
    eval_size: int = 0  # 0 = evaluate on the full eval set
    augment_rotations: bool = True
    max_jitter: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.max_jitter < 0:
            raise ValueError("max jitter must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# layers


class ConicBlock:
    kind = "conic"

    def __init__(self, layer: ConicConvLayer):
        self.layer = layer

    def forward(self, x, train=False, rng=None):
        return conic_forward(x, self.layer, want_cache=True)

    def backward(self, grad, cache):
        gi, gf, gb = conic_backward(grad, cache)
        return gi, {"filters": gf, "biases": gb}

    def params(self):
        return {"filters": self.layer.filters, "biases": self.layer.biases}

    def set_param(self, name, value):
        setattr(self.layer, name, value)

    def decay(self):
        return {"filters": True, "biases": False}

    def out_extent(self, size: int) -> int:
        return downsampled_extent(size, self.layer.downsample)


class StandardConvBlock:
    """Plain raster convolution with the same padding/downsample semantics."""

    kind = "conv"

    def __init__(self, filters, biases, downsample=1, activation=Activation.RELU):
        self.filters = np.asarray(filters)
        self.biases = np.asarray(biases, dtype=self.filters.dtype)
        self.downsample = downsample
        self.activation = activation

    def forward(self, x, train=False, rng=None):
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        x = x.astype(self.filters.dtype, copy=False)
        K, h, _, d = self.filters.shape
        B, M = x.shape[0], x.shape[1]
        if x.shape[3] != d:
            raise ValueError(f"depth mismatch: input {x.shape[3]}, filters {d}")
        patches = _im2col(x, h)
        corr = patches @ self.filters.reshape(K, -1).T
        Mp = downsampled_extent(M, self.downsample)
        c, m = (M - 1) // 2, (Mp - 1) // 2
        ds = c + self.downsample * (np.arange(Mp) - m)
        pre = corr.reshape(B, M, M, K)[:, ds[:, None], ds[None, :], :] + self.biases
        out = self.activation.apply(pre)
        if squeeze:
            out = out[0]
        return out, (x, patches, pre, ds, M, squeeze)

    def backward(self, grad, cache):
        x, patches, pre, ds, M, squeeze = cache
        K, h, _, d = self.filters.shape
        grad = np.asarray(grad, dtype=self.filters.dtype)
        if squeeze:
            grad = grad[None]
        g = grad * self.activation.derivative(pre)
        gb = g.sum(axis=(0, 1, 2))
        B = x.shape[0]
        gcorr = np.zeros((B, M, M, K), dtype=self.filters.dtype)
        gcorr[:, ds[:, None], ds[None, :], :] = g
        gcorr = gcorr.reshape(B, M * M, K)
        gf = np.tensordot(gcorr, patches, axes=([0, 1], [0, 1])).reshape(self.filters.shape)
        gi = _col2im(gcorr @ self.filters.reshape(K, -1), M, h, d)
        if squeeze:
            gi = gi[0]
        return gi, {"filters": gf, "biases": gb}

    def params(self):
        return {"filters": self.filters, "biases": self.biases}

    def set_param(self, name, value):
        setattr(self, name, value)

    def decay(self):
        return {"filters": True, "biases": False}

    def out_extent(self, size: int) -> int:
        return downsampled_extent(size, self.downsample)


class TransitionDFTBlock:
    """Rotated-weight inner products, DFT magnitude, row-major flatten."""

    kind = "transition"

    def __init__(self, layer: TransitionLayer):
        self.layer = layer

    def forward(self, x, train=False, rng=None):
        z, tcache = transition_forward(x, self.layer, want_cache=True)
        mag, mcache = dft2_magnitude_with_cache(z)
        out = mag.reshape(*mag.shape[:-2], -1)  # C order: rotation index fastest
        return out, (tcache, mcache, mag.shape)

    def backward(self, grad, cache):
        tcache, mcache, shape = cache
        grad_mag = np.asarray(grad).reshape(shape)
        grad_z = dft2_magnitude_vjp(grad_mag.astype(np.float64), mcache)
        gi, gw = transition_input_gradient(grad_z.astype(self.layer.dtype), tcache)
        return gi, {"weights": gw}

    def params(self):
        return {"weights": self.layer.weights}

    def set_param(self, name, value):
        setattr(self.layer, name, value)

    def decay(self):
        return {"weights": True}


class FlattenBlock:
    kind = "flatten"

    def forward(self, x, train=False, rng=None):
        return x.reshape(*x.shape[:-3], -1), x.shape

    def backward(self, grad, cache):
        return grad.reshape(cache), {}

    def params(self):
        return {}

    def decay(self):
        return {}


class DenseBlock:
    kind = "dense"

    def __init__(self, weights, biases, activation=Activation.IDENTITY):
        self.weights = np.asarray(weights)
        self.biases = np.asarray(biases, dtype=self.weights.dtype)
        self.activation = activation

    def forward(self, x, train=False, rng=None):
        x = x.astype(self.weights.dtype, copy=False)
        pre = x @ self.weights.T + self.biases
        return self.activation.apply(pre), (x, pre)

    def backward(self, grad, cache):
        x, pre = cache
        g = np.asarray(grad, dtype=self.weights.dtype) * self.activation.derivative(pre)
        single = x.ndim == 1
        xb = x[None] if single else x
        gb2 = g[None] if single else g
        gw = gb2.T @ xb
        gbias = gb2.sum(axis=0)
        gi = gb2 @ self.weights
        return (gi[0] if single else gi), {"weights": gw, "biases": gbias}

    def params(self):
        return {"weights": self.weights, "biases": self.biases}

    def set_param(self, name, value):
        setattr(self, name, value)

    def decay(self):
        return {"weights": True, "biases": False}


class DropoutBlock:
    """Inverted dropout; identity outside training."""

    kind = "dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * mask, mask

    def backward(self, grad, cache):
        if cache is None:
            return grad, {}
        return grad * cache, {}

    def params(self):
        return {}

    def decay(self):
        return {}


# ---------------------------------------------------------------------------
# model


class Model:
    def __init__(self, config: ModelConfig, blocks: list):
        self.config = config
        self.blocks = blocks

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Deterministic logits for (M, M, d) or (B, M, M, d) input."""
        for block in self.blocks:
            x, _ = block.forward(x)
        return x

    def forward_train(self, x: np.ndarray, rng=None):
        caches = []
        for block in self.blocks:
            x, cache = block.forward(x, train=True, rng=rng)
            caches.append(cache)
        return x, caches

    def backward(self, grad: np.ndarray, caches: list):
        """Returns (grad_input, {(block_index, name): grad})."""
        grads = {}
        for i in range(len(self.blocks) - 1, -1, -1):
            grad, pgrads = self.blocks[i].backward(grad, caches[i])
            for name, g in pgrads.items():
                grads[(i, name)] = g
        return grad, grads

    def params(self) -> dict:
        return {(i, n): p for i, b in enumerate(self.blocks) for n, p in b.params().items()}

    def decay_flags(self) -> dict:
        return {(i, n): f for i, b in enumerate(self.blocks) for n, f in b.decay().items()}

    def set_params(self, params: dict) -> None:
        for (i, name), value in params.items():
            self.blocks[i].set_param(name, value)

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())


def _uniform_init(rng, shape, fan_in, dtype):
    scale = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


def build_model(config: ModelConfig, seed: int) -> Model:
    """Construct and initialize a model; filter/weight entries are uniform
    with scale 1/sqrt(fan-in), biases start at zero."""
    rng = make_rng(seed)
    dtype = config.dtype
    interp = InterpScheme(config.interp)
    blocks: list = []
    size = config.padded_input_size
    depth = config.input_depth

    specs = config.conic if config.arch in ("ricnn", "recnn") else config.conv
    if not specs:
        raise ValueError(f"arch {config.arch!r} needs a non-empty layer list")
    for li, spec in enumerate(specs):
        filters = _uniform_init(
            rng, (spec.filters, spec.size, spec.size, depth), spec.size**2 * depth, dtype
        )
        biases = np.zeros(spec.filters, dtype=dtype)
        act = Activation(spec.activation)
        if config.arch in ("ricnn", "recnn"):
            blocks.append(
                ConicBlock(
                    ConicConvLayer(
                        filters,
                        biases,
                        subdivisions=spec.subdivisions,
                        downsample=spec.downsample,
                        activation=act,
                        interp=interp,
                    )
                )
            )
        else:
            blocks.append(StandardConvBlock(filters, biases, spec.downsample, act))
        size = blocks[-1].out_extent(size)
        depth = spec.filters

    if config.arch == "ricnn":
        K = config.transition_filters
        weights = _uniform_init(rng, (K, size, size, depth), size * size * depth, dtype)
        blocks.append(
            TransitionDFTBlock(
                TransitionLayer(weights, config.transition_subdivisions, interp)
            )
        )
        width = K * 4 * config.transition_subdivisions
    else:
        blocks.append(FlattenBlock())
        width = size * size * depth

    for w in config.fc:
        blocks.append(
            DenseBlock(_uniform_init(rng, (w, width), width, dtype), np.zeros(w, dtype), Activation.RELU)
        )
        if config.dropout > 0:
            blocks.append(DropoutBlock(config.dropout))
        width = w
    blocks.append(
        DenseBlock(
            _uniform_init(rng, (config.classes, width), width, dtype),
            np.zeros(config.classes, dtype),
            Activation.IDENTITY,
        )
    )
    return Model(config, blocks)


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    return model.forward(x)


# ---------------------------------------------------------------------------
# loss / optimizer / augmentation


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, label: int) -> float:
    """-log softmax(logits)[label], stabilized by max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    return float(-log_softmax(logits)[..., label])


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """Mean loss over the batch plus the gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= logits.shape[-1]:
        raise ValueError("label out of range")
    ls = log_softmax(logits.astype(np.float64))
    B = logits.shape[0]
    loss = float(-ls[np.arange(B), labels].mean())
    grad = np.exp(ls)
    grad[np.arange(B), labels] -= 1.0
    return loss, (grad / B).astype(logits.dtype)


def sgd_step(params, grads, lr: float, weight_decay: float = 0.0, decay_flags=None):
    """p <- p - lr * (g + weight_decay * p); entries with decay flag False
    (biases) skip the decay term. Works on single arrays or name->array dicts.
    Raises on non-finite gradients instead of corrupting the parameters."""
    if isinstance(params, dict):
        out = {}
        for key, p in params.items():
            flag = True if decay_flags is None else decay_flags.get(key, True)
            out[key] = sgd_step(p, grads[key], lr, weight_decay if flag else 0.0)
        return out
    g = np.asarray(grads)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient; aborting the update step")
    return params - lr * (g + weight_decay * params)


def translate_image(x: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Shift content by (dx, dy) pixels; exposed borders are zero-filled."""
    out = np.zeros_like(x)
    H, W = x.shape[0], x.shape[1]
    xs_src = slice(max(0, -dx), min(H, H - dx))
    ys_src = slice(max(0, -dy), min(W, W - dy))
    xs_dst = slice(max(0, dx), min(H, H + dx))
    ys_dst = slice(max(0, dy), min(W, W + dy))
    out[xs_dst, ys_dst] = x[xs_src, ys_src]
    return out


def augment(x: np.ndarray, label: int, rng, config: TrainConfig):
    """Uniform quarter-turn rotation (if enabled) then integer jitter drawn
    uniformly from [-J, J]^2, zero-filled. The label never changes."""
    if config.augment_rotations:
        x = rot90(x, int(rng.integers(4)))
    if config.max_jitter > 0:
        dx, dy = rng.integers(-config.max_jitter, config.max_jitter + 1, size=2)
        x = translate_image(x, int(dx), int(dy))
    return x, label


# ---------------------------------------------------------------------------
# training / evaluation


@dataclass
class EvalResult:
    accuracy: float
    per_class_accuracy: np.ndarray
    mean_average_precision: float
    per_class_ap: np.ndarray


def _softmax(logits):
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """AP of one class: rank every example by score (descending, stable) and
    average the precision at each rank where a positive appears."""
    positives = np.asarray(positives, dtype=bool)
    if not positives.any():
        return float("nan")
    order = np.argsort(-np.asarray(scores), kind="stable")
    hits = positives[order].astype(np.float64)
    precision_at = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float((precision_at * hits).sum() / hits.sum())


def score_metrics(scores: np.ndarray, labels: np.ndarray, classes: int) -> EvalResult:
    """Accuracy / per-class accuracy / AP from an (N, classes) score matrix.
    Classes absent from the labels get NaN and are excluded from the mean AP."""
    labels = np.asarray(labels)
    pred = scores.argmax(axis=1)
    accuracy = float((pred == labels).mean())
    per_class_acc = np.full(classes, np.nan)
    per_class_ap = np.full(classes, np.nan)
    for c in range(classes):
        mask = labels == c
        if not mask.any():
            continue
        per_class_acc[c] = float((pred[mask] == c).mean())
        per_class_ap[c] = average_precision(scores[:, c], mask)
    mean_ap = float(np.nanmean(per_class_ap))
    return EvalResult(accuracy, per_class_acc, mean_ap, per_class_ap)


def evaluate(model: Model, images: np.ndarray, labels: np.ndarray, batch_size: int = 100) -> EvalResult:
    """Run the model over a labeled set and compute score_metrics."""
    if len(images) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    scores = np.concatenate(
        [_softmax(model.forward(images[i : i + batch_size])) for i in range(0, len(images), batch_size)]
    )
    return score_metrics(scores, np.asarray(labels), model.config.classes)


@dataclass
class TrainResult:
    metrics: list  # rows of (step, train loss, eval accuracy)
    best_accuracy: float
    best_step: int
    final_params: dict


def train(
    model: Model,
    train_images: np.ndarray,
    train_labels: np.ndarray,
    config: TrainConfig,
    eval_images: np.ndarray | None = None,
    eval_labels: np.ndarray | None = None,
) -> TrainResult:
    """Seeded SGD loop; logs (step, loss, eval accuracy) at the configured
    cadence. Evaluation falls back to the training set when no eval split
    is given. Aborts with a diagnostic on non-finite loss."""
    if len(train_images) == 0:
        raise ValueError("training set is empty")
    if eval_images is None:
        eval_images, eval_labels = train_images, train_labels
    batch_rng, aug_rng, drop_rng, eval_rng = spawn_rngs(config.seed, 4)

    if 0 < config.eval_size < len(eval_images):
        pick = eval_rng.choice(len(eval_images), size=config.eval_size, replace=False)
        eval_images, eval_labels = eval_images[pick], eval_labels[pick]

    n = len(train_images)
    metrics = []
    best_acc, best_step = -1.0, 0
    for step in range(1, config.steps + 1):
        idx = batch_rng.integers(0, n, size=config.batch_size)
        batch = np.stack(
            [augment(train_images[i], int(train_labels[i]), aug_rng, config)[0] for i in idx]
        )
        labels = train_labels[idx]

        logits, caches = model.forward_train(batch, rng=drop_rng)
        loss, grad_logits = cross_entropy_batch(logits, labels)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss} at step {step}")
        _, grads = model.backward(grad_logits, caches)
        model.set_params(
            sgd_step(model.params(), grads, config.learning_rate, config.weight_decay, model.decay_flags())
        )

        if step % config.eval_every == 0 or step == config.steps:
            acc = evaluate(model, eval_images, eval_labels).accuracy
            metrics.append((step, loss, acc))
            if acc > best_acc:
                best_acc, best_step = acc, step
    return TrainResult(metrics, best_acc, best_step, model.params())


def metrics_to_csv(metrics: Iterable) -> str:
    lines = ["step,loss,eval_acc"]
    for step, loss, acc in metrics:
        lines.append(f"{step},{loss:.10g},{acc:.10g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(directory, model: Model, extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for (i, name), p in sorted(model.params().items()):
        fname = f"{i:02d}_{model.blocks[i].kind}_{name}.rtns"
        save_tensor(directory / fname, p)
        entries.append({"block": i, "kind": model.blocks[i].kind, "name": name, "file": fname})
    manifest = {
        "format": "conicnet-checkpoint",
        "version": 1,
        "model_config": model.config.to_dict(),
        "params": entries,
        "extra": extra or {},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory) -> tuple[Model, dict]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise FormatError(f"{manifest_path}: missing checkpoint manifest")
    except json.JSONDecodeError as e:
        raise FormatError(f"{manifest_path}: invalid manifest ({e})")
    if manifest.get("format") != "conicnet-checkpoint":
        raise FormatError(f"{manifest_path}: not a checkpoint manifest")
    config = ModelConfig.from_dict(manifest["model_config"])
    model = build_model(config, seed=0)
    params = {}
    for entry in manifest["params"]:
        arr = load_tensor(directory / entry["file"])
        key = (entry["block"], entry["name"])
        expected = model.params()[key].shape
        if arr.shape != tuple(expected):
            raise FormatError(
                f"{directory / entry['file']}: shape {arr.shape} does not match model {tuple(expected)}"
            )
        params[key] = arr.astype(config.dtype)
    model.set_params(params)
    return model, manifest.get("extra", {})
