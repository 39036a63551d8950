"""CNN layer graph: construction, forward/backward, training, weight files.

A model is an ordered list of LayerSpec plus a flat name -> ndarray
parameter store ("conv1.W", "conv1.b", ...). The forward pass can retain
every layer's output in an ActivationCache, which both backprop and the
saliency methods consume. Backward passes are hand-written per layer kind;
there is no autodiff graph.

ReLU is fused into conv/dense layers via their activation field (the cached
output is post-activation), so the canonical image classifier is exactly 13
named layers: conv1 pool1 conv2 pool2 conv3 pool3 flatten fc1 drop1 fc2
drop2 logits softmax.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, LeafscopeError
from .metrics import MetricsReport, confusion_from_pairs, derive_metrics
from .ops import (AdamState, adam_update, conv2d_backward, conv2d_forward,
                  dense_backward, dense_forward, dropout, maxpool2_backward,
                  maxpool2_forward, relu, scce_loss_and_grad, softmax)

LSW1_MAGIC = b"LSW1"
LSW1_VERSION = 1

_LAYER_KINDS = ("conv", "pool", "relu", "flatten", "dense", "dropout", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    """One layer: a kind, a unique name, and its hyperparameters."""

    name: str
    kind: str
    filters: int = 0            # conv
    kernel: int = 3             # conv
    stride: int = 1             # conv
    padding: str = "same"       # conv
    units: int = 0              # dense
    rate: float = 0.0           # dropout
    activation: str | None = None   # conv/dense: None or "relu"

    def __post_init__(self):
        if self.kind not in _LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in (None, "relu"):
            raise ValueError(f"unsupported activation {self.activation!r}")

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "filters": self.filters,
                "kernel": self.kernel, "stride": self.stride,
                "padding": self.padding, "units": self.units,
                "rate": self.rate, "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        try:
            return cls(**{k: d[k] for k in
                          ("name", "kind", "filters", "kernel", "stride",
                           "padding", "units", "rate", "activation")})
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad layer record {d!r}: {exc}") from exc


@dataclass
class ModelGraph:
    """Ordered layers plus the parameter store and per-parameter Adam state."""

    layers: list
    params: dict
    adam: dict = field(default_factory=dict)
    input_shape: tuple | None = None

    def __post_init__(self):
        names = [sp.name for sp in self.layers]
        if len(names) != len(set(names)):
            raise ValueError("layer names must be unique")

    def layer(self, name: str) -> LayerSpec:
        for sp in self.layers:
            if sp.name == name:
                return sp
        raise KeyError(name)

    def param_names(self) -> list:
        """Parameter names in layer order, kernel before bias."""
        out = []
        for sp in self.layers:
            if sp.kind in ("conv", "dense"):
                out.extend([f"{sp.name}.W", f"{sp.name}.b"])
        return out

    def ensure_adam(self) -> None:
        for name in self.param_names():
            if name not in self.adam:
                self.adam[name] = AdamState.zeros_like(self.params[name])


@dataclass
class ActivationCache:
    """Every layer's output from one forward pass, plus backward bookkeeping."""

    input: np.ndarray
    outputs: dict
    switches: dict      # pool layer name -> argmax indices
    masks: dict         # dropout layer name -> scaled keep mask

    def __getitem__(self, layer_name: str) -> np.ndarray:
        return self.outputs[layer_name]

    def __contains__(self, layer_name: str) -> bool:
        return layer_name in self.outputs


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 60
    batch_size: int = 32
    seed: int = 42

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = -1.0
    best_params: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.train_loss)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def build_cnn(input_shape: tuple = (3, 128, 128), conv_filters: tuple = (32, 128, 64),
              dense_units: tuple = (1024, 512), num_classes: int = 21,
              dropout_rate: float = 0.5, kernel: int = 3, seed: int = 42) -> ModelGraph:
    """Stack of conv+relu+pool blocks, dense+relu+dropout blocks, logits, softmax.

    Weights start He-uniform (limit sqrt(6/fan_in)) from a seeded generator,
    biases zero; spatial dims must stay even ahead of every pool.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    c, h, w = input_shape
    rng = np.random.default_rng(seed)
    layers, params = [], {}

    def he_uniform(shape, fan_in):
        limit = np.sqrt(6.0 / fan_in)
        return rng.uniform(-limit, limit, size=shape).astype(np.float32)

    for i, f in enumerate(conv_filters, start=1):
        name = f"conv{i}"
        layers.append(LayerSpec(name=name, kind="conv", filters=f, kernel=kernel,
                                stride=1, padding="same", activation="relu"))
        params[f"{name}.W"] = he_uniform((f, c, kernel, kernel), c * kernel * kernel)
        params[f"{name}.b"] = np.zeros(f, dtype=np.float32)
        c = f
        if h % 2 or w % 2:
            raise DimensionError(f"spatial size {h}x{w} not even before pool{i}")
        layers.append(LayerSpec(name=f"pool{i}", kind="pool"))
        h, w = h // 2, w // 2

    layers.append(LayerSpec(name="flatten", kind="flatten"))
    feat = c * h * w
    for i, u in enumerate(dense_units, start=1):
        name = f"fc{i}"
        layers.append(LayerSpec(name=name, kind="dense", units=u, activation="relu"))
        params[f"{name}.W"] = he_uniform((u, feat), feat)
        params[f"{name}.b"] = np.zeros(u, dtype=np.float32)
        feat = u
        layers.append(LayerSpec(name=f"drop{i}", kind="dropout", rate=dropout_rate))

    layers.append(LayerSpec(name="logits", kind="dense", units=num_classes))
    params["logits.W"] = he_uniform((num_classes, feat), feat)
    params["logits.b"] = np.zeros(num_classes, dtype=np.float32)
    layers.append(LayerSpec(name="softmax", kind="softmax"))
    return ModelGraph(layers=layers, params=params, input_shape=tuple(input_shape))


def build_paper_cnn(num_classes: int = 21, seed: int = 42) -> ModelGraph:
    """The stock 21-class architecture: conv 32/128/64, dense 1024/512."""
    return build_cnn(input_shape=(3, 128, 128), conv_filters=(32, 128, 64),
                     dense_units=(1024, 512), num_classes=num_classes,
                     dropout_rate=0.5, kernel=3, seed=seed)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _run_forward(g: ModelGraph, batch: np.ndarray, training: bool, rng,
                 keep_outputs: bool):
    if batch.ndim != 4:
        raise DimensionError(f"expected (B,C,H,W) batch, got shape {batch.shape}")
    if g.input_shape is not None and tuple(batch.shape[1:]) != tuple(g.input_shape):
        raise DimensionError(
            f"batch shape {batch.shape[1:]} does not match model input {g.input_shape}")
    if training and rng is None:
        if any(sp.kind == "dropout" and sp.rate > 0 for sp in g.layers):
            raise ValueError("training forward with active dropout needs an rng")
    outputs: dict = {}
    switches: dict = {}
    masks: dict = {}
    cur = batch
    for sp in g.layers:
        if sp.kind == "conv":
            cur = conv2d_forward(cur, g.params[f"{sp.name}.W"], g.params[f"{sp.name}.b"],
                                 sp.stride, sp.padding)
            if sp.activation == "relu":
                cur = relu(cur)
        elif sp.kind == "pool":
            cur, sw = maxpool2_forward(cur)
            switches[sp.name] = sw
        elif sp.kind == "relu":
            cur = relu(cur)
        elif sp.kind == "flatten":
            cur = cur.reshape(cur.shape[0], -1)
        elif sp.kind == "dense":
            cur = dense_forward(cur, g.params[f"{sp.name}.W"], g.params[f"{sp.name}.b"])
            if sp.activation == "relu":
                cur = relu(cur)
        elif sp.kind == "dropout":
            cur, mask = dropout(cur, sp.rate, rng, training)
            masks[sp.name] = mask
        elif sp.kind == "softmax":
            cur = softmax(cur)
        if keep_outputs:
            outputs[sp.name] = cur
    return cur, outputs, switches, masks


def forward_with_cache(g: ModelGraph, batch: np.ndarray, training: bool = False,
                       rng=None) -> tuple:
    """Forward pass retaining every layer output. Returns (probs, cache)."""
    probs, outputs, switches, masks = _run_forward(g, batch, training, rng, True)
    return probs, ActivationCache(input=batch, outputs=outputs,
                                  switches=switches, masks=masks)


def forward_logits(g: ModelGraph, batch: np.ndarray) -> np.ndarray:
    """Inference-only pass returning pre-softmax scores (B,K), nothing retained."""
    cur = batch
    last = cur
    for sp in g.layers:
        if sp.kind == "softmax":
            continue
        if sp.kind == "conv":
            cur = conv2d_forward(cur, g.params[f"{sp.name}.W"], g.params[f"{sp.name}.b"],
                                 sp.stride, sp.padding)
            if sp.activation == "relu":
                cur = relu(cur)
        elif sp.kind == "pool":
            cur, _ = maxpool2_forward(cur)
        elif sp.kind == "relu":
            cur = relu(cur)
        elif sp.kind == "flatten":
            cur = cur.reshape(cur.shape[0], -1)
        elif sp.kind == "dense":
            cur = dense_forward(cur, g.params[f"{sp.name}.W"], g.params[f"{sp.name}.b"])
            if sp.activation == "relu":
                cur = relu(cur)
        elif sp.kind == "dropout":
            cur, _ = dropout(cur, sp.rate, None, False)
        last = cur
    return last


def backward_pass(g: ModelGraph, cache: ActivationCache, d_logits: np.ndarray,
                  wrt_layer: str | None = None) -> tuple:
    """Backpropagate from the pre-softmax scores.

    d_logits is the gradient w.r.t. the output of the last non-softmax layer
    (for training, the scce gradient; for saliency, a one-hot class
    selector). Returns (param_grads, d_activation) where d_activation is the
    gradient w.r.t. cache[wrt_layer] if requested (stopping there), else
    w.r.t. the model input. Parameter gradients accumulate sums over the
    batch; divide d_logits by B beforehand for means.
    """
    last = len(g.layers) - 1
    while last >= 0 and g.layers[last].kind == "softmax":
        last -= 1
    if last < 0:
        raise LeafscopeError("model has no differentiable layers")

    grads: dict = {}
    d = d_logits
    for i in range(last, -1, -1):
        sp = g.layers[i]
        if wrt_layer is not None and sp.name == wrt_layer:
            return grads, d
        out = cache.outputs[sp.name]
        x_in = cache.input if i == 0 else cache.outputs[g.layers[i - 1].name]
        if d.shape != out.shape:
            raise DimensionError(
                f"gradient shape {d.shape} vs {sp.name} output {out.shape}")
        if sp.kind == "conv":
            if sp.activation == "relu":
                d = d * (out > 0)
            d, dw, db = conv2d_backward(d, x_in, g.params[f"{sp.name}.W"],
                                        sp.stride, sp.padding)
            grads[f"{sp.name}.W"] = dw
            grads[f"{sp.name}.b"] = db
        elif sp.kind == "pool":
            d = maxpool2_backward(d, cache.switches[sp.name], x_in.shape)
        elif sp.kind == "relu":
            d = d * (out > 0)
        elif sp.kind == "flatten":
            d = d.reshape(x_in.shape)
        elif sp.kind == "dense":
            if sp.activation == "relu":
                d = d * (out > 0)
            d, dw, db = dense_backward(d, x_in, g.params[f"{sp.name}.W"])
            grads[f"{sp.name}.W"] = dw
            grads[f"{sp.name}.b"] = db
        elif sp.kind == "dropout":
            d = d * cache.masks[sp.name]
        else:
            raise LeafscopeError(f"cannot backpropagate through {sp.kind!r}")
    if wrt_layer is not None:
        raise KeyError(f"layer {wrt_layer!r} not found in the graph")
    return grads, d


# ---------------------------------------------------------------------------
# training / evaluation
# ---------------------------------------------------------------------------

def train_step(g: ModelGraph, batch: np.ndarray, labels, cfg: TrainConfig,
               rng=None) -> float:
    """One Adam step on a batch; returns the mean scce loss. Mutates g."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    labels = np.asarray(labels, dtype=np.int64)
    _, cache = forward_with_cache(g, batch, training=True, rng=rng)
    logits = cache.outputs["logits"]
    losses, d_logits = scce_loss_and_grad(logits, labels)
    b = batch.shape[0]
    grads, _ = backward_pass(g, cache, d_logits / b)
    g.ensure_adam()
    for name in g.param_names():
        g.params[name], g.adam[name] = adam_update(
            g.params[name], grads[name], g.adam[name], lr=cfg.learning_rate)
    return float(losses.mean())


def _eval_pass(g: ModelGraph, images: np.ndarray, labels: np.ndarray,
               batch_size: int) -> tuple:
    """Inference loss/accuracy over a full array set, batched."""
    n = images.shape[0]
    loss_sum = 0.0
    correct = 0
    for s in range(0, n, batch_size):
        xb = images[s:s + batch_size]
        yb = labels[s:s + batch_size]
        logits = forward_logits(g, xb)
        losses, _ = scce_loss_and_grad(logits, yb)
        loss_sum += float(losses.sum())
        correct += int((logits.argmax(axis=1) == yb).sum())
    return loss_sum / n, correct / n


def predict(g: ModelGraph, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Class probabilities (N,K), inference mode."""
    rows = []
    for s in range(0, images.shape[0], batch_size):
        rows.append(softmax(forward_logits(g, images[s:s + batch_size])))
    if not rows:
        raise ValueError("predict needs at least one image")
    return np.concatenate(rows, axis=0)


def fit(g: ModelGraph, train_data: tuple, val_data: tuple, cfg: TrainConfig,
        verbose: bool = False) -> History:
    """Train for cfg.epochs with per-epoch reshuffles; track the best val epoch.

    train_data/val_data are (images, labels) arrays. Per epoch the history
    records the mean step loss, end-of-epoch inference accuracy on the
    training set, and inference loss/accuracy on the validation set.
    History.best_params snapshots the weights from the highest-val-accuracy
    epoch (earliest wins ties); g itself keeps the final-epoch weights.
    """
    train_x, train_y = train_data
    val_x, val_y = val_data
    train_y = np.asarray(train_y, dtype=np.int64)
    val_y = np.asarray(val_y, dtype=np.int64)
    n = train_x.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    if val_x.shape[0] == 0:
        raise ValueError("validation set is empty")

    hist = History()
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        step_losses = []
        for step, s in enumerate(range(0, n, cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            rng = np.random.default_rng([cfg.seed, epoch, step])
            step_losses.append(train_step(g, train_x[idx], train_y[idx], cfg, rng))
        train_loss = float(np.mean(step_losses))
        _, train_acc = _eval_pass(g, train_x, train_y, cfg.batch_size)
        val_loss, val_acc = _eval_pass(g, val_x, val_y, cfg.batch_size)
        hist.train_loss.append(train_loss)
        hist.train_acc.append(train_acc)
        hist.val_loss.append(val_loss)
        hist.val_acc.append(val_acc)
        if val_acc > hist.best_val_acc:
            hist.best_val_acc = val_acc
            hist.best_epoch = epoch
            hist.best_params = {k: v.copy() for k, v in g.params.items()}
        if verbose:
            print(f"epoch {epoch + 1}/{cfg.epochs} "
                  f"loss {train_loss:.4f} acc {train_acc:.4f} "
                  f"val_loss {val_loss:.4f} val_acc {val_acc:.4f}", flush=True)
    return hist


def evaluate(g: ModelGraph, images: np.ndarray, labels, batch_size: int = 32,
             class_names=None) -> MetricsReport:
    """Inference over a set, confusion accumulation, derived metrics."""
    labels = np.asarray(labels, dtype=np.int64)
    if images.shape[0] == 0:
        raise ValueError("evaluation set is empty")
    probs = predict(g, images, batch_size)
    k = probs.shape[1]
    cm = confusion_from_pairs(labels, probs.argmax(axis=1), k, class_names)
    return derive_metrics(cm)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_weights(g: ModelGraph, path) -> None:
    """Write the LSW1 container.

    Layout: magic "LSW1", little-endian u32 header length, UTF-8 JSON header
    (version, layer specs, tensor records with byte offsets), contiguous
    float32 little-endian blobs in header order, trailing CRC32 of all
    preceding bytes.
    """
    records = []
    blobs = []
    offset = 0
    for name in g.param_names():
        arr = g.params[name]
        if arr.dtype != np.float32:
            raise FormatError(f"parameter {name} is {arr.dtype}; LSW1 stores float32")
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        records.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {"version": LSW1_VERSION,
              "layers": [sp.to_dict() for sp in g.layers],
              "input_shape": list(g.input_shape) if g.input_shape else None,
              "tensors": records}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = LSW1_MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(blobs)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def load_weights(path) -> ModelGraph:
    """Parse and verify an LSW1 file; any malformation raises FormatError."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise FormatError(f"{path}: truncated (only {len(data)} bytes)")
    if data[:4] != LSW1_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {LSW1_MAGIC!r}")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored_crc:
        raise FormatError(f"{path}: CRC32 mismatch, file corrupted")
    (hlen,) = struct.unpack("<I", data[4:8])
    if 8 + hlen > len(data) - 4:
        raise FormatError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unparseable header: {exc}") from exc
    if header.get("version") != LSW1_VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')!r}")

    blob = data[8 + hlen:-4]
    layers = [LayerSpec.from_dict(d) for d in header.get("layers", [])]
    params = {}
    expected_end = 0
    for rec in header.get("tensors", []):
        try:
            name, shape = rec["name"], tuple(rec["shape"])
            off, nbytes = int(rec["offset"]), int(rec["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad tensor record {rec!r}") from exc
        if off != expected_end:
            raise FormatError(f"{path}: tensor {name} offset {off} not contiguous")
        if off + nbytes > len(blob):
            raise FormatError(f"{path}: tensor {name} overruns blob section")
        count = int(np.prod(shape)) if shape else 1
        if count * 4 != nbytes:
            raise FormatError(f"{path}: tensor {name} shape {shape} vs {nbytes} bytes")
        params[name] = np.frombuffer(blob, dtype="<f4", count=count,
                                     offset=off).reshape(shape).copy()
        expected_end = off + nbytes
    if expected_end != len(blob):
        raise FormatError(f"{path}: {len(blob) - expected_end} stray bytes after tensors")
    ish = header.get("input_shape")
    return ModelGraph(layers=layers, params=params,
                      input_shape=tuple(ish) if ish else None)


def write_history_tsv(hist: History, path) -> None:
    """Epoch-indexed TSV: epoch, train_loss, train_acc, val_loss, val_acc."""
    lines = ["epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc"]
    for i in range(len(hist)):
        lines.append(f"{i + 1}\t{float(hist.train_loss[i])!r}\t{float(hist.train_acc[i])!r}"
                     f"\t{float(hist.val_loss[i])!r}\t{float(hist.val_acc[i])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
