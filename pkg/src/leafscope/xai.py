"""Class-activation-map saliency methods and overlay rendering.

Five methods over a frozen model: three gradient-based (gradcam,
gradcam_pp, layercam) that backpropagate a one-hot logit selector to a
chosen conv/pool layer, and two masking-based (scorecam, faster_scorecam)
that re-run inference under per-channel activation masks and never touch
gradient code.

Every method ends in the same post-processing: ReLU, min-max normalization
to [0,1] (flat maps become all zeros), bilinear upsample to the input
resolution. Scores are always pre-softmax logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .model import ActivationCache, ModelGraph, backward_pass, forward_logits, forward_with_cache
from .ops import bilinear_resize, relu, softmax

METHOD_NAMES = ("gradcam", "gradcam++", "layercam", "scorecam", "faster-scorecam")


@dataclass(frozen=True)
class CamRequest:
    """What to explain: which layer, which class (None = predicted), which knobs."""

    layer: str = "conv3"
    target_class: int | None = None
    method: str = "gradcam"
    top_k: int = 10

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass
class Heatmap:
    values: np.ndarray          # (H,W) float32 in [0,1]
    source_layer: str = ""
    method: str = ""
    target_class: int = -1


def _explainable_layers(g: ModelGraph) -> list:
    """Conv/pool layer names ahead of the first flatten."""
    names = []
    for sp in g.layers:
        if sp.kind == "flatten":
            break
        if sp.kind in ("conv", "pool"):
            names.append(sp.name)
    return names


def _prepare(g: ModelGraph, image: np.ndarray, req: CamRequest):
    """Shared setup: validate, forward with cache, resolve the target class.

    Returns (batch, cache, activations (C,h,w), target class id, logits row).
    """
    if image.ndim != 3:
        raise DimensionError(f"expected a single (C,H,W) image, got {image.shape}")
    valid = _explainable_layers(g)
    if req.layer not in valid:
        raise ValueError(
            f"layer {req.layer!r} is not a conv/pool layer before flatten; "
            f"choose from {valid}")
    x = image[None].astype(np.float32, copy=False)
    _, cache = forward_with_cache(g, x, training=False)
    logits = cache.outputs["logits"][0]
    if req.target_class is None:
        target = int(logits.argmax())
    else:
        target = int(req.target_class)
        if not 0 <= target < logits.shape[0]:
            raise ValueError(f"target class {target} outside [0,{logits.shape[0]})")
    return x, cache, cache.outputs[req.layer][0], target, logits


def _activation_gradient(g: ModelGraph, cache: ActivationCache, layer: str,
                         target: int, num_classes: int) -> np.ndarray:
    """d(logit of target)/d(activations of layer), shape (C,h,w)."""
    seed = np.zeros((1, num_classes), dtype=np.float32)
    seed[0, target] = 1.0
    _, d_act = backward_pass(g, cache, seed, wrt_layer=layer)
    return d_act[0]


def _finish(raw: np.ndarray, image: np.ndarray, req: CamRequest,
            method: str, target: int) -> Heatmap:
    hm = postprocess_heatmap(raw, image.shape[-2], image.shape[-1])
    hm.source_layer = req.layer
    hm.method = method
    hm.target_class = target
    return hm


def postprocess_heatmap(raw: np.ndarray, out_h: int = 128, out_w: int = 128) -> Heatmap:
    """ReLU, min-max normalize to [0,1] (flat -> zeros), bilinear upsample."""
    if raw.ndim != 2:
        raise DimensionError(f"expected a 2-d raw map, got {raw.shape}")
    pos = relu(raw.astype(np.float32, copy=False))
    lo, hi = float(pos.min()), float(pos.max())
    if hi == lo:
        norm = np.zeros_like(pos)
    else:
        norm = (pos - lo) / (hi - lo)
    values = bilinear_resize(norm, out_h, out_w)
    return Heatmap(values=np.clip(values, 0.0, 1.0))


# ---------------------------------------------------------------------------
# gradient-based methods
# ---------------------------------------------------------------------------

def gradcam(g: ModelGraph, image: np.ndarray, req: CamRequest | None = None) -> Heatmap:
    """Channel weights = spatial mean of the class gradient; ReLU'd weighted sum."""
    req = req or CamRequest()
    x, cache, acts, target, logits = _prepare(g, image, req)
    grad = _activation_gradient(g, cache, req.layer, target, logits.shape[0])
    alpha = grad.mean(axis=(1, 2))
    raw = relu(np.tensordot(alpha, acts, axes=1))
    return _finish(raw, x, req, "gradcam", target)


def gradcam_pp(g: ModelGraph, image: np.ndarray, req: CamRequest | None = None) -> Heatmap:
    """Second-order variant under the exponential-score reduction.

    With higher derivatives collapsed to powers of the first (d2 -> g^2,
    d3 -> g^3): alpha = g^2 / (2 g^2 + sum(A) g^3) taking 0/0 as 0, channel
    weight w_k = sum(alpha * ReLU(g)), map = ReLU(sum w_k A_k).
    """
    req = req or CamRequest()
    x, cache, acts, target, logits = _prepare(g, image, req)
    grad = _activation_gradient(g, cache, req.layer, target, logits.shape[0])
    g2 = grad * grad
    g3 = g2 * grad
    denom = 2.0 * g2 + acts.sum(axis=(1, 2), keepdims=True) * g3
    alpha = np.divide(g2, denom, out=np.zeros_like(g2), where=denom != 0)
    weights = (alpha * relu(grad)).sum(axis=(1, 2))
    raw = relu(np.tensordot(weights, acts, axes=1))
    return _finish(raw, x, req, "gradcam++", target)


def layercam(g: ModelGraph, image: np.ndarray, req: CamRequest | None = None) -> Heatmap:
    """Elementwise positive-gradient weighting: ReLU(sum_k ReLU(g_k) * A_k)."""
    req = req or CamRequest()
    x, cache, acts, target, logits = _prepare(g, image, req)
    grad = _activation_gradient(g, cache, req.layer, target, logits.shape[0])
    raw = relu((relu(grad) * acts).sum(axis=0))
    return _finish(raw, x, req, "layercam", target)


# ---------------------------------------------------------------------------
# masking-based methods (gradient-free)
# ---------------------------------------------------------------------------

def _scorecam_core(g: ModelGraph, x: np.ndarray, acts: np.ndarray, target: int,
                   channels) -> np.ndarray:
    """Shared CIC loop over the given channel indices (ascending).

    Per channel: min-max normalize the activation map (flat channels are
    skipped), upsample to input size, mask the input, and score the target
    logit against the all-black baseline. Softmax over the participating
    channels' scores weights the activation sum. Uses only inference.
    """
    h, w = x.shape[-2], x.shape[-1]
    baseline = float(forward_logits(g, np.zeros_like(x))[0, target])
    kept = []
    scores = []
    for k in channels:
        a = acts[k]
        lo, hi = float(a.min()), float(a.max())
        if hi == lo:
            continue
        norm = (a - lo) / (hi - lo)
        up = bilinear_resize(norm.astype(np.float32, copy=False), h, w)
        masked = x * up[None, None]
        scores.append(float(forward_logits(g, masked)[0, target]) - baseline)
        kept.append(k)
    raw = np.zeros(acts.shape[1:], dtype=np.float32)
    if not kept:
        return raw
    weights = softmax(np.asarray(scores, dtype=np.float32))
    for w_i, k in zip(weights, kept):
        raw += w_i * acts[k]
    return relu(raw)


def scorecam(g: ModelGraph, image: np.ndarray, req: CamRequest | None = None) -> Heatmap:
    """Gradient-free saliency from per-channel masked inference scores."""
    req = req or CamRequest()
    x, cache, acts, target, _ = _prepare(g, image, req)
    raw = _scorecam_core(g, x, acts, target, range(acts.shape[0]))
    return _finish(raw, x, req, "scorecam", target)


def faster_scorecam(g: ModelGraph, image: np.ndarray,
                    req: CamRequest | None = None) -> Heatmap:
    """scorecam restricted to the top-K channels by spatial variance.

    Ranking is variance descending with index-ascending tie-break; the
    selected channels then run through the same CIC loop in ascending index
    order, so top_k = C reproduces scorecam bit for bit.
    """
    req = req or CamRequest()
    x, cache, acts, target, _ = _prepare(g, image, req)
    var = acts.var(axis=(1, 2))
    ranked = np.argsort(-var, kind="stable")
    top = sorted(int(k) for k in ranked[:min(req.top_k, acts.shape[0])])
    raw = _scorecam_core(g, x, acts, target, top)
    return _finish(raw, x, req, "faster-scorecam", target)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _colormap(values: np.ndarray) -> np.ndarray:
    """Piecewise-linear 0 -> blue, 0.5 -> green, 1 -> red; float (H,W,3)."""
    t = np.clip(values, 0.0, 1.0).astype(np.float64)
    r = 255.0 * np.clip((t - 0.5) * 2.0, 0.0, 1.0)
    gr = 255.0 * (1.0 - np.abs(t - 0.5) * 2.0)
    b = 255.0 * np.clip((0.5 - t) * 2.0, 0.0, 1.0)
    return np.stack([r, gr, b], axis=-1)


def render_overlay(rgb: np.ndarray, heatmap, alpha: float = 0.4) -> np.ndarray:
    """Alpha-blend the colormapped heatmap onto a uint8 RGB image."""
    values = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DimensionError(f"expected (H,W,3) RGB, got {rgb.shape}")
    if rgb.shape[:2] != values.shape:
        raise DimensionError(f"image {rgb.shape[:2]} vs heatmap {values.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    blend = (1.0 - alpha) * rgb.astype(np.float64) + alpha * _colormap(values)
    return np.clip(np.round(blend), 0, 255).astype(np.uint8)


def write_heatmap_tsv(heatmap, path) -> None:
    """Raw heatmap values, one text row per pixel row."""
    values = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    lines = ["\t".join(repr(float(v)) for v in row) for row in values]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
