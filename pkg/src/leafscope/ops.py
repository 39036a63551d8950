"""Dense-tensor layer primitives with hand-written backward passes.

Arrays are plain numpy ndarrays, channels-first, row-major. The training
pipeline runs in float32; every operation follows the dtype of its inputs,
so gradient checks can run the identical code path in float64.

Convolution is cross-correlation (no kernel flip). Spatial ops accept both
a single sample (C,H,W) and a batch (B,C,H,W); dense ops accept (N,) and
(B,N). Backward passes compute exact gradients of the forward contraction;
batch averaging is the caller's job.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, LeafscopeError


@dataclass
class AdamState:
    """First/second moment estimates and step count for one parameter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), t=0)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    # TF-style: output = ceil(size / stride), pad split low-side-first
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    lo = total // 2
    return lo, total - lo


def _conv_out_size(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)
    return (size - kernel) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(B,C,Hp,Wp) -> (B, H'*W', C*kh*kw) patch matrix."""
    b, c = x.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B,C,H',W',kh,kw)
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols)


def _col2im(dcols: np.ndarray, padded_shape: tuple, kh: int, kw: int,
            stride: int, oh: int, ow: int) -> np.ndarray:
    """Scatter-add patch gradients back onto the padded input."""
    b, c, hp, wp = padded_shape
    dx = np.zeros(padded_shape, dtype=dcols.dtype)
    d6 = dcols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += d6[:, :, i, j]
    return dx


def _pad_input(x: np.ndarray, kh: int, kw: int, stride: int, padding: str) -> np.ndarray:
    if padding == "valid":
        return x
    pt, pb = _same_padding(x.shape[2], kh, stride)
    pl, pr = _same_padding(x.shape[3], kw, stride)
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))


def _check_conv_args(x: np.ndarray, kernels: np.ndarray, stride: int, padding: str) -> None:
    if padding not in ("same", "valid"):
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if kernels.ndim != 4:
        raise DimensionError(f"kernels must be (Cout,Cin,kH,kW), got shape {kernels.shape}")
    if x.shape[1] != kernels.shape[1]:
        raise DimensionError(
            f"input has {x.shape[1]} channels but kernels expect {kernels.shape[1]}")
    if padding == "same" and (kernels.shape[2] % 2 == 0 or kernels.shape[3] % 2 == 0):
        raise DimensionError("same padding requires odd kernel spatial dims")


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray,
                   stride: int = 1, padding: str = "same") -> np.ndarray:
    """Cross-correlate x (C,H,W) or (B,C,H,W) with kernels (Cout,Cin,kH,kW)."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    _check_conv_args(x, kernels, stride, padding)
    cout, cin, kh, kw = kernels.shape
    xp = _pad_input(x, kh, kw, stride, padding)
    oh = _conv_out_size(x.shape[2], kh, stride, padding)
    ow = _conv_out_size(x.shape[3], kw, stride, padding)
    cols = _im2col(xp, kh, kw, stride)              # (B, oh*ow, cin*kh*kw)
    wmat = kernels.reshape(cout, -1)
    out = cols @ wmat.T + bias                      # (B, oh*ow, cout)
    out = out.transpose(0, 2, 1).reshape(x.shape[0], cout, oh, ow)
    return out[0] if squeeze else out


def conv2d_backward(d_out: np.ndarray, x: np.ndarray, kernels: np.ndarray,
                    stride: int = 1, padding: str = "same"
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dInput, dKernels, dBias) of the conv2d_forward contraction."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
        d_out = d_out[None]
    _check_conv_args(x, kernels, stride, padding)
    cout, cin, kh, kw = kernels.shape
    b, _, h, w = x.shape
    oh = _conv_out_size(h, kh, stride, padding)
    ow = _conv_out_size(w, kw, stride, padding)
    if d_out.shape != (b, cout, oh, ow):
        raise DimensionError(
            f"d_out shape {d_out.shape} does not match forward output {(b, cout, oh, ow)}")

    xp = _pad_input(x, kh, kw, stride, padding)
    cols = _im2col(xp, kh, kw, stride)                       # (B, P, CKK)
    dmat = d_out.reshape(b, cout, oh * ow).transpose(0, 2, 1)  # (B, P, Cout)

    d_bias = dmat.sum(axis=(0, 1))
    # one large GEMM beats per-batch contraction here
    d_kernels = (dmat.reshape(-1, cout).T @ cols.reshape(-1, cols.shape[-1])
                 ).reshape(kernels.shape)

    wmat = kernels.reshape(cout, -1)
    dcols = dmat @ wmat                                      # (B, P, CKK)
    dxp = _col2im(dcols, xp.shape, kh, kw, stride, oh, ow)
    if padding == "same":
        pt, _ = _same_padding(h, kh, stride)
        pl, _ = _same_padding(w, kw, stride)
        dx = dxp[:, :, pt:pt + h, pl:pl + w]
    else:
        dx = dxp[:, :, :h, :w] if dxp.shape[2:] != (h, w) else dxp
        if dxp.shape[2:] != (h, w):
            dx = np.zeros_like(x)
            dx[:, :, :dxp.shape[2], :dxp.shape[3]] = dxp
    if squeeze:
        return dx[0], d_kernels, d_bias
    return np.ascontiguousarray(dx), d_kernels, d_bias


# ---------------------------------------------------------------------------
# max pooling (fixed 2x2, stride 2)
# ---------------------------------------------------------------------------

def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping 2x2 max pool.

    Returns the pooled map and switches holding, per output cell, the flat
    row-major index into the H*W input plane of the selected element. Ties
    go to the first element in row-major window order.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    oh, ow = h // 2, w // 2
    win = x.reshape(b, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, 4)
    arg = win.argmax(axis=-1)                           # first max wins ties
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    dy, dx = arg // 2, arg % 2
    rows = 2 * np.arange(oh)[None, None, :, None] + dy
    colx = 2 * np.arange(ow)[None, None, None, :] + dx
    switches = rows * w + colx
    if squeeze:
        return out[0], switches[0]
    return out, switches


def maxpool2_backward(d_out: np.ndarray, switches: np.ndarray,
                      input_shape: tuple) -> np.ndarray:
    """Route each upstream gradient to its recorded argmax position."""
    squeeze = d_out.ndim == 3
    if squeeze:
        d_out = d_out[None]
        switches = switches[None]
        input_shape = (1,) + tuple(input_shape)
    b, c, oh, ow = d_out.shape
    h, w = input_shape[2], input_shape[3]
    rows, cols = switches // w, switches % w
    oy = 2 * np.arange(oh)[None, None, :, None]
    ox = 2 * np.arange(ow)[None, None, None, :]
    if ((rows < oy) | (rows > oy + 1) | (cols < ox) | (cols > ox + 1)).any():
        raise LeafscopeError("pool switch index outside its 2x2 window")
    flat = np.zeros((b, c, h * w), dtype=d_out.dtype)
    np.put_along_axis(flat, switches.reshape(b, c, -1), d_out.reshape(b, c, -1), axis=2)
    dx = flat.reshape(b, c, h, w)
    return dx[0] if squeeze else dx


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------

def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """y = W @ x + b with weight (M,N); x may be (N,) or (B,N)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(
            f"dense: x features {x.shape[-1] if x.ndim else '?'} vs weight {weight.shape}")
    return x @ weight.T + bias


def dense_backward(d_out: np.ndarray, x: np.ndarray, weight: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dX, dW, dB); dW is the outer product accumulated over the batch."""
    if d_out.shape[-1] != weight.shape[0] or x.shape[-1] != weight.shape[1]:
        raise DimensionError(
            f"dense backward: d_out {d_out.shape}, x {x.shape}, weight {weight.shape}")
    dx = d_out @ weight
    if x.ndim == 1:
        dw = np.outer(d_out, x)
        db = d_out.copy()
    else:
        dw = d_out.T @ x
        db = d_out.sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------------------
# activations and loss
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(d_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is defined as 0
    return d_out * (x > 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def scce_loss_and_grad(logits: np.ndarray, labels) -> tuple:
    """Sparse categorical cross-entropy via log-sum-exp.

    For (K,) logits and an int label returns (scalar loss, (K,) grad);
    for (B,K) and a label array returns per-sample losses and grads.
    The caller averages over the batch.
    """
    single = logits.ndim == 1
    lg = logits[None] if single else logits
    lab = np.atleast_1d(np.asarray(labels))
    k = lg.shape[-1]
    if lab.min() < 0 or lab.max() >= k:
        raise ValueError(f"label out of range [0,{k})")
    zmax = lg.max(axis=-1, keepdims=True)
    lse = zmax[..., 0] + np.log(np.exp(lg - zmax).sum(axis=-1))
    losses = lse - lg[np.arange(lg.shape[0]), lab]
    grads = softmax(lg)
    grads[np.arange(lg.shape[0]), lab] -= 1
    if single:
        return float(losses[0]), grads[0]
    return losses, grads


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator,
            training: bool) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout. Returns (output, mask); backward is d_out * mask.

    The mask already carries the 1/(1-rate) survivor scaling, so inference
    and rate 0 both return the input untouched with an all-ones mask.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    if not training or rate == 0.0:
        return x, np.ones_like(x)
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    mask = keep / np.asarray(1.0 - rate, dtype=x.dtype)
    return x * mask, mask


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_update(param: np.ndarray, grad: np.ndarray, state: AdamState,
                lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-7) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam step; returns fresh (param', state')."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise DimensionError(
            f"adam: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_param.astype(param.dtype, copy=False), AdamState(m=m, v=v, t=t)


# ---------------------------------------------------------------------------
# resizing
# ---------------------------------------------------------------------------

def bilinear_resize(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping.

    Source coordinate for destination index d along an axis of length n:
    (d + 0.5) * n / out - 0.5, clamped to the valid range. Accepts (H,W)
    or (C,H,W).
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be >= 1")
    squeeze = m.ndim == 2
    if squeeze:
        m = m[None]
    c, h, w = m.shape

    sy = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0).astype(m.dtype, copy=False)
    fx = (sx - x0).astype(m.dtype, copy=False)

    top = m[:, y0][:, :, x0] * (1 - fx) + m[:, y0][:, :, x1] * fx
    bot = m[:, y1][:, :, x0] * (1 - fx) + m[:, y1][:, :, x1] * fx
    out = top * (1 - fy)[None, :, None] + bot * fy[None, :, None]
    out = out.astype(m.dtype, copy=False)
    return out[0] if squeeze else out
