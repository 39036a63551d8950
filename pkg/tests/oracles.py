"""Independent reference implementations the test suite checks against.

Everything here is written the slow, obvious way (nested loops, stdlib
colorsys, manual byte parsing) precisely so it shares no code with the
package under test.
"""

from __future__ import annotations

import colorsys
import json
import math
import struct
import zlib

import numpy as np


def conv2d_naive(x, kernels, bias, stride=1, padding="same"):
    """Direct cross-correlation by nested loops. x: (C,H,W)."""
    cout, cin, kh, kw = kernels.shape
    c, h, w = x.shape
    if padding == "same":
        oh = math.ceil(h / stride)
        ow = math.ceil(w / stride)
        pad_h = max((oh - 1) * stride + kh - h, 0)
        pad_w = max((ow - 1) * stride + kw - w, 0)
        top, left = pad_h // 2, pad_w // 2
    else:
        oh = (h - kh) // stride + 1
        ow = (w - kw) // stride + 1
        top = left = 0
    out = np.zeros((cout, oh, ow), dtype=x.dtype)
    for o in range(cout):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for ci in range(cin):
                    for u in range(kh):
                        for v in range(kw):
                            yy = i * stride + u - top
                            xx = j * stride + v - left
                            if 0 <= yy < h and 0 <= xx < w:
                                acc += x[ci, yy, xx] * kernels[o, ci, u, v]
                out[o, i, j] = acc + bias[o]
    return out


def maxpool2_naive(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2), dtype=x.dtype)
    for ci in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ci, i, j] = x[ci, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()
    return out


def numerical_gradient(f, x, eps=1e-4):
    """Central finite differences of scalar f at x, elementwise (64-bit)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def max_rel_error(analytic, numeric, guard=1e-6):
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, guard)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), guard)
    return float((np.abs(a - n) / denom).max())


def bilinear_naive(src, out_h, out_w):
    """Per-pixel half-pixel-center interpolation with edge clamping. src: (H,W)."""
    h, w = src.shape
    out = np.zeros((out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
            bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


def erode_naive(mask, k):
    """Set-definition erosion: 1 iff the whole k-square fits inside the mask."""
    h, w = mask.shape
    r = k // 2
    out = np.zeros_like(mask)
    for i in range(h):
        for j in range(w):
            keep = 1
            for u in range(-r, r + 1):
                for v in range(-r, r + 1):
                    y, x = i + u, j + v
                    inside = 0 <= y < h and 0 <= x < w and mask[y, x]
                    if not inside:
                        keep = 0
            out[i, j] = keep
    return out


def dilate_naive(mask, k):
    h, w = mask.shape
    r = k // 2
    out = np.zeros_like(mask)
    for i in range(h):
        for j in range(w):
            hit = 0
            for u in range(-r, r + 1):
                for v in range(-r, r + 1):
                    y, x = i + u, j + v
                    if 0 <= y < h and 0 <= x < w and mask[y, x]:
                        hit = 1
            out[i, j] = hit
    return out


def rgb_to_hsv_naive(rgb):
    """colorsys-based conversion to the (180, 255, 255) byte scale."""
    h, w, _ = rgb.shape
    out = np.zeros((h, w, 3), dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            r, g, b = (rgb[i, j] / 255.0).tolist()
            hh, ss, vv = colorsys.rgb_to_hsv(r, g, b)
            out[i, j, 0] = int(round(hh * 360.0 / 2.0)) % 180
            out[i, j, 1] = min(255, int(round(ss * 255.0)))
            out[i, j, 2] = min(255, int(round(vv * 255.0)))
    return out


def stream_metrics(true_labels, pred_labels, k):
    """Accuracy and macro P/R/F1 straight from the label stream."""
    pairs = list(zip(true_labels, pred_labels))
    correct = sum(1 for t, p in pairs if t == p)
    precisions, recalls, f1s = [], [], []
    for c in range(k):
        tp = sum(1 for t, p in pairs if t == c and p == c)
        fp = sum(1 for t, p in pairs if t != c and p == c)
        fn = sum(1 for t, p in pairs if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)
    return {
        "accuracy": correct / len(pairs),
        "macro_precision": sum(precisions) / k,
        "macro_recall": sum(recalls) / k,
        "macro_f1": sum(f1s) / k,
        "precision": precisions,
        "recall": recalls,
        "f1": f1s,
    }


def parse_lsw1(path):
    """Struct-level reader of the weight container, written from the format
    description alone: magic, u32 header length, JSON header, float32 LE
    blobs at the recorded offsets, trailing CRC32 of everything before it.
    Returns (header dict, {tensor name: ndarray})."""
    raw = open(path, "rb").read()
    assert raw[:4] == b"LSW1", f"magic {raw[:4]!r}"
    (crc,) = struct.unpack("<I", raw[-4:])
    assert zlib.crc32(raw[:-4]) == crc, "checksum mismatch"
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    blob = raw[8 + hlen:-4]
    tensors = {}
    for rec in header["tensors"]:
        start = rec["offset"]
        end = start + rec["nbytes"]
        assert end <= len(blob), f"{rec['name']} overruns blob"
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(rec["shape"])
        tensors[rec["name"]] = arr
    return header, tensors


def parse_tsv(path):
    """Minimal strict TSV reader: returns (header fields, row lists)."""
    text = open(path, "r", encoding="utf-8", newline="").read()
    assert "\r" not in text, "expected LF line endings"
    assert text.endswith("\n"), "expected trailing newline"
    lines = text[:-1].split("\n")
    header = lines[0].split("\t")
    rows = [ln.split("\t") for ln in lines[1:]]
    for r in rows:
        assert len(r) == len(header), f"ragged row {r!r}"
    return header, rows
