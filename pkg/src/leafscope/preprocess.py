"""Background removal and image normalization for leaf photographs.

The pipeline isolates green plant tissue by thresholding in HSV space,
cleans the mask morphologically, composites the foreground onto black,
resizes to the network input resolution, and scales to [0,1] CHW float32.

Hue uses the byte-friendly [0,180) convention (degrees / 2) so published
threshold triples apply verbatim; saturation and value span [0,255].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import DimensionError


@dataclass(frozen=True)
class PreprocessConfig:
    """Knobs for the background-removal pipeline (defaults match training)."""

    bg_removal: bool = True
    hsv_lower: tuple = (25, 40, 40)
    hsv_upper: tuple = (90, 255, 255)
    morph_kernel: int = 5
    morph_iterations: int = 1
    out_size: int = 128

    def __post_init__(self):
        if self.morph_kernel % 2 == 0 or self.morph_kernel < 1:
            raise ValueError("morph_kernel must be odd and positive")
        if self.out_size < 1:
            raise ValueError("out_size must be positive")
        lo, hi = self.hsv_lower, self.hsv_upper
        if not (0 <= lo[0] <= hi[0] < 180 and 0 <= lo[1] <= hi[1] <= 255
                and 0 <= lo[2] <= hi[2] <= 255):
            raise ValueError(f"bad HSV bounds {lo}..{hi}")


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """uint8 (H,W,3) RGB -> uint8 (H,W,3) HSV with H in [0,180)."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DimensionError(f"expected (H,W,3) RGB, got {rgb.shape}")
    f = rgb.astype(np.float64) / 255.0
    r, g, b = f[..., 0], f[..., 1], f[..., 2]
    v = f.max(axis=-1)
    c = v - f.min(axis=-1)
    s = np.where(v > 0, c / np.where(v > 0, v, 1), 0.0)

    # piecewise hue in degrees, wrapped into [0, 360)
    safe_c = np.where(c > 0, c, 1)
    hr = np.mod((g - b) / safe_c, 6.0)
    hg = (b - r) / safe_c + 2.0
    hb = (r - g) / safe_c + 4.0
    h6 = np.where(v == r, hr, np.where(v == g, hg, hb))
    h6 = np.where(c > 0, h6, 0.0)
    h_deg = h6 * 60.0

    out = np.empty(rgb.shape, dtype=np.uint8)
    out[..., 0] = np.mod(np.round(h_deg / 2.0), 180).astype(np.uint8)
    out[..., 1] = np.clip(np.round(s * 255.0), 0, 255).astype(np.uint8)
    out[..., 2] = np.clip(np.round(v * 255.0), 0, 255).astype(np.uint8)
    return out


def green_mask(hsv: np.ndarray, lower: tuple = (25, 40, 40),
               upper: tuple = (90, 255, 255)) -> np.ndarray:
    """Inclusive per-channel band test; returns uint8 {0,1} (H,W)."""
    if hsv.ndim != 3 or hsv.shape[2] != 3:
        raise DimensionError(f"expected (H,W,3) HSV, got {hsv.shape}")
    lo = np.asarray(lower, dtype=np.int32)
    hi = np.asarray(upper, dtype=np.int32)
    px = hsv.astype(np.int32)
    ok = ((px >= lo) & (px <= hi)).all(axis=-1)
    return ok.astype(np.uint8)


def _erode(mask: np.ndarray, k: int) -> np.ndarray:
    # zero padding: structuring element hanging off the border sees background
    p = k // 2
    padded = np.pad(mask, p)
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    return win.min(axis=(2, 3))


def _dilate(mask: np.ndarray, k: int) -> np.ndarray:
    p = k // 2
    padded = np.pad(mask, p)
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    return win.max(axis=(2, 3))


def morph_refine(mask: np.ndarray, op: str, kernel: int = 5,
                 iterations: int = 1) -> np.ndarray:
    """Morphological open (erode, dilate) or close (dilate, erode).

    Flat square structuring element of odd side `kernel`; out-of-bounds
    neighbors count as background, so shapes touching the border erode.
    Iterating applies all first-stage passes before all second-stage ones,
    matching the usual library semantics rather than repeating the pair.
    """
    if mask.ndim != 2:
        raise DimensionError(f"expected 2-d mask, got {mask.shape}")
    if op not in ("open", "close"):
        raise ValueError(f"op must be 'open' or 'close', got {op!r}")
    if kernel % 2 == 0 or kernel < 1:
        raise ValueError("kernel must be odd and positive")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    first, second = (_erode, _dilate) if op == "open" else (_dilate, _erode)
    m = (mask > 0).astype(np.uint8)
    for _ in range(iterations):
        m = first(m, kernel)
    for _ in range(iterations):
        m = second(m, kernel)
    return m.astype(np.uint8)


def extract_foreground(rgb: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Keep masked pixels, zero the rest (black background)."""
    if rgb.shape[:2] != mask.shape:
        raise DimensionError(f"image {rgb.shape[:2]} vs mask {mask.shape}")
    return rgb * (mask > 0).astype(rgb.dtype)[..., None]


def resize_rgb(rgb: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear uint8 resize with half-pixel centers and edge clamping."""
    from .ops import bilinear_resize

    chw = rgb.astype(np.float64).transpose(2, 0, 1)
    res = bilinear_resize(chw, out_h, out_w)
    return np.clip(np.round(res.transpose(1, 2, 0)), 0, 255).astype(np.uint8)


def preprocess_image(rgb: np.ndarray, config: PreprocessConfig | None = None
                     ) -> np.ndarray:
    """Full pipeline to a (3,S,S) float32 tensor in [0,1], channel-first RGB.

    With bg_removal on: HSV mask -> open -> close -> foreground on black,
    all at native resolution, then bilinear resize and /255 scaling.
    """
    cfg = config or PreprocessConfig()
    out = rgb
    if cfg.bg_removal:
        hsv = rgb_to_hsv(rgb)
        mask = green_mask(hsv, cfg.hsv_lower, cfg.hsv_upper)
        mask = morph_refine(mask, "open", cfg.morph_kernel, cfg.morph_iterations)
        mask = morph_refine(mask, "close", cfg.morph_kernel, cfg.morph_iterations)
        out = extract_foreground(rgb, mask)
    small = resize_rgb(out, cfg.out_size, cfg.out_size)
    return (small.astype(np.float32) / 255.0).transpose(2, 0, 1)


# ---------------------------------------------------------------------------
# image IO (thin Pillow wrappers so the rest of the package stays ndarray-only)
# ---------------------------------------------------------------------------

def load_rgb(path) -> np.ndarray:
    """Decode an image file to uint8 (H,W,3) RGB."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_rgb(path, rgb: np.ndarray) -> None:
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DimensionError(f"save_rgb wants uint8 (H,W,3), got {rgb.dtype} {rgb.shape}")
    Image.fromarray(rgb, mode="RGB").save(path)


def tensor_to_rgb(chw: np.ndarray) -> np.ndarray:
    """(3,H,W) float in [0,1] back to uint8 (H,W,3) for visualization."""
    if chw.ndim != 3 or chw.shape[0] != 3:
        raise DimensionError(f"expected (3,H,W), got {chw.shape}")
    x = np.clip(chw, 0.0, 1.0) * 255.0
    return np.round(x).astype(np.uint8).transpose(1, 2, 0)
