# mocr/render_compare.py
"""
Deterministic SVG rasterization, DCT perceptual hashing and the
render-and-compare reconstruction score.

The composite score is an equal-weight blend of pixel similarity and
windowed structural similarity; the breakdown is always reported.
"""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import cairosvg
import numpy as np
from PIL import Image
from scipy.fftpack import dct
from skimage.util import view_as_windows

from mocr import svg_engine
from mocr.errors import DataError, DimensionMismatchError, RenderError

logger = logging.getLogger(__name__)

WHITE = (255, 255, 255, 255)

PHASH_RESAMPLE = 32
PHASH_BLOCK = 8

SSIM_WINDOW = 8
SSIM_STRIDE = 4
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2

SCORE_SCHEMA = "mocr-score/1"


# =========================
# Bitmap
# =========================
@dataclass(frozen=True, eq=False)
class Bitmap:
    """RGBA raster, 8 bits per channel, row-major (height, width, 4)."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("bitmap dimensions must be >= 1")
        pixels = np.array(self.pixels, dtype=np.uint8, order="C", copy=True)
        if pixels.shape != (self.height, self.width, 4):
            raise ValueError(
                f"pixel buffer shape {pixels.shape} != ({self.height}, {self.width}, 4)"
            )
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def from_buffer(cls, width: int, height: int, data: bytes) -> "Bitmap":
        if len(data) != width * height * 4:
            raise ValueError(f"buffer length {len(data)} != {width}*{height}*4")
        return cls(width, height, np.frombuffer(data, dtype=np.uint8).reshape(height, width, 4))

    @classmethod
    def from_image(cls, image: Image.Image) -> "Bitmap":
        rgba = image.convert("RGBA")
        return cls(rgba.width, rgba.height, np.asarray(rgba, dtype=np.uint8))

    @classmethod
    def solid(cls, width: int, height: int, rgba: Tuple[int, int, int, int] = WHITE) -> "Bitmap":
        return cls(width, height, np.broadcast_to(np.array(rgba, np.uint8), (height, width, 4)))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Bitmap":
        with Image.open(path) as img:
            return cls.from_image(img)

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    def to_image(self) -> Image.Image:
        return Image.fromarray(np.array(self.pixels), mode="RGBA")

    def save(self, path: Union[str, Path]) -> None:
        self.to_image().save(path, format="PNG")

    def rgb_on_white(self) -> np.ndarray:
        px = self.pixels.astype(np.float64)
        alpha = px[..., 3:4] / 255.0
        return px[..., :3] * alpha + 255.0 * (1.0 - alpha)

    def luminance(self) -> np.ndarray:
        rgb = self.rgb_on_white()
        return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Bitmap):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    def __hash__(self) -> int:
        return hash((self.width, self.height, self.data))


# =========================
# Rendering
# =========================
def intrinsic_size(root) -> Tuple[float, float]:
    width = svg_engine.parse_length(root.get("width"))
    height = svg_engine.parse_length(root.get("height"))
    if width and height:
        return width, height
    box = svg_engine.parse_viewbox(root.get("viewBox"))
    if box is not None:
        return box[2], box[3]
    return svg_engine.DEFAULT_VIEWPORT


def _rasterize(svg_text: str, width: int, height: int) -> Tuple[Bitmap, bool]:
    if width < 1 or height < 1:
        raise ValueError("render dimensions must be >= 1")
    try:
        root = svg_engine.parse_svg(svg_text)
    except DataError as e:
        raise RenderError(str(e)) from e
    uses_text = any(
        isinstance(el.tag, str) and el.tag.rsplit("}", 1)[-1] == "text" for el in root.iter()
    )

    w0, h0 = intrinsic_size(root)
    try:
        scale = min(width / w0, height / h0)
        fit = (w0 * scale, h0 * scale)
    except (ZeroDivisionError, OverflowError):
        scale, fit = math.inf, (math.inf, math.inf)
    if not all(math.isfinite(v) and v > 0 for v in (scale, *fit)):
        raise RenderError(f"degenerate drawing size {w0!r}x{h0!r}")
    fit_w = max(1, min(width, int(round(fit[0]))))
    fit_h = max(1, min(height, int(round(fit[1]))))

    try:
        png = cairosvg.svg2png(
            bytestring=svg_text.encode("utf-8"),
            output_width=fit_w,
            output_height=fit_h,
            background_color="white",
            unsafe=False,
        )
        with Image.open(io.BytesIO(png)) as img:
            drawing = img.convert("RGBA")
    except Exception as e:  # rasterizer raises a wide range of types
        raise RenderError(f"render failed: {type(e).__name__}: {e}") from e
    if drawing.size != (fit_w, fit_h):
        drawing = drawing.resize((fit_w, fit_h), Image.Resampling.BOX)

    canvas = Image.new("RGBA", (width, height), WHITE)
    canvas.alpha_composite(drawing, dest=((width - fit_w) // 2, (height - fit_h) // 2))
    return Bitmap.from_image(canvas), uses_text


def render(svg_text: str, width: int, height: int) -> Bitmap:
    """Rasterize onto opaque white, letterboxed to keep the aspect ratio."""
    bitmap, _ = _rasterize(svg_text, width, height)
    return bitmap


def is_blank(bitmap: Bitmap) -> bool:
    return bool(np.all(bitmap.rgb_on_white() == 255.0))


# =========================
# Perceptual hash
# =========================
@dataclass(frozen=True)
class PerceptualHash:
    value: int

    @property
    def hex(self) -> str:
        return f"{self.value:016x}"

    def distance(self, other: "PerceptualHash") -> int:
        return svg_engine.hamming(self.value, other.value)

    @classmethod
    def from_hex(cls, text: str) -> "PerceptualHash":
        return cls(int(text, 16))


def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    edges = np.linspace(0.0, float(n_in), n_out + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    j = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, j + 1) - np.maximum(lo, j), 0.0, None)
    return overlap / (hi - lo)


def box_resample(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Area-averaging resample of a 2-D array."""
    h, w = values.shape
    return _box_weights(h, out_h) @ values @ _box_weights(w, out_w).T


def phash(bitmap: Bitmap) -> PerceptualHash:
    small = box_resample(bitmap.luminance(), PHASH_RESAMPLE, PHASH_RESAMPLE)
    coeffs = dct(dct(small, axis=0, norm="ortho"), axis=1, norm="ortho")
    # rounding removes float noise so flat images hash to exactly zero
    block = np.round(coeffs[:PHASH_BLOCK, :PHASH_BLOCK], 6).flatten()
    block[0] = 0.0
    bits = block > np.median(block)
    value = 0
    for bit in bits:
        value = (value << 1) | int(bit)
    return PerceptualHash(value)


# =========================
# Similarity
# =========================
def _check_dims(a: Bitmap, b: Bitmap) -> None:
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatchError(
            f"bitmap sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def pixel_similarity(a: Bitmap, b: Bitmap) -> float:
    _check_dims(a, b)
    diff = np.abs(a.rgb_on_white() - b.rgb_on_white())
    return float(1.0 - diff.mean() / 255.0)


def _offsets(length: int) -> np.ndarray:
    """Window starts every SSIM_STRIDE pixels, plus one flush with the far edge."""
    last = length - SSIM_WINDOW
    starts = list(range(0, last + 1, SSIM_STRIDE))
    if starts[-1] != last:
        starts.append(last)
    return np.array(starts)


def _windows(lum: np.ndarray) -> np.ndarray:
    win = view_as_windows(lum, (SSIM_WINDOW, SSIM_WINDOW))
    rows, cols = _offsets(lum.shape[0]), _offsets(lum.shape[1])
    return win[np.ix_(rows, cols)].reshape(-1, SSIM_WINDOW * SSIM_WINDOW)


def _covariance(x: np.ndarray, mx: np.ndarray, y: np.ndarray, my: np.ndarray) -> np.ndarray:
    n = x.shape[1]
    return ((x - mx[:, None]) * (y - my[:, None])).sum(axis=1) / (n - 1)


def structural_similarity(a: Bitmap, b: Bitmap) -> float:
    _check_dims(a, b)
    if a.width < SSIM_WINDOW or a.height < SSIM_WINDOW:
        return pixel_similarity(a, b)
    wa, wb = _windows(a.luminance()), _windows(b.luminance())
    mu_a, mu_b = wa.mean(axis=1), wb.mean(axis=1)
    var_a = _covariance(wa, mu_a, wa, mu_a)
    var_b = _covariance(wb, mu_b, wb, mu_b)
    cov = _covariance(wa, mu_a, wb, mu_b)
    index = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    )
    return float(np.clip(index.mean(), 0.0, 1.0))


# =========================
# Reconstruction score
# =========================
@dataclass(frozen=True)
class ScoreBreakdown:
    pixel: float
    structural: float
    composite: float
    failed: bool = False
    error: Optional[str] = None
    font_fallback: bool = False

    def to_record(self, asset_id: str) -> Dict[str, object]:
        return {
            "schema": SCORE_SCHEMA,
            "id": asset_id,
            "pixel": self.pixel,
            "structural": self.structural,
            "composite": self.composite,
            "failed": self.failed,
            "error": self.error,
            "font_fallback": self.font_fallback,
        }


def reconstruction_score(reference: Bitmap, predicted_svg: str) -> ScoreBreakdown:
    """Render the prediction at the reference size and compare."""
    try:
        predicted, uses_text = _rasterize(predicted_svg, reference.width, reference.height)
    except RenderError as e:
        logger.debug("prediction failed to render: %s", e)
        return ScoreBreakdown(0.0, 0.0, 0.0, failed=True, error=str(e))
    pixel = pixel_similarity(reference, predicted)
    structural = structural_similarity(reference, predicted)
    return ScoreBreakdown(
        pixel=pixel,
        structural=structural,
        composite=0.5 * pixel + 0.5 * structural,
        font_fallback=uses_text,
    )
