"""Hand-crafted LOMO-style person descriptor.

Each horizontal stripe of the image is scanned by sub-windows that span the
stripe height. Every sub-window yields a joint HSV colour histogram and a
folded ternary-texture histogram; the stripe keeps the element-wise maximum
over window positions. Stripe features are concatenated, passed through
``log(1 + x)`` and L2-normalised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import FeatureDataset, Image, ImageCorpus
from .errors import ConfigurationError, ExtractionError

TEXTURE_BINS = 81

# Neighbour offsets (row, col), clockwise from the top-left corner.
NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


@dataclass(frozen=True)
class DescriptorConfig:
    num_stripes: int = 8
    hue_bins: int = 8
    sat_bins: int = 8
    val_bins: int = 8
    texture_threshold: float = 0.03
    subwindow: int = 10
    subwindow_stride: int = 5

    def validate(self):
        if self.num_stripes < 1:
            raise ConfigurationError("num_stripes must be >= 1")
        if min(self.hue_bins, self.sat_bins, self.val_bins) < 2:
            raise ConfigurationError("hue_bins, sat_bins and val_bins must each be >= 2")
        if self.texture_threshold < 0:
            raise ConfigurationError("texture_threshold must be >= 0")
        if self.subwindow < 1 or self.subwindow_stride < 1:
            raise ConfigurationError("subwindow and subwindow_stride must be >= 1")

    @property
    def color_bins(self) -> int:
        return self.hue_bins * self.sat_bins * self.val_bins

    @property
    def dim(self) -> int:
        return self.num_stripes * (self.color_bins + TEXTURE_BINS)


def rgb_to_hsv(r, g, b):
    """Hexcone RGB -> HSV for 8-bit channels; hue in degrees, 0 for greys."""
    mx = max(r, g, b)
    mn = min(r, g, b)
    delta = mx - mn
    v = mx / 255.0
    if delta == 0:
        return 0.0, 0.0, v
    s = delta / mx
    if mx == r:
        h = 60.0 * (((g - b) / delta) % 6.0)
    elif mx == g:
        h = 60.0 * ((b - r) / delta + 2.0)
    else:
        h = 60.0 * ((r - g) / delta + 4.0)
    if h >= 360.0:
        h -= 360.0
    return h, s, v


def _hsv_image(pixels: np.ndarray):
    rgb = pixels.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    v = mx / 255.0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(mx > 0, delta / mx, 0.0)
        safe = np.where(delta > 0, delta, 1.0)
        h = np.where(mx == r, 60.0 * (((g - b) / safe) % 6.0),
                     np.where(mx == g, 60.0 * ((b - r) / safe + 2.0),
                              60.0 * ((r - g) / safe + 4.0)))
    h = np.where(delta > 0, h, 0.0)
    h = np.where(h >= 360.0, h - 360.0, h)
    return h, s, v


def color_bin_indices(pixels: np.ndarray, cfg: DescriptorConfig) -> np.ndarray:
    h, s, v = _hsv_image(pixels)
    hb = np.minimum((h / 360.0 * cfg.hue_bins).astype(np.int64), cfg.hue_bins - 1)
    sb = np.minimum((s * cfg.sat_bins).astype(np.int64), cfg.sat_bins - 1)
    vb = np.minimum((v * cfg.val_bins).astype(np.int64), cfg.val_bins - 1)
    return (hb * cfg.sat_bins + sb) * cfg.val_bins + vb


def _ternary_digit(neighbour, centre, threshold):
    diff = neighbour - centre
    return np.where(diff > threshold, 1, np.where(diff < -threshold, 2, 0))


def local_texture_code(window, threshold: float) -> int:
    """Full ternary code in [0, 3**8) of a 3x3 grayscale neighbourhood."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (3, 3):
        raise ConfigurationError(f"texture window must be 3x3, got {window.shape}")
    centre = window[1, 1]
    code = 0
    for k, (dr, dc) in enumerate(NEIGHBOURS):
        code += int(_ternary_digit(window[1 + dr, 1 + dc], centre, threshold)) * 3 ** k
    return code


def fold_texture_code(code):
    """Fold a full 8-digit code to 81 bins.

    Kept digits: top, bottom, (left + right) mod 3 and (sum of the four
    diagonal digits) mod 3. The fold is symmetric under a left-right mirror.
    """
    code = np.asarray(code, dtype=np.int64)
    digits = [(code // 3 ** k) % 3 for k in range(8)]
    top, bottom = digits[1], digits[5]
    sides = (digits[3] + digits[7]) % 3
    diagonals = (digits[0] + digits[2] + digits[4] + digits[6]) % 3
    return top + 3 * bottom + 9 * sides + 27 * diagonals


def texture_codes(pixels: np.ndarray, threshold: float) -> np.ndarray:
    """Full ternary code for every pixel; borders use edge replication."""
    gray = pixels.astype(np.float64).sum(axis=-1) / (3.0 * 255.0)
    padded = np.pad(gray, 1, mode="edge")
    h, w = gray.shape
    codes = np.zeros((h, w), dtype=np.int64)
    for k, (dr, dc) in enumerate(NEIGHBOURS):
        neighbour = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        codes += _ternary_digit(neighbour, gray, threshold) * 3 ** k
    return codes


def _stripe_max_histogram(bins: np.ndarray, nbins: int, cfg: DescriptorConfig) -> np.ndarray:
    rows, width = bins.shape
    cols = np.broadcast_to(np.arange(width), bins.shape)
    per_column = np.bincount((cols * nbins + bins).ravel(), minlength=width * nbins)
    per_column = per_column.reshape(width, nbins)
    cumulative = np.vstack([np.zeros((1, nbins), dtype=np.int64), np.cumsum(per_column, axis=0)])
    starts = np.arange(0, width - cfg.subwindow + 1, cfg.subwindow_stride)
    windows = cumulative[starts + cfg.subwindow] - cumulative[starts]
    return windows.max(axis=0)


def extract_handcrafted(img: Image, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    cfg.validate()
    h, w = img.height, img.width
    if cfg.subwindow > min(h, w):
        raise ExtractionError(
            f"image {h}x{w} is smaller than the {cfg.subwindow}-pixel sub-window")
    if cfg.num_stripes > h:
        raise ExtractionError(f"image height {h} cannot hold {cfg.num_stripes} stripes")
    colors = color_bin_indices(img.pixels, cfg)
    textures = fold_texture_code(texture_codes(img.pixels, cfg.texture_threshold))
    edges = (np.arange(cfg.num_stripes + 1) * h) // cfg.num_stripes
    parts = []
    for top, bottom in zip(edges[:-1], edges[1:]):
        parts.append(_stripe_max_histogram(colors[top:bottom], cfg.color_bins, cfg))
        parts.append(_stripe_max_histogram(textures[top:bottom], TEXTURE_BINS, cfg))
    feature = np.log1p(np.concatenate(parts).astype(np.float64))
    return feature / np.linalg.norm(feature)


def extract_corpus(corpus: ImageCorpus, cfg: DescriptorConfig = DescriptorConfig()) -> FeatureDataset:
    vectors = np.empty((len(corpus), cfg.dim))
    for i, img in enumerate(corpus.images):
        vectors[i] = extract_handcrafted(img, cfg)
    return FeatureDataset(corpus.ids, corpus.cameras, vectors)
