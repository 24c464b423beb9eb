"""Image and mask handling for fundus photographs.

Images are plain numpy arrays: RGB images are ``(H, W, 3)`` uint8, grayscale
images ``(H, W)`` uint8, binary masks ``(H, W)`` bool and label masks
``(H, W)`` uint8 with values in {0, 1, 2} (background, disc rim, cup).
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Literal

import numpy as np
from PIL import Image, UnidentifiedImageError

logger = logging.getLogger(__name__)

BACKGROUND, DISC, CUP = 0, 1, 2

AugmentOp = Literal["hflip", "vflip", "noise"]
AUGMENT_OPS: tuple[AugmentOp, ...] = ("hflip", "vflip", "noise")
NOISE_SIGMA = 10.0


class ImageFormatError(ValueError):
    """Raised when a file cannot be decoded as a supported raster image."""


@dataclasses.dataclass(frozen=True)
class Sample:
    """A training example: grayscale image with its label mask."""

    id: str
    image: np.ndarray
    mask: np.ndarray
    provenance: str = "original"

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ValueError(
                f"sample {self.id}: image {self.image.shape} and mask {self.mask.shape} differ"
            )


def _round_u8(values: np.ndarray) -> np.ndarray:
    # round half up, not numpy's round-half-even
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------- I/O


def _open(path) -> Image.Image:
    path = Path(path)
    try:
        img = Image.open(path)
        if img.format not in ("PNG", "PPM"):
            raise ImageFormatError(f"{path}: unsupported format {img.format}")
        img.load()
    except FileNotFoundError:
        raise
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a PNG or PPM image") from exc
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: truncated or corrupt image data ({exc})") from exc
    return img


def load_image(path) -> np.ndarray:
    """Decode a PNG or binary PPM file to an ``(H, W, 3)`` uint8 array."""
    img = _open(path)
    if img.mode not in ("RGB", "L", "RGBA", "P", "I;16", "I"):
        raise ImageFormatError(f"{path}: unsupported pixel mode {img.mode}")
    return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


def save_image(path, img: np.ndarray) -> None:
    """Encode an RGB or grayscale array. ``.ppm`` paths are written as P6."""
    path = Path(path)
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim == 2:
        pil = Image.fromarray(img, mode="L")
        if path.suffix.lower() == ".ppm":
            pil = pil.convert("RGB")
    elif img.ndim == 3 and img.shape[2] == 3:
        pil = Image.fromarray(img, mode="RGB")
    else:
        raise ValueError(f"cannot encode array of shape {img.shape}")
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    pil.save(path, format=fmt)


def load_gray(path) -> np.ndarray:
    """Read a single-channel image without any colour conversion."""
    img = _open(path)
    if img.mode == "L":
        return np.asarray(img, dtype=np.uint8).copy()
    return to_grayscale(np.asarray(img.convert("RGB"), dtype=np.uint8))


def load_binary_mask(path, threshold: int = 128) -> np.ndarray:
    """Read a ground-truth disc or cup mask; pixels >= ``threshold`` are inside."""
    return load_gray(path) >= threshold


def load_label_mask(path) -> np.ndarray:
    """Read a label mask stored as {0,1,2}, or as {0,128,255} from annotation tools."""
    raw = load_gray(path)
    if raw.max(initial=0) <= CUP:
        return raw
    labels = np.zeros(raw.shape, dtype=np.uint8)
    labels[raw >= 64] = DISC
    labels[raw >= 192] = CUP
    return labels


def save_label_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(mask, dtype=np.uint8), mode="L").save(
        Path(path), format="PNG"
    )


# ------------------------------------------------------------------ conversions


def to_grayscale(img: np.ndarray, method: str = "luma") -> np.ndarray:
    """Collapse an RGB image to one channel.

    ``luma`` uses the 0.299/0.587/0.114 weights; ``green`` keeps the green
    channel, which carries most vessel/disc contrast in fundus photographs.
    """
    if method == "green":
        return img[..., 1].copy()
    if method != "luma":
        raise ValueError(f"unknown grayscale method {method!r}")
    rgb = img.astype(np.float64)
    return _round_u8(0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2])


def _tile_edges(length: int, n: int) -> np.ndarray:
    return np.array([(i * length) // n for i in range(n + 1)])


def clahe_tile_luts(
    img: np.ndarray,
    clip_limit: float = 2.0,
    tiles: tuple[int, int] = (8, 8),
    n_bins: int = 256,
) -> np.ndarray:
    """Per-tile grey-level mappings, shape ``(tile_rows, tile_cols, 256)``.

    Each tile histogram is clipped at ``clip_limit`` times the uniform bin
    height, the excess is spread evenly over all bins, and the cumulative
    histogram is scaled onto the image's own ``[min, max]`` grey range.
    """
    if clip_limit < 1:
        raise ValueError("clip_limit must be >= 1")
    h, w = img.shape
    ty, tx = tiles
    if ty <= 0 or tx <= 0 or ty > h or tx > w:
        raise ValueError(f"tile grid {tiles} has zero-area tiles for a {w}x{h} image")
    row_edges, col_edges = _tile_edges(h, ty), _tile_edges(w, tx)
    lo, hi = int(img.min()), int(img.max())
    bin_of = (img.astype(np.int64) * n_bins) // 256

    luts = np.empty((ty, tx, 256), dtype=np.float64)
    for i in range(ty):
        for j in range(tx):
            tile = bin_of[row_edges[i]:row_edges[i + 1], col_edges[j]:col_edges[j + 1]]
            area = tile.size
            hist = np.bincount(tile.ravel(), minlength=n_bins).astype(np.int64)
            clip = max(1, int(clip_limit * area / n_bins))
            excess = int(np.maximum(hist - clip, 0).sum())
            hist = np.minimum(hist, clip)
            hist += excess // n_bins
            residual = excess % n_bins
            if residual:
                step = max(n_bins // residual, 1)
                hist[::step][:residual] += 1
            cdf = np.cumsum(hist) / area
            luts[i, j] = lo + cdf[(np.arange(256) * n_bins) // 256] * (hi - lo)
    return luts


def _interp_axis(length: int, edges: np.ndarray):
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(length, dtype=np.float64)
    upper = np.searchsorted(centers, pos, side="right")
    i0 = np.clip(upper - 1, 0, len(centers) - 1)
    i1 = np.clip(upper, 0, len(centers) - 1)
    span = centers[i1] - centers[i0]
    weight = np.where(span > 0, (pos - centers[i0]) / np.where(span > 0, span, 1), 0.0)
    return i0, i1, np.clip(weight, 0.0, 1.0)


def clahe(
    img: np.ndarray,
    clip_limit: float = 2.0,
    tiles: tuple[int, int] = (8, 8),
    n_bins: int = 256,
) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization of a uint8 image.

    Tile mappings are blended bilinearly between tile centres; pixels outside
    the outermost centres use the nearest tile's mapping along that axis.
    Output stays within the input's grey range, so constant images pass
    through unchanged.
    """
    luts = clahe_tile_luts(img, clip_limit, tiles, n_bins)
    h, w = img.shape
    r0, r1, wy = _interp_axis(h, _tile_edges(h, tiles[0]))
    c0, c1, wx = _interp_axis(w, _tile_edges(w, tiles[1]))
    v = img.astype(np.intp)
    R0, R1, WY = r0[:, None], r1[:, None], wy[:, None]
    C0, C1, WX = c0[None, :], c1[None, :], wx[None, :]
    top = (1 - WX) * luts[R0, C0, v] + WX * luts[R0, C1, v]
    bottom = (1 - WX) * luts[R1, C0, v] + WX * luts[R1, C1, v]
    return _round_u8((1 - WY) * top + WY * bottom)


def merge_masks(disc: np.ndarray, cup: np.ndarray) -> tuple[np.ndarray, int]:
    """Combine binary disc and cup masks into one label mask.

    Cup pixels lying outside the disc are dropped; their count is returned
    alongside the labels.
    """
    if disc.shape != cup.shape:
        raise ValueError(f"disc mask {disc.shape} and cup mask {cup.shape} differ in size")
    disc = disc.astype(bool)
    cup = cup.astype(bool)
    outside = int(np.count_nonzero(cup & ~disc))
    if outside:
        logger.warning("%d cup pixels outside the disc were clipped", outside)
    labels = np.zeros(disc.shape, dtype=np.uint8)
    labels[disc] = DISC
    labels[cup & disc] = CUP
    return labels, outside


def split_label_mask(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(disc, cup)`` binary masks; the disc includes the cup."""
    return mask >= DISC, mask == CUP


# --------------------------------------------------------------------- resizing


def _corner_aligned(n_out: int, n_in: int) -> np.ndarray:
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resize_image(img: np.ndarray, w: int, h: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling."""
    if w <= 0 or h <= 0:
        raise ValueError("target size must be positive")
    in_h, in_w = img.shape
    if (in_w, in_h) == (w, h):
        return img.copy()
    ys, xs = _corner_aligned(h, in_h), _corner_aligned(w, in_w)
    y0 = np.minimum(np.floor(ys).astype(np.intp), in_h - 1)
    x0 = np.minimum(np.floor(xs).astype(np.intp), in_w - 1)
    y1, x1 = np.minimum(y0 + 1, in_h - 1), np.minimum(x0 + 1, in_w - 1)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    src = img.astype(np.float64)
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return _round_u8(top * (1 - fy) + bottom * fy)


def resize_mask(mask: np.ndarray, w: int, h: int) -> np.ndarray:
    """Nearest-neighbour resize, so labels never blend."""
    if w <= 0 or h <= 0:
        raise ValueError("target size must be positive")
    in_h, in_w = mask.shape
    ys = np.minimum(((np.arange(h) + 0.5) * in_h / h).astype(np.intp), in_h - 1)
    xs = np.minimum(((np.arange(w) + 0.5) * in_w / w).astype(np.intp), in_w - 1)
    return mask[ys][:, xs].copy()


# ------------------------------------------------------------------ augmentation


def augment(sample: Sample, op: AugmentOp, seed: int) -> Sample:
    """Apply one augmentation; flips touch image and mask alike, noise only the image."""
    if op == "hflip":
        image, mask = sample.image[:, ::-1], sample.mask[:, ::-1]
    elif op == "vflip":
        image, mask = sample.image[::-1], sample.mask[::-1]
    elif op == "noise":
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, NOISE_SIGMA, size=sample.image.shape)
        image, mask = _round_u8(sample.image + noise), sample.mask
    else:
        raise ValueError(f"unknown augmentation {op!r}")
    return Sample(
        id=sample.id,
        image=np.ascontiguousarray(image),
        mask=np.ascontiguousarray(mask),
        provenance=op,
    )


def expand_dataset(samples: list[Sample], target: int, seed: int) -> list[Sample]:
    """Grow ``samples`` to ``target`` entries with flipped and noisy copies.

    Originals come first, in their given order. Augmented copies follow,
    cycling through every (sample, operation) pair in an order fixed by
    ``seed``.
    """
    if not samples:
        raise ValueError("cannot augment an empty dataset")
    if target < len(samples):
        raise ValueError(f"target {target} is smaller than the {len(samples)} input samples")
    rng = np.random.default_rng(seed)
    pairs = [(i, op) for op in AUGMENT_OPS for i in rng.permutation(len(samples))]
    out = list(samples)
    k = 0
    while len(out) < target:
        i, op = pairs[k % len(pairs)]
        aug = augment(samples[i], op, int(rng.integers(2**63)))
        out.append(dataclasses.replace(aug, id=f"{samples[i].id}~{op}{k}"))
        k += 1
    return out
