"""Synthetic fundus phantoms: rasterized elliptical disc and cup on a retina-like background."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .imaging import save_image


def ellipse_mask(shape: tuple[int, int], center: tuple[float, float], semi_axes: tuple[float, float],
                 angle_deg: float = 0.0) -> np.ndarray:
    """Pixels whose centres lie inside an ellipse.

    ``center`` is ``(x, y)`` in pixel coordinates, ``semi_axes`` is
    ``(a, b)`` with ``a`` along the x axis before rotation, and the rotation
    is counter-clockwise on screen.
    """
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - center[0], ys - center[1]
    t = np.deg2rad(angle_deg)
    u = dx * np.cos(t) - dy * np.sin(t)
    v = dx * np.sin(t) + dy * np.cos(t)
    a, b = semi_axes
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def circle_mask(shape, center, radius) -> np.ndarray:
    return ellipse_mask(shape, center, (radius, radius))


BACKGROUND_RGB = np.array([150.0, 62.0, 28.0])
DISC_RGB = np.array([228.0, 168.0, 92.0])
CUP_RGB = np.array([250.0, 232.0, 176.0])


def render_fundus(disc: np.ndarray, cup: np.ndarray, rng: np.random.Generator,
                  noise: float = 4.0) -> np.ndarray:
    """Paint an RGB fundus-like image for the given disc and cup masks."""
    h, w = disc.shape
    ys, xs = np.mgrid[0:h, 0:w]
    r = np.hypot((xs - w / 2) / w, (ys - h / 2) / h)
    vignette = np.clip(1.0 - 0.8 * r**2, 0.3, 1.0)[..., None]
    img = BACKGROUND_RGB * vignette
    img = np.where(disc[..., None], DISC_RGB, img)
    img = np.where(cup[..., None], CUP_RGB, img)
    img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def random_phantom(size: int, glaucoma: bool, rng: np.random.Generator):
    """Draw one phantom eye; glaucomatous eyes get a large, inferiorly displaced cup."""
    cx = size / 2 + rng.uniform(-0.08, 0.08) * size
    cy = size / 2 + rng.uniform(-0.08, 0.08) * size
    disc_a = size * rng.uniform(0.22, 0.28)
    disc_b = disc_a * rng.uniform(1.0, 1.12)
    if glaucoma:
        ratio = rng.uniform(0.55, 0.75)
        shift = disc_b * rng.uniform(0.08, 0.18)
        elong = rng.uniform(1.05, 1.25)
    else:
        ratio = rng.uniform(0.28, 0.45)
        shift = disc_b * rng.uniform(-0.04, 0.04)
        elong = rng.uniform(0.95, 1.05)
    disc = ellipse_mask((size, size), (cx, cy), (disc_a, disc_b))
    cup = ellipse_mask((size, size), (cx, cy + shift), (disc_a * ratio, disc_b * ratio * elong))
    cup &= disc
    return render_fundus(disc, cup, rng), disc, cup


def make_phantom_dataset(out_dir, n_train: int = 8, n_test: int = 4, size: int = 64,
                         seed: int = 0) -> Path:
    """Write phantom images, masks and a manifest CSV; returns the manifest path.

    Labels alternate glaucoma/normal so both classes appear in each split.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for split, count in (("train", n_train), ("test", n_test)):
        for k in range(count):
            eid = f"{split}{k:03d}"
            glaucoma = k % 2 == 0
            img, disc, cup = random_phantom(size, glaucoma, rng)
            save_image(out_dir / "images" / f"{eid}.png", img)
            save_image(out_dir / "masks" / f"{eid}_disc.png", disc.astype(np.uint8) * 255)
            save_image(out_dir / "masks" / f"{eid}_cup.png", cup.astype(np.uint8) * 255)
            rows.append({
                "id": eid,
                "image": f"images/{eid}.png",
                "disc_mask": f"masks/{eid}_disc.png",
                "cup_mask": f"masks/{eid}_cup.png",
                "split": split,
                "label": "glaucoma" if glaucoma else "normal",
            })
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return manifest
