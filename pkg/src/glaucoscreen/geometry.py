"""Shape measurements on disc/cup masks and the ISNT rim-thickness features.

Angles follow the clock face on the displayed image: 0 degrees points to the
top of the image (decreasing row) and angles increase clockwise, so the
inferior quadrant 136..225 faces the bottom edge.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy import ndimage

RAY_STEP = 0.25
ANGLES = np.arange(360)

QUADRANTS = {
    "superior": np.r_[0:46, 316:360],
    "temporal": np.arange(46, 136),
    "inferior": np.arange(136, 226),
    "nasal": np.arange(226, 316),
}

FEATURE_NAMES = (
    "acdr",
    "dcdr",
    "cup_diameter",
    "disc_diameter",
    "cup_area",
    "disc_area",
    "s_distance",
    "i_distance",
)


class EmptyMaskError(ValueError):
    """A measurement needs at least one foreground pixel."""


@dataclasses.dataclass(frozen=True)
class ShapeStats:
    area: int
    centroid: tuple[float, float]  # (x, y)
    major_axis_len: float


@dataclasses.dataclass
class RimProfile:
    t: np.ndarray  # rim thickness per degree, pixels
    x: np.ndarray  # t / k
    k: float
    fallback_count: int
    center: tuple[float, float]


@dataclasses.dataclass(frozen=True)
class QuadrantMeans:
    inferior: float
    superior: float
    nasal: float
    temporal: float


@dataclasses.dataclass(frozen=True)
class FeatureVector:
    acdr: float
    dcdr: float
    cup_diameter: float
    disc_diameter: float
    cup_area: float
    disc_area: float
    s_distance: float
    i_distance: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "FeatureVector":
        return cls(*(float(v) for v in values))


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep the largest 4-connected foreground blob (earliest in scan order on ties)."""
    labels, n = ndimage.label(mask)
    if n == 0:
        return np.zeros(mask.shape, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def shape_stats(mask: np.ndarray) -> ShapeStats:
    """Area, centroid and moment-ellipse major axis length of a binary mask."""
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        raise EmptyMaskError("shape statistics of an empty mask")
    cx, cy = xs.mean(), ys.mean()
    cov = np.cov(np.vstack([xs, ys]).astype(np.float64), bias=True)
    lam_max = max(float(np.linalg.eigvalsh(cov)[-1]), 0.0)
    return ShapeStats(area=int(xs.size), centroid=(float(cx), float(cy)),
                      major_axis_len=4.0 * np.sqrt(lam_max))


def _ray_distances(mask: np.ndarray, center, angles_deg) -> np.ndarray:
    """Farthest foreground distance along each ray, NaN where the ray misses.

    The mask is read through bilinear interpolation at ``RAY_STEP`` spacing;
    a sample counts as foreground at interpolated value >= 0.5 and the exit
    point is refined linearly between the last inside and first outside sample.
    """
    h, w = mask.shape
    cx, cy = center
    if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
        raise ValueError(f"center ({cx:.2f}, {cy:.2f}) lies outside the {w}x{h} image")
    theta = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    ux, uy = np.sin(theta), -np.cos(theta)
    t_max = np.hypot(h, w)
    ts = np.arange(0.0, t_max + RAY_STEP, RAY_STEP)
    px = cx + ux[:, None] * ts[None, :]
    py = cy + uy[:, None] * ts[None, :]
    vals = ndimage.map_coordinates(mask.astype(np.float64), [py, px], order=1,
                                   mode="constant", cval=0.0)
    inside = vals >= 0.5
    has_hit = inside.any(axis=1)
    last = inside.shape[1] - 1 - np.argmax(inside[:, ::-1], axis=1)
    nxt = np.minimum(last + 1, inside.shape[1] - 1)
    rows = np.arange(len(theta))
    v0, v1 = vals[rows, last], vals[rows, nxt]
    denom = np.where(v0 - v1 > 0, v0 - v1, 1.0)
    frac = np.where(nxt > last, np.clip((v0 - 0.5) / denom, 0.0, 1.0), 0.0)
    dist = ts[last] + frac * RAY_STEP
    return np.where(has_hit, dist, np.nan)


def boundary_distance_at_angle(mask: np.ndarray, center, theta_deg: float):
    """Distance from ``center`` to the mask boundary along one ray, or None on a miss."""
    if not 0 <= theta_deg < 360:
        raise ValueError("angle must lie in [0, 360)")
    d = _ray_distances(mask, center, [theta_deg])[0]
    return None if np.isnan(d) else float(d)


def rim_profile(disc: np.ndarray, cup: np.ndarray) -> RimProfile:
    """Rim thickness at every whole degree, measured from the disc centroid.

    Both boundaries are located along the same ray from the disc centre.
    Rays that miss the cup use a cup distance of zero and are counted in
    ``fallback_count``.
    """
    stats = shape_stats(disc)
    k = stats.major_axis_len
    if k <= 0:
        raise EmptyMaskError("disc major axis has zero length")
    disc_d = _ray_distances(disc, stats.centroid, ANGLES)
    disc_d = np.nan_to_num(disc_d, nan=0.0)
    cup_d = _ray_distances(cup, stats.centroid, ANGLES)
    misses = np.isnan(cup_d)
    t = disc_d - np.where(misses, 0.0, cup_d)
    return RimProfile(t=t, x=t / k, k=k, fallback_count=int(misses.sum()),
                      center=stats.centroid)


def quadrant_means(profile: RimProfile) -> QuadrantMeans:
    return QuadrantMeans(**{name: float(profile.x[idx].mean()) for name, idx in QUADRANTS.items()})


def compute_features(disc: np.ndarray, cup: np.ndarray) -> FeatureVector:
    """The eight classifier inputs for one eye.

    Both masks are reduced to their largest component first. An empty cup
    gives zero cup measurements and a rim measured against the disc alone.
    """
    disc = largest_component(disc)
    cup = largest_component(cup)
    if not disc.any():
        raise EmptyMaskError("disc mask is empty")
    d = shape_stats(disc)
    if cup.any():
        c = shape_stats(cup)
        cup_area, cup_diam = c.area, c.major_axis_len
    else:
        cup_area, cup_diam = 0, 0.0
    q = quadrant_means(rim_profile(disc, cup))
    return FeatureVector(
        acdr=cup_area / d.area,
        dcdr=cup_diam / d.major_axis_len if d.major_axis_len > 0 else 0.0,
        cup_diameter=cup_diam,
        disc_diameter=d.major_axis_len,
        cup_area=float(cup_area),
        disc_area=float(d.area),
        s_distance=q.superior,
        i_distance=q.inferior,
    )
