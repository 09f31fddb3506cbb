"""Shape families, raster primitives, and the pixel measurements that back
the difficulty-tag postconditions."""

from __future__ import annotations

import numpy as np

from ..tensor import interp_matrix


def _polygon(n: int, r: float = 1.0, phase: float = np.pi / 2) -> np.ndarray:
    a = phase + 2 * np.pi * np.arange(n) / n
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


def _star(points: int = 5, inner: float = 0.45) -> np.ndarray:
    a = np.pi / 2 + np.pi * np.arange(2 * points) / points
    r = np.where(np.arange(2 * points) % 2 == 0, 1.0, inner)
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


_ARROW = np.array([[1.0, 0.0], [0.1, 0.8], [0.1, 0.3], [-1.0, 0.3], [-1.0, -0.3], [0.1, -0.3], [0.1, -0.8]])


def inside_polygon(u: np.ndarray, v: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule point-in-polygon test, vectorized over points."""
    inside = np.zeros(u.shape, dtype=bool)
    x0, y0 = poly[-1]
    for x1, y1 in poly:
        crosses = (y1 > v) != (y0 > v)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (v - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (u < xint)
        x0, y0 = x1, y1
    return inside


def _disk(u, v):
    return u * u + v * v <= 1.0


def _square(u, v):
    return np.maximum(np.abs(u), np.abs(v)) <= 0.85


def _triangle(u, v):
    return inside_polygon(u, v, _polygon(3))


def _cross(u, v):
    au, av = np.abs(u), np.abs(v)
    return ((au <= 0.3) & (av <= 1.0)) | ((av <= 0.3) & (au <= 1.0))


def _ring(u, v):
    r2 = u * u + v * v
    return (r2 <= 1.0) & (r2 >= 0.55**2)


def _star5(u, v):
    return inside_polygon(u, v, _star())


def _bar(u, v):
    return (np.abs(u) <= 1.0) & (np.abs(v) <= 0.35)


def _lshape(u, v):
    return ((u >= -0.9) & (u <= -0.3) & (np.abs(v) <= 0.9)) | ((np.abs(u) <= 0.9) & (v >= 0.3) & (v <= 0.9))


def _hexagon(u, v):
    return inside_polygon(u, v, _polygon(6, phase=0.0))


def _crescent(u, v):
    return (u * u + v * v <= 1.0) & ((u - 0.45) ** 2 + v * v > 0.8**2)


def _arrow(u, v):
    return inside_polygon(u, v, _ARROW)


def _tshape(u, v):
    return ((np.abs(u) <= 0.9) & (v >= -0.9) & (v <= -0.4)) | ((np.abs(u) <= 0.25) & (np.abs(v) <= 0.9))


# family -> (indicator on local coords, stripe angle in degrees, stripe period in px)
FAMILIES = {
    "disk": (_disk, 0.0, 4.0),
    "square": (_square, 45.0, 6.0),
    "triangle": (_triangle, 90.0, 4.0),
    "cross": (_cross, 135.0, 6.0),
    "ring": (_ring, 22.5, 5.0),
    "star": (_star5, 67.5, 3.0),
    "bar": (_bar, 112.5, 5.0),
    "lshape": (_lshape, 157.5, 3.0),
    "hexagon": (_hexagon, 30.0, 4.5),
    "crescent": (_crescent, 120.0, 3.5),
    "arrow": (_arrow, 75.0, 5.5),
    "tshape": (_tshape, 165.0, 4.0),
}

BASE_FAMILIES = ("disk", "square", "triangle", "cross", "ring", "star", "bar", "lshape")
NOVEL_FAMILIES = ("hexagon", "crescent", "arrow", "tshape")


def pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return xs, ys


def render_mask(family: str, h: int, w: int, cx: float, cy: float, angle: float,
                half_u: float, half_v: float) -> np.ndarray:
    """Rasterize a family at pixel centers after rotation and axis scaling."""
    fn = FAMILIES[family][0]
    xs, ys = pixel_grid(h, w)
    dx, dy = xs - cx, ys - cy
    c, s = np.cos(angle), np.sin(angle)
    u = (c * dx + s * dy) / half_u
    v = (-s * dx + c * dy) / half_v
    return fn(u, v).astype(np.uint8)


def stripes(h: int, w: int, deg: float, period: float, phase: float, amplitude: float) -> np.ndarray:
    xs, ys = pixel_grid(h, w)
    t = np.deg2rad(deg)
    return amplitude * np.sin(2 * np.pi * (xs * np.cos(t) + ys * np.sin(t)) / period + phase)


def stripe_texture(family: str, h: int, w: int, phase: float, amplitude: float) -> np.ndarray:
    _, deg, period = FAMILIES[family]
    return stripes(h, w, deg, period, phase, amplitude)


def box_blur(img: np.ndarray, k: int) -> np.ndarray:
    """k x k mean filter with edge replication."""
    r = k // 2
    p = np.pad(img, r, mode="edge")
    h, w = img.shape
    acc = np.zeros_like(img, dtype=np.float64)
    for i in range(k):
        for j in range(k):
            acc += p[i : i + h, j : j + w]
    return acc / (k * k)


def value_noise(rng: np.random.Generator, h: int, w: int, cells: int = 9) -> np.ndarray:
    """Seeded lattice noise in [0, 1], bilinearly interpolated then smoothed twice."""
    grid = rng.uniform(0.0, 1.0, (cells, cells))
    n = interp_matrix(cells, h) @ grid @ interp_matrix(cells, w).T
    return box_blur(box_blur(n, 3), 3)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev-ball dilation."""
    m = mask.astype(bool)
    h, w = m.shape
    p = np.pad(m, radius)
    out = np.zeros_like(m)
    for i in range(2 * radius + 1):
        for j in range(2 * radius + 1):
            out |= p[i : i + h, j : j + w]
    return out


# --- measurements ------------------------------------------------------------

RING_WIDTH = 3


def area_fraction(mask: np.ndarray) -> float:
    return float(np.count_nonzero(mask)) / mask.size


def background_ring(mask: np.ndarray, width: int = RING_WIDTH) -> np.ndarray:
    return dilate(mask, width) & ~mask.astype(bool)


def camouflage_contrast(image: np.ndarray, mask: np.ndarray, width: int = RING_WIDTH) -> float:
    """|mean intensity on the target - mean intensity on the surrounding ring|."""
    fg = mask.astype(bool)
    ring = background_ring(mask, width)
    return abs(float(image[fg].mean()) - float(image[ring].mean()))


def aspect_ratio(mask: np.ndarray) -> float:
    """Principal-axis elongation of the foreground, each pixel treated as a unit square."""
    ys, xs = np.nonzero(mask)
    pts = np.stack([xs, ys], axis=1).astype(np.float64)
    cov = np.cov(pts.T, bias=True) if len(pts) > 1 else np.zeros((2, 2))
    lo, hi = np.linalg.eigvalsh(cov)
    return float(np.sqrt((hi + 1 / 12) / (max(lo, 0.0) + 1 / 12)))
