"""Deterministic synthetic scenes with easy supports and hard queries.

Supports are a single textured shape near the frame center on value-noise
background. Queries start from the same kind of render placed anywhere, then
receive one or two difficulty tags and a same-sized distractor from another
family of the split, so the query alone does not identify the target.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import pnm
from .shapes import (
    BASE_FAMILIES,
    FAMILIES,
    NOVEL_FAMILIES,
    RING_WIDTH,
    area_fraction,
    aspect_ratio,
    background_ring,
    box_blur,
    camouflage_contrast,
    dilate,
    render_mask,
    stripe_texture,
    stripes,
    value_noise,
)

TAGS = ("camouflage", "small", "elongated", "missing", "blur")
# transforms always run in this order regardless of how tags were drawn
_TAG_ORDER = ("small", "elongated", "camouflage", "missing", "blur")

SMALL_LIMIT = 0.01
CAMOUFLAGE_LIMIT = 0.05
ELONGATION_MIN = 8.0
ERASURE_MIN = 0.30


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    size: int = 64
    base_classes: tuple[str, ...] = BASE_FAMILIES
    novel_classes: tuple[str, ...] = NOVEL_FAMILIES
    train_support: int = 40
    train_query: int = 40
    test_support: int = 20
    test_query: int = 20
    distractor_prob: float = 1.0
    two_tag_prob: float = 0.4
    texture_amplitude: float = 0.2
    # shape half-extent as a fraction of the frame size; equal ranges so size does not
    # tell the target from the distractor
    target_scale: tuple[float, float] = (0.15, 0.25)
    distractor_scale: tuple[float, float] = (0.15, 0.25)
    # support targets sit within this fraction of the frame from the center; None places anywhere
    support_jitter: float | None = 0.08
    # classless striped blobs added to every background, supports included
    clutter: int = 0
    clutter_scale: tuple[float, float] = (0.08, 0.14)
    max_attempts: int = 200

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> GenConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise DatasetError(f"unknown generator keys: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)


@dataclass
class Render:
    image: np.ndarray
    mask: np.ndarray
    tags: tuple[str, ...] = ()
    measured: dict = field(default_factory=dict)


# --- scene pieces --------------------------------------------------------------


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(0.3, 0.7)
    return base + 0.3 * (value_noise(rng, size, size) - 0.5)


def _place_shape(rng, family, size, scale_range=(0.125, 0.22), avoid=None, tries=60, jitter=None):
    """Random rotation, scale and position; ``jitter`` pins the center to within that
    fraction of the frame from the middle."""
    for _ in range(tries):
        r = size * rng.uniform(*scale_range)
        margin = r + 1
        if jitter is None:
            cx, cy = rng.uniform(margin, size - margin, 2)
        else:
            cx, cy = size / 2 + size * rng.uniform(-jitter, jitter, 2)
        mask = render_mask(family, size, size, cx, cy, rng.uniform(0, 2 * np.pi), r, r)
        if mask.sum() < 8:
            continue
        if avoid is not None and (mask.astype(bool) & avoid).any():
            continue
        return mask
    return None


def _appearance(family, size, mean, rng, amplitude):
    """Full-frame target look: the family's stripes around ``mean`` at a random phase."""
    return mean + stripe_texture(family, size, size, rng.uniform(0, 2 * np.pi), amplitude)


def _paint(image, mask, layer):
    return np.where(mask.astype(bool), layer, image)


def _add_clutter(rng, bg, keep_out, count, scale_range, amplitude) -> np.ndarray:
    """Paint ``count`` ellipses with random stripes (no class's texture) onto ``bg``."""
    size = bg.shape[0]
    avoid = keep_out.astype(bool)
    for _ in range(count):
        r = size * rng.uniform(*scale_range)
        for _ in range(40):
            cx, cy = rng.uniform(r + 1, size - r - 1, 2)
            blob = render_mask("disk", size, size, cx, cy, rng.uniform(0, np.pi), r, r * rng.uniform(0.5, 1.0))
            if blob.any() and not (blob.astype(bool) & avoid).any():
                break
        else:
            continue
        look = _contrasting_mean(rng, float(bg.mean())) + stripes(
            size, size, rng.uniform(0, 180), rng.uniform(3, 6), rng.uniform(0, 2 * np.pi), amplitude)
        bg = _paint(bg, blob, look)
        avoid |= dilate(blob, 2).astype(bool)
    return bg


def _contrasting_mean(rng, bg_mean):
    for _ in range(100):
        v = rng.uniform(0.15, 0.85)
        if abs(v - bg_mean) >= 0.3:
            return v
    return 0.15 if bg_mean > 0.5 else 0.85


def clean_render(rng: np.random.Generator, family: str, size: int, amplitude: float = 0.12,
                 scale_range: tuple[float, float] = (0.125, 0.22), jitter: float | None = None,
                 clutter: int = 0, clutter_scale: tuple[float, float] = (0.08, 0.14)):
    """Background layer (clutter included), target mask, composited clean image, and the
    target appearance layer."""
    bg = _background(rng, size)
    mask = _place_shape(rng, family, size, scale_range, jitter=jitter)
    if mask is None:
        raise DatasetError(f"could not place {family} in a {size}x{size} frame")
    if clutter:
        bg = _add_clutter(rng, bg, dilate(mask, RING_WIDTH + 2), clutter, clutter_scale, amplitude)
    look = _appearance(family, size, _contrasting_mean(rng, float(bg.mean())), rng, amplitude)
    return bg, mask, _paint(bg, mask, look), look


# --- hard transforms -------------------------------------------------------------


def _warp_target(image, mask, rng, background, su, sv, angle, appearance=None):
    """Rescale the target about a new center by (su, sv) along a rotated frame.

    Nearest-neighbour inverse mapping keeps the mask binary. With an
    ``appearance`` layer the warped silhouette is repainted from it, so the
    class texture keeps its period instead of being resampled.
    """
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    c_old = np.array([xs.mean(), ys.mean()])
    ext = np.array([su * (xs.max() - xs.min() + 1), sv * (ys.max() - ys.min() + 1)])
    half = 0.5 * max(ext) + 1
    lo, hi = min(half, w / 2), max(w - half, w / 2)
    c_new = c_old if np.all((c_old >= lo) & (c_old <= hi)) else np.clip(c_old, lo, hi)
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = gx - c_new[0], gy - c_new[1]
    c, s = np.cos(angle), np.sin(angle)
    u = (c * dx + s * dy) / su
    v = (-s * dx + c * dy) / sv
    sx = np.rint(c_old[0] + c * u - s * v).astype(int)
    sy = np.rint(c_old[1] + s * u + c * v).astype(int)
    valid = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    sx, sy = np.clip(sx, 0, w - 1), np.clip(sy, 0, h - 1)
    new_mask = (mask[sy, sx].astype(bool) & valid)
    fill = background if background is not None else _ring_fill(image, mask)
    out = np.where(mask.astype(bool), fill, image)
    out = np.where(new_mask, image[sy, sx] if appearance is None else appearance, out)
    return out, new_mask.astype(np.uint8)


def _ring_fill(image, mask):
    ring = background_ring(mask)
    return np.full_like(image, image[ring].mean() if ring.any() else image.mean())


def _small(image, mask, rng, background, appearance=None):
    area = mask.sum()
    for _ in range(50):
        target = rng.uniform(10, 0.9 * SMALL_LIMIT * mask.size)
        s = np.sqrt(target / area)
        img2, m2 = _warp_target(image, mask, rng, background, s, s, rng.uniform(0, np.pi), appearance)
        if 4 <= m2.sum() and area_fraction(m2) < SMALL_LIMIT:
            return img2, m2
    raise DatasetError("small transform failed to shrink the target")


def _elongated(image, mask, rng, background, appearance=None):
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    extent = max(xs.max() - xs.min(), ys.max() - ys.min()) + 1
    angle = rng.uniform(0, np.pi)
    ratio = rng.uniform(10.0, 14.0)
    for _ in range(30):
        length = rng.uniform(0.75, 0.9) * min(h, w)
        su = length / extent
        sv = su / ratio
        img2, m2 = _warp_target(image, mask, rng, background, su, sv, angle, appearance)
        if m2.sum() >= 8 and aspect_ratio(m2) >= ELONGATION_MIN:
            return img2, m2
        ratio *= 1.25
    raise DatasetError("elongated transform failed to reach the aspect bound")


def _camouflage(image, mask, rng, background, appearance=None):
    m = mask.astype(bool)
    ring = background_ring(mask)
    out = image.copy()
    out[m] += image[ring].mean() - image[m].mean()
    return out, mask


def _missing(image, mask, rng, background, appearance=None):
    h, w = mask.shape
    m = mask.astype(bool)
    ys, xs = np.nonzero(m)
    k = rng.integers(len(xs))
    px, py = xs[k], ys[k]
    theta = rng.uniform(0, np.pi)
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    dist = np.abs(-(gx - px) * np.sin(theta) + (gy - py) * np.cos(theta))
    fill = background if background is not None else _ring_fill(image, mask)
    width = 1.0
    while True:
        bar = dist <= width
        if (bar & m).sum() >= ERASURE_MIN * m.sum() or width > max(h, w):
            break
        width += 1.0
    out = np.where(bar, fill, image)
    return out, mask


def _blur(image, mask, rng, background, appearance=None):
    return box_blur(box_blur(image, 5), 5), mask


_TRANSFORMS = {
    "small": _small,
    "elongated": _elongated,
    "camouflage": _camouflage,
    "missing": _missing,
    "blur": _blur,
}


def apply_hard_transform(image, mask, tag, rng, background=None, appearance=None):
    """Apply one difficulty tag; returns ``(image, mask)``.

    ``background`` is the target-free layer used to fill pixels the transform
    vacates; without it a flat fill at the surrounding ring mean is used.
    ``appearance`` (full-frame target look) lets the geometric tags repaint
    the reshaped target rather than resample it.
    """
    if tag not in _TRANSFORMS:
        raise DatasetError(f"unknown tag {tag!r}; expected one of {TAGS}")
    return _TRANSFORMS[tag](np.asarray(image, dtype=np.float64), np.asarray(mask, dtype=np.uint8), rng,
                            background, appearance)


def _draw_tags(rng, two_tag_prob: float) -> tuple[str, ...]:
    n = 2 if rng.uniform() < two_tag_prob else 1
    while True:
        tags = tuple(sorted(rng.choice(len(TAGS), n, replace=False)))
        names = tuple(TAGS[i] for i in tags)
        if not {"small", "elongated"} <= set(names):
            return names


def check_tags(image: np.ndarray, mask: np.ndarray, tags, measured: dict) -> list[str]:
    """Names of the tag postconditions the sample violates."""
    bad = []
    if mask.sum() < 1:
        bad.append("empty")
    if "small" in tags and not area_fraction(mask) < SMALL_LIMIT:
        bad.append("small")
    if "elongated" in tags and not aspect_ratio(mask) >= ELONGATION_MIN:
        bad.append("elongated")
    if "camouflage" in tags and not camouflage_contrast(image, mask) < CAMOUFLAGE_LIMIT:
        bad.append("camouflage")
    if "missing" in tags and not measured.get("erased", 0.0) >= ERASURE_MIN:
        bad.append("missing")
    return bad


def _quantized(img: np.ndarray) -> np.ndarray:
    return pnm.quantize(img).astype(np.float64) / 255.0


def render_support(rng, family: str, cfg: GenConfig) -> Render:
    _, mask, img, _ = clean_render(rng, family, cfg.size, cfg.texture_amplitude, cfg.target_scale,
                                   cfg.support_jitter, cfg.clutter, cfg.clutter_scale)
    return Render(_quantized(img), mask)


def render_query(rng, family: str, distractors: tuple[str, ...], cfg: GenConfig) -> Render:
    for _ in range(cfg.max_attempts):
        tags = _draw_tags(rng, cfg.two_tag_prob)
        bg, mask, img, look = clean_render(rng, family, cfg.size, cfg.texture_amplitude, cfg.target_scale,
                                           None, cfg.clutter, cfg.clutter_scale)
        measured: dict = {}
        try:
            for tag in _TAG_ORDER[:2]:
                if tag in tags:
                    img, mask = apply_hard_transform(img, mask, tag, rng, bg, look)
        except DatasetError:
            continue
        if distractors and rng.uniform() < cfg.distractor_prob:
            other = distractors[rng.integers(len(distractors))]
            keep_out = dilate(mask, RING_WIDTH + 2)
            dmask = _place_shape(rng, other, cfg.size, cfg.distractor_scale, avoid=keep_out, tries=100)
            if dmask is not None:
                other_look = _appearance(other, cfg.size, _contrasting_mean(rng, float(bg.mean())), rng,
                                         cfg.texture_amplitude)
                img = _paint(img, dmask, other_look)
                bg = np.where(dmask.astype(bool), img, bg)
        for tag in _TAG_ORDER[2:]:
            if tag in tags:
                before = img
                img, mask = apply_hard_transform(img, mask, tag, rng, bg)
                if tag == "missing":
                    changed = (img != before) & mask.astype(bool)
                    measured["erased"] = float(changed.sum()) / float(mask.sum())
        img = _quantized(img)
        if not check_tags(img, mask, tags, measured):
            measured["contrast"] = camouflage_contrast(img, mask)
            measured["aspect"] = aspect_ratio(mask)
            measured["area"] = area_fraction(mask)
            return Render(img, mask, tags, measured)
    raise DatasetError(f"could not satisfy tag postconditions for {family}")


def sample_rng(seed: int, split: str, class_idx: int, role: str, idx: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0 if split == "train" else 1, class_idx, 0 if role == "support" else 1, idx])


def render_sample(cfg: GenConfig, seed: int, split: str, class_id: str, role: str, idx: int) -> Render:
    """The exact raster ``generate_dataset`` writes for one manifest slot."""
    classes = cfg.base_classes if split == "train" else cfg.novel_classes
    rng = sample_rng(seed, split, classes.index(class_id), role, idx)
    if role == "support":
        return render_support(rng, class_id, cfg)
    others = tuple(c for c in classes if c != class_id)
    return render_query(rng, class_id, others, cfg)


def validate_config(cfg: GenConfig) -> None:
    if len(cfg.base_classes) < 2 or len(cfg.novel_classes) < 2:
        raise DatasetError("need at least 2 base and 2 novel classes")
    if set(cfg.base_classes) & set(cfg.novel_classes):
        raise DatasetError("base and novel classes overlap")
    unknown = set(cfg.base_classes + cfg.novel_classes) - set(FAMILIES)
    if unknown:
        raise DatasetError(f"unknown shape families {sorted(unknown)}")
    if cfg.size % 32:
        raise DatasetError("image size must be divisible by 32")


def generate_dataset(cfg: GenConfig, seed: int, root: str | Path):
    """Render every sample, write rasters and manifest.json under ``root``.

    Returns the loaded :class:`~aadfss.dataset.index.DatasetIndex`. Configs with
    fewer test samples than the index minimums are loaded against their own
    counts; ``load_manifest`` on such a root needs the same relaxed limits.
    """
    from .index import MANIFEST, MIN_TEST_QUERY, MIN_TEST_SUPPORT, load_manifest

    validate_config(cfg)
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create {root}: {exc}") from exc
    records = []
    plan = [
        ("train", cfg.base_classes, cfg.train_support, cfg.train_query),
        ("test", cfg.novel_classes, cfg.test_support, cfg.test_query),
    ]
    for split, classes, n_sup, n_qry in plan:
        for cls in classes:
            for role, count in (("support", n_sup), ("query", n_qry)):
                d = root / split / cls / role
                try:
                    d.mkdir(parents=True, exist_ok=True)
                except OSError as exc:
                    raise DatasetError(f"cannot create {d}: {exc}") from exc
                for i in range(count):
                    r = render_sample(cfg, seed, split, cls, role, i)
                    stem = f"{i:04d}"
                    img_rel = f"{split}/{cls}/{role}/{stem}.img.pgm"
                    mask_rel = f"{split}/{cls}/{role}/{stem}.mask.pgm"
                    pnm.write_image(r.image, root / img_rel)
                    pnm.write_mask(r.mask, root / mask_rel)
                    records.append(
                        {"image": img_rel, "mask": mask_rel, "class": cls, "role": role,
                         "tags": list(r.tags), "split": split}
                    )
    (root / MANIFEST).write_text(json.dumps(records, indent=1) + "\n", encoding="utf-8")
    # reduced configs (tests, smoke runs) are loaded against their own counts
    return load_manifest(
        root,
        min_test_support=min(MIN_TEST_SUPPORT, cfg.test_support),
        min_test_query=min(MIN_TEST_QUERY, cfg.test_query),
    )
