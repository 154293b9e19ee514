"""Synthetic bitemporal pair generation, tiling, augmentation, and PNG IO.

A pair is two co-registered [3,H,W] images in [0,1] plus a strictly binary
[1,H,W] change mask. Scene synthesis plants polygonal "buildings" in three
populations: static objects (identical in both images), true changes
(present in exactly one image, mask 1), and pseudo-changes (same footprint,
different appearance, mask 0). Per-image brightness shift, channel tint and
pixel noise model the global nuisance variation between acquisitions.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image


class GenerationError(ValueError):
    """Scene synthesis could not satisfy the configuration."""


class DatasetError(ValueError):
    """An on-disk dataset violates the expected layout or encoding."""


@dataclass
class BitemporalPair:
    image_a: np.ndarray  # [3,H,W] in [0,1]
    image_b: np.ndarray  # [3,H,W] in [0,1]
    mask: np.ndarray     # [1,H,W] in {0,1}
    id: str

    def __post_init__(self):
        sa, sb, sm = self.image_a.shape, self.image_b.shape, self.mask.shape
        if sa != sb or sa[1:] != sm[1:] or sa[0] != 3 or sm[0] != 1:
            raise ValueError(f"pair {self.id}: inconsistent shapes {sa}/{sb}/{sm}")
        h, w = sa[1:]
        if h % 32 or w % 32:
            raise ValueError(f"pair {self.id}: extents {h}x{w} not divisible by 32")
        if not np.isin(self.mask, (0.0, 1.0)).all():
            raise ValueError(f"pair {self.id}: mask is not strictly binary")

    @property
    def height(self):
        return self.image_a.shape[1]

    @property
    def width(self):
        return self.image_a.shape[2]


@dataclass
class SynthConfig:
    size: int = 64
    object_count: tuple[int, int] = (3, 6)
    object_size: tuple[float, float] = (1 / 16, 1 / 8)  # half-extent, canvas fractions
    pseudo_fraction: float = 0.0
    static_fraction: float = 0.25
    brightness: float = 0.0   # max |additive shift| per image
    tint: float = 0.0         # max per-channel multiplicative deviation
    noise_sigma: float = 0.0
    seed: int = 0

    def validate(self):
        if self.size < 32 or self.size % 32:
            raise GenerationError(f"canvas size {self.size} must be a positive multiple of 32")
        lo, hi = self.object_count
        if not 0 <= lo <= hi:
            raise GenerationError(f"object count range ({lo},{hi}) is not well-ordered")
        slo, shi = self.object_size
        if not 0.0 < slo <= shi < 0.5:
            raise GenerationError(f"object size range ({slo},{shi}) is not well-ordered")
        if not 0.0 <= self.pseudo_fraction <= 1.0:
            raise GenerationError("pseudo-change fraction must lie in [0,1]")
        if not 0.0 <= self.static_fraction <= 1.0 - self.pseudo_fraction:
            raise GenerationError("static fraction must lie in [0, 1 - pseudo_fraction]")
        for name in ("brightness", "tint", "noise_sigma"):
            if getattr(self, name) < 0:
                raise GenerationError(f"{name} must be non-negative")


@dataclass
class SceneObject:
    vertices: np.ndarray      # [4,2] (x,y) corners, consistent winding
    color_a: np.ndarray       # [3]
    color_b: np.ndarray       # [3]
    population: str           # static | true | pseudo
    present_a: bool = True
    present_b: bool = True


@dataclass
class Scene:
    size: int
    background: np.ndarray    # [3,S,S]
    objects: list = field(default_factory=list)


def polygon_mask(vertices, size):
    """Rasterize a convex polygon by half-plane tests at pixel centres."""
    yy, xx = np.mgrid[0:size, 0:size]
    px = xx + 0.5
    py = yy + 0.5
    inside = np.ones((size, size), dtype=bool)
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        inside &= (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0) >= 0
    return inside


def _object_color(rng):
    # distinctly dark or bright so objects contrast with the mid-tone background
    base = rng.uniform(0.04, 0.24) if rng.uniform() < 0.5 else rng.uniform(0.72, 0.94)
    return np.clip(base + rng.uniform(-0.08, 0.08, size=3), 0.0, 1.0)


def _rotated_rect(rng, size, size_range):
    s = float(size)
    lo, hi = size_range
    cx = rng.uniform(0.15 * s, 0.85 * s)
    cy = rng.uniform(0.15 * s, 0.85 * s)
    hw = rng.uniform(lo * s, hi * s)
    hh = rng.uniform(lo * s, hi * s)
    theta = 0.0 if rng.uniform() < 0.5 else rng.uniform(0.0, np.pi / 2)
    c, sn = np.cos(theta), np.sin(theta)
    corners = np.array([(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)])
    rot = corners @ np.array([[c, sn], [-sn, c]])
    return rot + np.array([cx, cy])


def make_scene(cfg: SynthConfig, index: int) -> Scene:
    """Deterministic scene geometry and colours for (cfg.seed, index)."""
    cfg.validate()
    rng = np.random.default_rng((cfg.seed, index, 0))
    s = cfg.size
    base = rng.uniform(0.3, 0.55, size=3)
    coarse = rng.normal(0.0, 0.035, size=(3, s // 8, s // 8))
    background = np.clip(base[:, None, None] + np.kron(coarse, np.ones((8, 8))), 0.0, 1.0)

    scene = Scene(size=s, background=background)
    count = int(rng.integers(cfg.object_count[0], cfg.object_count[1] + 1))
    occupied = np.zeros((s, s), dtype=bool)
    for _ in range(count):
        placed = False
        for _attempt in range(60):
            verts = _rotated_rect(rng, s, cfg.object_size)
            footprint = polygon_mask(verts, s)
            if footprint.any() and not (footprint & occupied).any():
                placed = True
                break
        if not placed:
            raise GenerationError(
                f"canvas {s}x{s} too small to place {count} non-overlapping objects")
        occupied |= footprint

        draw = rng.uniform()
        color = _object_color(rng)
        if draw < cfg.pseudo_fraction:
            other = _object_color(rng)
            while np.abs(other - color).sum() < 0.45:
                other = _object_color(rng)
            obj = SceneObject(verts, color, other, "pseudo")
        elif draw < cfg.pseudo_fraction + cfg.static_fraction:
            obj = SceneObject(verts, color, color.copy(), "static")
        else:
            in_a = rng.uniform() < 0.5
            obj = SceneObject(verts, color, color.copy(), "true",
                              present_a=in_a, present_b=not in_a)
        scene.objects.append(obj)
    return scene


def render_scene(cfg: SynthConfig, scene: Scene, index: int) -> BitemporalPair:
    """Paint both images, apply photometric nuisance noise, build the mask."""
    rng = np.random.default_rng((cfg.seed, index, 1))
    s = scene.size
    img_a = scene.background.copy()
    img_b = scene.background.copy()
    mask = np.zeros((1, s, s))
    for obj in scene.objects:
        footprint = polygon_mask(obj.vertices, s)
        if obj.present_a:
            img_a[:, footprint] = obj.color_a[:, None]
        if obj.present_b:
            img_b[:, footprint] = obj.color_b[:, None]
        if obj.population == "true":
            mask[0, footprint] = 1.0

    for img in (img_a, img_b):
        tint = rng.uniform(1.0 - cfg.tint, 1.0 + cfg.tint, size=3)
        shift = rng.uniform(-cfg.brightness, cfg.brightness)
        img *= tint[:, None, None]
        img += shift
        img += rng.normal(0.0, cfg.noise_sigma, size=img.shape) if cfg.noise_sigma else 0.0
        np.clip(img, 0.0, 1.0, out=img)

    return BitemporalPair(img_a, img_b, mask, f"pair_{index:05d}")


def generate_pair(cfg: SynthConfig, index: int) -> BitemporalPair:
    return render_scene(cfg, make_scene(cfg, index), index)


def generate_dataset(cfg: SynthConfig, count: int) -> list[BitemporalPair]:
    return [generate_pair(cfg, i) for i in range(count)]


# ---------------------------------------------------------------------------
# tiling
# ---------------------------------------------------------------------------

def tile_pair(pair: BitemporalPair, tile_size: int) -> list[BitemporalPair]:
    """Row-major non-overlapping tiles; trailing remainder pixels are dropped."""
    h, w = pair.height, pair.width
    if tile_size > h or tile_size > w:
        raise ValueError(f"tile size {tile_size} exceeds pair extents {h}x{w}")
    if tile_size < 32 or tile_size % 32:
        raise ValueError(f"tile size {tile_size} must be a multiple of 32")
    tiles = []
    for r in range(h // tile_size):
        for c in range(w // tile_size):
            ys = slice(r * tile_size, (r + 1) * tile_size)
            xs = slice(c * tile_size, (c + 1) * tile_size)
            tiles.append(BitemporalPair(
                pair.image_a[:, ys, xs].copy(),
                pair.image_b[:, ys, xs].copy(),
                pair.mask[:, ys, xs].copy(),
                f"{pair.id}_y{r}_x{c}"))
    return tiles


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentPolicy:
    hflip: bool = False
    vflip: bool = False
    rot90: bool = False
    brightness: float = 0.0
    crop: int | None = None

    @staticmethod
    def named(name: str) -> "AugmentPolicy":
        presets = {
            "none": AugmentPolicy(),
            "flips": AugmentPolicy(hflip=True, vflip=True),
            "full": AugmentPolicy(hflip=True, vflip=True, rot90=True, brightness=0.1),
        }
        if name not in presets:
            raise ValueError(f"unknown augmentation policy {name!r}")
        return presets[name]


def augment(pair: BitemporalPair, policy: AugmentPolicy, rng) -> BitemporalPair:
    """Apply one random draw of the policy.

    Geometric transforms hit both images and the mask identically and are
    pure index shuffles, so the mask stays binary. Brightness is photometric
    and applies to the images only, independently per image.
    """
    a, b, m = pair.image_a, pair.image_b, pair.mask
    if policy.crop is not None:
        cs = policy.crop
        if cs > pair.height or cs > pair.width:
            raise ValueError(f"crop {cs} larger than pair {pair.height}x{pair.width}")
        y0 = int(rng.integers(0, pair.height - cs + 1))
        x0 = int(rng.integers(0, pair.width - cs + 1))
        a, b, m = (t[:, y0:y0 + cs, x0:x0 + cs] for t in (a, b, m))
    if policy.hflip and rng.uniform() < 0.5:
        a, b, m = (t[:, :, ::-1] for t in (a, b, m))
    if policy.vflip and rng.uniform() < 0.5:
        a, b, m = (t[:, ::-1, :] for t in (a, b, m))
    if policy.rot90:
        k = int(rng.integers(0, 4))
        a, b, m = (np.rot90(t, k, axes=(1, 2)) for t in (a, b, m))
    a, b, m = a.copy(), b.copy(), m.copy()
    if policy.brightness > 0.0:
        for img in (a, b):
            img += rng.uniform(-policy.brightness, policy.brightness)
            np.clip(img, 0.0, 1.0, out=img)
    return BitemporalPair(a, b, m, pair.id)


# ---------------------------------------------------------------------------
# PNG dataset IO: root/{A,B,label}/<name>.png
# ---------------------------------------------------------------------------

def _to_uint8(img):
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def save_pair(pair: BitemporalPair, root: str):
    for sub in ("A", "B", "label"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    name = f"{pair.id}.png"
    Image.fromarray(_to_uint8(pair.image_a).transpose(1, 2, 0)).save(
        os.path.join(root, "A", name))
    Image.fromarray(_to_uint8(pair.image_b).transpose(1, 2, 0)).save(
        os.path.join(root, "B", name))
    Image.fromarray((pair.mask[0] * 255).astype(np.uint8), mode="L").save(
        os.path.join(root, "label", name))


def save_mask_png(path: str, mask01: np.ndarray):
    """Write a [1,H,W] or [H,W] binary mask as a 0/255 grayscale PNG."""
    m = mask01[0] if mask01.ndim == 3 else mask01
    Image.fromarray((m * 255).astype(np.uint8), mode="L").save(path)


def _load_image(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def load_pair_images(path_a: str, path_b: str):
    a, b = _load_image(path_a), _load_image(path_b)
    if a.shape != b.shape:
        raise DatasetError(f"image sizes differ: {path_a} {a.shape} vs {path_b} {b.shape}")
    return a, b


def load_dataset(root: str) -> list[BitemporalPair]:
    """Load every pair under root/{A,B,label}, sorted by file name."""
    dir_a = os.path.join(root, "A")
    dir_b = os.path.join(root, "B")
    dir_m = os.path.join(root, "label")
    for d in (dir_a, dir_b, dir_m):
        if not os.path.isdir(d):
            raise DatasetError(f"missing dataset sub-directory {d}")
    pairs = []
    for name in sorted(os.listdir(dir_a)):
        if not name.lower().endswith(".png"):
            continue
        path_a = os.path.join(dir_a, name)
        for d, what in ((dir_b, "B"), (dir_m, "label")):
            if not os.path.isfile(os.path.join(d, name)):
                raise DatasetError(f"{name}: missing counterpart in {what}/")
        img_a = _load_image(path_a)
        img_b = _load_image(os.path.join(dir_b, name))
        with Image.open(os.path.join(dir_m, name)) as im:
            raw = np.asarray(im.convert("L"))
        if not np.isin(raw, (0, 255)).all():
            bad = sorted(set(np.unique(raw)) - {0, 255})
            raise DatasetError(f"{name}: label values {bad} are not 0/255")
        mask = (raw == 255).astype(np.float64)[None]
        if img_a.shape != img_b.shape or img_a.shape[1:] != mask.shape[1:]:
            raise DatasetError(
                f"{name}: size mismatch A{img_a.shape} B{img_b.shape} label{mask.shape}")
        try:
            pairs.append(BitemporalPair(img_a, img_b, mask, os.path.splitext(name)[0]))
        except ValueError as exc:
            raise DatasetError(str(exc)) from exc
    return pairs


def save_dataset(pairs, root: str):
    for pair in pairs:
        save_pair(pair, root)
