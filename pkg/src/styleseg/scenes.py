"""Procedural outdoor scene generator with pixel-accurate labels.

Scenes are horizon-split landscapes: a sky band, slanted ground strips of
texture-defined surface classes, vegetation blobs, an optional puddle, and
box obstacles. Appearance (palette, illumination, texture contrast) is
randomized per scene so that surface texture, not color, identifies classes
1 through 5. Domain presets shift the appearance distribution to produce
held-out unseen domains and a broad-appearance unlabeled pool.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .seeding import named_rng
from .textures import colorize, synth_texture

MANIFEST_FORMAT = "styleseg.dataset/v1"

SCENE_CLASSES = ("background", "smooth", "rough", "bumpy",
                 "soft_veg", "hard_veg", "puddle", "obstacle")
NUM_CLASSES = len(SCENE_CLASSES)

# surface classes painted with a texture family
_CLASS_TEXTURE = {1: "soil", 2: "gravel", 3: "rock", 4: "grass", 5: "bark", 6: "sand", 7: "sand"}

_BASE_PALETTE = {
    0: (0.60, 0.68, 0.82),
    1: (0.46, 0.40, 0.34),
    2: (0.50, 0.48, 0.44),
    3: (0.42, 0.42, 0.46),
    4: (0.30, 0.50, 0.25),
    5: (0.36, 0.28, 0.20),
    6: (0.28, 0.34, 0.46),
    7: (0.70, 0.25, 0.25),
}


@dataclass
class SceneConfig:
    """Knobs of the scene process; domain presets vary the appearance ones."""

    size: int = 64
    horizon_range: tuple = (12, 24)
    strip_count: tuple = (2, 4)
    soft_veg_count: tuple = (1, 3)
    hard_veg_count: tuple = (0, 2)
    obstacle_count: tuple = (0, 2)
    puddle_prob: float = 0.6
    palette_jitter: float = 0.12
    amplitude_range: tuple = (0.25, 0.5)
    illum_mult: tuple = (0.78, 1.18)
    illum_add: tuple = (-0.08, 0.08)
    color_cast: tuple = (1.0, 1.0, 1.0)
    palette_shift: tuple = tuple((0.0, 0.0, 0.0) for _ in range(NUM_CLASSES))
    noise_std: float = 0.0


def domain_preset(name: str) -> SceneConfig:
    """Named appearance domains. train/val share one; unseen_* shift it."""
    if name in ("train", "val"):
        return SceneConfig()
    if name == "unlabeled":
        return SceneConfig(palette_jitter=0.26, amplitude_range=(0.18, 0.62),
                           illum_mult=(0.5, 1.5), illum_add=(-0.16, 0.16))
    if name == "unseen_a":
        # dusk: dark, blue cast
        return SceneConfig(illum_mult=(0.45, 0.65), illum_add=(-0.06, 0.0),
                           color_cast=(0.82, 0.9, 1.18))
    if name == "unseen_b":
        # alternate palette and busier geometry
        shift = [(0.0, 0.0, 0.0)] * NUM_CLASSES
        shift[0] = (-0.1, 0.05, -0.12)
        shift[1] = (0.16, -0.04, -0.08)
        shift[2] = (0.12, 0.02, -0.1)
        shift[3] = (0.1, -0.06, -0.06)
        shift[4] = (0.12, 0.08, -0.1)
        shift[5] = (-0.08, 0.06, 0.1)
        shift[6] = (0.1, 0.08, -0.14)
        shift[7] = (-0.3, 0.25, 0.2)
        return SceneConfig(strip_count=(3, 5), soft_veg_count=(1, 4),
                           amplitude_range=(0.35, 0.65),
                           palette_shift=tuple(shift))
    if name == "unseen_c":
        # washed out and noisy, higher horizon
        return SceneConfig(horizon_range=(8, 16), illum_mult=(1.25, 1.5),
                           illum_add=(0.05, 0.14), amplitude_range=(0.15, 0.3),
                           noise_std=0.03)
    raise ValueError(f"unknown domain preset {name!r}")


DOMAIN_NAMES = ("train", "val", "unlabeled", "unseen_a", "unseen_b", "unseen_c")


def _ellipse_mask(size: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return ((yy - cy) / max(ry, 1e-6)) ** 2 + ((xx - cx) / max(rx, 1e-6)) ** 2 <= 1.0


def _build_labels(rng: np.random.Generator, cfg: SceneConfig) -> np.ndarray:
    size = cfg.size
    label = np.zeros((size, size), dtype=np.int64)
    horizon = int(rng.integers(cfg.horizon_range[0], cfg.horizon_range[1] + 1))

    # slanted ground strips of surface classes 1..3
    n_strips = int(rng.integers(cfg.strip_count[0], cfg.strip_count[1] + 1))
    bounds = np.sort(rng.uniform(0.1, 0.9, size=n_strips - 1)) * size
    slopes = rng.uniform(-0.35, 0.35, size=max(n_strips - 1, 1))
    classes = rng.permutation([1, 2, 3])[:min(n_strips, 3)]
    if n_strips > 3:
        classes = np.concatenate([classes, rng.integers(1, 4, size=n_strips - 3)])
    yy, xx = np.mgrid[0:size, 0:size]
    ground = yy >= horizon
    strip_idx = np.zeros((size, size), dtype=int)
    for b, slope in zip(bounds, slopes):
        strip_idx += (xx + slope * (yy - horizon)) > b
    for s in range(n_strips):
        label[ground & (strip_idx == s)] = classes[s]

    # puddle: flat ellipse low in the scene
    if rng.random() < cfg.puddle_prob:
        cy = rng.uniform(horizon + 0.45 * (size - horizon), size - 4)
        cx = rng.uniform(10, size - 10)
        mask = _ellipse_mask(size, cy, cx, rng.uniform(3, 7), rng.uniform(7, 16)) & ground
        label[mask] = 6

    # soft vegetation: round blobs sitting on the ground
    for _ in range(int(rng.integers(cfg.soft_veg_count[0], cfg.soft_veg_count[1] + 1))):
        cy = rng.uniform(horizon - 2, size - 8)
        cx = rng.uniform(4, size - 4)
        mask = _ellipse_mask(size, cy, cx, rng.uniform(4, 9), rng.uniform(5, 11))
        label[mask & (yy >= horizon - 6)] = 4

    # hard vegetation: trunk plus canopy, may rise above the horizon
    for _ in range(int(rng.integers(cfg.hard_veg_count[0], cfg.hard_veg_count[1] + 1))):
        base = rng.uniform(horizon + 2, size - 6)
        cx = rng.uniform(8, size - 8)
        half_w = rng.uniform(1.5, 3.0)
        top = max(2.0, base - rng.uniform(14, 26))
        trunk = (yy >= top) & (yy <= base) & (np.abs(xx - cx) <= half_w)
        canopy = _ellipse_mask(size, top, cx, rng.uniform(4, 8), rng.uniform(5, 9))
        label[trunk | canopy] = 5

    # obstacles: small boxes on the ground
    for _ in range(int(rng.integers(cfg.obstacle_count[0], cfg.obstacle_count[1] + 1))):
        h = int(rng.integers(5, 11))
        w = int(rng.integers(5, 13))
        y0 = int(rng.integers(horizon, max(size - h, horizon + 1)))
        x0 = int(rng.integers(0, max(size - w, 1)))
        label[y0:y0 + h, x0:x0 + w] = 7  # slice clips at the frame edge

    return label


def _paint(rng: np.random.Generator, label: np.ndarray, cfg: SceneConfig) -> np.ndarray:
    size = cfg.size
    image = np.zeros((3, size, size), dtype=float)

    shift = np.asarray(cfg.palette_shift, dtype=float)
    jitter = rng.uniform(-cfg.palette_jitter, cfg.palette_jitter, size=(NUM_CLASSES, 3))
    palette = np.array([_BASE_PALETTE[c] for c in range(NUM_CLASSES)]) + shift + jitter

    # sky: vertical gradient, brightening toward the horizon
    grad = np.linspace(0.0, 1.0, size)[:, None]
    sky = palette[0][:, None, None] * (0.85 + 0.3 * grad)[None, :, :]
    sky = sky + rng.normal(0.0, 0.01, size=(3, size, size))
    image[:, :, :] = sky

    for cid in range(1, NUM_CLASSES):
        mask = label == cid
        if not mask.any():
            continue
        gray = synth_texture(_CLASS_TEXTURE[cid], size, rng)
        amp = rng.uniform(*cfg.amplitude_range)
        if cid == 6:
            amp *= 0.4  # puddles are flat
        if cid == 7:
            amp *= 0.5
        tile = colorize(gray, np.clip(palette[cid], 0.02, 0.98), amp)
        image[:, mask] = tile[:, mask]

    # puddle reflection hint: darken toward the bottom
    pud = label == 6
    if pud.any():
        depth = (np.mgrid[0:size, 0:size][0] / size)[None, :, :]
        image = np.where(pud[None, :, :], image * (1.0 - 0.25 * depth), image)

    mult = rng.uniform(*cfg.illum_mult)
    add = rng.uniform(*cfg.illum_add)
    cast = np.asarray(cfg.color_cast, dtype=float)[:, None, None]
    image = image * mult * cast + add
    if cfg.noise_std > 0:
        image = image + rng.normal(0.0, cfg.noise_std, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def generate_scene(rng: np.random.Generator, cfg: SceneConfig):
    """One scene: (image [3, size, size] float in [0, 1], label [size, size] int64)."""
    label = _build_labels(rng, cfg)
    image = _paint(rng, label, cfg)
    return image.astype(np.float32), label


def generate_dataset(root, split: str, count: int, seed: int, domain: str = "train",
                     size: int = 64, with_labels: bool = True, force: bool = False) -> dict:
    """Write count scenes under root/split/ and return the manifest.

    Layout: images/%05d.png, labels/%05d.png (omitted for unlabeled pools),
    manifest.json. Per-scene RNG substreams make any subset reproducible.
    """
    cfg = domain_preset(domain)
    if size != cfg.size:
        # horizon heights are tuned for the preset size; keep them proportional
        scale = size / cfg.size
        cfg.horizon_range = (max(1, round(cfg.horizon_range[0] * scale)),
                             max(2, round(cfg.horizon_range[1] * scale)))
        cfg.size = size
    base = Path(root) / split
    if base.exists() and any(base.iterdir()) and not force:
        raise FileExistsError(f"{base} already exists; pass force to regenerate")
    (base / "images").mkdir(parents=True, exist_ok=True)
    if with_labels:
        (base / "labels").mkdir(parents=True, exist_ok=True)
    for i in range(count):
        rng = named_rng(seed, "scene", split, i)
        image, label = generate_scene(rng, cfg)
        arr = np.round(image * 255.0).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(arr, mode="RGB").save(base / "images" / f"{i:05d}.png")
        if with_labels:
            Image.fromarray(label.astype(np.uint8), mode="L").save(
                base / "labels" / f"{i:05d}.png")
    manifest = {
        "format": MANIFEST_FORMAT,
        "split": split,
        "count": count,
        "seed": seed,
        "domain": domain,
        "size": cfg.size,
        "classes": list(SCENE_CLASSES),
        "with_labels": with_labels,
    }
    (base / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


class SceneDataset:
    """In-memory dataset view of a generated split."""

    def __init__(self, root, split: str):
        base = Path(root) / split
        manifest_path = base / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no manifest at {manifest_path}")
        self.manifest = json.loads(manifest_path.read_text())
        if self.manifest.get("format") != MANIFEST_FORMAT:
            raise ValueError(f"unrecognized dataset format: {self.manifest.get('format')!r}")
        count = self.manifest["count"]
        size = self.manifest["size"]
        self.images = np.empty((count, 3, size, size), dtype=np.float32)
        self.labels = None
        if self.manifest["with_labels"]:
            self.labels = np.empty((count, size, size), dtype=np.int64)
        for i in range(count):
            img = Image.open(base / "images" / f"{i:05d}.png")
            self.images[i] = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
            if self.labels is not None:
                lab = Image.open(base / "labels" / f"{i:05d}.png")
                self.labels[i] = np.asarray(lab, dtype=np.int64)

    def __len__(self):
        return self.images.shape[0]

    def __getitem__(self, idx: int):
        if self.labels is None:
            return self.images[idx]
        return self.images[idx], self.labels[idx]
