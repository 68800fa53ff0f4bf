"""Image corruption suite: 8 kinds, 5 severities each, deterministic per seed.

Corruptions act on [3, H, W] float images in [0, 1] and never touch labels.
The low-level functions take explicit parameters; severity tables map the
1..5 ladder onto parameters so that distortion grows monotonically (in mean
squared difference) with severity.
"""

import numpy as np
import torch
import torch.nn.functional as F

from .seeding import named_rng

CORRUPTIONS = ("brightness", "contrast", "defocus_blur", "motion_blur",
               "impulse_noise", "gaussian_noise", "snow_noise", "frost_lens")
SEVERITY_LEVELS = (1, 2, 3, 4, 5)

SEVERITY_TABLES = {
    "brightness": (0.09, 0.18, 0.26, 0.34, 0.42),
    "contrast": (0.75, 0.60, 0.45, 0.30, 0.20),
    "defocus_blur": (1.0, 1.5, 2.0, 2.5, 3.0),
    "motion_blur": (3, 5, 7, 9, 11),
    "impulse_noise": (0.01, 0.03, 0.05, 0.07, 0.10),
    "gaussian_noise": (0.04, 0.06, 0.08, 0.09, 0.10),
    "snow_noise": (0.010, 0.022, 0.040, 0.062, 0.090),
    "frost_lens": (0.15, 0.25, 0.35, 0.45, 0.55),
}


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected [3, H, W], got {tuple(image.shape)}")
    return image


def _conv(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # depthwise convolution with reflect padding keeps borders sane
    k = torch.from_numpy(kernel.astype(np.float32))[None, None].repeat(3, 1, 1, 1)
    x = torch.from_numpy(image)[None]
    pad = kernel.shape[0] // 2
    x = F.pad(x, (pad, pad, pad, pad), mode="reflect")
    out = F.conv2d(x, k, groups=3)
    return out[0].numpy()


def apply_brightness(image, delta: float) -> np.ndarray:
    image = _check_image(image)
    return np.clip(image + delta, 0.0, 1.0)


def apply_contrast(image, factor: float) -> np.ndarray:
    image = _check_image(image)
    mean = image.mean()
    return np.clip((image - mean) * factor + mean, 0.0, 1.0)


def _disk_kernel(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    kernel = (yy * yy + xx * xx <= radius * radius).astype(float)
    return kernel / kernel.sum()


def apply_defocus_blur(image, radius: float) -> np.ndarray:
    image = _check_image(image)
    if radius <= 0:
        return image.copy()
    return np.clip(_conv(image, _disk_kernel(radius)), 0.0, 1.0)


def _line_kernel(length: int, angle: float) -> np.ndarray:
    size = length if length % 2 == 1 else length + 1
    kernel = np.zeros((size, size))
    c = size // 2
    ts = np.linspace(-(length - 1) / 2.0, (length - 1) / 2.0, 4 * length)
    for t in ts:
        y = c + t * np.sin(angle)
        x = c + t * np.cos(angle)
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - y0, x - x0
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                if 0 <= y0 + dy < size and 0 <= x0 + dx < size:
                    kernel[y0 + dy, x0 + dx] += wy * wx
    return kernel / kernel.sum()


def apply_motion_blur(image, length: int, angle: float) -> np.ndarray:
    image = _check_image(image)
    if length <= 1:
        return image.copy()
    return np.clip(_conv(image, _line_kernel(int(length), angle)), 0.0, 1.0)


def apply_impulse_noise(image, fraction: float, rng: np.random.Generator) -> np.ndarray:
    image = _check_image(image).copy()
    if fraction <= 0:
        return image
    h, w = image.shape[1:]
    hits = rng.random((h, w)) < fraction
    salt = rng.random((h, w)) < 0.5
    image[:, hits & salt] = 1.0
    image[:, hits & ~salt] = 0.0
    return image


def apply_gaussian_noise(image, std: float, rng: np.random.Generator) -> np.ndarray:
    image = _check_image(image)
    if std <= 0:
        return image.copy()
    return np.clip(image + rng.normal(0.0, std, size=image.shape), 0.0, 1.0).astype(np.float32)


def apply_snow_noise(image, density: float, rng: np.random.Generator) -> np.ndarray:
    """Bright flecks plus a whitening veil that grows with density."""
    image = _check_image(image).copy()
    if density <= 0:
        return image
    h, w = image.shape[1:]
    veil = min(0.35, 2.5 * density)
    image = image * (1.0 - veil) + veil * 0.85
    flakes = rng.random((h, w)) < density
    bright = 0.88 + 0.12 * rng.random((h, w))
    image[:, flakes] = np.maximum(image[:, flakes], bright[None, flakes])
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def _smooth_field(rng: np.random.Generator, size, coarse: int = 8) -> np.ndarray:
    noise = rng.random((coarse, coarse)).astype(np.float32)
    t = torch.from_numpy(noise)[None, None]
    up = F.interpolate(t, size=size, mode="bilinear", align_corners=False)
    return up[0, 0].numpy()


def apply_frost_lens(image, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Icy occlusion creeping in from the image border."""
    image = _check_image(image)
    if strength <= 0:
        return image.copy()
    h, w = image.shape[1:]
    blotch = _smooth_field(rng, (h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    edge = np.maximum(np.abs(yy / (h - 1) - 0.5), np.abs(xx / (w - 1) - 0.5)) * 2.0
    frost = np.clip(blotch * (0.25 + 0.75 * edge ** 2) * 2.0, 0.0, 1.0) * strength
    icy = 0.82 + 0.1 * blotch
    out = image * (1.0 - frost[None]) + frost[None] * icy[None]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def corrupt(image, kind: str, severity: int, seed: int) -> np.ndarray:
    """Apply a named corruption at severity 1..5, deterministically in seed."""
    if kind not in CORRUPTIONS:
        raise ValueError(f"unknown corruption {kind!r}; choose from {CORRUPTIONS}")
    if severity not in SEVERITY_LEVELS:
        raise ValueError(f"severity must be in {SEVERITY_LEVELS}")
    param = SEVERITY_TABLES[kind][severity - 1]
    rng = named_rng(seed, "corrupt", kind, severity)
    if kind == "brightness":
        return apply_brightness(image, param)
    if kind == "contrast":
        return apply_contrast(image, param)
    if kind == "defocus_blur":
        return apply_defocus_blur(image, param)
    if kind == "motion_blur":
        return apply_motion_blur(image, param, angle=rng.uniform(0.0, np.pi))
    if kind == "impulse_noise":
        return apply_impulse_noise(image, param, rng)
    if kind == "gaussian_noise":
        return apply_gaussian_noise(image, param, rng)
    if kind == "snow_noise":
        return apply_snow_noise(image, param, rng)
    return apply_frost_lens(image, param, rng)


def corrupt_batch(images: np.ndarray, kind: str, severity: int, seed: int) -> np.ndarray:
    """Corrupt [N, 3, H, W] images, one RNG substream per image index."""
    out = np.empty_like(images, dtype=np.float32)
    for i in range(images.shape[0]):
        out[i] = corrupt(images[i], kind, severity, named_seed_for(seed, i))
    return out


def named_seed_for(seed: int, index: int) -> int:
    rng = named_rng(seed, "corrupt-index", index)
    return int(rng.integers(0, 2 ** 63))
