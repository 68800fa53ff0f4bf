"""Procedural texture synthesis by spectrally filtered noise.

Six texture families with distinct power spectra and nonlinearities. They are
used both to paint class regions in generated scenes and to pretrain the
frozen texture encoder; colorization is randomized there so the families stay
separable by texture alone, not by color.
"""

import numpy as np

TEXTURE_FAMILIES = ("grass", "soil", "rock", "gravel", "sand", "bark")


def _normalize01(img: np.ndarray) -> np.ndarray:
    lo = img.min()
    hi = img.max()
    if hi - lo < 1e-12:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def _spectral_noise(rng: np.random.Generator, size: int, filter_fn) -> np.ndarray:
    noise = rng.normal(size=(size, size))
    spec = np.fft.rfft2(noise)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    out = np.fft.irfft2(spec * filter_fn(fx, fy), s=(size, size))
    return _normalize01(out)


def _radial(fx, fy):
    return np.sqrt(fx * fx + fy * fy)


def _band(f, lo, hi, soft=0.02):
    return 1.0 / (1.0 + np.exp(-(f - lo) / soft)) * 1.0 / (1.0 + np.exp((f - hi) / soft))


def _grass(rng, size):
    # fine vertical streaks: fast variation along x, slow along y
    tex = _spectral_noise(rng, size,
                          lambda fx, fy: _band(fx, 0.18, 0.45) * np.exp(-(fy / 0.05) ** 2))
    return _normalize01(tex ** 1.2)


def _soil(rng, size):
    # smooth large blobs: steep isotropic low-pass
    tex = _spectral_noise(rng, size,
                          lambda fx, fy: 1.0 / (0.02 + _radial(fx, fy)) ** 2.4)
    return tex


def _rock(rng, size):
    # chunky plateaus: mid-low band posterized to a few levels
    tex = _spectral_noise(rng, size,
                          lambda fx, fy: _band(_radial(fx, fy), 0.03, 0.14))
    levels = 4
    return np.floor(tex * levels) / (levels - 1)


def _gravel(rng, size):
    # speckled cells: narrow mid-high ring, folded to make bright grains
    tex = _spectral_noise(rng, size,
                          lambda fx, fy: _band(_radial(fx, fy), 0.16, 0.32))
    return _normalize01(np.abs(tex - 0.5))


def _sand(rng, size):
    # near-white fine grain, low contrast
    tex = _spectral_noise(rng, size,
                          lambda fx, fy: _band(_radial(fx, fy), 0.28, 0.55))
    return 0.3 + 0.4 * tex


def _bark(rng, size):
    # horizontal ridging, orthogonal to grass
    tex = _spectral_noise(rng, size,
                          lambda fx, fy: _band(np.abs(fy), 0.12, 0.38) * np.exp(-(fx / 0.05) ** 2))
    return _normalize01(tex) ** 0.8


_SYNTH = {
    "grass": _grass,
    "soil": _soil,
    "rock": _rock,
    "gravel": _gravel,
    "sand": _sand,
    "bark": _bark,
}


def synth_texture(family: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """One [size, size] grayscale texture in [0, 1] for the named family."""
    if family not in _SYNTH:
        raise ValueError(f"unknown texture family {family!r}; choose from {TEXTURE_FAMILIES}")
    if size < 8:
        raise ValueError("size must be at least 8")
    return np.clip(_SYNTH[family](rng, size), 0.0, 1.0)


def colorize(gray: np.ndarray, base_rgb, amplitude: float) -> np.ndarray:
    """Map a grayscale texture onto a base color: [3, H, W] in [0, 1]."""
    base = np.asarray(base_rgb, dtype=float).reshape(3, 1, 1)
    out = base + (gray[None, :, :] - 0.5) * amplitude
    return np.clip(out, 0.0, 1.0)


def texture_patch_batch(rng: np.random.Generator, size: int, count: int):
    """Randomly colorized texture patches with family labels.

    Color is sampled independently of the family so only the spatial texture
    carries label information. Returns ([count, 3, size, size] float32,
    [count] int64).
    """
    patches = np.empty((count, 3, size, size), dtype=np.float32)
    labels = rng.integers(0, len(TEXTURE_FAMILIES), size=count)
    for i, lab in enumerate(labels):
        gray = synth_texture(TEXTURE_FAMILIES[lab], size, rng)
        base = rng.uniform(0.2, 0.8, size=3)
        amp = rng.uniform(0.35, 0.9)
        patches[i] = colorize(gray, base, amp).astype(np.float32)
    return patches, labels.astype(np.int64)
