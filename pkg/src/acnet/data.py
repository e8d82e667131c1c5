"""Image I/O, colour conversion, degradation and training patch sampling.

Images are ``(h, w, 3)`` float64 arrays with values in [0, 1]; they become
8-bit only when read from or written to disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_SUFFIXES = (".png", ".ppm", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")


class ImageFormatError(ValueError):
    pass


# -- I/O ---------------------------------------------------------------------

def _read_ppm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace before the raster
    if tokens[0] != b"P6":
        raise ImageFormatError(f"{path}: only binary PPM (P6) is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported PPM max value {maxval} (need 8-bit)")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3)


def _write_ppm(path: Path, pixels: np.ndarray) -> None:
    h, w, _ = pixels.shape
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        pixels = _read_ppm(path)
    else:
        from PIL import Image, UnidentifiedImageError

        try:
            with Image.open(path) as im:
                if im.mode in ("I", "I;16", "I;16B", "F") or im.mode.startswith("I;"):
                    raise ImageFormatError(f"{path}: unsupported bit depth (mode {im.mode})")
                pixels = np.asarray(im.convert("RGB"))
        except (UnidentifiedImageError, OSError) as e:
            raise ImageFormatError(f"{path}: cannot read image ({e})") from e
    return np.clip(pixels.astype(np.float64) / 255.0, 0.0, 1.0)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def quantize(image: np.ndarray) -> np.ndarray:
    """Round-trip through 8-bit, as saving and reloading would."""
    return to_uint8(image).astype(np.float64) / 255.0


def save_image(image: np.ndarray, path) -> None:
    path = Path(path)
    pixels = to_uint8(image)
    if path.suffix.lower() == ".ppm":
        _write_ppm(path, pixels)
    else:
        from PIL import Image

        Image.fromarray(pixels, "RGB").save(path)


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# -- colour ------------------------------------------------------------------

def rgb_to_y(image: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing luma on the 0-255 scale."""
    image = np.asarray(image, dtype=np.float64)
    return 16.0 + image[..., 0] * 65.481 + image[..., 1] * 128.553 + image[..., 2] * 24.966


# -- resampling --------------------------------------------------------------

def cubic(x, a: float = -0.5):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x <= 2, far, 0.0))


def resize_weights(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """Dense ``(out_len, in_len)`` resampling matrix for one axis.

    Rows sum to one; out-of-range taps are clamped to the border sample.
    """
    if out_len < 1 or in_len < 1:
        raise ValueError("resize dimensions must be positive")
    scale = out_len / in_len
    if antialias and scale < 1:
        def kernel(x):
            return scale * cubic(scale * x)
        width = 4.0 / scale
    else:
        kernel = cubic
        width = 4.0
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = kernel(u[:, None] - idx)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 1, in_len).astype(np.int64) - 1
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, idx.ravel()), w.ravel())
    return mat


def bicubic_resize(image: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Separable cubic (a = -0.5) resampling of an ``(h, w[, c])`` array."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {(out_h, out_w)}")
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    wh = resize_weights(h, out_h, antialias)
    ww = resize_weights(w, out_w, antialias)
    out = np.tensordot(wh, image, axes=(1, 0))
    out = np.moveaxis(np.tensordot(ww, out, axes=(1, 1)), 0, 1)
    return out


def bicubic_upscale(lr: np.ndarray, scale: int) -> np.ndarray:
    h, w = lr.shape[:2]
    return bicubic_resize(lr, h * scale, w * scale)


# -- degradation -------------------------------------------------------------

@dataclass
class ImagePair:
    hr: np.ndarray
    lr: np.ndarray
    scale: int
    noise_sigma: float = 0.0


def mod_crop(image: np.ndarray, s: int) -> np.ndarray:
    """Centre-crop so both spatial dims are multiples of ``s``."""
    h, w = image.shape[:2]
    if h < s or w < s:
        raise ValueError(f"image {h}x{w} is smaller than scale {s}")
    nh, nw = h - h % s, w - w % s
    top, left = (h - nh) // 2, (w - nw) // 2
    return image[top:top + nh, left:left + nw]


def add_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """AWGN with std ``sigma`` on the 0-255 scale, clamped back to [0, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma > 0:
        image = image + rng.normal(0.0, sigma / 255.0, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def degrade(hr: np.ndarray, s: int, sigma: float = 0.0, rng: np.random.Generator | None = None) -> ImagePair:
    """Bicubic downscale by ``s`` followed by additive Gaussian noise."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    hr = mod_crop(hr, s)
    h, w = hr.shape[:2]
    lr = bicubic_resize(hr, h // s, w // s, antialias=True)
    if sigma > 0 and rng is None:
        raise ValueError("a random generator is required when sigma > 0")
    lr = add_noise(lr, sigma, rng)
    return ImagePair(hr=hr, lr=lr, scale=s, noise_sigma=float(sigma))


# -- patches -----------------------------------------------------------------

@dataclass
class PatchBatch:
    lr: np.ndarray  # (B, 3, p, p)
    hr: np.ndarray  # (B, 3, p*s, p*s)
    scale: int


def _chw(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image.transpose(2, 0, 1))


def sample_patches(pairs: list[ImagePair], patch: int = 64, batch: int = 16,
                   rng: np.random.Generator | None = None) -> PatchBatch:
    """Uniformly placed, aligned LR/HR crops drawn from random pairs."""
    if not pairs:
        raise ValueError("no image pairs to sample from")
    rng = rng if rng is not None else np.random.default_rng()
    s = pairs[0].scale
    if any(p.scale != s for p in pairs):
        raise ValueError("all pairs in a batch must share one scale")
    for p in pairs:
        if min(p.lr.shape[:2]) < patch:
            raise ValueError(f"LR image {p.lr.shape[:2]} is smaller than patch {patch}")
    lr = np.empty((batch, 3, patch, patch), dtype=np.float32)
    hr = np.empty((batch, 3, patch * s, patch * s), dtype=np.float32)
    for b in range(batch):
        pair = pairs[int(rng.integers(len(pairs)))]
        lh, lw = pair.lr.shape[:2]
        y = int(rng.integers(lh - patch + 1))
        x = int(rng.integers(lw - patch + 1))
        lr[b] = _chw(pair.lr[y:y + patch, x:x + patch])
        hr[b] = _chw(pair.hr[y * s:(y + patch) * s, x * s:(x + patch) * s])
    return PatchBatch(lr, hr, s)


def flip_rotate(t: np.ndarray, flip: bool, k: int) -> np.ndarray:
    """Horizontal flip, then ``k`` quarter turns, over the last two axes."""
    if flip:
        t = t[..., ::-1]
    return np.rot90(t, k, axes=(-2, -1))


def augment(batch: PatchBatch, rng: np.random.Generator) -> PatchBatch:
    lr = np.empty_like(batch.lr)
    hr = np.empty_like(batch.hr)
    for b in range(batch.lr.shape[0]):
        flip = bool(rng.random() < 0.5)
        k = int(rng.integers(4))
        lr[b] = flip_rotate(batch.lr[b], flip, k)
        hr[b] = flip_rotate(batch.hr[b], flip, k)
    return PatchBatch(lr, hr, batch.scale)
