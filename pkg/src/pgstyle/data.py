"""Image loading/saving and a small procedural fixture set."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import DataError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no PNG/JPEG images in {d}")
    return files


def load_image(path, size: int | None = None, multiple: int = 4) -> torch.Tensor:
    """RGB image as a (3, H, W) float tensor in [0, 1].

    With ``size`` the shorter side is resized to it and the centre square
    cropped; otherwise the image is cropped down to a multiple of ``multiple``.
    """
    try:
        img = Image.open(path).convert("RGB")
    except (OSError, ValueError) as e:
        raise DataError(f"cannot decode image {path}: {e}") from e
    if size is not None:
        w, h = img.size
        scale = size / min(w, h)
        nw, nh = max(size, round(w * scale)), max(size, round(h * scale))
        img = img.resize((nw, nh), Image.BILINEAR)
        left, top = (nw - size) // 2, (nh - size) // 2
        img = img.crop((left, top, left + size, top + size))
    else:
        w, h = img.size
        img = img.crop((0, 0, w - w % multiple, h - h % multiple))
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def save_image(tensor: torch.Tensor, path):
    if tensor.dim() == 4:
        tensor = tensor[0]
    arr = (tensor.detach().clamp(0, 1).permute(1, 2, 0).cpu().numpy() * 255.0).round().astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def _content_image(i, size, rng):
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = np.stack([xx, yy, 1 - xx], -1) * rng.uniform(0.3, 0.8, 3)
    for _ in range(2 + i % 3):
        cy, cx, r = rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.08, 0.25)
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
        base[disc] = rng.uniform(0, 1, 3)
    return base


def _style_image(i, size, rng):
    yy, xx = np.mgrid[0:size, 0:size] / size
    freq = 4 + 3 * i
    angle = rng.uniform(0, math.pi)
    wave = np.sin(2 * math.pi * freq * (xx * math.cos(angle) + yy * math.sin(angle)))
    if i % 2:
        wave = wave * np.sign(np.sin(2 * math.pi * (freq // 2 + 1) * yy))
    c1, c2 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    t = (wave[..., None] + 1) / 2
    img = t * c1 + (1 - t) * c2
    return img + rng.normal(0, 0.04, img.shape)


def make_fixture_images(directory, kind: str = "content", n: int = 8, size: int = 64, seed: int = 0):
    """Write ``n`` deterministic synthetic PNGs (smooth shapes or periodic textures)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed + (0 if kind == "content" else 1000))
    make = _content_image if kind == "content" else _style_image
    paths = []
    for i in range(n):
        arr = np.clip(make(i, size, rng), 0, 1)
        path = d / f"{kind}_{i:02d}.png"
        Image.fromarray((arr * 255).round().astype(np.uint8)).save(path)
        paths.append(path)
    return paths
