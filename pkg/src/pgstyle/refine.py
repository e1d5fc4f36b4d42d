"""Per-channel statistics and adaptive instance normalization."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ShapeError

ADAIN_EPS = 1e-5


@dataclass
class ChannelStats:
    mean: torch.Tensor
    std: torch.Tensor


def safe_sqrt(x: torch.Tensor) -> torch.Tensor:
    """sqrt with a finite (zero) gradient at 0."""
    pos = x > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, x, torch.ones_like(x))), torch.zeros_like(x))


def channel_stats(features: torch.Tensor) -> ChannelStats:
    """Spatial mean and population std per channel of a (..., c, h, w) map."""
    flat = features.flatten(-2)
    mean = flat.mean(-1)
    var = ((flat - mean[..., None]) ** 2).mean(-1)
    return ChannelStats(mean, safe_sqrt(var))


def adain(content_like: torch.Tensor, style: torch.Tensor, eps: float = ADAIN_EPS) -> torch.Tensor:
    if content_like.shape[-3] != style.shape[-3]:
        raise ShapeError(f"adain channel mismatch: {content_like.shape[-3]} vs {style.shape[-3]}")
    cs, ss = channel_stats(content_like), channel_stats(style)
    norm = (content_like - cs.mean[..., None, None]) / (cs.std[..., None, None] + eps)
    return ss.std[..., None, None] * norm + ss.mean[..., None, None]
