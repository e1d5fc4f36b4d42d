"""Perceptual content loss, statistics style loss and their weighted sum.

Each ``|| . ||_2`` is reduced as a root-mean-square over its elements so that
the default weight of 10 keeps the same meaning at any resolution. Batched
inputs give the mean of the per-image losses.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .codec import LOSS_TAGS, LossNetwork
from .refine import channel_stats, safe_sqrt


@dataclass
class LossBreakdown:
    content: torch.Tensor
    style: torch.Tensor
    total: torch.Tensor
    lam: float

    def as_floats(self):
        return self.content.item(), self.style.item(), self.total.item()


def _batch(x):
    return x[None] if x.dim() == 3 else x


def rms(diff: torch.Tensor) -> torch.Tensor:
    """Per-sample root-mean-square over all but the leading dim."""
    return safe_sqrt((diff ** 2).flatten(1).mean(1))


def content_term(out_feats, content_feats) -> torch.Tensor:
    return rms(out_feats["relu4_1"] - content_feats["relu4_1"]).mean()


def style_term(out_feats, style_feats) -> torch.Tensor:
    total = 0.0
    for tag in LOSS_TAGS:
        so, ss = channel_stats(out_feats[tag]), channel_stats(style_feats[tag])
        total = total + rms(so.mean - ss.mean) + rms(so.std - ss.std)
    return total.mean()


def content_loss(output, content, net: LossNetwork) -> torch.Tensor:
    return content_term(net(_batch(output), ("relu4_1",)), net(_batch(content), ("relu4_1",)))


def style_loss(output, style, net: LossNetwork) -> torch.Tensor:
    return style_term(net(_batch(output)), net(_batch(style)))


def total_loss(output, content, style, net: LossNetwork, lam: float = 10.0) -> LossBreakdown:
    fo = net(_batch(output))
    with torch.no_grad():
        fc = net(_batch(content), ("relu4_1",))
        fs = net(_batch(style))
    lc = content_term(fo, fc)
    ls = style_term(fo, fs)
    if lam == 0:
        # keep the style term out of the graph entirely
        return LossBreakdown(lc, ls.detach(), lc, lam)
    return LossBreakdown(lc, ls, lc + lam * ls, lam)
