"""Learned per-location style patch scales.

The style location grid is the plain p x p / stride s grid. For a scale
``sigma`` the window is grown around the location's centre (and shifted
inward at the borders so it keeps its full size), then bilinearly resized
back to p x p so every style node has the same length as a content node.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ParameterError, PatchTooLargeError, ShapeError
from .patches import Patch, grid_origins, grid_shape


@dataclass
class ScaleAssignment:
    probs: torch.Tensor  # (N_loc, |S|), rows sum to 1
    scales: tuple[int, ...]

    def hard(self) -> torch.Tensor:
        """Index of the most probable scale per location (lowest index on ties)."""
        return self.probs.argmax(dim=1)

    def chosen_scales(self) -> torch.Tensor:
        return torch.as_tensor(self.scales, device=self.probs.device)[self.hard()]


def resize_patches(data: torch.Tensor, side: int) -> torch.Tensor:
    """Corner-aligned bilinear resize of (N, c, q, q) windows to (N, c, side, side)."""
    if side < 1:
        raise ParameterError(f"target side must be >= 1, got {side}")
    if data.shape[-1] == side and data.shape[-2] == side:
        return data
    return F.interpolate(data, size=(side, side), mode="bilinear", align_corners=True)


def resize_patch(patch: Patch, target_side: int) -> Patch:
    data = resize_patches(patch.data[None], target_side)[0]
    return Patch(data, patch.origin, patch.native_scale)


def scaled_window_origins(h, w, p, s, scale, device=None) -> torch.Tensor:
    """Top-left corners of ``scale``-sided windows centred on each base location."""
    if scale > h or scale > w:
        raise PatchTooLargeError(f"scale {scale} does not fit a {h}x{w} style map")
    base = grid_origins(h, w, p, s, device=device)
    centre = base + (p - 1) // 2
    top = centre - (scale - 1) // 2
    limit = torch.tensor([h - scale, w - scale], device=device)
    return torch.minimum(top.clamp_min(0), limit)


def scaled_windows(style: torch.Tensor, p: int, s: int, scale: int) -> torch.Tensor:
    """(N_loc, c, scale, scale) windows of a (c, h, w) map."""
    c, h, w = style.shape
    origins = scaled_window_origins(h, w, p, s, scale, device=style.device)
    cols = F.unfold(style[None], scale)[0]  # every stride-1 window
    flat = origins[:, 0] * (w - scale + 1) + origins[:, 1]
    return cols[:, flat].t().reshape(-1, c, scale, scale)


class ScalePredictor(nn.Module):
    """Per-location distribution over the scale set.

    Input per style location: the mean of its p x p window concatenated with
    the global mean of the content map. Two hidden ReLU layers, then a final
    fully-connected layer producing one logit per scale.
    """

    def __init__(self, channels: int, n_scales: int, hidden: int = 64):
        super().__init__()
        self.channels = channels
        self.trunk = nn.Sequential(
            nn.Linear(2 * channels, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
        )
        self.fc = nn.Linear(hidden, n_scales)

    def logits(self, content: torch.Tensor, style: torch.Tensor, p: int, s: int) -> torch.Tensor:
        if content.shape[0] != self.channels or style.shape[0] != self.channels:
            raise ShapeError(f"scale predictor built for {self.channels} channels, got "
                             f"content {content.shape[0]} / style {style.shape[0]}")
        grid_shape(style.shape[1], style.shape[2], p, s)
        local = F.avg_pool2d(style[None], p, stride=s)[0]  # (c, gh, gw), aligned with the grid
        local = local.reshape(self.channels, -1).t()
        glob = content.mean(dim=(1, 2)).expand(local.shape[0], -1)
        return self.fc(self.trunk(torch.cat([local, glob], dim=1)))

    def forward(self, content, style, p, s):
        return torch.softmax(self.logits(content, style, p, s), dim=1)


def predict_scales(content: torch.Tensor, style: torch.Tensor, predictor: ScalePredictor,
                   scales, p: int, s: int = 1) -> ScaleAssignment:
    scales = tuple(scales)
    if predictor.fc.out_features != len(scales):
        raise ShapeError(f"predictor outputs {predictor.fc.out_features} scales, scale set has {len(scales)}")
    return ScaleAssignment(predictor(content, style, p, s), scales)


def extract_multiscale_style_nodes(style: torch.Tensor, assignment: ScaleAssignment, p: int,
                                   s: int = 1, mode: str = "soft") -> torch.Tensor:
    """Style node features (N_loc, c*p*p) mixed over scales.

    ``soft``: probability-weighted sum of the resized windows (differentiable).
    ``hard``: only the argmax scale per location.
    """
    if mode not in ("soft", "hard"):
        raise ParameterError(f"mode must be 'soft' or 'hard', got {mode!r}")
    per_scale = [resize_patches(scaled_windows(style, p, s, sc), p).reshape(-1, style.shape[0] * p * p)
                 for sc in assignment.scales]
    if assignment.probs.shape[0] != per_scale[0].shape[0]:
        raise ShapeError(f"assignment has {assignment.probs.shape[0]} rows for "
                         f"{per_scale[0].shape[0]} style locations")
    stacked = torch.stack(per_scale, dim=1)  # (N_loc, |S|, d)
    if mode == "hard":
        pick = assignment.hard()
        return stacked[torch.arange(stacked.shape[0], device=stacked.device), pick]
    return (assignment.probs[:, :, None] * stacked).sum(dim=1)
