"""Sliding-window patches, node-feature flattening and overlap-averaged recomposition.

Node features use channel-major layout: ``vec[ch * p * p + row * p + col]``,
which is exactly what ``torch.nn.functional.unfold`` produces.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import CompositionError, PatchTooLargeError, ShapeError


@dataclass
class Patch:
    data: torch.Tensor  # (c, p, p)
    origin: tuple[int, int] = (0, 0)
    native_scale: int | None = None

    def __post_init__(self):
        if self.native_scale is None:
            self.native_scale = self.data.shape[-1]

    @property
    def shape(self):
        return tuple(self.data.shape)


@dataclass
class PatchCollection:
    data: torch.Tensor  # (N, c, p, p), row-major by origin
    origins: torch.Tensor  # (N, 2) long, (row, col)
    source_shape: tuple[int, int, int]
    stride: int
    patch_side: int

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, i) -> Patch:
        r, c = self.origins[i].tolist()
        return Patch(self.data[i], (r, c), self.patch_side)

    @property
    def grid_shape(self):
        return grid_shape(self.source_shape[1], self.source_shape[2], self.patch_side, self.stride)

    def nodes(self) -> torch.Tensor:
        """All patches as node features, shape (N, c*p*p)."""
        return self.data.reshape(len(self), -1)

    def with_nodes(self, nodes: torch.Tensor) -> "PatchCollection":
        c, p = self.source_shape[0], self.patch_side
        if nodes.shape != (len(self), c * p * p):
            raise ShapeError(f"expected node matrix {(len(self), c * p * p)}, got {tuple(nodes.shape)}")
        return PatchCollection(nodes.reshape(len(self), c, p, p), self.origins,
                               self.source_shape, self.stride, self.patch_side)


def grid_shape(h, w, p, s):
    if p > h or p > w:
        raise PatchTooLargeError(f"patch side {p} does not fit a {h}x{w} map")
    if s < 1:
        raise ShapeError(f"stride must be >= 1, got {s}")
    return (h - p) // s + 1, (w - p) // s + 1


def grid_origins(h, w, p, s, device=None) -> torch.Tensor:
    gh, gw = grid_shape(h, w, p, s)
    rows = torch.arange(gh, device=device) * s
    cols = torch.arange(gw, device=device) * s
    return torch.stack(torch.meshgrid(rows, cols, indexing="ij"), -1).reshape(-1, 2)


def extract_patches(features: torch.Tensor, p: int, s: int = 1) -> PatchCollection:
    """Every full p x p window at stride s of a (c, h, w) map, row-major."""
    if features.dim() != 3:
        raise ShapeError(f"expected a (c, h, w) feature map, got shape {tuple(features.shape)}")
    c, h, w = features.shape
    origins = grid_origins(h, w, p, s, device=features.device)
    cols = F.unfold(features[None], p, stride=s)[0]  # (c*p*p, N)
    data = cols.t().reshape(-1, c, p, p)
    return PatchCollection(data, origins, (c, h, w), s, p)


def patch2feat(patch: Patch | torch.Tensor) -> torch.Tensor:
    data = patch.data if isinstance(patch, Patch) else patch
    return data.reshape(-1)


def feat2patch(feature: torch.Tensor, shape, origin=(0, 0)) -> Patch:
    c, p, q = shape
    if feature.dim() != 1 or feature.numel() != c * p * q:
        raise ShapeError(f"node feature of length {feature.numel()} cannot form a patch of shape {tuple(shape)}")
    return Patch(feature.reshape(c, p, q), tuple(origin))


def _owner_mask(patches: PatchCollection, dtype) -> torch.Tensor:
    """(1, p*p, N) mask picking exactly one covering patch for every covered position."""
    gh, gw = patches.grid_shape
    p, s = patches.patch_side, patches.stride
    d = torch.arange(p, device=patches.data.device)
    gi = torch.arange(gh, device=d.device)
    gj = torch.arange(gw, device=d.device)
    rows = (d[None, :] < s) | (gi[:, None] == gh - 1)  # (gh, p)
    cols = (d[None, :] < s) | (gj[:, None] == gw - 1)  # (gw, p)
    m = rows[:, None, :, None] & cols[None, :, None, :]  # (gh, gw, p, p)
    m = m.reshape(gh * gw, 1, p * p).expand(-1, patches.data.shape[1], -1)
    return m.reshape(gh * gw, -1).t()[None].to(dtype)


def compose_overlapping(patches: PatchCollection, fill: torch.Tensor | float | None = None) -> torch.Tensor:
    """Average every patch back onto its source grid.

    Each output position gets the mean of all patch values covering it.
    Positions no patch covers (only possible when the stride does not land on
    the last row/column) take ``fill`` (zero by default).
    """
    c, h, w = patches.source_shape
    p, s = patches.patch_side, patches.stride
    try:
        expected = grid_origins(h, w, p, s, device=patches.origins.device)
    except ShapeError as e:
        raise CompositionError(str(e)) from e
    if tuple(patches.data.shape[1:]) != (c, p, p):
        raise CompositionError(f"patch data {tuple(patches.data.shape[1:])} inconsistent with "
                               f"source channels {c} and side {p}")
    if patches.origins.shape != expected.shape or not torch.equal(patches.origins.cpu(), expected.cpu()):
        raise CompositionError("patch origins do not form the row-major grid implied by "
                               f"source {(c, h, w)}, side {p}, stride {s}")
    cols = patches.data.reshape(len(patches), -1).t()[None]
    ones = torch.ones((1, p * p, len(patches)), dtype=cols.dtype, device=cols.device)
    count = F.fold(ones, (h, w), p, stride=s)[0]
    # mean taken relative to one covering value per position (its "owner"), so
    # positions whose covering values all agree come back bit-exact
    owner = _owner_mask(patches, cols.dtype)
    ref = F.fold(cols * owner, (h, w), p, stride=s)
    resid = cols - F.unfold(ref, p, stride=s)
    out = ref[0] + F.fold(resid, (h, w), p, stride=s)[0] / count.clamp_min(1)
    if bool((count == 0).any()):
        if fill is None:
            fill = 0.0
        out = torch.where(count > 0, out, fill if torch.is_tensor(fill) else torch.full_like(out, fill))
    return out
