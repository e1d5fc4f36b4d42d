"""Two-stage heterogeneous message passing over the stylization graph.

Node features are flattened (c, p, p) patches. Every learned map here acts on
the channel vector and is shared across the p*p patch positions, i.e. a
dense map on the flattened node is ``kron(W, I_{p*p})``. This keeps the node
dimension tied to the patch layout and lets one checkpoint run at any patch
size.

GAT attention for content node i and neighbour j, head h::

    logit = LeakyReLU(a_h . [W_h x_i || W_h x_j])      (a_h averaged over positions)
    w_ij  = softmax_j(logit)
    out_i = x_i + T(mean_h sum_j w_ij W_h x_j)
"""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ParameterError, ShapeError

KINDS = ("gat", "gcn", "gin", "sage", "edgeconv")


def _positions(nodes: torch.Tensor, channels: int) -> torch.Tensor:
    """(N, c*P) channel-major nodes -> (N, P, c)."""
    if nodes.shape[-1] % channels:
        raise ShapeError(f"node length {nodes.shape[-1]} is not a multiple of {channels} channels")
    return nodes.reshape(nodes.shape[0], channels, -1).transpose(1, 2)


def _flatten(x: torch.Tensor) -> torch.Tensor:
    return x.transpose(1, 2).reshape(x.shape[0], -1)


def _check_idx(idx, n_sources):
    if idx.dim() != 2 or idx.shape[1] == 0:
        raise ParameterError("every center needs a non-empty neighbour list")
    if idx.numel() and (int(idx.min()) < 0 or int(idx.max()) >= n_sources):
        raise ParameterError("neighbour index out of range")


def _gather_mean(xs, idx):
    acc = xs[idx[:, 0]].clone()
    for j in range(1, idx.shape[1]):
        acc = acc + xs[idx[:, j]]
    return acc / idx.shape[1]


class AttentionParams(nn.Module):
    """W_b (per head), W_a (per head) and the shared output transform T."""

    def __init__(self, channels: int, heads: int = 4, head_dim: int | None = None,
                 negative_slope: float = 0.2):
        super().__init__()
        if heads < 1:
            raise ParameterError("head_count must be >= 1")
        if not 0.0 < negative_slope < 1.0:
            raise ParameterError("negative_slope must be in (0, 1)")
        head_dim = head_dim or channels
        self.channels, self.heads, self.head_dim = channels, heads, head_dim
        self.negative_slope = negative_slope
        self.W_b = nn.Parameter(torch.empty(heads, head_dim, channels))
        self.W_a = nn.Parameter(torch.empty(heads, 2 * head_dim))
        self.out = nn.Linear(head_dim, channels)
        bound = 1.0 / math.sqrt(channels)
        nn.init.uniform_(self.W_b, -bound, bound)
        nn.init.uniform_(self.W_a, -1.0 / math.sqrt(head_dim), 1.0 / math.sqrt(head_dim))

    def attention(self, centers, sources, idx):
        """Attention weights, shape (N, k, heads)."""
        xc = _positions(centers, self.channels).mean(1)  # (N, c)
        xs = _positions(sources, self.channels).mean(1)
        e = self.head_dim
        proj_c = torch.einsum("he,hec->hc", self.W_a[:, :e], self.W_b)
        proj_s = torch.einsum("he,hec->hc", self.W_a[:, e:], self.W_b)
        logits = (xc @ proj_c.t())[:, None, :] + (xs @ proj_s.t())[idx]
        return torch.softmax(F.leaky_relu(logits, self.negative_slope), dim=1)

    def forward(self, centers, sources, idx, return_weights=False):
        _check_idx(idx, sources.shape[0])
        w = self.attention(centers, sources, idx)
        xs = _positions(sources, self.channels)
        n, k = idx.shape
        z = torch.zeros((n, self.heads) + xs.shape[1:], dtype=xs.dtype, device=xs.device)
        for j in range(k):
            z = z + w[:, j, :, None, None] * xs[idx[:, j]][:, None]
        u = torch.einsum("hec,nhpc->npe", self.W_b, z) / self.heads
        out = _flatten(self.out(u)) + centers
        return (out, w) if return_weights else out


class GCNAggregator(nn.Module):
    """Degree-normalized neighbour mean, then a linear map."""

    def __init__(self, channels, **_):
        super().__init__()
        self.channels = channels
        self.lin = nn.Linear(channels, channels)

    def message(self, centers, sources, idx):
        xs = _positions(sources, self.channels)
        return _flatten(self.lin(_gather_mean(xs, idx)))

    def forward(self, centers, sources, idx):
        _check_idx(idx, sources.shape[0])
        return centers + self.message(centers, sources, idx)


class GINAggregator(nn.Module):
    """MLP((1 + eps) * center + sum of neighbours)."""

    def __init__(self, channels, hidden=None, **_):
        super().__init__()
        self.channels = channels
        hidden = hidden or channels
        self.eps = nn.Parameter(torch.zeros(()))
        self.mlp = nn.Sequential(nn.Linear(channels, hidden), nn.ReLU(), nn.Linear(hidden, channels))

    def message(self, centers, sources, idx):
        xc = _positions(centers, self.channels)
        xs = _positions(sources, self.channels)
        total = _gather_mean(xs, idx) * idx.shape[1]
        return _flatten(self.mlp((1 + self.eps) * xc + total))

    def forward(self, centers, sources, idx):
        _check_idx(idx, sources.shape[0])
        return centers + self.message(centers, sources, idx)


class SAGEAggregator(nn.Module):
    """Linear map of [center || mean of neighbours]."""

    def __init__(self, channels, **_):
        super().__init__()
        self.channels = channels
        self.lin = nn.Linear(2 * channels, channels)

    def message(self, centers, sources, idx):
        xc = _positions(centers, self.channels)
        xs = _positions(sources, self.channels)
        return _flatten(self.lin(torch.cat([xc, _gather_mean(xs, idx)], dim=-1)))

    def forward(self, centers, sources, idx):
        _check_idx(idx, sources.shape[0])
        return centers + self.message(centers, sources, idx)


class EdgeConvAggregator(nn.Module):
    """Max over neighbours of MLP([center || neighbour - center])."""

    def __init__(self, channels, hidden=None, **_):
        super().__init__()
        self.channels = channels
        hidden = hidden or channels
        self.mlp = nn.Sequential(nn.Linear(2 * channels, hidden), nn.ReLU(), nn.Linear(hidden, channels))

    def message(self, centers, sources, idx):
        xc = _positions(centers, self.channels)
        xs = _positions(sources, self.channels)
        best = None
        for j in range(idx.shape[1]):
            nb = xs[idx[:, j]]
            h = self.mlp(torch.cat([xc, nb - xc], dim=-1))
            best = h if best is None else torch.maximum(best, h)
        return _flatten(best)

    def forward(self, centers, sources, idx):
        _check_idx(idx, sources.shape[0])
        return centers + self.message(centers, sources, idx)


_ALT = {"gcn": GCNAggregator, "gin": GINAggregator, "sage": SAGEAggregator, "edgeconv": EdgeConvAggregator}


def make_aggregator(kind: str, channels: int, heads: int = 4, head_dim: int | None = None,
                    negative_slope: float = 0.2) -> nn.Module:
    if kind == "gat":
        return AttentionParams(channels, heads, head_dim, negative_slope)
    try:
        return _ALT[kind](channels)
    except KeyError:
        raise ParameterError(f"unknown aggregator {kind!r}; expected one of {KINDS}") from None


def _single(center, neighbors):
    center = torch.as_tensor(center)
    neighbors = torch.stack(list(neighbors)) if isinstance(neighbors, (list, tuple)) else neighbors
    if neighbors.shape[0] == 0:
        raise ParameterError("empty neighbour list")
    if neighbors.shape[1] != center.shape[0]:
        raise ShapeError(f"neighbour length {neighbors.shape[1]} != center length {center.shape[0]}")
    idx = torch.arange(neighbors.shape[0])[None]
    return center[None], neighbors, idx


def attention_coefficients(center, neighbors, params: AttentionParams, head: int = 0) -> torch.Tensor:
    c, nb, idx = _single(center, neighbors)
    return params.attention(c, nb, idx)[0, :, head]


def aggregate(center, neighbors, params: AttentionParams) -> torch.Tensor:
    c, nb, idx = _single(center, neighbors)
    return params(c, nb, idx)[0]


def alt_aggregate(kind: str, module: nn.Module, center, neighbors) -> torch.Tensor:
    """The bare aggregation formula for one node (no residual)."""
    if kind not in _ALT:
        raise ParameterError(f"unknown aggregator {kind!r}; expected one of {tuple(_ALT)}")
    if not isinstance(module, _ALT[kind]):
        raise ParameterError(f"module {type(module).__name__} does not implement {kind!r}")
    c, nb, idx = _single(center, neighbors)
    return module.message(c, nb, idx)[0]


def style_to_content_pass(graph, aggregator: nn.Module) -> torch.Tensor:
    return aggregator(graph.content_nodes, graph.style_nodes, graph.inter)


def content_to_content_pass(features: torch.Tensor, intra_edges, aggregator: nn.Module,
                            enabled: bool = True) -> torch.Tensor:
    if not enabled or intra_edges is None:
        return features
    return aggregator(features, features, intra_edges)
