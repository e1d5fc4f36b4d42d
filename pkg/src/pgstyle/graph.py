"""Heterogeneous stylization graph: patch similarity and exact KNN edges.

Edges are stored per content node as index matrices in rank order:
``inter[i, r]`` is the style node of rank r for content node i, and
``intra[i, r]`` the content node of rank r (never i itself).
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ParameterError, ShapeError
from .patches import PatchCollection

NORM_EPS = 1e-12


def _as_matrix(nodes) -> torch.Tensor:
    if isinstance(nodes, PatchCollection):
        return nodes.nodes()
    if isinstance(nodes, (list, tuple)):
        return torch.stack([torch.as_tensor(v).reshape(-1) for v in nodes])
    return nodes


def ncc(a, b) -> float:
    a, b = torch.as_tensor(a), torch.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"ncc needs equal-length vectors, got {tuple(a.shape)} and {tuple(b.shape)}")
    return float(similarity_matrix(a.reshape(1, -1), b.reshape(1, -1), "ncc")[0, 0])


def euclidean_similarity(a, b) -> float:
    a, b = torch.as_tensor(a), torch.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"equal-length vectors required, got {tuple(a.shape)} and {tuple(b.shape)}")
    return float(similarity_matrix(a.reshape(1, -1), b.reshape(1, -1), "euclidean")[0, 0])


def similarity_matrix(queries: torch.Tensor, keys: torch.Tensor, metric: str = "ncc") -> torch.Tensor:
    """Pairwise similarity, larger is more similar.

    ``ncc`` is the cosine <q, k> / (|q| |k|) with norms floored at 1e-12, so a
    flat (zero) patch scores 0 against everything. ``euclidean`` is -|q - k|.
    """
    if queries.shape[1] != keys.shape[1]:
        raise ShapeError(f"query length {queries.shape[1]} != key length {keys.shape[1]}")
    if metric == "ncc":
        qn = queries.norm(dim=1).clamp_min(NORM_EPS)
        kn = keys.norm(dim=1).clamp_min(NORM_EPS)
        return (queries @ keys.t()) / (qn[:, None] * kn[None, :])
    if metric == "euclidean":
        return -torch.cdist(queries[None], keys[None], compute_mode="donot_use_mm_for_euclid_dist")[0]
    raise ParameterError(f"unknown metric {metric!r}; expected 'ncc' or 'euclidean'")


def _stable_topk(sim: torch.Tensor, k: int) -> torch.Tensor:
    """Indices of the k largest entries per row; ties go to the lower index."""
    n, m = sim.shape
    if k >= m:
        return torch.sort(-sim, dim=1, stable=True).indices[:, :k]
    vals, idx = sim.topk(k + 1, dim=1)
    out = torch.empty((n, k), dtype=torch.long, device=sim.device)
    # the top-k set is unique when the k-th value beats the (k+1)-th
    unique = vals[:, k - 1] > vals[:, k]
    if bool(unique.any()):
        cand = idx[unique, :k].sort(dim=1).values
        order = torch.sort(-sim[unique].gather(1, cand), dim=1, stable=True).indices
        out[unique] = cand.gather(1, order)
    if not bool(unique.all()):
        out[~unique] = torch.sort(-sim[~unique], dim=1, stable=True).indices[:, :k]
    return out


def knn_edges(queries, keys, k: int, metric: str = "ncc", exclude_self: bool = False,
              block_rows: int = 2048):
    """Exact brute-force KNN.

    Returns ``(index, similarity)``, both shaped (N_q, k), ranked best first.
    With ``exclude_self`` the queries and keys are the same node set and
    query i never selects key i.
    """
    q, kk = _as_matrix(queries), _as_matrix(keys)
    usable = kk.shape[0] - (1 if exclude_self else 0)
    if k < 1 or k > usable:
        raise ParameterError(f"k={k} exceeds the {usable} usable keys" if k > usable
                             else f"k must be >= 1, got {k}")
    if exclude_self and q.shape[0] != kk.shape[0]:
        raise ParameterError("exclude_self needs queries and keys to be the same node set")
    idx_blocks, sim_blocks = [], []
    with torch.no_grad():
        q, kk = q.detach(), kk.detach()
        for start in range(0, q.shape[0], block_rows):
            sim = similarity_matrix(q[start:start + block_rows], kk, metric)
            if exclude_self:
                rows = torch.arange(sim.shape[0], device=sim.device)
                sim[rows, rows + start] = -torch.inf
            idx = _stable_topk(sim, k)
            idx_blocks.append(idx)
            sim_blocks.append(sim.gather(1, idx))
    return torch.cat(idx_blocks), torch.cat(sim_blocks)


@dataclass
class HeteroStyleGraph:
    content_nodes: torch.Tensor  # (N_c, d)
    style_nodes: torch.Tensor  # (N_s, d)
    inter: torch.Tensor  # (N_c, k) style indices
    inter_sim: torch.Tensor
    intra: torch.Tensor | None  # (N_c, min(k, N_c - 1)) content indices
    intra_sim: torch.Tensor | None
    k: int
    metric: str = "ncc"

    @property
    def inter_edges(self):
        """(style j, content i) pairs, grouped by content node in rank order."""
        return [(j, i) for i, row in enumerate(self.inter.tolist()) for j in row]

    @property
    def intra_edges(self):
        if self.intra is None:
            return []
        return [(j, i) for i, row in enumerate(self.intra.tolist()) for j in row]

    def dump(self, fh):
        """Write the edge list as ``inter j i sim`` / ``intra j i sim`` lines."""
        for kind, idx, sim in (("inter", self.inter, self.inter_sim), ("intra", self.intra, self.intra_sim)):
            if idx is None:
                continue
            for i, (row, srow) in enumerate(zip(idx.tolist(), sim.tolist())):
                for j, v in zip(row, srow):
                    fh.write(f"{kind} {j} {i} {v:.6g}\n")


def build_graph(content, style_nodes, k: int, metric: str = "ncc", intra: bool = True) -> HeteroStyleGraph:
    c = _as_matrix(content)
    s = _as_matrix(style_nodes)
    if c.shape[0] < 2:
        raise ParameterError(f"need at least 2 content nodes, got {c.shape[0]}")
    inter, inter_sim = knn_edges(c, s, k, metric)
    intra_idx = intra_sim = None
    if intra:
        intra_idx, intra_sim = knn_edges(c, c, min(k, c.shape[0] - 1), metric, exclude_self=True)
    return HeteroStyleGraph(c, s, inter, inter_sim, intra_idx, intra_sim, k, metric)
