"""End-to-end stylization network.

encode -> content patches -> scale prediction -> multi-scale style nodes ->
KNN graph -> style-to-content pass -> content-to-content pass ->
patches back to a map -> AdaIN refinement -> decode
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import torch
import torch.nn as nn

from .codec import Decoder, Encoder, LossNetwork, layout_for
from .config import ModelConfig
from .deformable import ScalePredictor, extract_multiscale_style_nodes, predict_scales
from .errors import StyleTransferError
from .graph import HeteroStyleGraph, build_graph
from .message import content_to_content_pass, make_aggregator, style_to_content_pass
from .patches import compose_overlapping, extract_patches
from .refine import adain

# option name -> ModelConfig field that may be overridden per forward call
INFERENCE_OPTIONS = ("k", "patch_size", "stride", "metric", "intra_enabled",
                     "deformable_enabled", "refine_enabled")


@contextlib.contextmanager
def stage(name):
    try:
        yield
    except StyleTransferError as e:
        raise type(e)(f"[{name}] {e}") from e


@dataclass
class PairTrace:
    graph: HeteroStyleGraph
    scales: torch.Tensor | None  # chosen scale per style location (hard) or probs (soft)
    features: torch.Tensor  # refined relu3_1-level map fed to the decoder


class StyleGNN(nn.Module):
    def __init__(self, cfg: ModelConfig, loss_net: LossNetwork | None = None):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            layout = layout_for(cfg)
            self.encoder = Encoder.from_loss_network(loss_net) if loss_net is not None else Encoder(layout)
            c = self.encoder.out_channels
            self.predictor = ScalePredictor(c, len(cfg.scales), cfg.predictor_hidden)
            kw = dict(heads=cfg.heads, head_dim=cfg.head_dim, negative_slope=cfg.negative_slope)
            self.inter = make_aggregator(cfg.aggregator, c, **kw)
            self.intra = make_aggregator(cfg.aggregator, c, **kw)
            self.decoder = Decoder(layout)

    def options(self, **overrides) -> ModelConfig:
        unknown = set(overrides) - set(INFERENCE_OPTIONS) - {"scale_mode"}
        if unknown:
            raise TypeError(f"unknown forward options: {sorted(unknown)}")
        return self.cfg.replace(**{k: v for k, v in overrides.items()
                                   if v is not None and k != "scale_mode"})

    def stylize_features(self, fc: torch.Tensor, fs: torch.Tensor, opts: ModelConfig,
                         scale_mode: str) -> PairTrace:
        p, s = opts.patch_size, opts.stride
        with stage("patches"):
            coll = extract_patches(fc, p, s)
        scales = None
        with stage("deformable"):
            if opts.deformable_enabled:
                assign = predict_scales(fc, fs, self.predictor, opts.scales, p, s)
                style_nodes = extract_multiscale_style_nodes(fs, assign, p, s, scale_mode)
                scales = assign.chosen_scales() if scale_mode == "hard" else assign.probs
            else:
                style_nodes = extract_patches(fs, p, s).nodes()
        with stage("graph"):
            graph = build_graph(coll, style_nodes, opts.k, opts.metric, intra=opts.intra_enabled)
        with stage("message passing"):
            h = style_to_content_pass(graph, self.inter)
            h = content_to_content_pass(h, graph.intra, self.intra, enabled=opts.intra_enabled)
        with stage("compose"):
            fo = compose_overlapping(coll.with_nodes(h), fill=fc)
        with stage("refine"):
            if opts.refine_enabled:
                fo = adain(fo, fs)
        return PairTrace(graph, scales, fo)

    def forward(self, content: torch.Tensor, style: torch.Tensor, return_traces=False, **overrides):
        """Stylize a batch; ``style`` may hold one image shared by every content image.

        Keyword overrides (``k``, ``patch_size``, ``metric``, ``intra_enabled`` ...)
        apply to this call only. ``scale_mode`` defaults to soft while training
        and hard otherwise.
        """
        opts = self.options(**overrides)
        scale_mode = overrides.get("scale_mode") or ("soft" if self.training else "hard")
        with stage("encode"):
            fc = self.encoder(content)
            fs = self.encoder(style)
        if fs.shape[0] == 1 and fc.shape[0] > 1:
            fs = fs.expand(fc.shape[0], -1, -1, -1)
        traces = [self.stylize_features(fc[b], fs[b], opts, scale_mode) for b in range(fc.shape[0])]
        with stage("decode"):
            out = self.decoder(torch.stack([t.features for t in traces]))
        return (out, traces) if return_traces else out

    def parameter_groups(self):
        """Trainable groups: encoder, scale predictor, attention (W_a/W_b), output transforms, decoder."""
        groups = {"encoder": [], "predictor": [], "attention": [], "transform": [], "decoder": []}
        for name, prm in self.named_parameters():
            head = name.split(".")[0]
            if head in ("inter", "intra"):
                key = "attention" if name.rsplit(".", 1)[-1] in ("W_a", "W_b") else "transform"
            else:
                key = head
            groups[key].append((name, prm))
        return groups


def build_model(cfg: ModelConfig, loss_net: LossNetwork | None = None) -> StyleGNN:
    return StyleGNN(cfg, loss_net)
