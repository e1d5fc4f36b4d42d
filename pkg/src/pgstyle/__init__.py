"""Patch-graph neural style transfer.

Content and style feature patches become nodes of a heterogeneous graph;
stylization is attention-based message passing from style to content nodes
and then among content nodes, followed by AdaIN refinement and decoding.
"""
from .config import ModelConfig, TrainConfig, load_config
from .model import StyleGNN, build_model
from .trainer import load_checkpoint, save_checkpoint, train

__all__ = ["ModelConfig", "TrainConfig", "StyleGNN", "build_model", "load_config",
           "load_checkpoint", "save_checkpoint", "train"]
__version__ = "0.1.0"
