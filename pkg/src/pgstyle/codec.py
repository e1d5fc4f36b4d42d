"""VGG-style encoder, mirrored decoder and the frozen loss network.

Two operating modes share one layer layout description:

* ``full``  -- the VGG-19 stack; the loss network loads pretrained weights.
* ``tiny``  -- one conv per level with narrow widths and a fixed random init,
  so everything runs without downloads.

All convolutions use reflection padding (replicate on 1-pixel maps, where
reflection is undefined).
"""
from __future__ import annotations

import os

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .errors import ConfigError, InputTooSmallError, ShapeError

LOSS_TAGS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1")
LOSS_NET_SEED = 20220717
MIN_ENCODE_SIDE = 16

# torchvision ``vgg19().features`` indices of the convolutions we use
VGG19_TORCHVISION_INDEX = {
    "conv1_1": 0, "conv1_2": 2, "conv2_1": 5, "conv2_2": 7,
    "conv3_1": 10, "conv3_2": 12, "conv3_3": 14, "conv3_4": 16, "conv4_1": 19,
}


def vgg19_layout():
    return [
        ("conv1_1", 3, 64), ("conv1_2", 64, 64), "pool",
        ("conv2_1", 64, 128), ("conv2_2", 128, 128), "pool",
        ("conv3_1", 128, 256), ("conv3_2", 256, 256), ("conv3_3", 256, 256), ("conv3_4", 256, 256), "pool",
        ("conv4_1", 256, 512),
    ]


def tiny_layout(widths=(8, 16, 32, 64), first_kernel=3):
    w1, w2, w3, w4 = widths
    return [
        ("conv1_1", 3, w1, first_kernel), "pool",
        ("conv2_1", w1, w2), "pool",
        ("conv3_1", w2, w3), "pool",
        ("conv4_1", w3, w4),
    ]


def layout_for(cfg: ModelConfig):
    return vgg19_layout() if cfg.mode == "full" else tiny_layout(cfg.tiny_widths)


class PadConv(nn.Module):
    def __init__(self, cin, cout, kernel=3):
        super().__init__()
        self.pad = kernel // 2
        self.conv = nn.Conv2d(cin, cout, kernel)

    def forward(self, x):
        if self.pad:
            h, w = x.shape[-2:]
            mode = "reflect" if min(h, w) > self.pad else "replicate"
            x = F.pad(x, (self.pad,) * 4, mode=mode)
        return self.conv(x)


def _build_stack(layout, stop_tag):
    """Build conv/relu/pool modules up to and including ``stop_tag``'s relu."""
    layers = nn.ModuleDict()
    order = []
    pools = 0
    for item in layout:
        if item == "pool":
            pools += 1
            order.append(f"pool{pools}")
            continue
        name, cin, cout, *kernel = item
        layers[name] = PadConv(cin, cout, *kernel)
        order.append(name)
        if name.replace("conv", "relu") == stop_tag:
            break
    return layers, order


class _ConvStack(nn.Module):
    def __init__(self, layout, stop_tag):
        super().__init__()
        self.layout = list(layout)
        self.layers, self.order = _build_stack(layout, stop_tag)

    def _run(self, x, taps=()):
        out = {}
        for name in self.order:
            if name.startswith("pool"):
                x = F.max_pool2d(x, 2)
                continue
            x = F.relu(self.layers[name](x))
            tag = name.replace("conv", "relu")
            if tag in taps:
                out[tag] = x
        return x, out

    @property
    def in_channels(self):
        return self.layers[self.order[0]].conv.in_channels

    @property
    def out_channels(self):
        return self.layers[[n for n in self.order if not n.startswith("pool")][-1]].conv.out_channels


class LossNetwork(_ConvStack):
    """Frozen multi-layer feature extractor for the perceptual losses."""

    def __init__(self, layout):
        super().__init__(layout, "relu4_1")
        self.requires_grad_(False)
        self.eval()

    def train(self, mode=True):
        # always stays in eval mode; there is nothing to train here
        return super().train(False)

    def forward(self, image, tags=LOSS_TAGS):
        if image.dim() == 3:
            image = image[None]
        _, out = self._run(image, taps=tags)
        return out

    def load_vgg19(self, path):
        state = torch.load(path, map_location="cpu", weights_only=True)
        if "state_dict" in state:
            state = state["state_dict"]
        for name in self.layers:
            idx = VGG19_TORCHVISION_INDEX[name]
            for part in ("weight", "bias"):
                key = next((k for k in (f"features.{idx}.{part}", f"{idx}.{part}",
                                        f"layers.{name}.conv.{part}") if k in state), None)
                if key is None:
                    raise ConfigError(f"weights file {path} has no entry for {name}.{part}")
                target = getattr(self.layers[name].conv, part)
                if tuple(state[key].shape) != tuple(target.shape):
                    raise ShapeError(f"{name}.{part}: file has {tuple(state[key].shape)}, "
                                     f"expected {tuple(target.shape)}")
                target.data.copy_(state[key])
        return self


def he_init_(module: nn.Module):
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            nn.init.zeros_(m.bias)
    return module


def build_loss_network(cfg: ModelConfig) -> LossNetwork:
    if cfg.mode == "tiny":
        with torch.random.fork_rng():
            torch.manual_seed(LOSS_NET_SEED)
            return he_init_(LossNetwork(tiny_layout(cfg.tiny_widths)))
    path = cfg.weights_path
    if not path or not os.path.isfile(path):
        raise ConfigError(
            f"full mode needs pretrained VGG-19 weights (loss_network.weights_path), "
            f"not found: {path!r}; use mode 'tiny' to run without them")
    return LossNetwork(vgg19_layout()).load_vgg19(path)


class Encoder(_ConvStack):
    """Image -> relu3_1 features (spatial /4)."""

    def __init__(self, layout):
        super().__init__(layout, "relu3_1")

    @classmethod
    def from_loss_network(cls, net: LossNetwork):
        enc = cls(net.layout)
        for name, layer in enc.layers.items():
            layer.load_state_dict(net.layers[name].state_dict())
        return enc

    def forward(self, image):
        if image.dim() == 3:
            image = image[None]
        if image.shape[1] != self.in_channels:
            raise ShapeError(f"encoder expects {self.in_channels} channels, got {image.shape[1]}")
        h, w = image.shape[-2:]
        if h < MIN_ENCODE_SIDE or w < MIN_ENCODE_SIDE:
            raise InputTooSmallError(f"image {h}x{w} is smaller than {MIN_ENCODE_SIDE}x{MIN_ENCODE_SIDE}")
        x, _ = self._run(image)
        return x


class Decoder(nn.Module):
    """Mirror of the encoder: reversed convs, bilinear 2x upsampling in place of pools.

    The last conv has no ReLU; the output is clamped to [0, 1].
    """

    def __init__(self, layout):
        super().__init__()
        layers, order = _build_stack(layout, "relu3_1")
        self.steps = []
        self.convs = nn.ModuleDict()
        for name in reversed(order):
            if name.startswith("pool"):
                self.steps.append("up")
                continue
            src = layers[name].conv
            dname = name.replace("conv", "deconv")
            self.convs[dname] = PadConv(src.out_channels, src.in_channels, 3)
            self.steps.append(dname)
        he_init_(self)
        last = self.convs[self.steps[-1]].conv
        # start around mid-grey so the clamp does not swallow early gradients
        nn.init.normal_(last.weight, std=0.5 / (last.in_channels * 9) ** 0.5)
        nn.init.constant_(last.bias, 0.5)

    @property
    def in_channels(self):
        return self.convs[self.steps[0]].conv.in_channels

    def forward(self, features):
        if features.dim() == 3:
            features = features[None]
        if features.shape[1] != self.in_channels:
            raise ShapeError(f"decoder expects {self.in_channels} channels, got {features.shape[1]}")
        x = features
        last = self.steps[-1]
        for step in self.steps:
            if step == "up":
                x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            else:
                x = self.convs[step](x)
                if step != last:
                    x = F.relu(x)
        return x.clamp(0.0, 1.0)
