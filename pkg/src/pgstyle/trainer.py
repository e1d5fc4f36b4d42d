"""Training loop and checkpoint archive."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .codec import LossNetwork, build_loss_network
from .config import ModelConfig, TrainConfig, model_config_from_dict, train_config_from_dict
from .data import list_images, load_image
from .errors import CheckpointError, DataError, IncompatibleCheckpointError, TrainingDivergedError
from .model import StyleGNN, build_model
from .objective import total_loss

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "pgstyle-checkpoint-1"
META_KEY = "__meta__"


@dataclass
class TrainResult:
    model: StyleGNN
    history: list[tuple[int, float, float, float]] = field(default_factory=list)
    loss_net: LossNetwork | None = None


def load_image_dir(directory, size: int, minimum: int = 1) -> torch.Tensor:
    files = list_images(directory)
    if len(files) < minimum:
        raise DataError(f"{directory} holds {len(files)} images, need at least {minimum}")
    return torch.stack([load_image(f, size) for f in files])


def train(content_dir, style_dir, cfg: TrainConfig, out_dir=None, loss_net: LossNetwork | None = None,
          callback=None) -> TrainResult:
    """Optimize encoder, scale predictor, GNN weights and decoder with AdamW.

    Each iteration draws ``batch_size`` content and style images from a
    seeded generator, without repeats inside a batch. Writes ``loss.csv``
    into ``out_dir`` as it goes when one is given.
    """
    size = cfg.crop_size
    contents = load_image_dir(content_dir, size, cfg.batch_size)
    styles = load_image_dir(style_dir, size, cfg.batch_size)
    loss_net = loss_net or build_loss_network(cfg.model)
    model_cfg = cfg.model.replace(seed=cfg.seed)
    model = build_model(model_cfg, loss_net)
    model.train()
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)

    writer = fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "loss.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "content_loss", "style_loss", "total"])

    history = []
    try:
        for it in range(1, cfg.iterations + 1):
            ci = _draw(rng, len(contents), cfg.batch_size)
            si = _draw(rng, len(styles), cfg.batch_size)
            content, style = contents[ci], styles[si]
            out = model(content, style)
            losses = total_loss(out, content, style, loss_net, cfg.lam)
            lc, ls, lt = losses.as_floats()
            if not all(math.isfinite(v) for v in (lc, ls, lt)):
                _dump_diagnostics(out_dir, it, (lc, ls, lt), model)
                raise TrainingDivergedError(f"non-finite loss at iteration {it}: content={lc} style={ls}")
            opt.zero_grad()
            losses.total.backward()
            opt.step()
            history.append((it, lc, ls, lt))
            if writer:
                writer.writerow([it, f"{lc:.8g}", f"{ls:.8g}", f"{lt:.8g}"])
            log.info("iter %d content %.5f style %.5f total %.5f", it, lc, ls, lt)
            if callback:
                callback(it, losses)
    finally:
        if fh:
            fh.close()
    model.eval()
    if out_dir is not None:
        save_checkpoint(model, out_dir / "model.ckpt", cfg)
    return TrainResult(model, history, loss_net)


def _draw(rng, n, size):
    if size <= n:
        return torch.from_numpy(rng.permutation(n)[:size])
    return torch.from_numpy(rng.integers(0, n, size))


def _dump_diagnostics(out_dir, it, losses, model):
    if out_dir is None:
        return
    info = {
        "iteration": it,
        "losses": dict(zip(("content", "style", "total"), map(repr, losses))),
        "param_norms": {n: float(p.detach().norm()) for n, p in model.named_parameters()},
        "non_finite_params": [n for n, p in model.named_parameters() if not torch.isfinite(p).all()],
    }
    (Path(out_dir) / "diverged.json").write_text(json.dumps(info, indent=2))


def save_checkpoint(model: StyleGNN, path, train_cfg: TrainConfig | None = None):
    """npz archive of named arrays plus a JSON config snapshot under ``__meta__``."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "model": dataclasses.asdict(model.cfg),
        "train": train_cfg.to_dict() if train_cfg else None,
    }
    arrays = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    arrays[META_KEY] = np.array(json.dumps(meta))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_checkpoint(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except (zipfile.BadZipFile, ValueError, OSError, EOFError) as e:
        raise CheckpointError(f"cannot parse checkpoint {path}: {e}") from e
    if META_KEY not in arrays:
        raise CheckpointError(f"{path} has no {META_KEY} entry; not a pgstyle checkpoint")
    meta = json.loads(str(arrays.pop(META_KEY)))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(
            f"checkpoint version {meta.get('version')!r} is not supported (expected {CHECKPOINT_VERSION!r})")
    return meta, arrays


def load_checkpoint(path, config: ModelConfig | None = None) -> StyleGNN:
    """Rebuild a model from ``path``.

    With ``config`` the arrays are loaded into a model built from that
    configuration instead of the stored one; mismatching shapes raise
    ``IncompatibleCheckpointError``.
    """
    meta, arrays = read_checkpoint(path)
    stored = model_config_from_dict(meta["model"])
    cfg = config or stored
    if config is not None and config.aggregator != stored.aggregator:
        raise IncompatibleCheckpointError(
            f"checkpoint was trained with aggregator {stored.aggregator!r}, requested {config.aggregator!r}")
    model = build_model(cfg)
    expected = model.state_dict()
    problems = []
    for name, t in expected.items():
        if name not in arrays:
            problems.append(f"{name}: missing from checkpoint")
        elif tuple(arrays[name].shape) != tuple(t.shape):
            problems.append(f"{name}: checkpoint {tuple(arrays[name].shape)} vs model {tuple(t.shape)}")
    problems += [f"{name}: not used by this model" for name in arrays if name not in expected]
    if problems:
        raise IncompatibleCheckpointError("checkpoint does not fit the requested model:\n  " + "\n  ".join(problems))
    model.load_state_dict({n: torch.from_numpy(a.copy()) for n, a in arrays.items()})
    model.eval()
    return model


def checkpoint_train_config(path) -> TrainConfig | None:
    meta, _ = read_checkpoint(path)
    return train_config_from_dict(meta["train"]) if meta.get("train") else None
