"""Nested U-Net with dense skip pathways and a pyramid of supervision heads.

Grid node ``(i, j)`` lives at scale ``H / 2**i`` and exists for ``i + j <= depth``.
Column ``j = 0`` is the encoder. Every other node fuses the same-level nodes
to its left with a transposed-convolution up-sampling of ``(i + 1, j - 1)``::

    F(0, 3) = fuse(F(0, 0), F(0, 1), F(0, 2), Tr(F(1, 2)))

One 1x1-conv + sigmoid head reads out each top-row node ``(0, 1) .. (0, depth)``;
the final probability map is the pixelwise mean of the heads.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import TARGETS
from .errors import CheckpointError, ModelConfigError, ValidationError

CHECKPOINT_FORMAT = "ivusseg-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 5
    base_channels: int = 32
    input_size: tuple[int, int] = (256, 256)
    targets: tuple[str, ...] = TARGETS
    fusion_mode: str = "concat"
    head_count: int | None = None
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(s) for s in self.input_size))
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "fusion_mode", self.fusion_mode.lower())
        if self.head_count is None:
            object.__setattr__(self, "head_count", self.depth)
        self.validate()

    def validate(self) -> None:
        if self.depth < 2:
            raise ModelConfigError("depth must be at least 2")
        if self.base_channels < 4:
            raise ModelConfigError("base_channels must be at least 4")
        if self.head_count != self.depth:
            raise ModelConfigError("head_count must equal depth")
        if self.fusion_mode not in ("concat", "sum"):
            raise ModelConfigError(f"unknown fusion_mode {self.fusion_mode!r}")
        if not self.targets or any(t not in TARGETS for t in self.targets) \
                or len(set(self.targets)) != len(self.targets):
            raise ModelConfigError(f"targets must be a non-empty subset of {TARGETS}")
        h, w = self.input_size
        k = 2 ** self.depth
        if h % k or w % k:
            raise ModelConfigError(f"input size {h}x{w} not divisible by 2^{self.depth}={k}")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["targets"] = list(self.targets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def conv_bn_relu(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class ConvBlock(nn.Sequential):
    """Two conv -> BN -> ReLU stages."""

    def __init__(self, cin: int, cout: int):
        super().__init__(conv_bn_relu(cin, cout), conv_bn_relu(cout, cout))


def node_name(i: int, j: int) -> str:
    return f"x{i}_{j}"


class NestedUNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        L = config.depth
        self.nodes = [(i, j) for j in range(L + 1) for i in range(L + 1 - j)]
        self.blocks = nn.ModuleDict()
        self.up = nn.ModuleDict()
        for i, j in self.nodes:
            c = config.channels(i)
            if j == 0:
                cin = 1 if i == 0 else config.channels(i - 1)
            else:
                self.up[node_name(i, j)] = nn.ConvTranspose2d(config.channels(i + 1), c, 2, stride=2)
                cin = (j + 1) * c if config.fusion_mode == "concat" else c
            self.blocks[node_name(i, j)] = ConvBlock(cin, c)
        n_out = len(config.targets)
        self.heads = nn.ModuleList(nn.Conv2d(config.channels(0), n_out, 1) for _ in range(L))
        self.pool = nn.MaxPool2d(2)

    @property
    def encoder(self) -> nn.ModuleDict:
        return nn.ModuleDict({node_name(i, 0): self.blocks[node_name(i, 0)]
                              for i in range(self.config.depth + 1)})

    def node_inputs(self, i: int, j: int) -> list[tuple[str, int, int]]:
        """Symbolic input set of node (i, j): ('F', i, k) feature maps and ('Tr', i+1, j-1)."""
        if (i, j) not in self.nodes:
            raise KeyError(f"node ({i}, {j}) does not exist at depth {self.config.depth}")
        if j == 0:
            return [("input", 0, 0)] if i == 0 else [("pool", i - 1, 0)]
        return [("F", i, k) for k in range(j)] + [("Tr", i + 1, j - 1)]

    def _fuse(self, tensors: list[torch.Tensor]) -> torch.Tensor:
        if self.config.fusion_mode == "concat":
            return torch.cat(tensors, dim=1)
        return torch.stack(tensors).sum(dim=0)

    def features(self, x: torch.Tensor) -> dict[tuple[int, int], torch.Tensor]:
        L = self.config.depth
        feats: dict[tuple[int, int], torch.Tensor] = {}
        for i in range(L + 1):
            src = x if i == 0 else self.pool(feats[(i - 1, 0)])
            feats[(i, 0)] = self.blocks[node_name(i, 0)](src)
        for j in range(1, L + 1):
            for i in range(L + 1 - j):
                up = self.up[node_name(i, j)](feats[(i + 1, j - 1)])
                inputs = [feats[(i, k)] for k in range(j)] + [up]
                feats[(i, j)] = self.blocks[node_name(i, j)](self._fuse(inputs))
        return feats

    def forward(self, x: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor]:
        """Return (per-head probability maps, fused map), each N x T x H x W."""
        feats = self.features(x)
        size = x.shape[-2:]
        heads = []
        for h, head in enumerate(self.heads, start=1):
            logits = head(feats[(0, h)])
            if logits.shape[-2:] != size:
                logits = F.interpolate(logits, size=size, mode="bilinear", align_corners=False)
            heads.append(torch.sigmoid(logits))
        return heads, fuse_heads(heads)

    def load_encoder_weights(self, state_dict: dict) -> None:
        """Hook for externally supplied (e.g. pretrained) encoder weights."""
        self.encoder.load_state_dict(state_dict)


def fuse_heads(heads: Sequence):
    """Voting fusion: pixelwise arithmetic mean of the head maps."""
    if len(heads) == 0:
        raise ValidationError("no heads to fuse")
    shapes = {tuple(h.shape) for h in heads}
    if len(shapes) != 1:
        raise ValidationError(f"head maps have mismatched shapes: {sorted(shapes)}")
    if isinstance(heads[0], torch.Tensor):
        return torch.stack(list(heads)).mean(dim=0)
    return np.mean(np.stack([np.asarray(h, dtype=np.float64) for h in heads]), axis=0)


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def build_model(config: ModelConfig) -> NestedUNet:
    """Construct the network with parameters drawn deterministically from ``init_seed``."""
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.init_seed)
        model = NestedUNet(config)
        model.apply(_init_weights)
    return model


def _as_batch(model: NestedUNet, batch) -> torch.Tensor:
    if isinstance(batch, torch.Tensor):
        x = batch
    else:
        arrays = [getattr(s, "pixels", s) for s in batch]
        if not arrays:
            raise ValidationError("empty batch")
        x = torch.as_tensor(np.stack([np.asarray(a, dtype=np.float32) for a in arrays]))
    if x.ndim == 3:
        x = x.unsqueeze(1)
    if x.shape[0] == 0:
        raise ValidationError("empty batch")
    expected = tuple(model.config.input_size)
    if x.ndim != 4 or x.shape[1] != 1 or tuple(x.shape[-2:]) != expected:
        raise ValidationError(f"input of shape {tuple(x.shape)} does not match model input "
                              f"size {expected[0]}x{expected[1]}")
    return x.float()


def forward(model: NestedUNet, batch) -> tuple[list[np.ndarray], np.ndarray]:
    """Inference: heads as a list of N x T x H x W arrays and the fused map."""
    x = _as_batch(model, batch)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            heads, fused = model(x)
    finally:
        model.train(was_training)
    return [h.numpy() for h in heads], fused.numpy()


def save_checkpoint(model: NestedUNet, path: str | Path, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "config_hash": model.config.hash(),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> NestedUNet:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an ivusseg checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    config = ModelConfig.from_dict(payload["config"])
    if config.hash() != payload.get("config_hash"):
        raise CheckpointError(f"{path}: config hash mismatch")
    model = build_model(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
