"""Dice-loss training with deep supervision, fold planning and prediction."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import TARGETS
from .data import DatasetManifest, ManifestEntry, load_arrays
from .errors import TrainingError, ValidationError
from .model import NestedUNet, _as_batch, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 201
    batch_size: int = 8
    optimizer: str = "rmsprop"
    rho: float = 0.9
    optimizer_eps: float = 1e-8
    folds: int = 10
    split_mode: str = "slice"
    test_fraction: float = 174 / 1746
    seed: int = 0
    smooth_eps: float = 1e-6

    def __post_init__(self):
        self.split_mode = self.split_mode.lower()
        self.validate()

    def validate(self) -> None:
        if not (self.learning_rate > 0):
            raise ValidationError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be positive")
        if self.folds < 2:
            raise ValidationError("folds must be at least 2")
        if not (0 <= self.test_fraction < 1):
            raise ValidationError("test_fraction must lie in [0, 1)")
        if self.split_mode not in ("slice", "patient"):
            raise ValidationError(f"unknown split_mode {self.split_mode!r}")
        if self.optimizer != "rmsprop":
            raise ValidationError(f"unsupported optimizer {self.optimizer!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown training config fields: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------- losses


def dice_loss(pred, truth, eps: float = 1e-6):
    """Global soft Dice loss ``1 - (2 sum(p t) + eps) / (sum p + sum t + eps)``.

    Sums run over the last two (spatial) axes; leading axes are averaged.
    Works on torch tensors (differentiable) and on numpy arrays.
    """
    if tuple(pred.shape) != tuple(truth.shape):
        raise ValidationError(f"prediction shape {tuple(pred.shape)} != truth shape {tuple(truth.shape)}")
    if isinstance(pred, torch.Tensor):
        truth = torch.as_tensor(truth, dtype=pred.dtype)
        inter = (pred * truth).sum(dim=(-2, -1))
        denom = pred.sum(dim=(-2, -1)) + truth.sum(dim=(-2, -1))
        return (1 - (2 * inter + eps) / (denom + eps)).mean()
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    inter = (pred * truth).sum(axis=(-2, -1))
    denom = pred.sum(axis=(-2, -1)) + truth.sum(axis=(-2, -1))
    return float(np.mean(1 - (2 * inter + eps) / (denom + eps)))


def dice_loss_grad(pred: np.ndarray, truth: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Closed-form gradient of ``dice_loss`` for a single 2-D map."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    num = 2 * (pred * truth).sum() + eps
    den = pred.sum() + truth.sum() + eps
    return -(2 * truth * den - num) / den ** 2


def supervised_loss(heads: Sequence, fused, truth, eps: float = 1e-6):
    """Equal-weight mean of Dice losses over every (head, target) pair and the fused map."""
    maps = list(heads) + [fused]
    total = 0
    count = 0
    for m in maps:
        n_targets = m.shape[-3] if m.ndim >= 3 else 1
        for t in range(n_targets):
            if m.ndim >= 3:
                total = total + dice_loss(m[..., t, :, :], truth[..., t, :, :], eps)
            else:
                total = total + dice_loss(m, truth, eps)
            count += 1
    return total / count


# --------------------------------------------------------------------------- folds


@dataclass
class FoldPlan:
    test_set: list[ManifestEntry]
    folds: list[list[ManifestEntry]]

    def training_entries(self, k: int) -> list[ManifestEntry]:
        return [e for i, f in enumerate(self.folds) if i != k for e in f]

    def to_dict(self) -> dict:
        return {
            "test": [list(e.key) for e in self.test_set],
            "folds": [[list(e.key) for e in f] for f in self.folds],
        }

    @classmethod
    def from_dict(cls, d: dict, manifest: DatasetManifest) -> "FoldPlan":
        by_key = {e.key: e for e in manifest.entries}
        try:
            test = [by_key[tuple(k)] for k in d["test"]]
            folds = [[by_key[tuple(k)] for k in f] for f in d["folds"]]
        except KeyError as exc:
            raise ValidationError(f"fold plan references entry not in manifest: {exc}") from None
        return cls(test, folds)


def _split_sizes(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def split_folds(entries: Sequence[ManifestEntry] | DatasetManifest, config: TrainConfig) -> FoldPlan:
    """Deterministic held-out test set plus ``config.folds`` disjoint training folds."""
    if isinstance(entries, DatasetManifest):
        entries = entries.entries
    entries = list(entries)
    k = config.folds
    rng = np.random.default_rng(config.seed)
    if config.split_mode == "slice":
        n = len(entries)
        n_test = int(round(config.test_fraction * n))
        if n - n_test < k:
            raise ValidationError(f"{n} entries are too few for a test split plus {k} folds")
        order = rng.permutation(n)
        test = [entries[i] for i in sorted(order[:n_test])]
        rest = order[n_test:]
        folds, start = [], 0
        for size in _split_sizes(len(rest), k):
            folds.append([entries[i] for i in sorted(rest[start:start + size])])
            start += size
        return FoldPlan(test, folds)

    groups: dict[str, list[int]] = {}
    for i, e in enumerate(entries):
        groups.setdefault(e.patient_id, []).append(i)
    patients = sorted(groups)
    n_test_p = int(round(config.test_fraction * len(patients)))
    if config.test_fraction > 0:
        n_test_p = max(1, n_test_p)
    if len(patients) - n_test_p < k:
        raise ValidationError(
            f"{len(patients)} patients are too few for a test split plus {k} folds")
    order = [patients[i] for i in rng.permutation(len(patients))]
    test_p, train_p = order[:n_test_p], order[n_test_p:]
    # largest patients first, each into the currently smallest fold
    train_p.sort(key=lambda p: -len(groups[p]))
    buckets: list[list[int]] = [[] for _ in range(k)]
    for p in train_p:
        target = min(range(k), key=lambda b: (len(buckets[b]), b))
        buckets[target].extend(groups[p])
    test = [entries[i] for i in sorted(i for p in test_p for i in groups[p])]
    return FoldPlan(test, [[entries[i] for i in sorted(b)] for b in buckets])


# --------------------------------------------------------------------------- training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    checkpoint_paths: list[str] = field(default_factory=list)
    best_epoch: int | None = None

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss)])


def _truth_for(model: NestedUNet, truth: np.ndarray) -> np.ndarray:
    # truth arrays are stacked (lumen, ma); keep the model's targets in order
    idx = [TARGETS.index(t) for t in model.config.targets]
    return truth[:, idx]


def evaluate_loss(model: NestedUNet, images: np.ndarray, truth: np.ndarray,
                  batch_size: int, eps: float) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for s in range(0, len(images), batch_size):
            x = torch.from_numpy(images[s:s + batch_size]).unsqueeze(1)
            y = torch.from_numpy(truth[s:s + batch_size].astype(np.float32))
            heads, fused = model(x)
            total += supervised_loss(heads, fused, y, eps).item() * len(x)
    return total / len(images)


def train_arrays(model: NestedUNet, train_x: np.ndarray, train_y: np.ndarray,
                 val_x: np.ndarray, val_y: np.ndarray, config: TrainConfig,
                 on_epoch=None) -> tuple[dict, TrainHistory]:
    """Core loop over in-memory arrays. Returns the best-validation state dict and history.

    ``train_y``/``val_y`` are N x T x H x W with T matching the model's targets.
    """
    config.validate()
    gen = torch.Generator().manual_seed(config.seed)
    opt = torch.optim.RMSprop(model.parameters(), lr=config.learning_rate,
                              alpha=config.rho, eps=config.optimizer_eps)
    history = TrainHistory()
    best_state = copy.deepcopy(model.state_dict())
    best_val = math.inf
    n = len(train_x)
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = torch.randperm(n, generator=gen).numpy()
        running = 0.0
        for b, s in enumerate(range(0, n, config.batch_size), start=1):
            idx = order[s:s + config.batch_size]
            x = torch.from_numpy(train_x[idx]).unsqueeze(1)
            y = torch.from_numpy(train_y[idx].astype(np.float32))
            heads, fused = model(x)
            loss = supervised_loss(heads, fused, y, config.smooth_eps)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += loss.item() * len(idx)
        train_loss = running / n
        val_loss = evaluate_loss(model, val_x, val_y, config.batch_size, config.smooth_eps)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.records.append(EpochRecord(epoch, train_loss, val_loss))
        log.info("epoch %d train_loss %.5f val_loss %.5f", epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())
            history.best_epoch = epoch
        if on_epoch is not None:
            on_epoch(history.records[-1])
    model.load_state_dict(best_state)
    return best_state, history


def train_model(model: NestedUNet, plan: FoldPlan, fold: int, config: TrainConfig,
                manifest: DatasetManifest, out_dir: str | Path | None = None
                ) -> tuple[NestedUNet, TrainHistory]:
    """Train on every fold except ``fold``, validate on ``fold``, keep the best checkpoint.

    With ``out_dir`` the best checkpoint and ``history.csv`` are written there.
    """
    if not 0 <= fold < len(plan.folds):
        raise ValidationError(f"fold index {fold} outside 0..{len(plan.folds) - 1}")
    depth = model.config.depth
    tr = DatasetManifest(plan.training_entries(fold), manifest.pixel_spacing, manifest.root)
    va = DatasetManifest(plan.folds[fold], manifest.pixel_spacing, manifest.root)
    train_x, train_y = load_arrays(tr, depth)
    val_x, val_y = load_arrays(va, depth)
    _as_batch(model, train_x[:1])
    train_y, val_y = _truth_for(model, train_y), _truth_for(model, val_y)
    _, history = train_arrays(model, train_x, train_y, val_x, val_y, config)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "checkpoint.pt"
        save_checkpoint(model, ckpt, extra={"fold": fold, "best_epoch": history.best_epoch,
                                            "train_config": config.to_dict()})
        history.checkpoint_paths.append(str(ckpt))
        history.to_csv(out / "history.csv")
    return model, history


def predict(checkpoint, slices, batch_size: int = 8) -> np.ndarray:
    """Fused probability maps, N x T x H x W, for a checkpoint path or a model."""
    model = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, Path)) else checkpoint
    x = _as_batch(model, slices)
    model.eval()
    out = []
    with torch.no_grad():
        for s in range(0, len(x), batch_size):
            _, fused = model(x[s:s + batch_size])
            out.append(fused.numpy())
    return np.concatenate(out)
