"""Two-class CNN baseline with a switchable downsampling stem, plus its augmentation recipe.

``stem_downsample=True`` is the eff_down variant (stride-2 first layer);
``False`` is eff_nodown, which keeps full resolution in the first feature map
so that pixel-period artifacts survive into the deeper layers.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import nn
from .nn import Tensor
from .raster import GENERATED, MAX_SAMPLE, MultispectralTile
from .vqvae2 import EarlyStopping, tiles_to_array

log = logging.getLogger(__name__)


# augmentation ---------------------------------------------------------------------

@dataclass
class AugmentationConfig:
    blur_p: float = 0.1
    blur_sigma: tuple = (0.5, 1.5)
    shift_p: float = 0.2
    shift_max: int = 4
    rotate_p: float = 0.5
    flip_p: float = 0.5
    flip_axes: tuple = (0, 1)  # 0 = vertical (rows), 1 = horizontal (cols)
    seed: int = 0

    def __post_init__(self):
        for name in ("blur_p", "shift_p", "rotate_p", "flip_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        self.blur_sigma = tuple(float(v) for v in self.blur_sigma)
        self.flip_axes = tuple(int(a) for a in self.flip_axes)
        if len(self.blur_sigma) != 2 or not 0 <= self.blur_sigma[0] <= self.blur_sigma[1]:
            raise ValueError("blur_sigma must be an ordered (low, high) pair")
        if self.shift_max < 0 or any(a not in (0, 1) for a in self.flip_axes):
            raise ValueError("bad shift_max or flip_axes")

    @classmethod
    def none(cls) -> "AugmentationConfig":
        return cls(blur_p=0.0, shift_p=0.0, rotate_p=0.0, flip_p=0.0)


def shift_edge(x: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate ``(C, H, W)`` content by (dy, dx) pixels, filling with replicated edges."""
    _, h, w = x.shape
    p = max(abs(dy), abs(dx))
    if p == 0:
        return x.copy()
    padded = np.pad(x, ((0, 0), (p, p), (p, p)), mode="edge")
    return padded[:, p - dy:p - dy + h, p - dx:p - dx + w].copy()


def augment_array(x: np.ndarray, config: AugmentationConfig, rng) -> np.ndarray:
    """Apply each transform independently with its probability; the dtype is preserved."""
    dtype = x.dtype
    out = x
    # draw every decision up front so the random stream does not depend on which fired
    u = rng.random(4)
    sigma = rng.uniform(*config.blur_sigma)
    dy, dx = rng.integers(-config.shift_max, config.shift_max + 1, size=2)
    turns = int(rng.integers(1, 4))
    axis = config.flip_axes[int(rng.integers(0, len(config.flip_axes)))] if config.flip_axes else None
    if u[0] < config.blur_p and sigma > 0:
        blurred = np.stack([ndimage.gaussian_filter(b.astype(np.float64), sigma, mode="reflect") for b in out])
        if np.issubdtype(dtype, np.integer):
            blurred = np.clip(np.rint(blurred), 0, MAX_SAMPLE)
        out = blurred.astype(dtype)
    if u[1] < config.shift_p:
        out = shift_edge(out, int(dy), int(dx))
    if u[2] < config.rotate_p and out.shape[1] == out.shape[2]:
        out = np.rot90(out, turns, axes=(1, 2))
    if u[3] < config.flip_p and axis is not None:
        out = np.flip(out, axis=axis + 1)
    return np.ascontiguousarray(out, dtype=dtype)


def augment(tile: MultispectralTile, config: AugmentationConfig, seed: int) -> MultispectralTile:
    rng = np.random.default_rng(seed)
    samples = augment_array(tile.samples, config, rng)
    return MultispectralTile(samples=samples, band_specs=list(tile.band_specs), label=tile.label,
                             provenance=tile.provenance, seed=tile.seed, origin=tile.origin)


# classifier -------------------------------------------------------------------------

@dataclass
class CnnConfig:
    input_channels: int = 13
    stem_downsample: bool = True
    width: int = 16
    depth: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.input_channels < 1 or self.width < 1 or self.depth < 1:
            raise ValueError("input_channels, width and depth must be positive")

    @property
    def variant(self) -> str:
        return "eff_down" if self.stem_downsample else "eff_nodown"


class BinaryCnn(nn.Module):
    """Conv stack, global average pool, one logit."""

    def __init__(self, config: CnnConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        w = config.width
        self.stem = nn.Conv2d(config.input_channels, w, 3, stride=2 if config.stem_downsample else 1,
                              padding=1, rng=rng)
        layers = []
        ch = w
        for i in range(config.depth - 1):
            out = min(w * 2 ** (i + 1), 8 * w)
            layers += [nn.Conv2d(ch, out, 3, stride=2, padding=1, rng=rng), nn.ReLU()]
            ch = out
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(ch, 1, rng=rng)

    def features(self, x: Tensor) -> Tensor:
        return nn.relu(self.stem(x))

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise ValueError(f"classifier expects {self.config.input_channels} channels, got input {x.shape}")
        h = self.body(self.features(x))
        pooled = nn.mean(h, axis=(2, 3))
        return nn.reshape(self.head(pooled), (x.shape[0],))

    def arch(self) -> dict:
        return {"kind": "binary_cnn", "config": asdict(self.config)}


def build_classifier(config: CnnConfig) -> BinaryCnn:
    model = BinaryCnn(config)
    log.info("%s classifier: %d parameters", config.variant, model.n_parameters())
    return model


# training -----------------------------------------------------------------------------

@dataclass
class BinaryRun:
    epochs: int = 30
    batch_size: int = 32
    patience: int = 5
    val_fraction: float = 0.1
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs, batch_size and patience must be positive")


@dataclass
class BinaryEpoch:
    epoch: int
    train_loss: float
    val_loss: float
    stopped: bool = False
    train_acc: float = 0.0
    val_acc: float = 0.0


def write_binary_log(records: Sequence[BinaryEpoch], path) -> Path:
    path = Path(path)
    lines = ["epoch\ttrain_loss\tval_loss\tstopped\ttrain_acc\tval_acc"]
    lines += [f"{r.epoch}\t{r.train_loss:.9g}\t{r.val_loss:.9g}\t{int(r.stopped)}\t{r.train_acc:.6f}\t{r.val_acc:.6f}"
              for r in records]
    path.write_text("\n".join(lines) + "\n")
    return path


def _stratified_split(labels: np.ndarray, val_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    tr, va = [], []
    for lab in (0, 1):
        idx = rng.permutation(np.flatnonzero(labels == lab))
        n_val = int(round(len(idx) * val_fraction))
        if val_fraction > 0 and len(idx) > 1:
            n_val = min(max(n_val, 1), len(idx) - 1)
        va.append(idx[:n_val])
        tr.append(idx[n_val:])
    return np.sort(np.concatenate(tr)), np.sort(np.concatenate(va))


# fixed affine map of the [0, 1] reflectance scale; absolute levels are kept
INPUT_CENTER = 0.5
INPUT_GAIN = 8.0


def _standardize(x: np.ndarray) -> np.ndarray:
    return (x - np.float32(INPUT_CENTER)) * np.float32(INPUT_GAIN)


def _predict_logits(model: BinaryCnn, x: np.ndarray, batch_size: int) -> np.ndarray:
    out = [model(Tensor(x[s:s + batch_size], dtype=np.float32)).data for s in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.float32)


def _bce(logits: np.ndarray, y: np.ndarray) -> float:
    z = logits.astype(np.float64)
    return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def train_binary(model: BinaryCnn, tiles: Sequence[MultispectralTile], augmentation: AugmentationConfig,
                 run: BinaryRun, bands: Sequence[str] | None = None) -> BinaryCnn:
    """Binary cross-entropy training with early stopping on validation accuracy.

    Returns the model restored to its best-validation-accuracy epoch; the
    per-epoch records are kept in ``model.training_log``.
    """
    tiles = list(tiles)
    labels = np.array([1.0 if t.label == GENERATED else 0.0 for t in tiles], dtype=np.float32)
    if len(set(labels.tolist())) < 2:
        raise ValueError("binary training needs both pristine and generated tiles")
    raw = np.stack([t.samples if bands is None else t.samples[[t.band_names.index(b) for b in bands]]
                    for t in tiles])
    if raw.shape[1] != model.config.input_channels:
        raise ValueError(f"tiles have {raw.shape[1]} channels, classifier expects {model.config.input_channels}")
    tr_idx, va_idx = _stratified_split(labels, run.val_fraction, run.seed)
    val_x = _standardize(raw[va_idx].astype(np.float32) / np.float32(MAX_SAMPLE))
    val_y = labels[va_idx]
    opt = nn.make_optimizer(model.parameters(), nn.OptimConfig(name="adam", lr=run.lr))
    stopper = EarlyStopping(run.patience, 0.0)
    best = None
    model.training_log = []
    for epoch in range(1, run.epochs + 1):
        rng = np.random.default_rng([run.seed, epoch])
        order = tr_idx[rng.permutation(len(tr_idx))]
        total, correct, seen = 0.0, 0, 0
        for s in range(0, len(order), run.batch_size):
            idx = order[s:s + run.batch_size]
            xb = np.stack([augment_array(raw[i], augmentation, rng) for i in idx]).astype(np.float32)
            xb = _standardize(xb / np.float32(MAX_SAMPLE))
            yb = labels[idx]
            opt.zero_grad()
            logits = model(Tensor(xb, dtype=np.float32))
            loss = nn.bce_with_logits(logits, yb)
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
            correct += int(np.sum((logits.data > 0) == (yb > 0.5)))
            seen += len(idx)
        if len(val_x):
            vl = _predict_logits(model, val_x, run.batch_size)
            val_loss, val_acc = _bce(vl, val_y), float(np.mean((vl > 0) == (val_y > 0.5)))
        else:
            val_loss, val_acc = total / seen, correct / seen
        # maximize accuracy by minimizing its complement
        improved, stop = stopper.update(epoch, 1.0 - val_acc)
        if improved or best is None:
            best = [p.data.copy() for p in model.parameters()]
        stop = stop or epoch == run.epochs
        model.training_log.append(BinaryEpoch(epoch, total / seen, val_loss, stop, correct / seen, val_acc))
        log.info("epoch %d loss %.5f acc %.3f val_acc %.3f", epoch, total / seen, correct / seen, val_acc)
        if stop:
            break
    for p, d in zip(model.parameters(), best):
        p.data = d
    return model


def score_binary(model: BinaryCnn, tiles, bands: Sequence[str] | None = None, batch_size: int = 64) -> np.ndarray:
    """Probability of ``generated`` for each tile (a single tile gives a length-1 array)."""
    if isinstance(tiles, MultispectralTile):
        tiles = [tiles]
    x = tiles_to_array(list(tiles), bands)
    if len(x) and x.shape[1] != model.config.input_channels:
        raise ValueError(f"tiles have {x.shape[1]} channels, classifier expects {model.config.input_channels}")
    z = _predict_logits(model, _standardize(x), batch_size).astype(np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * z))  # logistic, overflow-free


def save_classifier(model: BinaryCnn, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(meta or {})
    meta.setdefault("training_log", [asdict(r) for r in getattr(model, "training_log", [])])
    nn.save_module(path, model, model.arch(), meta=meta)
    return path


def load_classifier(path) -> BinaryCnn:
    arch, _, _ = nn.load_arrays(path)
    if arch.get("kind") != "binary_cnn":
        raise nn.ArchitectureMismatch(f"{path}: not a classifier checkpoint")
    model = BinaryCnn(CnnConfig(**arch["config"]))
    _, meta = nn.load_module(path, model, model.arch())
    model.training_log = [BinaryEpoch(**r) for r in meta.get("training_log", [])]
    return model
