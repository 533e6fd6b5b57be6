"""Three-level VQ-VAE-2 (bottom 1/4, middle 1/8, top 1/16 resolution) and its training loop.

Each level owns a Euclidean codebook learned by exponential moving averages
of assigned encoder outputs. The decoder sees quantized codes through a
straight-through estimator; encoders additionally pay a commitment penalty.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from . import nn
from .detector import ScoreVector
from .nn import Tensor
from .raster import GENERATED, MultispectralTile

log = logging.getLogger(__name__)

LEVELS = ("bottom", "middle", "top")


class OneClassViolation(ValueError):
    """A generated-labelled tile reached one-class training."""


class MissingModel(KeyError):
    pass


# codebooks ------------------------------------------------------------------------

@dataclass
class Codebook:
    entries: np.ndarray  # (K, D)
    usage_counts: np.ndarray  # (K,) EMA of assignment counts
    ema_sums: np.ndarray  # (K, D) EMA of assigned latent sums
    level: str = "bottom"
    unused_steps: np.ndarray | None = None  # consecutive updates without assignment
    initialized: bool = True

    def __post_init__(self):
        if self.unused_steps is None:
            self.unused_steps = np.zeros(len(self.entries), dtype=np.int64)

    @classmethod
    def empty(cls, size: int, dim: int, level: str, rng, dtype=np.float32) -> "Codebook":
        entries = rng.uniform(-1.0 / size, 1.0 / size, size=(size, dim)).astype(dtype)
        return cls(entries, np.zeros(size, dtype=dtype), np.zeros((size, dim), dtype=dtype), level,
                   initialized=False)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


def quantize(latents, codebook: Codebook):
    """Nearest-entry assignment under squared Euclidean distance (ties to the lowest index).

    Returns ``(indices, quantized, quantization_error)`` where the error is the
    mean over latents of the squared distance to the chosen entry.
    """
    lat = np.asarray(latents)
    if codebook.size == 0:
        raise ValueError("empty codebook")
    if lat.shape[-1] != codebook.dim:
        raise ValueError(f"latent dimension {lat.shape[-1]} != codebook dimension {codebook.dim}")
    flat = lat.reshape(-1, codebook.dim)
    idx = kernels.nearest_code(flat, codebook.entries)
    q = codebook.entries[idx]
    diff = flat.astype(np.float64) - q.astype(np.float64)
    err = float(np.mean(np.sum(diff * diff, axis=1))) if len(flat) else 0.0
    return idx.reshape(lat.shape[:-1]), q.reshape(lat.shape).astype(codebook.entries.dtype), err


def codebook_update_ema(codebook: Codebook, latents, indices, decay: float) -> Codebook:
    """EMA update of usage counts and latent sums; in place, also returned.

    Entries receiving no latents keep their vectors bit-for-bit. With
    ``decay == 0`` an assigned entry becomes the mean of its latents.
    """
    if not 0.0 <= decay < 1.0:
        raise ValueError("decay must lie in [0, 1)")
    flat = np.asarray(latents, dtype=np.float64).reshape(-1, codebook.dim)
    idx = np.asarray(indices).reshape(-1)
    k = codebook.size
    counts = np.bincount(idx, minlength=k).astype(np.float64)
    sums = np.zeros((k, codebook.dim))
    np.add.at(sums, idx, flat)
    usage = decay * codebook.usage_counts.astype(np.float64) + (1.0 - decay) * counts
    ema = decay * codebook.ema_sums.astype(np.float64) + (1.0 - decay) * sums
    hit = counts > 0
    entries = codebook.entries.copy()
    entries[hit] = (ema[hit] / usage[hit, None]).astype(entries.dtype)
    codebook.entries = entries
    codebook.usage_counts = usage.astype(codebook.usage_counts.dtype)
    codebook.ema_sums = ema.astype(codebook.ema_sums.dtype)
    codebook.unused_steps = np.where(hit, 0, codebook.unused_steps + 1)
    return codebook


def reseed_dead_codes(codebook: Codebook, latents, patience: int, rng) -> int:
    """Replace entries unused for ``patience`` consecutive updates with random recent latents."""
    dead = np.flatnonzero(codebook.unused_steps >= patience)
    if dead.size == 0:
        return 0
    flat = np.asarray(latents).reshape(-1, codebook.dim)
    picks = flat[rng.integers(0, len(flat), size=dead.size)]
    codebook.entries[dead] = picks.astype(codebook.entries.dtype)
    codebook.usage_counts[dead] = 1.0
    codebook.ema_sums[dead] = picks.astype(codebook.ema_sums.dtype)
    codebook.unused_steps[dead] = 0
    return int(dead.size)


def init_from_latents(codebook: Codebook, latents, rng) -> None:
    """Seed every entry with a distinct (where possible) random latent from the first batch."""
    flat = np.asarray(latents).reshape(-1, codebook.dim)
    replace = len(flat) < codebook.size
    pick = flat[rng.choice(len(flat), size=codebook.size, replace=replace)]
    jitter = rng.normal(0.0, 1e-4, size=pick.shape) if replace else 0.0
    codebook.entries = (pick + jitter).astype(codebook.entries.dtype)
    codebook.usage_counts[:] = 1.0
    codebook.ema_sums = codebook.entries.astype(codebook.ema_sums.dtype).copy()
    codebook.initialized = True


# model --------------------------------------------------------------------------

@dataclass
class VqVae2Config:
    input_channels: int = 1
    levels: int = 3
    codebook_sizes: tuple = (512, 128, 64)
    code_dim: int = 64
    hidden: int = 64
    res_blocks: int = 2
    res_hidden: int = 32
    downsample: tuple = (4, 8, 16)
    commitment_weight: float = 0.25
    ema_decay: float = 0.99
    dead_code_patience: int = 50
    seed: int = 0

    def __post_init__(self):
        self.codebook_sizes = tuple(int(v) for v in self.codebook_sizes)
        self.downsample = tuple(int(v) for v in self.downsample)
        if self.levels != 3:
            raise ValueError("the hierarchy has exactly 3 levels")
        if len(self.codebook_sizes) != 3 or min(self.codebook_sizes) < 1:
            raise ValueError("codebook_sizes must be three positive integers")
        b, m, t = self.downsample
        if b < 2 or b & (b - 1) or m != 2 * b or t != 2 * m:
            raise ValueError("downsample must be (2^a, 2^(a+1), 2^(a+2)) with a >= 1")
        if self.input_channels < 1:
            raise ValueError("input_channels must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["codebook_sizes"] = list(self.codebook_sizes)
        d["downsample"] = list(self.downsample)
        return d


@dataclass
class ForwardResult:
    reconstruction: Tensor
    total_loss: Tensor
    terms: dict
    latents: dict = field(default_factory=dict)  # level -> (N*h*w, D) encoder outputs
    indices: dict = field(default_factory=dict)  # level -> (N, h, w) code indices


class _Encoder(nn.Module):
    def __init__(self, in_ch, hidden, res_blocks, res_hidden, n_down, rng, first_half=True):
        super().__init__()
        layers = []
        ch = in_ch
        for i in range(n_down):
            out = hidden // 2 if (first_half and i < n_down - 1) else hidden
            layers += [nn.Conv2d(ch, out, 4, stride=2, padding=1, rng=rng), nn.ReLU()]
            ch = out
        layers.append(nn.Conv2d(ch, hidden, 3, padding=1, rng=rng))
        layers += [nn.ResBlock(hidden, res_hidden, rng=rng) for _ in range(res_blocks)]
        layers.append(nn.ReLU())
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


class _Decoder(nn.Module):
    def __init__(self, in_ch, hidden, out_ch, res_blocks, res_hidden, n_up, rng):
        super().__init__()
        layers = [nn.Conv2d(in_ch, hidden, 3, padding=1, rng=rng)]
        layers += [nn.ResBlock(hidden, res_hidden, rng=rng) for _ in range(res_blocks)]
        layers.append(nn.ReLU())
        ch = hidden
        for i in range(n_up):
            last = i == n_up - 1
            out = out_ch if last else max(hidden // 2, 1)
            layers.append(nn.ConvTranspose2d(ch, out, 4, stride=2, padding=1, rng=rng))
            if not last:
                layers.append(nn.ReLU())
            ch = out
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


class VqVae2(nn.Module):
    def __init__(self, config: VqVae2Config | None = None):
        super().__init__()
        cfg = config or VqVae2Config()
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        h, d, rb, rh = cfg.hidden, cfg.code_dim, cfg.res_blocks, cfg.res_hidden
        n_down = int(math.log2(cfg.downsample[0]))
        self.enc_bottom = _Encoder(cfg.input_channels, h, rb, rh, n_down, rng)
        self.enc_middle = _Encoder(h, h, rb, rh, 1, rng, first_half=False)
        self.enc_top = _Encoder(h, h, rb, rh, 1, rng, first_half=False)
        self.pre_top = nn.Conv2d(h, d, 1, rng=rng)
        self.dec_top = _Decoder(d, h, d, rb, rh, 1, rng)
        self.pre_middle = nn.Conv2d(h + d, d, 1, rng=rng)
        self.dec_middle = _Decoder(2 * d, h, d, rb, rh, 1, rng)
        self.pre_bottom = nn.Conv2d(h + d, d, 1, rng=rng)
        self.decoder = _Decoder(2 * d, h, cfg.input_channels, rb, rh, n_down, rng)
        self.codebooks = {
            lvl: Codebook.empty(k, d, lvl, rng) for lvl, k in zip(LEVELS, cfg.codebook_sizes)
        }
        self.training_log: list = []
        self._cb_rng = np.random.default_rng(cfg.seed ^ 0x5EED)

    def _quantize_level(self, z: Tensor, level: str, result: ForwardResult):
        n, d, hh, ww = z.shape
        flat = z.data.transpose(0, 2, 3, 1).reshape(-1, d)
        cb = self.codebooks[level]
        if not cb.initialized:
            init_from_latents(cb, flat, self._cb_rng)
        idx, q, _ = quantize(flat, cb)
        q_map = q.reshape(n, hh, ww, d).transpose(0, 3, 1, 2)
        q_t = Tensor(np.ascontiguousarray(q_map), dtype=z.data.dtype)
        result.latents[level] = flat
        result.indices[level] = idx.reshape(n, hh, ww)
        result.terms[f"commit_{level}"] = nn.mse(z, q_t)
        return nn.straight_through(z, q_t)

    def forward(self, x) -> ForwardResult:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise ValueError(f"expected (N, {self.config.input_channels}, H, W) input, got {x.shape}")
        size = self.config.downsample[2]
        if x.shape[2] % size or x.shape[3] % size:
            raise ValueError(f"spatial size must be a multiple of {size}")
        res = ForwardResult(None, None, {})
        h_b = self.enc_bottom(x)
        h_m = self.enc_middle(h_b)
        h_t = self.enc_top(h_m)
        q_t = self._quantize_level(self.pre_top(h_t), "top", res)
        t_up = self.dec_top(q_t)
        q_m = self._quantize_level(self.pre_middle(nn.concat([h_m, t_up])), "middle", res)
        m_up = self.dec_middle(nn.concat([q_m, t_up]))
        q_b = self._quantize_level(self.pre_bottom(nn.concat([h_b, m_up])), "bottom", res)
        recon = self.decoder(nn.concat([q_b, m_up]))
        res.reconstruction = recon
        res.terms["recon"] = nn.mse(recon, x.detach())
        commit = res.terms["commit_bottom"] + res.terms["commit_middle"] + res.terms["commit_top"]
        res.total_loss = res.terms["recon"] + commit * self.config.commitment_weight
        return res

    def update_codebooks(self, result: ForwardResult) -> int:
        """EMA step on every level from one forward pass; returns the number of re-seeded codes."""
        reseeded = 0
        for lvl in LEVELS:
            cb = self.codebooks[lvl]
            codebook_update_ema(cb, result.latents[lvl], result.indices[lvl], self.config.ema_decay)
            reseeded += reseed_dead_codes(cb, result.latents[lvl], self.config.dead_code_patience, self._cb_rng)
        return reseeded

    def reconstruct(self, x) -> np.ndarray:
        return self.forward(x).reconstruction.data

    # state ---------------------------------------------------------------------

    def state_arrays(self) -> dict:
        arrays = {f"param.{n}": p.data for n, p in self.named_parameters()}
        for lvl, cb in self.codebooks.items():
            arrays[f"codebook.{lvl}.entries"] = cb.entries
            arrays[f"codebook.{lvl}.usage"] = cb.usage_counts
            arrays[f"codebook.{lvl}.ema_sums"] = cb.ema_sums
            arrays[f"codebook.{lvl}.unused"] = cb.unused_steps.astype(np.float32)
            arrays[f"codebook.{lvl}.initialized"] = np.array([float(cb.initialized)], dtype=np.float32)
        arrays["rng.codebook"] = _rng_to_array(self._cb_rng)
        return arrays

    def load_state_arrays(self, arrays: dict) -> None:
        for n, p in self.named_parameters():
            a = arrays[f"param.{n}"]
            if a.shape != p.data.shape:
                raise nn.ArchitectureMismatch(f"parameter {n}: {a.shape} vs {p.data.shape}")
            p.data = a.astype(p.data.dtype)
        for lvl, cb in self.codebooks.items():
            cb.entries = arrays[f"codebook.{lvl}.entries"].astype(cb.entries.dtype)
            cb.usage_counts = arrays[f"codebook.{lvl}.usage"].astype(cb.usage_counts.dtype)
            cb.ema_sums = arrays[f"codebook.{lvl}.ema_sums"].astype(cb.ema_sums.dtype)
            cb.unused_steps = arrays[f"codebook.{lvl}.unused"].astype(np.int64)
            cb.initialized = bool(arrays[f"codebook.{lvl}.initialized"][0])
        if "rng.codebook" in arrays:
            self._cb_rng = _rng_from_array(arrays["rng.codebook"])

    def arch(self) -> dict:
        return {"kind": "vqvae2", "config": self.config.to_dict()}


def _rng_to_array(rng) -> np.ndarray:
    # PCG64 state as 32-bit words so it survives the float32 checkpoint payload
    st = rng.bit_generator.state
    words = []
    for v in (st["state"]["state"], st["state"]["inc"]):
        words += [(v >> (16 * i)) & 0xFFFF for i in range(8)]
    words += [st["has_uint32"], st["uinteger"] & 0xFFFF, st["uinteger"] >> 16]
    return np.array(words, dtype=np.float32)


def _rng_from_array(arr) -> np.random.Generator:
    w = [int(v) for v in arr]
    state = sum(w[i] << (16 * i) for i in range(8))
    inc = sum(w[8 + i] << (16 * i) for i in range(8))
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": state, "inc": inc},
        "has_uint32": w[16],
        "uinteger": w[17] | (w[18] << 16),
    }
    return gen


def save_model(model: VqVae2, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(meta or {})
    meta.setdefault("training_log", [asdict(r) for r in model.training_log])
    nn.save_arrays(path, model.arch(), model.state_arrays(), meta)
    return path


def load_model(path, expect_config: VqVae2Config | None = None) -> VqVae2:
    arch, arrays, meta = nn.load_arrays(path, None if expect_config is None else
                                        {"kind": "vqvae2", "config": expect_config.to_dict()})
    if arch.get("kind") != "vqvae2":
        raise nn.ArchitectureMismatch(f"{path}: not a VQ-VAE-2 checkpoint")
    model = VqVae2(VqVae2Config(**arch["config"]))
    model.load_state_arrays(arrays)
    model.training_log = [EpochRecord(**r) for r in meta.get("training_log", [])]
    return model


# training -------------------------------------------------------------------------

@dataclass
class TrainRun:
    epochs: int = 100
    batch_size: int = 64
    patience: int = 10
    min_delta: float = 1e-5
    val_fraction: float = 0.1
    seed: int = 0
    lr: float = 2e-4
    optimizer: str = "adam"
    max_batches_per_epoch: int | None = None

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    stopped: bool = False


class EarlyStopping:
    """Stop after ``patience`` epochs without an improvement larger than ``min_delta``."""

    def __init__(self, patience: int, min_delta: float):
        self.patience, self.min_delta = patience, min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, value: float) -> tuple[bool, bool]:
        """Return ``(improved, stop)``."""
        if value < self.best - self.min_delta:
            self.best, self.best_epoch, self.wait = value, epoch, 0
            return True, False
        self.wait += 1
        return False, self.wait >= self.patience

    def state(self) -> dict:
        return {"best": self.best, "best_epoch": self.best_epoch, "wait": self.wait}

    def load(self, state: dict) -> None:
        self.best, self.best_epoch, self.wait = state["best"], state["best_epoch"], state["wait"]


def write_training_log(records: Sequence[EpochRecord], path) -> Path:
    path = Path(path)
    lines = ["epoch\ttrain_loss\tval_loss\tstopped"]
    lines += [f"{r.epoch}\t{r.train_loss:.9g}\t{r.val_loss:.9g}\t{int(r.stopped)}" for r in records]
    path.write_text("\n".join(lines) + "\n")
    return path


def tiles_to_array(tiles: Sequence[MultispectralTile], bands: Sequence[str] | None = None) -> np.ndarray:
    """Stack tiles into normalized float32 ``(N, C, H, W)``, optionally picking bands by name."""
    out = []
    for t in tiles:
        s = t.samples if bands is None else t.samples[[t.band_names.index(b) for b in bands]]
        out.append(s)
    if not out:
        return np.zeros((0, len(bands or []), 0, 0), dtype=np.float32)
    return np.stack(out).astype(np.float32) / np.float32(65535.0)


def check_one_class(tiles: Sequence[MultispectralTile], context: str = "") -> None:
    bad = [t.provenance for t in tiles if t.label == GENERATED]
    if bad:
        raise OneClassViolation(f"{context}{len(bad)} generated-labelled tile(s) in one-class training data, "
                                f"e.g. {bad[0]!r}")


def split_train_val(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_fraction)) if n > 1 else 0
    n_val = min(max(n_val, 1 if val_fraction > 0 and n > 1 else 0), n - 1) if n > 1 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def evaluate_recon(model: VqVae2, data: np.ndarray, batch_size: int) -> float:
    """Mean reconstruction MSE over ``data`` (no codebook updates)."""
    if len(data) == 0:
        return float("nan")
    total = 0.0
    for s in range(0, len(data), batch_size):
        xb = data[s:s + batch_size]
        r = model.reconstruct(Tensor(xb, dtype=np.float32))
        total += float(np.mean((r.astype(np.float64) - xb) ** 2)) * len(xb)
    return total / len(data)


def train(model: VqVae2, data, run: TrainRun, state_dir=None, on_epoch=None) -> VqVae2:
    """Train on pristine data only and keep the best validation checkpoint.

    ``data`` is a list of pristine tiles (bands must match the model) or a
    float array ``(N, C, H, W)`` already normalized. When ``state_dir`` is
    given, full training state is written after every epoch and an existing
    state is resumed from.
    """
    if isinstance(data, np.ndarray):
        arr = data.astype(np.float32, copy=False)
    else:
        tiles = list(data)
        check_one_class(tiles)
        arr = tiles_to_array(tiles)
    if arr.shape[1] != model.config.input_channels:
        raise ValueError(f"data has {arr.shape[1]} channels, model expects {model.config.input_channels}")
    tr_idx, va_idx = split_train_val(len(arr), run.val_fraction, run.seed)
    train_x, val_x = arr[tr_idx], arr[va_idx]
    if len(val_x) == 0:
        val_x = train_x
    opt = nn.make_optimizer(model.parameters(), nn.OptimConfig(name=run.optimizer, lr=run.lr))
    stopper = EarlyStopping(run.patience, run.min_delta)
    best_state = None
    start_epoch = 1
    state_path = Path(state_dir) / "train_state.ckpt" if state_dir else None
    best_path = Path(state_dir) / "best_state.ckpt" if state_dir else None
    if state_dir:
        Path(state_dir).mkdir(parents=True, exist_ok=True)
    if state_path is not None and state_path.exists():
        _, arrays, meta = nn.load_arrays(state_path, expect_arch=model.arch())
        model.load_state_arrays(arrays)
        opt.load_state_arrays(arrays)
        stopper.load(meta["stopper"])
        model.training_log = [EpochRecord(**r) for r in meta["log"]]
        start_epoch = meta["epoch"] + 1
        if best_path.exists():
            best_state = nn.load_arrays(best_path)[1]
        if meta.get("finished"):
            start_epoch = run.epochs + 1
        log.info("resuming training at epoch %d", start_epoch)

    for epoch in range(start_epoch, run.epochs + 1):
        rng = np.random.default_rng([run.seed, epoch])
        order = rng.permutation(len(train_x))
        n_batches = math.ceil(len(order) / run.batch_size)
        if run.max_batches_per_epoch:
            n_batches = min(n_batches, run.max_batches_per_epoch)
        running, seen = 0.0, 0
        for b in range(n_batches):
            xb = train_x[order[b * run.batch_size:(b + 1) * run.batch_size]]
            opt.zero_grad()
            res = model.forward(Tensor(xb, dtype=np.float32))
            res.total_loss.backward()
            opt.step()
            reseeded = model.update_codebooks(res)
            if reseeded:
                log.debug("epoch %d batch %d: re-seeded %d dead codes", epoch, b, reseeded)
            running += float(res.terms["recon"].data) * len(xb)
            seen += len(xb)
        val = evaluate_recon(model, val_x, run.batch_size)
        improved, stop = stopper.update(epoch, val)
        if improved:
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
        stop = stop or epoch == run.epochs
        model.training_log.append(EpochRecord(epoch, running / max(seen, 1), val, stop))
        log.info("epoch %d train %.6g val %.6g%s", epoch, running / max(seen, 1), val, " (stop)" if stop else "")
        if state_path is not None:
            arrays = dict(model.state_arrays())
            arrays.update(opt.state_arrays())
            meta = {"epoch": epoch, "stopper": stopper.state(), "finished": stop,
                    "log": [asdict(r) for r in model.training_log]}
            if improved:
                nn.save_arrays(best_path, model.arch(), best_state)
            nn.save_arrays(state_path, model.arch(), arrays, meta)
        if on_epoch is not None:
            on_epoch(epoch, model)
        if stop:
            break
    if best_state is not None:
        logs = model.training_log
        model.load_state_arrays(best_state)
        model.training_log = logs
    return model


# scoring --------------------------------------------------------------------------

class ScoreModels:
    """Band-to-model mapping: one single-band model per band, or one joint model for all bands."""

    def __init__(self, per_band: dict | None = None, joint: VqVae2 | None = None, joint_bands=None):
        if (per_band is None) == (joint is None):
            raise ValueError("give either per-band models or one joint model")
        self.per_band = per_band
        self.joint = joint
        self.joint_bands = list(joint_bands) if joint_bands is not None else None
        if per_band is not None:
            for name, m in per_band.items():
                if m.config.input_channels != 1:
                    raise ValueError(f"per-band model for band {name} must take 1 channel")

    @property
    def bands(self) -> list[str]:
        return list(self.per_band) if self.per_band is not None else list(self.joint_bands)


def _band_mse(x: np.ndarray, r: np.ndarray) -> np.ndarray:
    d = r.astype(np.float64) - x.astype(np.float64)
    return np.mean(d * d, axis=(2, 3))  # (N, C)


def score_tiles(models: ScoreModels, tiles: Sequence[MultispectralTile], bands=None,
                batch_size: int = 64) -> list[ScoreVector]:
    """Per-band reconstruction MSE (normalized units) for each tile."""
    tiles = list(tiles)
    if not tiles:
        return []
    bands = list(bands) if bands is not None else [b for b in tiles[0].band_names if b in models.bands]
    missing = [b for b in bands if b not in models.bands]
    if missing:
        raise MissingModel(f"no model for band(s) {missing}")
    per_tile = [dict() for _ in tiles]
    if models.per_band is not None:
        for b in bands:
            model = models.per_band[b]
            for s in range(0, len(tiles), batch_size):
                chunk = tiles[s:s + batch_size]
                x = tiles_to_array(chunk, [b])
                mse = _band_mse(x, model.reconstruct(Tensor(x, dtype=np.float32)))[:, 0]
                for i, v in enumerate(mse):
                    per_tile[s + i][b] = float(v)
    else:
        jb = models.joint_bands
        for s in range(0, len(tiles), batch_size):
            chunk = tiles[s:s + batch_size]
            x = tiles_to_array(chunk, jb)
            mse = _band_mse(x, models.joint.reconstruct(Tensor(x, dtype=np.float32)))
            for i in range(len(chunk)):
                per_tile[s + i] = {b: float(mse[i, jb.index(b)]) for b in bands}
    return [ScoreVector.from_bands(d, t.provenance, t.label) for d, t in zip(per_tile, tiles)]


def reconstruction_score(models: ScoreModels, tile: MultispectralTile, bands=None) -> ScoreVector:
    return score_tiles(models, [tile], bands)[0]


def save_score_models(models: ScoreModels, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if models.per_band is not None:
        paths = [save_model(m, directory / f"band_{b}.ckpt") for b, m in models.per_band.items()]
        (directory / "models.json").write_text(json.dumps({"mode": "per_band", "bands": list(models.per_band)}))
    else:
        paths = [save_model(models.joint, directory / "joint.ckpt")]
        (directory / "models.json").write_text(json.dumps({"mode": "joint", "bands": models.joint_bands}))
    return paths


def load_score_models(directory) -> ScoreModels:
    directory = Path(directory)
    index = directory / "models.json"
    if not index.exists():
        raise FileNotFoundError(f"{index} not found")
    spec = json.loads(index.read_text())
    if spec["mode"] == "per_band":
        return ScoreModels(per_band={b: load_model(directory / f"band_{b}.ckpt") for b in spec["bands"]})
    return ScoreModels(joint=load_model(directory / "joint.ckpt"), joint_bands=spec["bands"])
