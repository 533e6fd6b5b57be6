"""Procedural stand-in data: pristine multispectral textures and perturbed "generated" tiles.

Pristine tiles are cross-band-correlated Gaussian random fields (white noise
smoothed by a Gaussian kernel, mixed across bands by a square root of the
band covariance). Generated tiles apply one of three perturbation families
that mimic generator fingerprints:

``checkerboard``
    additive periodic lattice, like transposed-convolution artifacts;
``spectral_smoothing``
    per-band Gaussian low-pass, like generator band-limiting;
``band_shift``
    monotone per-band gamma remapping, like style-transfer radiometry.
"""
from __future__ import annotations

import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import raster
from .raster import GENERATED, MAX_SAMPLE, PRISTINE, MultispectralTile

FAMILIES = ("checkerboard", "spectral_smoothing", "band_shift")
MAX_SMOOTH_SIGMA = 2.0  # px, blur width at strength 1
MAX_GAMMA_LOG = 0.5  # |log gamma| at strength 1

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(root: int, index: int) -> int:
    """Per-item seed: splitmix64 of ``root XOR index``."""
    return splitmix64((int(root) ^ int(index)) & _MASK64)


def derive_named_seed(root: int, name: str) -> int:
    h = 0
    for ch in name.encode("utf-8"):
        h = splitmix64(h ^ ch)
    return derive_seed(root, h)


@dataclass
class TextureParams:
    correlation_length: float = 2.0
    band_covariance: np.ndarray = field(default_factory=lambda: np.eye(13))
    mean_level: float | np.ndarray = 30000.0
    dynamic_range: float = 6000.0
    seed: int = 0

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.band_covariance, dtype=np.float64))
        if cov.shape[0] != cov.shape[1]:
            raise ValueError("band covariance must be square")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("band covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-9 * max(1.0, np.abs(cov).max()):
            raise ValueError("band covariance must be positive semidefinite")
        self.band_covariance = cov
        if self.dynamic_range < 0 or self.correlation_length < 0:
            raise ValueError("dynamic_range and correlation_length must be non-negative")

    @property
    def channels(self) -> int:
        return self.band_covariance.shape[0]

    def mixing_matrix(self) -> np.ndarray:
        vals, vecs = np.linalg.eigh(self.band_covariance)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def band_covariance(channels: int, rho: float, sd=None) -> np.ndarray:
    """Covariance with correlation ``rho**|i-j|`` between bands and per-band std ``sd``."""
    idx = np.arange(channels)
    corr = rho ** np.abs(idx[:, None] - idx[None, :])
    sd = np.ones(channels) if sd is None else np.asarray(sd, dtype=np.float64)
    return corr * sd[:, None] * sd[None, :]


@dataclass
class PerturbationParams:
    family: str = "checkerboard"
    strength: float = 0.5
    period: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown perturbation family {self.family!r}")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError("strength must lie in [0, 1]")
        if self.family == "checkerboard" and self.period < 2:
            raise ValueError("checkerboard period must be >= 2")


def _smooth_field(noise: np.ndarray, sigma: float) -> np.ndarray:
    """Periodic Gaussian smoothing, rescaled so each output pixel has unit variance."""
    if sigma <= 0:
        return noise
    h, w = noise.shape[-2:]
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    resp = np.exp(-2.0 * np.pi ** 2 * sigma ** 2 * (fx ** 2 + fy ** 2))
    out = np.fft.ifft2(np.fft.fft2(noise) * resp).real
    # variance of filtered white noise is mean |H|^2 over the frequency grid
    return out / np.sqrt(np.mean(resp ** 2))


def gen_pristine_tile(params: TextureParams, size: int = 64, channels: int | None = None,
                      band_names=None, provenance: str = "synth") -> MultispectralTile:
    channels = params.channels if channels is None else channels
    if channels != params.channels:
        raise ValueError(f"texture covariance is {params.channels}x{params.channels}, asked for {channels} channels")
    names = band_names or raster.BAND_NAMES[:channels]
    rng = np.random.default_rng(params.seed & _MASK64)
    noise = rng.standard_normal((channels, size, size))
    field_ = _smooth_field(noise, params.correlation_length)
    mixed = np.tensordot(params.mixing_matrix(), field_, axes=(1, 0))
    level = np.broadcast_to(np.asarray(params.mean_level, dtype=np.float64), (channels,))
    values = level[:, None, None] + params.dynamic_range * mixed
    # zero is reserved for no-data
    samples = np.clip(np.rint(values), 1, MAX_SAMPLE).astype(np.uint16)
    return MultispectralTile(samples=samples, band_specs=raster.sentinel2_bands(names), label=PRISTINE,
                             provenance=provenance, seed=int(params.seed))


def checkerboard_pattern(h: int, w: int, period: int) -> np.ndarray:
    i = np.arange(h)[:, None]
    j = np.arange(w)[None, :]
    return np.cos(2 * np.pi * i / period) * np.cos(2 * np.pi * j / period)


def gen_generated_tile(pristine: MultispectralTile, pert: PerturbationParams,
                       provenance: str | None = None) -> MultispectralTile:
    if pristine.label != PRISTINE:
        raise ValueError("perturbations apply to pristine tiles only")
    x = pristine.samples.astype(np.float64)
    s = pert.strength
    if s == 0:
        out = x
    elif pert.family == "checkerboard":
        lattice = checkerboard_pattern(pristine.height, pristine.width, pert.period)
        amp = s * x.reshape(x.shape[0], -1).std(axis=1)
        out = x + amp[:, None, None] * lattice[None]
    elif pert.family == "spectral_smoothing":
        sigma = s * MAX_SMOOTH_SIGMA
        out = np.stack([ndimage.gaussian_filter(b, sigma, mode="reflect") for b in x])
    else:
        rng = np.random.default_rng(pert.seed & _MASK64)
        log_gamma = s * MAX_GAMMA_LOG * rng.uniform(-1.0, 1.0, size=x.shape[0])
        out = MAX_SAMPLE * (x / MAX_SAMPLE) ** np.exp(log_gamma)[:, None, None]
    samples = np.clip(np.rint(out), 0, MAX_SAMPLE).astype(np.uint16)
    tag = provenance if provenance is not None else f"{pristine.provenance}+{pert.family}@{s:g}"
    return MultispectralTile(samples=samples, band_specs=list(pristine.band_specs), label=GENERATED,
                             provenance=tag, seed=pert.seed)


def build_pseudo_dataset(name: str, n_pristine: int, n_generated: int, texture: TextureParams,
                         pert: PerturbationParams, seed: int, store, size: int = 64,
                         split_plan: dict | None = None, force: bool = False) -> raster.DatasetManifest:
    """Generate and persist a labelled pseudo-dataset under ``store/name``.

    Pristine tile ``i`` uses texture seed ``derive_seed(seed, i)``; generated
    tile ``j`` perturbs a fresh pristine base drawn with index ``n_pristine + j``,
    so generated tiles never share a base with the pristine set. Without a
    ``split_plan`` every tile goes to the ``test`` split.
    """
    if n_pristine < 0 or n_generated < 0:
        raise ValueError("tile counts must be non-negative")
    root = Path(store) / name
    if root.exists():
        if not force:
            raise FileExistsError(f"pseudo-dataset {name!r} already exists in {store}")
        shutil.rmtree(root)
    tiles_dir = root / "tiles"
    tiles_dir.mkdir(parents=True)
    items = []
    for i in range(n_pristine):
        tp = _reseed(texture, derive_seed(seed, i))
        tile = gen_pristine_tile(tp, size, provenance=f"{name}/p{i}")
        loc = f"tiles/p_{i:06d}.tile"
        raster.save_tile(tile, root / loc)
        items.append((loc, PRISTINE))
    for j in range(n_generated):
        base = gen_pristine_tile(_reseed(texture, derive_seed(seed, n_pristine + j)), size,
                                 provenance=f"{name}/base{j}")
        pj = PerturbationParams(pert.family, pert.strength, pert.period, derive_seed(pert.seed ^ seed, j))
        tile = gen_generated_tile(base, pj, provenance=f"{name}/g{j}:{pert.family}@{pert.strength:g}")
        loc = f"tiles/g_{j:06d}.tile"
        raster.save_tile(tile, root / loc)
        items.append((loc, GENERATED))
    plan = split_plan if split_plan is not None else {"test": {PRISTINE: n_pristine, GENERATED: n_generated}}
    manifest = raster.build_manifest(name, items, plan, seed=seed, root=root)
    manifest.save(root / "manifest.tsv")
    return manifest


def _reseed(texture: TextureParams, seed: int) -> TextureParams:
    return TextureParams(texture.correlation_length, texture.band_covariance, texture.mean_level,
                         texture.dynamic_range, seed)
