"""Multispectral raster model, resampling, tiling, no-data filtering and manifests.

Tiles hold 16-bit samples band-sequentially as ``samples[C, H, W]``; every
band is tagged with its Sentinel-2 :class:`BandSpec` so partially filled or
RGB-only tiles keep their band identity.
"""
from __future__ import annotations

import os
import struct
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PRISTINE = "pristine"
GENERATED = "generated"
LABELS = (PRISTINE, GENERATED)

# band ordinals 0..12 follow this order
BAND_NAMES = ("1", "2", "3", "4", "5", "6", "7", "8", "8a", "9", "10", "11", "12")
RGB_BANDS = ("4", "3", "2")
TARGET_GSD = 10.0
MAX_SAMPLE = 65535


class RasterError(ValueError):
    pass


class ResolutionMismatch(RasterError):
    pass


class FootprintMismatch(RasterError):
    pass


class InsufficientTiles(RasterError):
    pass


class TileFormatError(RasterError):
    pass


class CorruptHeader(TileFormatError):
    pass


class DimensionMismatch(TileFormatError):
    pass


class TruncatedPayload(TileFormatError):
    pass


@dataclass(frozen=True)
class BandSpec:
    name: str
    native_gsd: float
    native_size: int
    bit_depth: int = 16
    effective_gsd: float | None = None

    def __post_init__(self):
        if self.name not in BAND_NAMES:
            raise ValueError(f"unknown Sentinel-2 band {self.name!r}")

    @property
    def ordinal(self) -> int:
        return BAND_NAMES.index(self.name)

    @property
    def footprint(self) -> float:
        return self.native_gsd * self.native_size

    def at(self, gsd: float) -> "BandSpec":
        return replace(self, effective_gsd=gsd)


_GSD = {"2": 10, "3": 10, "4": 10, "8": 10,
        "5": 20, "6": 20, "7": 20, "8a": 20, "11": 20, "12": 20,
        "1": 60, "9": 60, "10": 60}
_SIZE = {10: 10980, 20: 5490, 60: 1830}


def sentinel2_bands(names: Iterable[str] = BAND_NAMES, effective_gsd: float | None = TARGET_GSD) -> list[BandSpec]:
    """Canonical Level-1C band specs (10/20/60 m, 16-bit), optionally tagged as resampled."""
    return [BandSpec(n, float(_GSD[n]), _SIZE[_GSD[n]], 16, effective_gsd) for n in names]


SENTINEL2 = tuple(sentinel2_bands(effective_gsd=None))


@dataclass
class MultispectralTile:
    samples: np.ndarray  # uint16, shape (C, H, W)
    band_specs: list[BandSpec]
    label: str = PRISTINE
    provenance: str = ""
    seed: int | None = None
    origin: tuple[int, int] | None = None  # top-left pixel in the source scene

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 3:
            raise ValueError(f"tile samples must be (C, H, W), got shape {s.shape}")
        if s.dtype != np.uint16:
            if s.size and (s.min() < 0 or s.max() > MAX_SAMPLE):
                raise ValueError("samples outside [0, 65535]")
            s = s.astype(np.uint16)
        self.samples = s
        if len(self.band_specs) != s.shape[0]:
            raise ValueError(f"{s.shape[0]} channels but {len(self.band_specs)} band specs")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def height(self) -> int:
        return self.samples.shape[1]

    @property
    def width(self) -> int:
        return self.samples.shape[2]

    @property
    def band_names(self) -> list[str]:
        return [b.name for b in self.band_specs]

    def band(self, name: str) -> np.ndarray:
        return self.samples[self.band_names.index(name)]

    def select(self, names: Sequence[str]) -> "MultispectralTile":
        idx = [self.band_names.index(n) for n in names]
        return replace(self, samples=self.samples[idx].copy(), band_specs=[self.band_specs[i] for i in idx])

    def normalized(self) -> np.ndarray:
        """Samples scaled to [0, 1] as float32, shape (C, H, W)."""
        return self.samples.astype(np.float32) / np.float32(MAX_SAMPLE)

    def __eq__(self, other):
        if not isinstance(other, MultispectralTile):
            return NotImplemented
        return (np.array_equal(self.samples, other.samples) and self.samples.dtype == other.samples.dtype
                and self.band_specs == other.band_specs and self.label == other.label
                and self.provenance == other.provenance and self.seed == other.seed
                and self.origin == other.origin)


# resampling ---------------------------------------------------------------------

def upsample_factor(native_gsd: float, target_gsd: float = TARGET_GSD) -> int:
    ratio = native_gsd / target_gsd
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise ResolutionMismatch(f"{native_gsd} m cannot be brought to {target_gsd} m by an integer factor")
    return factor


def upsample_band(band: np.ndarray, factor, mode: str = "nearest") -> np.ndarray:
    """Enlarge a 2-D raster by an integer ``factor``.

    ``nearest`` replicates each sample into a ``factor x factor`` block and so
    keeps radiometry exact. ``bilinear`` interpolates between pixel centres
    (edges clamped) and rounds back to the input dtype.
    """
    band = np.asarray(band)
    if band.ndim != 2:
        raise ValueError("upsample_band expects a 2-D raster")
    if isinstance(factor, float):
        if not factor.is_integer():
            raise ResolutionMismatch(f"non-integer upsampling factor {factor}")
        factor = int(factor)
    if factor < 1:
        raise ResolutionMismatch(f"upsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return band.copy()
    if mode == "nearest":
        return np.repeat(np.repeat(band, factor, axis=0), factor, axis=1)
    if mode != "bilinear":
        raise ValueError(f"unknown interpolation mode {mode!r}")
    h, w = band.shape
    src = band.astype(np.float64)

    def coords(n):
        pos = (np.arange(n * factor) + 0.5) / factor - 0.5
        pos = np.clip(pos, 0, n - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n - 1)
        return lo, hi, pos - lo

    r0, r1, fr = coords(h)
    c0, c1, fc = coords(w)
    top = src[r0][:, c0] * (1 - fc) + src[r0][:, c1] * fc
    bot = src[r1][:, c0] * (1 - fc) + src[r1][:, c1] * fc
    out = top * (1 - fr[:, None]) + bot * fr[:, None]
    if np.issubdtype(band.dtype, np.integer):
        info = np.iinfo(band.dtype)
        out = np.clip(np.rint(out), info.min, info.max)
    return out.astype(band.dtype)


def to_common_grid(bands: Sequence[np.ndarray], specs: Sequence[BandSpec], target_gsd: float = TARGET_GSD,
                   mode: str = "nearest") -> tuple[np.ndarray, list[BandSpec]]:
    """Upsample every band to ``target_gsd`` and stack into a (C, H, W) scene."""
    if len(bands) != len(specs) or not bands:
        raise ValueError("need one spec per band and at least one band")
    footprints = {round(np.asarray(b).shape[0] * s.native_gsd, 6) for b, s in zip(bands, specs)}
    footprints |= {round(np.asarray(b).shape[1] * s.native_gsd, 6) for b, s in zip(bands, specs)}
    if len(footprints) != 1:
        raise FootprintMismatch(f"bands cover different ground extents: {sorted(footprints)} m")
    out = [upsample_band(np.asarray(b), upsample_factor(s.native_gsd, target_gsd), mode) for b, s in zip(bands, specs)]
    return np.stack(out), [s.at(target_gsd) for s in specs]


# tiling -------------------------------------------------------------------------

def retile(scene: np.ndarray, tile_size: int, band_specs: Sequence[BandSpec] | None = None,
           label: str = PRISTINE, provenance: str = "scene", seed: int | None = None) -> list[MultispectralTile]:
    """Cut a (C, H, W) scene into non-overlapping row-major tiles; partial edge tiles are dropped."""
    if tile_size < 8:
        raise ValueError(f"tile_size must be >= 8, got {tile_size}")
    scene = np.asarray(scene)
    if scene.ndim == 2:
        scene = scene[None]
    c, h, w = scene.shape
    specs = list(band_specs) if band_specs is not None else sentinel2_bands(BAND_NAMES[:c])
    tiles = []
    for r in range(h // tile_size):
        for q in range(w // tile_size):
            y, x = r * tile_size, q * tile_size
            tiles.append(MultispectralTile(
                samples=scene[:, y:y + tile_size, x:x + tile_size].copy(),
                band_specs=list(specs), label=label, provenance=f"{provenance}:r{r}c{q}",
                seed=seed, origin=(y, x)))
    return tiles


def filter_nodata(tiles: Iterable[MultispectralTile], policy="strict") -> list[MultispectralTile]:
    """Drop tiles with no-data (zero) samples.

    ``policy="strict"`` drops any tile with a zero sample in any band; a float
    ``f`` drops tiles whose zero fraction exceeds ``f``.
    """
    if policy == "strict":
        return [t for t in tiles if t.samples.size and t.samples.min() > 0]
    f = float(policy)
    if not 0.0 <= f <= 1.0:
        raise ValueError("no-data fraction must lie in [0, 1]")
    return [t for t in tiles if t.samples.size and np.count_nonzero(t.samples == 0) / t.samples.size <= f]


# tile file format ---------------------------------------------------------------

TILE_MAGIC = "VQDTILE 1"


def _encode_header(tile: MultispectralTile) -> bytes:
    for text in (tile.provenance,):
        if "\n" in text or "\r" in text:
            raise ValueError("provenance must be a single line")
    lines = [
        TILE_MAGIC,
        f"height={tile.height}",
        f"width={tile.width}",
        f"channels={tile.channels}",
        f"label={tile.label}",
        f"seed={'' if tile.seed is None else tile.seed}",
        f"origin={'' if tile.origin is None else '%d,%d' % tile.origin}",
        f"provenance={tile.provenance}",
    ]
    for b in tile.band_specs:
        eff = "" if b.effective_gsd is None else repr(float(b.effective_gsd))
        lines.append(f"band={b.name},{float(b.native_gsd)!r},{b.native_size},{b.bit_depth},{eff}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _decode_header(text: str) -> dict:
    lines = text.split("\n")
    if not lines or lines[0] != TILE_MAGIC:
        raise CorruptHeader("missing tile magic")
    meta, bands = {}, []
    for line in lines[1:]:
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CorruptHeader(f"malformed header line {line!r}")
        if key == "band":
            parts = value.split(",")
            if len(parts) != 5:
                raise CorruptHeader(f"malformed band spec {value!r}")
            try:
                bands.append(BandSpec(parts[0], float(parts[1]), int(parts[2]), int(parts[3]),
                                      float(parts[4]) if parts[4] else None))
            except ValueError as exc:
                raise CorruptHeader(str(exc)) from exc
        else:
            meta[key] = value
    try:
        meta["height"], meta["width"], meta["channels"] = (int(meta[k]) for k in ("height", "width", "channels"))
        meta["seed"] = int(meta["seed"]) if meta.get("seed") else None
        meta["origin"] = tuple(int(v) for v in meta["origin"].split(",")) if meta.get("origin") else None
    except (KeyError, ValueError) as exc:
        raise CorruptHeader(f"bad header field: {exc}") from exc
    meta["bands"] = bands
    return meta


def save_tile(tile: MultispectralTile, path) -> Path:
    """Write ``tile``: uint32 LE header length, text header, band-sequential uint16 LE payload."""
    path = Path(path)
    header = _encode_header(tile)
    payload = np.ascontiguousarray(tile.samples, dtype="<u2").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".part")
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)
    return path


def load_tile(path) -> MultispectralTile:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise CorruptHeader(f"{path}: file too short for a header")
    (hlen,) = struct.unpack_from("<I", raw, 0)
    if hlen == 0 or 4 + hlen > len(raw):
        raise CorruptHeader(f"{path}: header length {hlen} exceeds file size")
    try:
        meta = _decode_header(raw[4:4 + hlen].decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise CorruptHeader(f"{path}: header is not text") from exc
    c, h, w = meta["channels"], meta["height"], meta["width"]
    if len(meta["bands"]) != c:
        raise DimensionMismatch(f"{path}: header declares {c} channels but lists {len(meta['bands'])} bands")
    expected = 2 * c * h * w
    payload = raw[4 + hlen:]
    if len(payload) < expected:
        raise TruncatedPayload(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    if len(payload) > expected:
        raise DimensionMismatch(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    samples = np.frombuffer(payload, dtype="<u2").reshape(c, h, w).astype(np.uint16)
    return MultispectralTile(samples=samples, band_specs=meta["bands"], label=meta.get("label", ""),
                             provenance=meta.get("provenance", ""), seed=meta["seed"], origin=meta["origin"])


# manifests ----------------------------------------------------------------------

SPLITS = ("train_gan", "train_detector", "train_oneclass", "calibrate", "test")


@dataclass(frozen=True)
class ManifestEntry:
    locator: str
    label: str
    split: str


@dataclass
class DatasetManifest:
    name: str
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None  # directory locators are relative to

    def __post_init__(self):
        seen = {}
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(f"unknown split {e.split!r}")
            if e.label not in LABELS:
                raise ValueError(f"unknown label {e.label!r}")
            if seen.setdefault(e.locator, e.split) != e.split:
                raise ValueError(f"locator {e.locator!r} appears in splits {seen[e.locator]!r} and {e.split!r}")

    def __len__(self):
        return len(self.entries)

    @property
    def counts(self) -> dict[str, Counter]:
        out = {s: Counter() for s in SPLITS}
        for e in self.entries:
            out[e.split][e.label] += 1
        return out

    def select(self, split: str | None = None, label: str | None = None) -> list[ManifestEntry]:
        return [e for e in self.entries
                if (split is None or e.split == split) and (label is None or e.label == label)]

    def path(self, entry: ManifestEntry) -> Path:
        p = Path(entry.locator)
        return p if p.is_absolute() or self.root is None else self.root / p

    def load(self, split: str | None = None, label: str | None = None) -> list[MultispectralTile]:
        return [load_tile(self.path(e)) for e in self.select(split, label)]

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"# manifest {self.name}"]
        lines += [f"{e.locator}\t{e.label}\t{e.split}" for e in self.entries]
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        name, entries = path.stem, []
        for i, line in enumerate(path.read_text().splitlines()):
            if not line.strip():
                continue
            if line.startswith("#"):
                if line.startswith("# manifest "):
                    name = line[len("# manifest "):].strip()
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{i + 1}: expected locator<TAB>label<TAB>split")
            entries.append(ManifestEntry(*parts))
        return cls(name=name, entries=entries, root=path.parent)


def build_manifest(name: str, items: Sequence[tuple[str, str]], split_plan: dict, seed: int = 0,
                   root=None) -> DatasetManifest:
    """Assign ``(locator, label)`` items to splits.

    ``split_plan`` maps split name to either a ``{label: count}`` dict or a bare
    count, which means that many pristine tiles. Items are shuffled per label
    with ``seed`` and handed out in canonical split order, so the result is
    deterministic and splits are disjoint by construction.
    """
    wanted = {}
    for split, spec in split_plan.items():
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        wanted[split] = {PRISTINE: int(spec)} if isinstance(spec, (int, np.integer)) else {k: int(v) for k, v in spec.items()}
    pools = {}
    rng = np.random.default_rng(seed)
    for label in LABELS:
        pool = sorted(loc for loc, lab in items if lab == label)
        order = rng.permutation(len(pool))
        pools[label] = [pool[i] for i in order]
    for label in LABELS:
        need = sum(w.get(label, 0) for w in wanted.values())
        if need > len(pools[label]):
            raise InsufficientTiles(f"{name}: plan needs {need} {label} tiles, only {len(pools[label])} available")
    entries, cursor = [], {label: 0 for label in LABELS}
    for split in SPLITS:
        for label in LABELS:
            n = wanted.get(split, {}).get(label, 0)
            if n < 0:
                raise ValueError("split counts must be non-negative")
            for loc in pools[label][cursor[label]:cursor[label] + n]:
                entries.append(ManifestEntry(loc, label, split))
            cursor[label] += n
    return DatasetManifest(name=name, entries=entries, root=Path(root) if root is not None else None)
