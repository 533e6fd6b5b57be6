"""Pd@FAR metric, cross-dataset matrices, the unseen-family test and report files."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .detector import far_threshold
from .raster import GENERATED, PRISTINE, DatasetManifest, MultispectralTile

REPORT_COLUMNS = ("train_id", "test_id", "detector", "band", "far", "pd", "n_test", "n_calib", "seed")


class MissingPool(ValueError):
    pass


class FamilyOverlap(ValueError):
    """The unseen family also appears in a training set."""


def pd_at_far(generated_scores: Sequence[float], threshold: float) -> float:
    """Fraction of generated-tile scores strictly above ``threshold``."""
    s = np.asarray(generated_scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("no generated scores")
    return float(np.count_nonzero(s > threshold)) / s.size


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    p = successes / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


# detectors ------------------------------------------------------------------------------

class Detector:
    """Anything mapping tiles to named score columns (higher = more likely generated)."""

    name = "detector"

    def score_columns(self, tiles: Sequence[MultispectralTile]) -> dict[str, np.ndarray]:
        raise NotImplementedError


class FunctionDetector(Detector):
    """Single-column detector from a per-tile scoring function."""

    def __init__(self, name: str, fn: Callable[[MultispectralTile], float], column: str = "score"):
        self.name, self.fn, self.column = name, fn, column

    def score_columns(self, tiles):
        return {self.column: np.array([self.fn(t) for t in tiles], dtype=np.float64)}


class OneClassDetector(Detector):
    """Reconstruction-loss detector; one score column per band."""

    def __init__(self, models, bands: Sequence[str] | None = None, name: str = "vqvae2"):
        self.models, self.name = models, name
        self.bands = list(bands) if bands is not None else models.bands

    def score_columns(self, tiles):
        from .vqvae2 import score_tiles

        svs = score_tiles(self.models, tiles, self.bands)
        return {b: np.array([sv.score(b) for sv in svs], dtype=np.float64) for b in self.bands}

    def score_vectors(self, tiles):
        from .vqvae2 import score_tiles

        return score_tiles(self.models, tiles, self.bands)


class BinaryDetector(Detector):
    def __init__(self, model, bands: Sequence[str] | None = None, name: str = "cnn"):
        self.model, self.bands, self.name = model, bands, name

    def score_columns(self, tiles):
        from .baseline import score_binary

        return {"score": score_binary(self.model, list(tiles), self.bands)}


# pools --------------------------------------------------------------------------------

@dataclass
class EvalPools:
    calibration: list  # pristine tiles
    generated: list  # generated test tiles
    family: str | None = None
    seed: int | None = None

    def __post_init__(self):
        if not self.calibration or not self.generated:
            raise MissingPool("both a pristine calibration pool and a generated test pool are required")
        if any(t.label != PRISTINE for t in self.calibration):
            raise MissingPool("calibration pool must hold pristine tiles only")
        if any(t.label != GENERATED for t in self.generated):
            raise MissingPool("test pool must hold generated tiles only")


def pools_from_manifest(manifest: DatasetManifest, n_calib: int | None = None, n_test: int | None = None,
                        family: str | None = None, seed: int | None = None,
                        bands: Sequence[str] | None = None) -> EvalPools:
    """Calibration pool from the ``calibrate`` split, generated pool from the ``test`` split."""
    calib = manifest.load("calibrate", PRISTINE)[:n_calib]
    gen = manifest.load("test", GENERATED)[:n_test]
    if bands is not None:
        calib = [t.select(bands) for t in calib]
        gen = [t.select(bands) for t in gen]
    if not calib or not gen:
        raise MissingPool(f"dataset {manifest.name!r} lacks a calibration or generated test pool")
    return EvalPools(calib, gen, family, seed)


# matrices -------------------------------------------------------------------------------

@dataclass
class Cell:
    pd: float
    threshold: float
    n_test: int
    n_calib: int
    interval: tuple
    seed: int | None = None


@dataclass
class ExperimentMatrix:
    rows: list
    cols: list
    far: float
    cells: dict = field(default_factory=dict)  # (row, col, detector, band) -> Cell
    metadata: dict = field(default_factory=dict)

    def add(self, row, col, detector, band, cell: Cell):
        if not 0.0 <= cell.pd <= 1.0:
            raise ValueError("Pd outside [0, 1]")
        self.cells[(row, col, detector, band)] = cell

    def pd(self, row, col, detector=None, band=None) -> float:
        hits = [c for (r, k, d, b), c in self.cells.items()
                if r == row and k == col and detector in (None, d) and band in (None, b)]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} cells match ({row}, {col}, {detector}, {band})")
        return hits[0].pd

    def detectors(self) -> list:
        return sorted({d for _, _, d, _ in self.cells})

    def bands(self, detector) -> list:
        seen = []
        for _, _, d, b in self.cells:
            if d == detector and b not in seen:
                seen.append(b)
        return seen


def evaluate_cell(detector: Detector, pools: EvalPools, far: float) -> dict[str, Cell]:
    """Calibrate every score column on the pristine pool, then measure Pd on the generated pool."""
    calib = detector.score_columns(pools.calibration)
    gen = detector.score_columns(pools.generated)
    out = {}
    for col, cs in calib.items():
        t = far_threshold(cs, far)
        gs = gen[col]
        hits = int(np.count_nonzero(gs > t))
        out[col] = Cell(pd_at_far(gs, t), t, len(gs), len(cs), wilson_interval(hits, len(gs)), pools.seed)
    return out


def cross_test(detectors: Mapping[str, Detector | Sequence[Detector]], datasets: Mapping[str, EvalPools],
               far: float, metadata: dict | None = None) -> ExperimentMatrix:
    """Every train-id row against every test-id column; each cell calibrates on its column's pool."""
    if not datasets:
        raise MissingPool("no test datasets")
    matrix = ExperimentMatrix(list(detectors), list(datasets), far, metadata=dict(metadata or {}))
    for row, dets in detectors.items():
        for det in ([dets] if isinstance(dets, Detector) else dets):
            for col, pools in datasets.items():
                for band, cell in evaluate_cell(det, pools, far).items():
                    matrix.add(row, col, det.name, band, cell)
    return matrix


def unseen_architecture_test(oneclass: Detector, binary: Detector, unseen: EvalPools,
                             train_families: Iterable[str], far: float = 0.05) -> dict[str, float]:
    """Pd per one-class band column and for the binary detector on a family no detector trained on."""
    families = set(train_families)
    if unseen.family is None:
        raise FamilyOverlap("unseen pool does not declare its perturbation family")
    if unseen.family in families:
        raise FamilyOverlap(f"family {unseen.family!r} appears in a training manifest")
    result = {}
    for det in (oneclass, binary):
        for col, cell in evaluate_cell(det, unseen, far).items():
            result[f"{det.name}:{col}" if col != "score" else det.name] = cell.pd
    return result


# reports ------------------------------------------------------------------------------

@dataclass
class Report:
    table: Path
    summary: Path
    artifacts: list
    command: str


def report_rows(matrices: Sequence[ExperimentMatrix]) -> list[tuple]:
    rows = []
    for m in matrices:
        for (r, c, d, b), cell in m.cells.items():
            seed = "" if cell.seed is None else str(cell.seed)
            rows.append((r, c, d, b, f"{m.far:g}", f"{cell.pd:.6f}", str(cell.n_test), str(cell.n_calib), seed))
    return rows


def format_matrix(matrix: ExperimentMatrix, detector: str, band: str) -> str:
    width = max([len(str(c)) for c in matrix.cols] + [5])
    rwidth = max([len(str(r)) for r in matrix.rows] + [5])
    head = " " * rwidth + "  " + "  ".join(f"{c:>{width}}" for c in matrix.cols)
    lines = [f"{detector} [{band}] Pd at FAR {matrix.far:g}", head]
    for r in matrix.rows:
        vals = []
        for c in matrix.cols:
            cell = matrix.cells.get((r, c, detector, band))
            vals.append(f"{cell.pd:>{width}.3f}" if cell else " " * (width - 1) + "-")
        lines.append(f"{r:<{rwidth}}  " + "  ".join(vals))
    return "\n".join(lines)


def emit_report(matrices: Sequence[ExperimentMatrix], artifacts: Sequence, path, command: str = "",
                extra_summary: str = "") -> Report:
    """Write ``report.tsv`` (one row per cell) and ``summary.txt`` into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "report.tsv"
    lines = ["\t".join(REPORT_COLUMNS)] + ["\t".join(r) for r in report_rows(matrices)]
    table.write_text("\n".join(lines) + "\n")
    blocks = [f"rerun: {command}"] if command else []
    for m in matrices:
        if m.metadata:
            blocks.append("\n".join(f"{k}: {v}" for k, v in sorted(m.metadata.items())))
        for d in m.detectors():
            for b in m.bands(d):
                blocks.append(format_matrix(m, d, b))
    if extra_summary:
        blocks.append(extra_summary)
    summary = out / "summary.txt"
    summary.write_text("\n\n".join(blocks) + "\n")
    return Report(table, summary, [Path(a) for a in artifacts], command)


def read_report(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split("\t")
    return [dict(zip(header, ln.split("\t"))) for ln in lines[1:] if ln]
