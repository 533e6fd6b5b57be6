"""One-class decision layer: per-band FAR calibration, band-wise thresholding, PCA diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .raster import BAND_NAMES, GENERATED, PRISTINE

N_BANDS = len(BAND_NAMES)


class CalibrationError(ValueError):
    pass


@dataclass
class ScoreVector:
    """Per-band reconstruction losses (13 slots, ``None`` where no model ran) and their mean."""

    band_scores: list
    tile_ref: str = ""
    label_if_known: str | None = None
    total_score: float = field(init=False)

    def __post_init__(self):
        scores = list(self.band_scores)
        if len(scores) != N_BANDS:
            raise ValueError(f"expected {N_BANDS} band slots, got {len(scores)}")
        present = [s for s in scores if s is not None]
        if any(s < 0 or not math.isfinite(s) for s in present):
            raise ValueError("band scores must be finite and non-negative")
        self.band_scores = [None if s is None else float(s) for s in scores]
        self.total_score = float(np.mean(present)) if present else float("nan")

    @classmethod
    def from_bands(cls, scores: dict, tile_ref="", label=None) -> "ScoreVector":
        slots = [None] * N_BANDS
        for name, value in scores.items():
            slots[BAND_NAMES.index(name)] = value
        return cls(slots, tile_ref, label)

    @property
    def present(self) -> list[int]:
        return [i for i, s in enumerate(self.band_scores) if s is not None]

    def score(self, band) -> float | None:
        i = band if isinstance(band, int) else BAND_NAMES.index(band)
        return self.band_scores[i]


@dataclass
class ThresholdSet:
    per_band: list  # 13 optional thresholds
    target_far: float
    calibration_size: int
    source: str = ""

    def __post_init__(self):
        if not 0.0 < self.target_far < 1.0:
            raise ValueError("target_far must lie in (0, 1)")
        if self.calibration_size < 1:
            raise ValueError("calibration_size must be >= 1")
        if len(self.per_band) != N_BANDS:
            raise ValueError(f"expected {N_BANDS} threshold slots")

    def save(self, path) -> Path:
        path = Path(path)
        lines = ["band\tthreshold\ttarget_far\tsource\tsize"]
        for name, t in zip(BAND_NAMES, self.per_band):
            if t is not None:
                lines.append(f"{name}\t{t!r}\t{self.target_far!r}\t{self.source}\t{self.calibration_size}")
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "ThresholdSet":
        rows = [ln.split("\t") for ln in Path(path).read_text().splitlines()[1:] if ln.strip()]
        if not rows:
            raise CalibrationError(f"{path}: no thresholds")
        per_band = [None] * N_BANDS
        for name, t, far, source, size in rows:
            per_band[BAND_NAMES.index(name)] = float(t)
        return cls(per_band, float(rows[0][2]), int(rows[0][4]), rows[0][3])


@dataclass
class Decision:
    per_band_flags: list  # 13 slots: GENERATED / PRISTINE / None
    aggregated: str | None = None

    @property
    def flagged_bands(self) -> list[str]:
        return [BAND_NAMES[i] for i, f in enumerate(self.per_band_flags) if f == GENERATED]


def far_threshold(scores: Sequence[float], target_far: float) -> float:
    """Smallest observed score ``t`` with ``fraction(scores > t) <= target_far``."""
    s = np.sort(np.asarray(scores, dtype=np.float64))
    if s.size == 0:
        raise CalibrationError("empty calibration pool")
    n = s.size
    allowed = math.floor(target_far * n + 1e-9)
    # the count strictly above s[i] is n - (last index of s[i]) - 1
    for t in np.unique(s):
        if n - np.searchsorted(s, t, side="right") <= allowed:
            return float(t)
    return float(s[-1])


def calibrate(pristine_scores: Sequence[ScoreVector], target_far: float, source: str = "") -> ThresholdSet:
    """Per-band thresholds so that at most ``target_far`` of the pool lies strictly above."""
    pool = list(pristine_scores)
    if not pool:
        raise CalibrationError("empty calibration pool")
    if not 0.0 < target_far < 1.0:
        raise CalibrationError("target_far must lie in (0, 1)")
    if any(sv.label_if_known == GENERATED for sv in pool):
        raise CalibrationError("calibration pool contains generated-labelled scores")
    per_band = [None] * N_BANDS
    for b in range(N_BANDS):
        vals = [sv.band_scores[b] for sv in pool if sv.band_scores[b] is not None]
        if vals:
            per_band[b] = far_threshold(vals, target_far)
    return ThresholdSet(per_band, float(target_far), len(pool), source)


def detect(score: ScoreVector, thresholds: ThresholdSet, aggregate: bool = False) -> Decision:
    flags = [None] * N_BANDS
    for b in range(N_BANDS):
        s, t = score.band_scores[b], thresholds.per_band[b]
        if s is not None and t is not None:
            flags[b] = GENERATED if s > t else PRISTINE
    if all(f is None for f in flags):
        raise CalibrationError("score and threshold sets share no band")
    agg = None
    if aggregate:
        agg = GENERATED if GENERATED in flags else PRISTINE
    return Decision(flags, agg)


# PCA -----------------------------------------------------------------------------

@dataclass
class PcaResult:
    points: np.ndarray  # (n, out_dim)
    explained_variance: np.ndarray  # eigenvalues, descending
    components: np.ndarray  # (out_dim, d) unit loadings
    mean: np.ndarray
    bands: list


def _feature_matrix(vectors) -> tuple[np.ndarray, list]:
    vectors = list(vectors)
    if vectors and isinstance(vectors[0], ScoreVector):
        bands = vectors[0].present
        if any(v.present != bands for v in vectors):
            raise ValueError("score vectors do not share band availability")
        return np.array([[v.band_scores[b] for b in bands] for v in vectors], dtype=np.float64), bands
    arr = np.asarray(vectors, dtype=np.float64)
    return arr, list(range(arr.shape[1] if arr.ndim == 2 else 0))


def pca_project(score_vectors, out_dim: int = 2) -> PcaResult:
    """Project onto the top principal axes of the sample covariance.

    Axes come in descending eigenvalue order; each axis is signed so that its
    largest-magnitude loading is positive.
    """
    x, bands = _feature_matrix(score_vectors)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("need at least 3 feature vectors")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    if vals[0] <= 1e-300:
        raise ValueError("rank-0 input: all feature vectors identical")
    k = min(out_dim, x.shape[1])
    comps = vecs[:, :k].T.copy()
    for i in range(k):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return PcaResult(points=xc @ comps.T, explained_variance=np.clip(vals[:k], 0, None),
                     components=comps, mean=mean, bands=bands)


def scatter_export(points, labels: Sequence[str], path, title: str = "PCA of reconstruction losses") -> tuple[Path, Path]:
    """Write an SVG scatter plot and a tab-separated companion table of the points."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    labels = list(labels)
    if len(labels) != len(pts):
        raise ValueError("one label per point required")
    plt.rcParams["svg.hashsalt"] = "vqdetect"  # stable element ids across runs
    fig, ax = plt.subplots(figsize=(5, 4))
    styles = {PRISTINE: dict(marker="o", color="tab:blue"), GENERATED: dict(marker="x", color="tab:red")}
    for lab in (PRISTINE, GENERATED):
        sel = pts[[i for i, l in enumerate(labels) if l == lab]]
        ax.scatter(sel[:, 0], sel[:, 1], s=14, label=lab, **styles[lab])
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    svg = path.with_suffix(".svg")
    svg.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(svg, format="svg", metadata={"Date": None})
    plt.close(fig)
    table = path.with_suffix(".tsv")
    rows = ["pc1\tpc2\tlabel"] + [f"{x:.9g}\t{y:.9g}\t{lab}" for (x, y), lab in zip(pts, labels)]
    table.write_text("\n".join(rows) + "\n")
    return svg, table
