"""Experiment configuration: flat ``key = value`` lines grouped under ``[section]`` headers.

Dataset sections carry a name, e.g. ``[dataset lc]``. Unknown sections and
keys are rejected. Every key has a default, so the resolved configuration
can be echoed in full.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .raster import BAND_NAMES, RGB_BANDS
from .synthgen import FAMILIES


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _list(v: str) -> list[str]:
    return [p.strip() for p in v.split(",") if p.strip()]


def _ints(v: str) -> list[int]:
    return [int(p) for p in _list(v)]


def _family(v: str) -> str:
    if v not in FAMILIES:
        raise ValueError(f"unknown family {v!r} (choose from {', '.join(FAMILIES)})")
    return v


def bands_arg(v: str) -> list[str]:
    """``all``, ``rgb`` or a comma list of band names."""
    v = v.strip().lower()
    if v == "all":
        return list(BAND_NAMES)
    if v == "rgb":
        return list(RGB_BANDS)
    names = _list(v)
    bad = [b for b in names if b not in BAND_NAMES]
    if bad or not names:
        raise ValueError(f"unknown band(s) {bad}")
    return names


# section -> key -> (parser, default text)
SCHEMA: dict[str, dict[str, tuple]] = {
    "experiment": {
        "name": (str, "experiment"),
        "seed": (int, "0"),
        "out": (str, "runs/experiment"),
        "far": (float, "0.1"),
        "unseen_far": (float, "0.05"),
        "tile_size": (int, "64"),
    },
    "dataset": {
        "family": (_family, "checkerboard"),
        "strength": (float, "0.5"),
        "period": (int, "2"),
        "correlation_length": (float, "2.0"),
        "band_rho": (float, "0.8"),
        "mean_level": (float, "30000"),
        "dynamic_range": (float, "6000"),
        "n_oneclass": (int, "0"),
        "n_detector": (int, "0"),
        "n_calibrate": (int, "100"),
        "n_test": (int, "100"),
    },
    "vqvae": {
        "train_on": (_list, ""),
        "bands": (bands_arg, "all"),
        "per_band": (_bool, "true"),
        "hidden": (int, "16"),
        "code_dim": (int, "16"),
        "res_blocks": (int, "1"),
        "res_hidden": (int, "8"),
        "codebook_sizes": (_ints, "512,128,64"),
        "commitment_weight": (float, "0.25"),
        "ema_decay": (float, "0.99"),
        "dead_code_patience": (int, "50"),
        "epochs": (int, "100"),
        "batch_size": (int, "64"),
        "lr": (float, "2e-4"),
        "patience": (int, "10"),
        "min_delta": (float, "1e-5"),
        "val_fraction": (float, "0.1"),
    },
    "baseline": {
        "train_sets": (_list, ""),
        "bands": (bands_arg, "rgb"),
        "stem_downsample": (_bool, "false"),
        "width": (int, "8"),
        "depth": (int, "3"),
        "epochs": (int, "30"),
        "batch_size": (int, "32"),
        "lr": (float, "1e-3"),
        "patience": (int, "8"),
        "val_fraction": (float, "0.1"),
        "blur_p": (float, "0.1"),
        "blur_sigma_min": (float, "0.5"),
        "blur_sigma_max": (float, "1.5"),
        "shift_p": (float, "0.2"),
        "shift_max": (int, "4"),
        "rotate_p": (float, "0.5"),
        "flip_p": (float, "0.5"),
    },
    "evaluate": {
        "test_sets": (_list, ""),
        "unseen": (str, ""),
        "n_calib": (int, "100"),
        "n_test": (int, "500"),
        "scatter": (_bool, "true"),
        "scatter_set": (str, ""),
    },
}

SINGLETONS = ("experiment", "vqvae", "baseline", "evaluate")


@dataclass
class ExperimentConfig:
    experiment: dict
    datasets: dict  # name -> dict
    vqvae: dict
    baseline: dict
    evaluate: dict
    raw: dict = field(default_factory=dict)  # section header -> {key: text} as resolved
    source: Path | None = None

    def echo(self) -> str:
        """Resolved configuration in canonical order, re-parseable by :func:`parse_config`."""
        out = []
        for header, values in self.raw.items():
            out.append(f"[{header}]")
            out += [f"{k} = {v}" for k, v in values.items()]
            out.append("")
        return "\n".join(out)


def _resolve(section: str, given: dict, where: str) -> tuple[dict, dict]:
    schema = SCHEMA[section]
    text = {}
    values = {}
    for key, (parse, default) in schema.items():
        raw = given.get(key, default)
        try:
            values[key] = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
        text[key] = raw
    return values, text


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    sections: dict[str, dict] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith(("#", ";")):
            continue
        where = f"{source}:{lineno}"
        if s.startswith("["):
            if not s.endswith("]"):
                raise ConfigError(f"{where}: malformed section header")
            header = " ".join(s[1:-1].split())
            kind, _, name = header.partition(" ")
            if kind not in SCHEMA:
                raise ConfigError(f"{where}: unknown section [{kind}]")
            if kind == "dataset" and not name:
                raise ConfigError(f"{where}: dataset sections need a name, e.g. [dataset lc]")
            if kind != "dataset" and name:
                raise ConfigError(f"{where}: section [{kind}] takes no name")
            if header in sections:
                raise ConfigError(f"{where}: duplicate section [{header}]")
            sections[header] = {}
            current = header
            continue
        if "=" not in s:
            raise ConfigError(f"{where}: expected key = value")
        if current is None:
            raise ConfigError(f"{where}: key outside of any section")
        key, _, value = s.partition("=")
        key, value = key.strip(), value.strip()
        kind = current.partition(" ")[0]
        if key not in SCHEMA[kind]:
            raise ConfigError(f"{where}: unknown key {key!r} in [{current}]")
        if key in sections[current]:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        sections[current][key] = value

    raw: dict[str, dict] = {}
    parsed: dict[str, dict] = {}
    for kind in SINGLETONS[:1]:
        parsed[kind], raw[kind] = _resolve(kind, sections.get(kind, {}), f"{source} [{kind}]")
    datasets = {}
    for header, given in sections.items():
        if header.startswith("dataset "):
            name = header.partition(" ")[2]
            datasets[name], raw[header] = _resolve("dataset", given, f"{source} [{header}]")
    for kind in SINGLETONS[1:]:
        parsed[kind], raw[kind] = _resolve(kind, sections.get(kind, {}), f"{source} [{kind}]")

    cfg = ExperimentConfig(parsed["experiment"], datasets, parsed["vqvae"], parsed["baseline"],
                           parsed["evaluate"], raw)
    _validate(cfg, source)
    return cfg


def _validate(cfg: ExperimentConfig, source: str) -> None:
    exp = cfg.experiment
    if not 0.0 < exp["far"] < 1.0 or not 0.0 < exp["unseen_far"] < 1.0:
        raise ConfigError(f"{source}: far values must lie in (0, 1)")
    if exp["tile_size"] < 16 or exp["tile_size"] % 16:
        raise ConfigError(f"{source}: tile_size must be a positive multiple of 16")
    for name, d in cfg.datasets.items():
        if any(d[k] < 0 for k in ("n_oneclass", "n_detector", "n_calibrate", "n_test")):
            raise ConfigError(f"{source}: dataset {name}: counts must be non-negative")
        if not 0.0 <= d["strength"] <= 1.0:
            raise ConfigError(f"{source}: dataset {name}: strength must lie in [0, 1]")
        if not -1.0 < d["band_rho"] < 1.0:
            raise ConfigError(f"{source}: dataset {name}: band_rho must lie in (-1, 1)")
    refs = list(cfg.vqvae["train_on"]) + list(cfg.evaluate["test_sets"])
    refs += [p for s in cfg.baseline["train_sets"] for p in s.split("+")]
    refs += [v for v in (cfg.evaluate["unseen"], cfg.evaluate["scatter_set"]) if v]
    missing = sorted({r for r in refs if r not in cfg.datasets})
    if missing:
        raise ConfigError(f"{source}: undefined dataset(s) {', '.join(missing)}")
    if len(cfg.vqvae["codebook_sizes"]) != 3:
        raise ConfigError(f"{source}: codebook_sizes needs three values")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text, str(path))
    cfg.source = path
    return cfg
