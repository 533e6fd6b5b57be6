"""Command-line entry point: ``vqdetect <command> --config FILE [options]``.

Output layout under the experiment ``out`` directory::

    data/<dataset>/            synth: tiles + manifest.tsv
    ingest/<name>/             ingest: tiles + manifest.tsv
    models/vqvae/              train-vqvae: band_<b>.ckpt (or joint.ckpt), logs, models.json
    models/baseline/           train-baseline: <train-set>.ckpt, logs
    thresholds/<dataset>/      calibrate: vqvae2.tsv, cnn.tsv, calibration scores
    detections/                detect: one decision table per dataset
    report/                    evaluate: report.tsv, summary.txt, unseen.tsv, scatter.{svg,tsv}

Exit codes: 0 success, 2 bad config, 3 missing inputs, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import shlex
import shutil
import sys
from pathlib import Path

import numpy as np

from . import baseline, detector, evaluation, raster, synthgen, vqvae2
from .config import ConfigError, ExperimentConfig, load_config
from .raster import BAND_NAMES, GENERATED, PRISTINE, RGB_BANDS
from .synthgen import derive_named_seed

log = logging.getLogger("vqdetect")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 0, 2, 3, 4


class MissingInput(FileNotFoundError):
    pass


# helpers --------------------------------------------------------------------------------

def _override(cfg: ExperimentConfig, key: str, value) -> None:
    cfg.experiment[key] = value
    cfg.raw["experiment"][key] = str(value)


def _out(cfg: ExperimentConfig) -> Path:
    return Path(cfg.experiment["out"])


def _echo_config(cfg: ExperimentConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.cfg").write_text(cfg.echo())


def _seed(cfg: ExperimentConfig, name: str) -> int:
    return derive_named_seed(cfg.experiment["seed"], name)


def _manifest(cfg: ExperimentConfig, name: str) -> raster.DatasetManifest:
    path = _out(cfg) / "data" / name / "manifest.tsv"
    if not path.exists():
        raise MissingInput(f"dataset {name!r} not found at {path}; run `vqdetect synth` first")
    return raster.DatasetManifest.read(path)


def _texture(d: dict) -> synthgen.TextureParams:
    return synthgen.TextureParams(d["correlation_length"], synthgen.band_covariance(len(BAND_NAMES), d["band_rho"]),
                                  d["mean_level"], d["dynamic_range"])


def _split_plan(d: dict) -> dict:
    return {
        "train_oneclass": {PRISTINE: d["n_oneclass"]},
        "train_detector": {PRISTINE: d["n_detector"], GENERATED: d["n_detector"]},
        "calibrate": {PRISTINE: d["n_calibrate"]},
        "test": {PRISTINE: d["n_test"], GENERATED: d["n_test"]},
    }


def _vq_dir(cfg) -> Path:
    return _out(cfg) / "models" / "vqvae"


def _cnn_dir(cfg) -> Path:
    return _out(cfg) / "models" / "baseline"


def _load_oneclass(cfg) -> vqvae2.ScoreModels:
    d = _vq_dir(cfg)
    if not (d / "models.json").exists():
        raise MissingInput(f"no trained one-class models in {d}; run `vqdetect train-vqvae` first")
    try:
        return vqvae2.load_score_models(d)
    except FileNotFoundError as exc:
        raise MissingInput(str(exc)) from None


def _load_cnns(cfg) -> dict:
    out = {}
    for spec in cfg.baseline["train_sets"]:
        path = _cnn_dir(cfg) / f"{spec}.ckpt"
        if not path.exists():
            raise MissingInput(f"missing classifier checkpoint {path}; run `vqdetect train-baseline` first")
        out[spec] = baseline.load_classifier(path)
    return out


def _eval_sets(cfg) -> list[str]:
    names = list(cfg.evaluate["test_sets"])
    if cfg.evaluate["unseen"] and cfg.evaluate["unseen"] not in names:
        names.append(cfg.evaluate["unseen"])
    return names


def _format_scores(values) -> str:
    return "\t".join("" if v is None else repr(float(v)) for v in values)


# commands -------------------------------------------------------------------------------

def cmd_synth(cfg: ExperimentConfig, args) -> int:
    store = _out(cfg) / "data"
    size = args.tile_size or cfg.experiment["tile_size"]
    for name, d in cfg.datasets.items():
        root = store / name
        if (root / "manifest.tsv").exists() and not args.force:
            print(f"synth: dataset {name!r} exists at {root}, skipping (use --force to rebuild)")
            continue
        n_p = d["n_oneclass"] + d["n_detector"] + d["n_calibrate"] + d["n_test"]
        n_g = d["n_detector"] + d["n_test"]
        pert = synthgen.PerturbationParams(d["family"], d["strength"], d["period"], _seed(cfg, f"perturb:{name}"))
        m = synthgen.build_pseudo_dataset(name, n_p, n_g, _texture(d), pert, _seed(cfg, f"dataset:{name}"),
                                          store, size=size, split_plan=_split_plan(d), force=True)
        print(f"synth: {name}: {len(m)} tiles ({n_p} pristine, {n_g} generated) -> {root}")
    _echo_config(cfg, store)
    return EXIT_OK


def _read_raw_band(path: Path) -> tuple[np.ndarray, raster.BandSpec]:
    """Raw little-endian uint16 raster plus a ``<file>.band`` sidecar (band, gsd, height, width)."""
    side = path.with_name(path.name + ".band")
    if not side.exists():
        raise MissingInput(f"missing band sidecar {side}")
    meta = {}
    for line in side.read_text().splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            meta[k.strip()] = v.strip()
    try:
        h, w, gsd = int(meta["height"]), int(meta["width"]), float(meta["gsd"])
        name = meta["band"]
    except KeyError as exc:
        raise raster.TileFormatError(f"{side}: missing key {exc}") from None
    data = np.fromfile(path, dtype="<u2")
    if data.size != h * w:
        raise raster.TruncatedPayload(f"{path}: expected {h * w} samples, found {data.size}")
    return data.reshape(h, w).astype(np.uint16), raster.BandSpec(name, gsd, max(h, w))


def cmd_ingest(cfg: ExperimentConfig, args) -> int:
    if not args.inputs:
        raise MissingInput("ingest needs at least one input raster")
    bands, specs = {}, {}
    for p in map(Path, args.inputs):
        if not p.exists():
            raise MissingInput(f"input {p} not found")
        if p.suffix == ".tile":
            tile = raster.load_tile(p)
            for i, spec in enumerate(tile.band_specs):
                gsd = spec.effective_gsd or spec.native_gsd
                bands[spec.name] = tile.samples[i]
                specs[spec.name] = raster.BandSpec(spec.name, gsd, max(tile.height, tile.width))
        else:
            arr, spec = _read_raw_band(p)
            bands[spec.name], specs[spec.name] = arr, spec
    order = sorted(bands, key=BAND_NAMES.index)
    # upsample, then retile, then filter
    scene, _ = raster.to_common_grid([bands[b] for b in order], [specs[b] for b in order], raster.TARGET_GSD)
    size = args.tile_size or cfg.experiment["tile_size"]
    name = args.name or cfg.experiment["name"]
    tiles = raster.retile(scene, size, raster.sentinel2_bands(order), label=args.label, provenance=name)
    kept = raster.filter_nodata(tiles, args.nodata if args.nodata != "strict" else "strict")
    root = _out(cfg) / "ingest" / name
    if root.exists():
        if not args.force:
            print(f"ingest: {root} exists, skipping (use --force to rebuild)")
            return EXIT_OK
        shutil.rmtree(root)
    items = []
    for i, t in enumerate(kept):
        loc = f"tiles/t_{i:06d}.tile"
        raster.save_tile(t, root / loc)
        items.append((loc, t.label))
    counts = {PRISTINE: 0, GENERATED: 0}
    counts[args.label] = len(items)
    m = raster.build_manifest(name, items, {args.split: counts}, seed=cfg.experiment["seed"], root=root)
    m.save(root / "manifest.tsv")
    _echo_config(cfg, root)
    print(f"ingest: {len(tiles)} tiles of {size}x{size} over bands {','.join(order)}, "
          f"{len(tiles) - len(kept)} dropped for no-data -> {root}")
    return EXIT_OK


def _oneclass_training_tiles(cfg) -> list:
    tiles = []
    if not cfg.vqvae["train_on"]:
        raise ConfigError("[vqvae] train_on lists no dataset")
    for name in cfg.vqvae["train_on"]:
        split = _manifest(cfg, name).load("train_oneclass")
        vqvae2.check_one_class(split, f"dataset {name!r}, split train_oneclass: ")
        tiles += split
    if not tiles:
        raise MissingInput("no pristine tiles in the train_oneclass split of " + ", ".join(cfg.vqvae["train_on"]))
    return tiles


def _vq_config(cfg, channels: int, seed: int) -> vqvae2.VqVae2Config:
    v = cfg.vqvae
    return vqvae2.VqVae2Config(input_channels=channels, codebook_sizes=tuple(v["codebook_sizes"]),
                               code_dim=v["code_dim"], hidden=v["hidden"], res_blocks=v["res_blocks"],
                               res_hidden=v["res_hidden"], commitment_weight=v["commitment_weight"],
                               ema_decay=v["ema_decay"], dead_code_patience=v["dead_code_patience"], seed=seed)


def _vq_run(cfg, seed: int) -> vqvae2.TrainRun:
    v = cfg.vqvae
    return vqvae2.TrainRun(epochs=v["epochs"], batch_size=v["batch_size"], patience=v["patience"],
                           min_delta=v["min_delta"], val_fraction=v["val_fraction"], seed=seed, lr=v["lr"])


def _train_one(cfg, args, key: str, data: np.ndarray, channels: int) -> vqvae2.VqVae2:
    d = _vq_dir(cfg)
    ckpt, state = d / f"{key}.ckpt", d / f"state_{key}"
    if ckpt.exists() and not args.force:
        print(f"train-vqvae: {ckpt.name} exists, reusing")
        return vqvae2.load_model(ckpt)
    if args.force and state.exists():
        shutil.rmtree(state)
    state.mkdir(parents=True, exist_ok=True)
    model = vqvae2.VqVae2(_vq_config(cfg, channels, _seed(cfg, f"vqvae:{key}")))
    vqvae2.train(model, data, _vq_run(cfg, _seed(cfg, f"vqvae-run:{key}")), state_dir=state)
    vqvae2.write_training_log(model.training_log, d / f"{key}.log.tsv")
    best = min(r.val_loss for r in model.training_log)
    print(f"train-vqvae: {key}: {len(model.training_log)} epochs, best validation loss {best:.6g}")
    return model


def cmd_train_vqvae(cfg: ExperimentConfig, args) -> int:
    tiles = _oneclass_training_tiles(cfg)
    bands = [b for b in cfg.vqvae["bands"] if b in tiles[0].band_names]
    if not bands:
        raise ConfigError("[vqvae] bands: none of the requested bands exist in the training tiles")
    d = _vq_dir(cfg)
    d.mkdir(parents=True, exist_ok=True)
    if args.per_band or cfg.vqvae["per_band"]:
        models = {b: _train_one(cfg, args, f"band_{b}", vqvae2.tiles_to_array(tiles, [b]), 1) for b in bands}
        sm = vqvae2.ScoreModels(per_band=models)
    else:
        sm = vqvae2.ScoreModels(joint=_train_one(cfg, args, "joint", vqvae2.tiles_to_array(tiles, bands),
                                                 len(bands)), joint_bands=bands)
    vqvae2.save_score_models(sm, d)
    _echo_config(cfg, d)
    return EXIT_OK


def _merged_detector_tiles(cfg, spec: str, bands) -> list:
    """Training tiles for one classifier; ``a+b`` merges datasets with equal counts per label."""
    parts = []
    for name in spec.split("+"):
        split = _manifest(cfg, name).load("train_detector")
        parts.append({lab: [t.select(bands) for t in split if t.label == lab] for lab in (PRISTINE, GENERATED)})
    out = []
    for lab in (PRISTINE, GENERATED):
        k = min(len(p[lab]) for p in parts)
        for p in parts:
            out += p[lab][:k]
    return out


def cmd_train_baseline(cfg: ExperimentConfig, args) -> int:
    b = cfg.baseline
    if not b["train_sets"]:
        raise ConfigError("[baseline] train_sets lists no dataset")
    aug = baseline.AugmentationConfig(blur_p=b["blur_p"], blur_sigma=(b["blur_sigma_min"], b["blur_sigma_max"]),
                                      shift_p=b["shift_p"], shift_max=b["shift_max"], rotate_p=b["rotate_p"],
                                      flip_p=b["flip_p"])
    d = _cnn_dir(cfg)
    d.mkdir(parents=True, exist_ok=True)
    for spec in b["train_sets"]:
        ckpt = d / f"{spec}.ckpt"
        if ckpt.exists() and not args.force:
            print(f"train-baseline: {ckpt.name} exists, reusing")
            continue
        tiles = _merged_detector_tiles(cfg, spec, b["bands"])
        try:
            model = baseline.build_classifier(baseline.CnnConfig(
                input_channels=len(b["bands"]), stem_downsample=b["stem_downsample"], width=b["width"],
                depth=b["depth"], seed=_seed(cfg, f"cnn:{spec}")))
            run = baseline.BinaryRun(epochs=b["epochs"], batch_size=b["batch_size"], patience=b["patience"],
                                     val_fraction=b["val_fraction"], lr=b["lr"], seed=_seed(cfg, f"cnn-run:{spec}"))
            baseline.train_binary(model, tiles, aug, run)
        except ValueError as exc:
            raise ValueError(f"train set {spec!r}: {exc}") from exc
        baseline.save_classifier(model, ckpt)
        baseline.write_binary_log(model.training_log, d / f"{spec}.log.tsv")
        last = model.training_log[-1]
        print(f"train-baseline: {spec} ({model.config.variant}): {last.epoch} epochs, "
              f"best val acc {max(r.val_acc for r in model.training_log):.3f}")
    _echo_config(cfg, d)
    return EXIT_OK


def cmd_calibrate(cfg: ExperimentConfig, args) -> int:
    far = cfg.experiment["far"]
    sm = _load_oneclass(cfg)
    cnns = _load_cnns(cfg)
    sets = _eval_sets(cfg)
    if not sets:
        raise ConfigError("[evaluate] test_sets lists no dataset")
    for name in sets:
        pool = _manifest(cfg, name).load("calibrate", PRISTINE)[:cfg.evaluate["n_calib"]]
        if not pool:
            raise MissingInput(f"dataset {name!r} has no pristine calibration tiles")
        d = _out(cfg) / "thresholds" / name
        d.mkdir(parents=True, exist_ok=True)
        svs = vqvae2.score_tiles(sm, pool)
        detector.calibrate(svs, far, source=name).save(d / "vqvae2.tsv")
        rows = ["tile\t" + "\t".join(BAND_NAMES)] + [f"{sv.tile_ref}\t{_format_scores(sv.band_scores)}" for sv in svs]
        (d / "calibration_scores.tsv").write_text("\n".join(rows) + "\n")
        lines = ["detector\tthreshold\ttarget_far\tsource\tsize"]
        for spec, model in cnns.items():
            t = detector.far_threshold(baseline.score_binary(model, pool, cfg.baseline["bands"]), far)
            lines.append(f"cnn:{spec}\t{t!r}\t{far!r}\t{name}\t{len(pool)}")
        (d / "cnn.tsv").write_text("\n".join(lines) + "\n")
        print(f"calibrate: {name}: {len(pool)} pristine tiles at FAR {far:g} -> {d}")
    _echo_config(cfg, _out(cfg) / "thresholds")
    return EXIT_OK


def _read_cnn_thresholds(path: Path) -> dict:
    rows = [ln.split("\t") for ln in path.read_text().splitlines()[1:] if ln]
    return {r[0]: float(r[1]) for r in rows}


def _detect_table(tiles, sm, cnns, cfg, thr_dir: Path) -> list[str]:
    path = thr_dir / "vqvae2.tsv"
    if not path.exists():
        raise MissingInput(f"missing thresholds {path}; run `vqdetect calibrate` first")
    thresholds = detector.ThresholdSet.read(path)
    cnn_thr = _read_cnn_thresholds(thr_dir / "cnn.tsv") if cnns else {}
    bands = [BAND_NAMES[i] for i, t in enumerate(thresholds.per_band) if t is not None]
    svs = vqvae2.score_tiles(sm, tiles, [b for b in bands if b in sm.bands])
    cnn_scores = {spec: baseline.score_binary(m, tiles, cfg.baseline["bands"]) for spec, m in cnns.items()}
    header = ["tile", "label", "total"] + [f"score_{b}" for b in bands] + [f"flag_{b}" for b in bands] + ["any_band"]
    header += [f"cnn:{s}" for s in cnns] + [f"flag_cnn:{s}" for s in cnns]
    lines = ["\t".join(header)]
    for i, (t, sv) in enumerate(zip(tiles, svs)):
        dec = detector.detect(sv, thresholds, aggregate=True)
        row = [t.provenance, t.label, repr(sv.total_score)]
        row += [repr(sv.score(b)) for b in bands]
        row += [dec.per_band_flags[BAND_NAMES.index(b)] for b in bands] + [dec.aggregated]
        row += [repr(float(cnn_scores[s][i])) for s in cnns]
        row += [GENERATED if cnn_scores[s][i] > cnn_thr[f"cnn:{s}"] else PRISTINE for s in cnns]
        lines.append("\t".join(row))
    return lines


def cmd_detect(cfg: ExperimentConfig, args) -> int:
    sm = _load_oneclass(cfg)
    cnns = _load_cnns(cfg)
    out = _out(cfg) / "detections"
    out.mkdir(parents=True, exist_ok=True)
    sets = _eval_sets(cfg)
    if args.inputs:
        tiles = []
        for p in map(Path, args.inputs):
            if not p.exists():
                raise MissingInput(f"input {p} not found")
            tiles.append(raster.load_tile(p))
        lines = _detect_table(tiles, sm, cnns, cfg, _out(cfg) / "thresholds" / sets[0])
        (out / "inputs.tsv").write_text("\n".join(lines) + "\n")
        print(f"detect: {len(tiles)} input tiles -> {out / 'inputs.tsv'}")
    else:
        for name in sets:
            tiles = _manifest(cfg, name).load("test")
            lines = _detect_table(tiles, sm, cnns, cfg, _out(cfg) / "thresholds" / name)
            (out / f"{name}.tsv").write_text("\n".join(lines) + "\n")
            print(f"detect: {name}: {len(tiles)} test tiles -> {out / (name + '.tsv')}")
    _echo_config(cfg, out)
    return EXIT_OK


def rerun_command(cfg: ExperimentConfig) -> str:
    src = str(cfg.source) if cfg.source else "<config>"
    return (f"vqdetect evaluate --config {shlex.quote(src)} --out {shlex.quote(str(_out(cfg)))} "
            f"--seed {cfg.experiment['seed']} --far {cfg.experiment['far']:g}")


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    far, unseen_far = cfg.experiment["far"], cfg.experiment["unseen_far"]
    ev = cfg.evaluate
    sm = _load_oneclass(cfg)
    cnns = _load_cnns(cfg)
    if not ev["test_sets"]:
        raise ConfigError("[evaluate] test_sets lists no dataset")
    pools = {}
    for name in _eval_sets(cfg):
        pools[name] = evaluation.pools_from_manifest(_manifest(cfg, name), ev["n_calib"], ev["n_test"],
                                                     family=cfg.datasets[name]["family"],
                                                     seed=_seed(cfg, f"dataset:{name}"))
    oneclass_id = "pristine:" + "+".join(cfg.vqvae["train_on"])
    oc = evaluation.OneClassDetector(sm, name="vqvae2")
    meta = {"far": f"{far:g}", "seed": cfg.experiment["seed"], "calibration": "pristine calibrate split of each test set",
            "n_calib": ev["n_calib"], "n_test": ev["n_test"]}
    test_pools = {n: pools[n] for n in ev["test_sets"]}
    matrices = [evaluation.cross_test({oneclass_id: oc}, test_pools, far, meta)]
    if cnns:
        dets = {spec: evaluation.BinaryDetector(m, cfg.baseline["bands"], name=f"cnn_{m.config.variant}")
                for spec, m in cnns.items()}
        matrices.append(evaluation.cross_test(dets, test_pools, far, meta))
    out = _out(cfg) / "report"
    out.mkdir(parents=True, exist_ok=True)
    extra = ""
    if ev["unseen"]:
        train_families = {cfg.datasets[p]["family"] for s in cfg.baseline["train_sets"] for p in s.split("+")}
        rgb = [b for b in RGB_BANDS if b in sm.bands]
        oc_rgb = evaluation.OneClassDetector(sm, rgb, name="vqvae2")
        rows = ["detector\tpd\tfar\tn_test\tn_calib\tdataset"]
        pool = pools[ev["unseen"]]
        results = {}
        for spec, m in cnns.items():
            res = evaluation.unseen_architecture_test(oc_rgb, evaluation.BinaryDetector(m, cfg.baseline["bands"],
                                                                                        name=f"cnn:{spec}"),
                                                      pool, train_families, unseen_far)
            results.update(res)
        if not cnns:
            results = {f"vqvae2:{c}": cell.pd for c, cell in evaluation.evaluate_cell(oc_rgb, pool, unseen_far).items()}
        for k, v in results.items():
            rows.append(f"{k}\t{v:.6f}\t{unseen_far:g}\t{len(pool.generated)}\t{len(pool.calibration)}\t{ev['unseen']}")
        (out / "unseen.tsv").write_text("\n".join(rows) + "\n")
        extra = (f"unseen family {pool.family!r} (dataset {ev['unseen']}) at FAR {unseen_far:g}\n"
                 + "\n".join(f"  {k:<24} {v:.3f}" for k, v in results.items()))
    artifacts = []
    if ev["scatter"]:
        name = ev["scatter_set"] or ev["test_sets"][0]
        p = pools[name]
        svs = oc.score_vectors(p.calibration + p.generated)
        pca = detector.pca_project(svs, 2)
        artifacts += list(detector.scatter_export(pca.points, [sv.label_if_known for sv in svs], out / "scatter",
                                                  title=f"reconstruction-loss PCA, {name}"))
    report = evaluation.emit_report(matrices, artifacts, out, rerun_command(cfg), extra)
    _echo_config(cfg, out)
    print(report.summary.read_text(), end="")
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, args) -> int:
    out = _out(cfg) / "report"
    table = out / "report.tsv"
    if not table.exists():
        raise MissingInput(f"no report at {table}; run `vqdetect evaluate` first")
    rows = evaluation.read_report(table)
    lines = [f"{len(rows)} cells in {table}"]
    for r in rows:
        lines.append(f"{r['detector']:<16} {r['band']:<6} {r['train_id']:<24} {r['test_id']:<12} "
                     f"far={float(r['far']):g} pd={float(r['pd']):.3f} (n={r['n_test']})")
    unseen = out / "unseen.tsv"
    if unseen.exists():
        lines.append("unseen family:")
        for r in evaluation.read_report(unseen):
            lines.append(f"  {r['detector']:<24} pd={float(r['pd']):.3f} at far={float(r['far']):g}")
    print("\n".join(lines))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train-vqvae": cmd_train_vqvae,
    "train-baseline": cmd_train_baseline,
    "calibrate": cmd_calibrate,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vqdetect", description="One-class detection of synthetic multispectral tiles.")
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("inputs", nargs="*", help="input rasters (ingest) or tile files (detect)")
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--out", help="override the experiment output directory")
    p.add_argument("--seed", type=int, help="override the root seed")
    p.add_argument("--per-band", action="store_true", help="train one single-band model per band")
    p.add_argument("--far", type=float, help="override the target false-alarm rate")
    p.add_argument("--tile-size", type=int, help="tile edge in pixels (synth, ingest)")
    p.add_argument("--force", action="store_true", help="rebuild outputs that already exist")
    p.add_argument("--name", help="dataset name for ingest")
    p.add_argument("--label", default=PRISTINE, choices=[PRISTINE, GENERATED], help="label for ingested tiles")
    p.add_argument("--split", default="test", choices=list(raster.SPLITS), help="split for ingested tiles")
    p.add_argument("--nodata", default="strict", help="no-data policy: strict or a max zero fraction")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.out:
            _override(cfg, "out", args.out)
        if args.seed is not None:
            _override(cfg, "seed", args.seed)
        if args.far is not None:
            if not 0.0 < args.far < 1.0:
                raise ConfigError("--far must lie in (0, 1)")
            _override(cfg, "far", args.far)
        if args.tile_size is not None and (args.tile_size < 16 or args.tile_size % 16):
            if args.command != "ingest" or args.tile_size < 8:
                raise ConfigError("--tile-size must be a positive multiple of 16")
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"vqdetect: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, vqvae2.MissingModel, evaluation.MissingPool) as exc:
        print(f"vqdetect: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # noqa: BLE001 - every other failure maps to the runtime exit code
        log.debug("failure", exc_info=True)
        print(f"vqdetect: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
