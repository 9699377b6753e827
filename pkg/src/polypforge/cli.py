"""Command line front end: one binary, one subcommand per pipeline stage.

Every command resolves flag > config file > default, writes its artifacts
under ``<out>/run-<confighash>/``, and prints the artifact paths. Exit
codes: 0 success, 1 runtime failure, 2 bad config, 3 missing upstream
artifact.
"""

from __future__ import annotations

import functools
import json
import sys
from fractions import Fraction
from pathlib import Path

import click
import numpy as np

from .classifier import ResNetTileClassifier, load_classifier, save_classifier
from .config import create_run_dir, load_config, merge_section, resolve_out_root
from .cyclegan import (
    CycleGanTranslator,
    load_translator,
    save_translator,
    translate_tiles,
    write_loss_log,
)
from .dcgan import DcganSampler, load_sampler, sample_tiles, save_sampler
from .errors import ConfigError, MissingArtifactError, PolypforgeError
from .evalharness import (
    run_alpha_ablation,
    run_augmentation_experiment,
    run_synthetic_only_experiment,
)
from .manifest import load_manifest, load_tiles, write_manifest, save_tiles
from .ranking import ConfidenceRankFilter, write_ranking
from .toydata import ToyDomainSpec
from .turing import SessionStore
from .validation import check_fraction


def _fail(exc: Exception, code: int) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


def _command(fn):
    """Map error families onto the exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(exc, 2)
        except MissingArtifactError as exc:
            _fail(exc, 3)
        except PolypforgeError as exc:
            _fail(exc, 1)

    return wrapper


def _common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None,
                      help="JSON config file; flags override its fields.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Base random seed.")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default=None,
                      help="Output root (default: $POLYPFORGE_OUT or ./runs).")(fn)
    return fn


def _load_cfg(config_path) -> dict:
    return load_config(config_path) if config_path else {}


def _resolve_seed(flag_value, cfg: dict) -> int:
    if flag_value is not None:
        return int(flag_value)
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed", f"must be an integer, got {seed!r}")
    return seed


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


def _read_manifest_tiles(path, *, split=None, check_files=True):
    manifest = load_manifest(_require_file(path, "manifest"), check_files=check_files)
    return manifest, load_tiles(manifest, split=split)


def _parse_number_list(text: str, field: str) -> list[float]:
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            values.append(float(Fraction(part)))
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(field, f"cannot parse {part!r} as a number") from exc
    if not values:
        raise ConfigError(field, "expected at least one value")
    return values


def _parse_int_list(text: str, field: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(field, f"cannot parse {text!r} as integers") from exc


def _print_artifacts(run_dir: Path, paths) -> None:
    click.echo(f"run directory: {run_dir}")
    for p in paths:
        click.echo(f"  {p}")


@click.group()
@click.version_option(package_name="polypforge")
def main() -> None:
    """Generative augmentation pipeline for imbalanced tile classification."""


@main.command("toygen")
@click.option("--spec", "spec_path", type=click.Path(), required=True,
              help="Toy domain spec (JSON).")
@_common_options
@_command
def cmd_toygen(spec_path, config_path, seed, out_dir):
    """Render a synthetic toy dataset from a spec file."""
    from .toydata import generate_toy_dataset

    spec_file = _require_file(spec_path, "spec")
    with open(spec_file, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("spec", f"invalid JSON in {spec_file}: {exc}") from exc
    if seed is not None:
        raw["seed"] = seed
    spec = ToyDomainSpec.from_dict(raw)
    resolved = {"spec": spec.to_dict()}
    run_dir = create_run_dir(resolve_out_root(out_dir), "toygen", resolved)
    generate_toy_dataset(spec, run_dir / "dataset")
    _print_artifacts(run_dir, [run_dir / "dataset" / "manifest.jsonl"])


@main.command("train-classifier")
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--train-split", default="train", show_default=True)
@click.option("--val-split", default="val", show_default=True)
@_common_options
@_command
def cmd_train_classifier(manifest_path, train_split, val_split, config_path, seed, out_dir):
    """Train the tile classifier on one manifest split."""
    cfg = _load_cfg(config_path)
    seed = _resolve_seed(seed, cfg)
    section = merge_section("classifier", cfg.get("classifier"))
    manifest, train_tiles = _read_manifest_tiles(manifest_path, split=train_split)
    if not train_tiles:
        raise ConfigError("train-split", f"no tiles in split {train_split!r}")
    val_tiles = load_tiles(manifest, split=val_split)
    resolved = {"classifier": section, "seed": seed, "manifest": str(manifest_path),
                "train_split": train_split, "val_split": val_split}
    run_dir = create_run_dir(resolve_out_root(out_dir), "train-classifier", resolved)
    clf = ResNetTileClassifier(seed=seed, **section)
    y_train = np.asarray([t.label for t in train_tiles])
    if val_tiles:
        clf.fit(train_tiles, y_train, val_tiles, np.asarray([t.label for t in val_tiles]))
    else:
        clf.fit(train_tiles, y_train)
    ckpt = save_classifier(clf, run_dir / "classifier.pt")
    history = run_dir / "history.csv"
    with open(history, "w", newline="", encoding="utf-8") as fh:
        cols = list(clf.history_[0].keys()) if clf.history_ else ["epoch"]
        fh.write(",".join(cols) + "\n")
        for row in clf.history_:
            fh.write(",".join(str(row.get(c, "")) for c in cols) + "\n")
    _print_artifacts(run_dir, [ckpt, history])


@main.command("filter")
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--target-class", default=None, help="Class to rank by confidence.")
@click.option("--alpha", type=float, default=None, help="Fraction of the pool to keep.")
@click.option("--folds", type=int, default=None)
@click.option("--split", default="train", show_default=True)
@_common_options
@_command
def cmd_filter(manifest_path, target_class, alpha, folds, split, config_path, seed, out_dir):
    """Rank target-class tiles by scorer confidence and keep the top fraction."""
    cfg = _load_cfg(config_path)
    seed = _resolve_seed(seed, cfg)
    section = merge_section("filter", cfg.get("filter"))
    if target_class is not None:
        section["target_class"] = target_class
    if alpha is not None:
        section["alpha"] = alpha
    if folds is not None:
        section["folds"] = folds
    if section["target_class"] is None:
        raise ConfigError("target_class", "required (flag --target-class or config)")
    check_fraction(section["alpha"], "alpha")
    scorer_section = merge_section("scorer", cfg.get("scorer"))
    _, tiles = _read_manifest_tiles(manifest_path, split=split)
    if not tiles:
        raise ConfigError("split", f"no tiles in split {split!r}")
    resolved = {"filter": section, "scorer": scorer_section, "seed": seed,
                "manifest": str(manifest_path), "split": split}
    run_dir = create_run_dir(resolve_out_root(out_dir), "filter", resolved)

    def scorer_factory(s):
        return ResNetTileClassifier(seed=s, **scorer_section)

    filt = ConfidenceRankFilter(
        target_class=section["target_class"], alpha=section["alpha"],
        folds=section["folds"], scorer_factory=scorer_factory, seed=seed)
    filt.fit(tiles, np.asarray([t.label for t in tiles]))
    csv_path, json_path = write_ranking(
        filt.ranking_, run_dir / "ranking", alpha=section["alpha"], subset=filt.subset_)
    subset_path = run_dir / "subset.csv"
    by_id = {e.tile_id: e.probability for e in filt.ranking_.entries}
    with open(subset_path, "w", newline="", encoding="utf-8") as fh:
        fh.write("tile_id,probability\n")
        for tile_id in filt.subset_.tile_ids:
            fh.write(f"{tile_id},{by_id[tile_id]:.12g}\n")
    _print_artifacts(run_dir, [csv_path, json_path, subset_path])


@main.command("train-gan")
@click.option("--source-manifest", "source_path", type=click.Path(), default=None,
              help="Majority-domain tiles (required for cyclegan).")
@click.option("--target-manifest", "target_path", type=click.Path(), required=True,
              help="Minority-domain tiles.")
@click.option("--kind", type=click.Choice(["cyclegan", "dcgan"]), default="cyclegan",
              show_default=True)
@click.option("--split", default="train", show_default=True)
@_common_options
@_command
def cmd_train_gan(source_path, target_path, kind, split, config_path, seed, out_dir):
    """Train a generator on manifest tiles and checkpoint it."""
    cfg = _load_cfg(config_path)
    seed = _resolve_seed(seed, cfg)
    _, target_tiles = _read_manifest_tiles(target_path, split=split)
    if not target_tiles:
        raise ConfigError("split", f"no tiles in split {split!r} of {target_path}")
    if kind == "cyclegan":
        if source_path is None:
            raise ConfigError("source_manifest", "required for --kind cyclegan")
        section = merge_section("cyclegan", cfg.get("cyclegan"))
        _, source_tiles = _read_manifest_tiles(source_path, split=split)
        if not source_tiles:
            raise ConfigError("split", f"no tiles in split {split!r} of {source_path}")
        resolved = {"cyclegan": section, "seed": seed, "split": split,
                    "source_manifest": str(source_path), "target_manifest": str(target_path)}
        run_dir = create_run_dir(resolve_out_root(out_dir), "train-gan", resolved)
        section["checkpoint_epochs"] = tuple(section["checkpoint_epochs"])
        translator = CycleGanTranslator(seed=seed, **section)
        translator.fit(source_tiles, target_tiles, checkpoint_dir=run_dir / "checkpoints")
        ckpt = save_translator(translator, run_dir / "cyclegan.pt")
        log = write_loss_log(translator.history_, run_dir / "loss_log.csv")
        _print_artifacts(run_dir, [ckpt, log])
    else:
        section = merge_section("dcgan", cfg.get("dcgan"))
        resolved = {"dcgan": section, "seed": seed, "split": split,
                    "target_manifest": str(target_path)}
        run_dir = create_run_dir(resolve_out_root(out_dir), "train-gan", resolved)
        sampler = DcganSampler(seed=seed, **section)
        sampler.fit(target_tiles)
        ckpt = save_sampler(sampler, run_dir / "dcgan.pt")
        log = run_dir / "loss_log.csv"
        with open(log, "w", newline="", encoding="utf-8") as fh:
            fh.write("epoch,loss_G,loss_D\n")
            for row in sampler.history_:
                fh.write(f"{row['epoch']},{row['loss_G']:.6f},{row['loss_D']:.6f}\n")
        _print_artifacts(run_dir, [ckpt, log])


@main.command("translate")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(), default=None,
              help="Source tiles to translate (cyclegan only).")
@click.option("--target-class", required=True, help="Label assigned to outputs.")
@click.option("--kind", type=click.Choice(["cyclegan", "dcgan"]), default="cyclegan",
              show_default=True)
@click.option("--count", type=int, default=None, help="Samples to draw (dcgan only).")
@click.option("--split", default="train", show_default=True)
@_common_options
@_command
def cmd_translate(checkpoint_path, manifest_path, target_class, kind, count, split,
                  config_path, seed, out_dir):
    """Produce synthetic tiles from a trained generator checkpoint."""
    cfg = _load_cfg(config_path)
    seed = _resolve_seed(seed, cfg)
    resolved = {"checkpoint": str(checkpoint_path), "kind": kind, "seed": seed,
                "target_class": target_class, "manifest": str(manifest_path),
                "count": count, "split": split}
    run_dir = create_run_dir(resolve_out_root(out_dir), "translate", resolved)
    if kind == "cyclegan":
        if manifest_path is None:
            raise ConfigError("manifest", "required for --kind cyclegan")
        translator = load_translator(_require_file(checkpoint_path, "checkpoint"))
        _, tiles = _read_manifest_tiles(manifest_path, split=split)
        if not tiles:
            raise ConfigError("split", f"no tiles in split {split!r}")
        synthetic = translate_tiles(translator, tiles, target_class)
    else:
        if count is None or count < 1:
            raise ConfigError("count", "a positive --count is required for dcgan")
        sampler = load_sampler(_require_file(checkpoint_path, "checkpoint"))
        synthetic = sample_tiles(sampler, count, target_class, seed=seed)
    out = run_dir / "synthetic"
    manifest = save_tiles(synthetic, out)
    manifest_file = write_manifest(manifest, out / "manifest.jsonl")
    _print_artifacts(run_dir, [manifest_file])


@main.command("ablation")
@click.option("--manifest", "manifest_path", type=click.Path(), required=True,
              help="Toy or tiled dataset with train/val splits.")
@click.option("--source-class", required=True, help="Majority class translated from.")
@click.option("--target-classes", required=True, help="Comma-separated minority classes.")
@click.option("--alphas", default="1", show_default=True,
              help="Comma-separated keep fractions (floats or fractions like 1/8).")
@click.option("--folds", type=int, default=None)
@click.option("--jobs", type=int, default=1, show_default=True)
@_common_options
@_command
def cmd_ablation(manifest_path, source_class, target_classes, alphas, folds, jobs,
                 config_path, seed, out_dir):
    """Target-class-fraction grid over (class, alpha) cells.

    The train split feeds filtering and generator training; the val split
    trains the judge so it never sees generator inputs.
    """
    cfg = _load_cfg(config_path)
    seed = _resolve_seed(seed, cfg)
    alpha_values = _parse_number_list(alphas, "alphas")
    for a in alpha_values:
        check_fraction(a, "alphas")
    class_names = [c.strip() for c in target_classes.split(",") if c.strip()]
    if not class_names:
        raise ConfigError("target_classes", "expected at least one class name")
    filter_section = merge_section("filter", cfg.get("filter"))
    if folds is not None:
        filter_section["folds"] = folds
    gan_section = merge_section("cyclegan", cfg.get("cyclegan"))
    gan_section["checkpoint_epochs"] = tuple(gan_section["checkpoint_epochs"])
    judge_section = merge_section("classifier", cfg.get("classifier"))
    scorer_section = merge_section("scorer", cfg.get("scorer"))
    manifest, train_tiles = _read_manifest_tiles(manifest_path, split="train")
    val_tiles = load_tiles(manifest, split="val")
    if not val_tiles:
        raise ConfigError("manifest", "need a nonempty val split to train the judge")
    source_tiles = [t for t in train_tiles if t.label == source_class]
    if not source_tiles:
        raise ConfigError("source_class", f"no train tiles labelled {source_class!r}")
    pools = {}
    for name in class_names:
        pool = [t for t in train_tiles if t.label == name]
        if not pool:
            raise ConfigError("target_classes", f"no train tiles labelled {name!r}")
        pools[name] = pool
    resolved = {"filter": filter_section, "cyclegan": gan_section,
                "classifier": judge_section, "scorer": scorer_section, "seed": seed,
                "manifest": str(manifest_path), "source_class": source_class,
                "target_classes": class_names, "alphas": alpha_values}
    run_dir = create_run_dir(resolve_out_root(out_dir), "ablation", resolved)
    judge = ResNetTileClassifier(seed=seed, **judge_section)
    judge.fit(val_tiles, np.asarray([t.label for t in val_tiles]))
    report = run_alpha_ablation(
        alpha_values, class_names, source_tiles, pools, judge,
        translator_factory=lambda s: CycleGanTranslator(seed=s, **gan_section),
        scorer_factory=lambda s: ResNetTileClassifier(seed=s, **scorer_section),
        folds=filter_section["folds"], seed=seed, jobs=jobs)
    from .common import config_hash

    paths = report.write(run_dir, "ablation", config_hash(resolved))
    _print_artifacts(run_dir, paths.values())


@main.command("experiment")
@click.option("--train-manifest", "train_path", type=click.Path(), required=True)
@click.option("--test-manifest", "test_path", type=click.Path(), required=True)
@click.option("--synthetic", "synthetic_specs", multiple=True,
              help="name=manifest pair; repeatable.")
@click.option("--positive-class", required=True)
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--synthetic-only", is_flag=True, default=False,
              help="Replace the real minority class with synthetic tiles.")
@click.option("--generation-manifest", "generation_path", type=click.Path(), default=None,
              help="Tiles any generator trained on, for the leakage guard.")
@click.option("--jobs", type=int, default=1, show_default=True)
@_common_options
@_command
def cmd_experiment(train_path, test_path, synthetic_specs, positive_class, seeds,
                   synthetic_only, generation_path, jobs, config_path, seed, out_dir):
    """Per-arm AUC comparison on a shared held-out test set."""
    cfg = _load_cfg(config_path)
    seed = _resolve_seed(seed, cfg)
    seed_values = _parse_int_list(seeds, "seeds")
    if not seed_values:
        raise ConfigError("seeds", "expected at least one seed")
    clf_section = merge_section("classifier", cfg.get("classifier"))
    synthetic_sets = {}
    for spec in synthetic_specs:
        if "=" not in spec:
            raise ConfigError("synthetic", f"expected name=manifest, got {spec!r}")
        name, path = spec.split("=", 1)
        _, tiles = _read_manifest_tiles(path)
        synthetic_sets[name] = tiles
    if synthetic_only and not synthetic_sets:
        raise ConfigError("synthetic", "--synthetic-only needs at least one --synthetic set")
    _, train_tiles = _read_manifest_tiles(train_path, split="train")
    _, test_tiles = _read_manifest_tiles(test_path, split="test")
    if not test_tiles:
        _, test_tiles = _read_manifest_tiles(test_path)
    generation_ids = []
    if generation_path is not None:
        gen_manifest = load_manifest(_require_file(generation_path, "manifest"),
                                     check_files=False)
        # Loaded tiles take their id from the manifest path, so the guard
        # must compare against the same key.
        generation_ids = [e.path for e in gen_manifest.entries]
    resolved = {"classifier": clf_section, "seed": seed, "seeds": seed_values,
                "train_manifest": str(train_path), "test_manifest": str(test_path),
                "synthetic": sorted(synthetic_sets), "positive_class": positive_class,
                "synthetic_only": synthetic_only}
    run_dir = create_run_dir(resolve_out_root(out_dir), "experiment", resolved)

    def classifier_factory(s):
        return ResNetTileClassifier(seed=s, **clf_section)

    if synthetic_only:
        negatives = [t for t in train_tiles if t.label != positive_class]
        report = run_synthetic_only_experiment(
            synthetic_sets, negatives, test_tiles, positive_class,
            classifier_factory, seeds=seed_values, generation_ids=generation_ids,
            jobs=jobs)
    else:
        report = run_augmentation_experiment(
            train_tiles, synthetic_sets, test_tiles, positive_class,
            classifier_factory, seeds=seed_values, generation_ids=generation_ids,
            jobs=jobs)
    from .common import config_hash

    paths = report.write(run_dir, "experiment", config_hash(resolved))
    _print_artifacts(run_dir, paths.values())


@main.command("serve")
@click.option("--real-manifest", "real_path", type=click.Path(), required=True)
@click.option("--synthetic-manifest", "synthetic_path", type=click.Path(), required=True)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--ui-dir", type=click.Path(), default=None,
              help="Static frontend bundle mounted at /ui.")
@_common_options
@_command
def cmd_serve(real_path, synthetic_path, host, port, ui_dir, config_path, seed, out_dir):
    """Run the blinded review service until interrupted."""
    from .service import create_app, run_service

    cfg = _load_cfg(config_path)
    seed = _resolve_seed(seed, cfg)
    section = merge_section("serve", cfg.get("serve"))
    if host is not None:
        section["host"] = host
    if port is not None:
        section["port"] = port
    _, real_tiles = _read_manifest_tiles(real_path)
    _, synthetic_tiles = _read_manifest_tiles(synthetic_path)
    resolved = {"serve": section, "seed": seed, "real_manifest": str(real_path),
                "synthetic_manifest": str(synthetic_path)}
    run_dir = create_run_dir(resolve_out_root(out_dir), "serve", resolved)
    store = SessionStore(log_path=run_dir / "sessions.jsonl")
    app = create_app(store, real_tiles=real_tiles, synthetic_tiles=synthetic_tiles,
                     ui_dir=ui_dir)
    click.echo(f"session log: {run_dir / 'sessions.jsonl'}")
    click.echo(f"listening on http://{section['host']}:{section['port']}")
    run_service(app, host=section["host"], port=section["port"])


if __name__ == "__main__":
    main()
