"""Command line contract: exit codes, precedence, and artifact layout."""

import json
from dataclasses import replace
from pathlib import Path

import pytest
from click.testing import CliRunner

from polypforge.classifier import load_classifier
from polypforge.cli import main
from polypforge.manifest import (
    load_manifest,
    save_tiles,
    split_dataset,
    write_manifest,
)
from polypforge.toydata import ToyClassSpec, make_tile_set
from conftest import flat_tiles

TOY_SPEC = {
    "classes": [
        {"name": "plain", "motif": "plain", "count": 6},
        {"name": "striped", "motif": "striped", "count": 6,
         "theta_range": [0.3, 1.0]},
    ],
    "image_size": 32,
    "seed": 7,
}

TINY_CONFIG = {
    "scorer": {"epochs": 1},
    "classifier": {"epochs": 1},
    "filter": {"folds": 1},
    "cyclegan": {"image_size": 32, "base_filters": 2, "residual_blocks": 1,
                 "disc_filters": 2, "disc_layers": 1, "epochs": 1,
                 "batch_size": 4, "checkpoint_epochs": []},
    "dcgan": {"image_size": 32, "latent_dim": 4, "base_filters": 8,
              "epochs": 1, "batch_size": 4},
}


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def spec_file(workdir):
    path = workdir / "spec.json"
    path.write_text(json.dumps(TOY_SPEC))
    return path


@pytest.fixture(scope="module")
def config_file(workdir):
    path = workdir / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return path


@pytest.fixture(scope="module")
def toy_manifest(runner, spec_file, workdir):
    result = runner.invoke(main, ["toygen", "--spec", str(spec_file),
                                  "--out", str(workdir / "toyout")])
    assert result.exit_code == 0, result.output
    return printed_paths(result)[0]


def printed_paths(result):
    lines = [line for line in result.output.splitlines()
             if line.startswith("  ")]
    return [Path(line.strip()) for line in lines]


def run_dir_of(result):
    for line in result.output.splitlines():
        if line.startswith("run directory: "):
            return Path(line.removeprefix("run directory: "))
    raise AssertionError(f"no run directory in output:\n{result.output}")


class TestToygen:
    def test_writes_dataset_and_run_record(self, runner, spec_file, tmp_path):
        result = runner.invoke(main, ["toygen", "--spec", str(spec_file),
                                      "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        run_dir = run_dir_of(result)
        assert run_dir.parent == tmp_path
        manifest_path = printed_paths(result)[0]
        assert manifest_path.is_file()
        assert len(load_manifest(manifest_path).entries) == 12
        record = json.loads((run_dir / "run.json").read_text())
        assert record["command"] == "toygen"
        assert set(record) == {"command", "argv", "config", "config_hash",
                               "created_at"}
        assert run_dir.name == f"run-{record['config_hash'][:12]}"

    def test_seed_flag_overrides_spec_seed(self, runner, spec_file, tmp_path):
        result = runner.invoke(main, ["toygen", "--spec", str(spec_file),
                                      "--seed", "9", "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        record = json.loads((run_dir_of(result) / "run.json").read_text())
        assert record["config"]["spec"]["seed"] == 9

    def test_missing_spec_exits_3(self, runner, tmp_path):
        result = runner.invoke(main, ["toygen", "--spec", str(tmp_path / "no.json"),
                                      "--out", str(tmp_path)])
        assert result.exit_code == 3
        assert "spec not found" in result.output

    def test_invalid_json_exits_2(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        result = runner.invoke(main, ["toygen", "--spec", str(bad),
                                      "--out", str(tmp_path)])
        assert result.exit_code == 2

    def test_unknown_spec_key_exits_2(self, runner, tmp_path):
        bad = tmp_path / "extra.json"
        bad.write_text(json.dumps({**TOY_SPEC, "palette": "viridis"}))
        result = runner.invoke(main, ["toygen", "--spec", str(bad),
                                      "--out", str(tmp_path)])
        assert result.exit_code == 2
        assert "palette" in result.output


class TestFilter:
    def filter_args(self, toy_manifest, config_file, out, extra=()):
        return ["filter", "--manifest", str(toy_manifest),
                "--target-class", "striped", "--config", str(config_file),
                "--out", str(out), *extra]

    def test_end_to_end_artifacts(self, runner, toy_manifest, config_file, tmp_path):
        result = runner.invoke(main, self.filter_args(
            toy_manifest, config_file, tmp_path, ["--alpha", "0.5"]))
        assert result.exit_code == 0, result.output
        csv_path, json_path, subset_path = printed_paths(result)
        ranked = csv_path.read_text().splitlines()
        assert ranked[0] == "tile_id,probability"
        assert len(ranked) == 7
        subset = subset_path.read_text().splitlines()
        assert len(subset) == 4
        audit = json.loads(json_path.read_text())
        assert audit["alpha"] == 0.5
        assert len(audit["selected_ids"]) == 3
        assert subset[1].split(",")[0] == audit["selected_ids"][0]

    def test_alpha_above_one_exits_2(self, runner, toy_manifest, config_file, tmp_path):
        result = runner.invoke(main, self.filter_args(
            toy_manifest, config_file, tmp_path, ["--alpha", "1.5"]))
        assert result.exit_code == 2
        assert "alpha" in result.output

    def test_missing_manifest_exits_3(self, runner, config_file, tmp_path):
        result = runner.invoke(main, self.filter_args(
            tmp_path / "ghost.jsonl", config_file, tmp_path))
        assert result.exit_code == 3
        assert "manifest not found" in result.output

    def test_target_class_required(self, runner, toy_manifest, tmp_path):
        result = runner.invoke(main, ["filter", "--manifest", str(toy_manifest),
                                      "--out", str(tmp_path)])
        assert result.exit_code == 2
        assert "target_class" in result.output

    def test_flag_beats_file_beats_default(self, runner, toy_manifest, tmp_path):
        cfg = tmp_path / "alpha.json"
        cfg.write_text(json.dumps({**TINY_CONFIG,
                                   "filter": {"folds": 1, "alpha": 0.25}}))
        from_file = runner.invoke(main, self.filter_args(toy_manifest, cfg, tmp_path))
        assert from_file.exit_code == 0, from_file.output
        audit = json.loads(printed_paths(from_file)[1].read_text())
        assert audit["alpha"] == 0.25
        assert len(audit["selected_ids"]) == 2

        from_flag = runner.invoke(main, self.filter_args(
            toy_manifest, cfg, tmp_path, ["--alpha", "0.5"]))
        audit = json.loads(printed_paths(from_flag)[1].read_text())
        assert audit["alpha"] == 0.5

    def test_default_alpha_keeps_everything(self, runner, toy_manifest,
                                            config_file, tmp_path):
        result = runner.invoke(main, self.filter_args(toy_manifest, config_file,
                                                      tmp_path))
        assert result.exit_code == 0, result.output
        audit = json.loads(printed_paths(result)[1].read_text())
        assert audit["alpha"] == 1.0
        assert len(audit["selected_ids"]) == 6

    def test_unknown_config_key_exits_2(self, runner, toy_manifest, tmp_path):
        cfg = tmp_path / "typo.json"
        cfg.write_text(json.dumps({"filter": {"alpa": 0.5}}))
        result = runner.invoke(main, self.filter_args(toy_manifest, cfg, tmp_path))
        assert result.exit_code == 2
        assert "filter.alpa" in result.output

    def test_bad_config_type_exits_2(self, runner, toy_manifest, tmp_path):
        cfg = tmp_path / "badtype.json"
        cfg.write_text(json.dumps({"scorer": {"epochs": "two"}}))
        result = runner.invoke(main, self.filter_args(toy_manifest, cfg, tmp_path))
        assert result.exit_code == 2
        assert "scorer.epochs" in result.output

    def test_bad_config_seed_exits_2(self, runner, toy_manifest, tmp_path):
        cfg = tmp_path / "badseed.json"
        cfg.write_text(json.dumps({**TINY_CONFIG, "seed": "sometimes"}))
        result = runner.invoke(main, self.filter_args(toy_manifest, cfg, tmp_path))
        assert result.exit_code == 2
        assert "seed" in result.output

    def test_reruns_are_byte_identical(self, runner, toy_manifest, config_file,
                                       tmp_path):
        results = [
            runner.invoke(main, self.filter_args(
                toy_manifest, config_file, tmp_path / name,
                ["--alpha", "0.5", "--seed", "3"]))
            for name in ("first", "second")
        ]
        assert all(r.exit_code == 0 for r in results)
        first, second = (printed_paths(r) for r in results)
        assert first[0].parent.name == second[0].parent.name
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

    def test_out_env_fallback(self, runner, toy_manifest, config_file, tmp_path):
        result = runner.invoke(
            main, ["filter", "--manifest", str(toy_manifest),
                   "--target-class", "striped", "--config", str(config_file)],
            env={"POLYPFORGE_OUT": str(tmp_path / "envroot")})
        assert result.exit_code == 0, result.output
        assert run_dir_of(result).parent == tmp_path / "envroot"


class TestTrainClassifier:
    def test_trains_and_checkpoints(self, runner, toy_manifest, config_file,
                                    tmp_path):
        result = runner.invoke(main, [
            "train-classifier", "--manifest", str(toy_manifest),
            "--config", str(config_file), "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        ckpt, history = printed_paths(result)
        clf = load_classifier(ckpt)
        assert list(clf.classes_) == ["plain", "striped"]
        lines = history.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,train_acc"
        assert len(lines) == 2

    def test_empty_split_exits_2(self, runner, toy_manifest, config_file,
                                 tmp_path):
        result = runner.invoke(main, [
            "train-classifier", "--manifest", str(toy_manifest),
            "--train-split", "test", "--config", str(config_file),
            "--out", str(tmp_path)])
        assert result.exit_code == 2
        assert "no tiles in split 'test'" in result.output


@pytest.fixture(scope="module")
def cyclegan_ckpt(runner, toy_manifest, config_file, workdir):
    result = runner.invoke(main, [
        "train-gan", "--source-manifest", str(toy_manifest),
        "--target-manifest", str(toy_manifest), "--kind", "cyclegan",
        "--config", str(config_file), "--out", str(workdir / "gan")])
    assert result.exit_code == 0, result.output
    return printed_paths(result)


class TestGanCommands:
    def test_cyclegan_training_artifacts(self, cyclegan_ckpt):
        ckpt, log = cyclegan_ckpt
        assert ckpt.name == "cyclegan.pt"
        lines = log.read_text().splitlines()
        assert lines[0] == "epoch,loss_G,loss_F,loss_D_X,loss_D_Y,loss_cyc,loss_id"
        assert len(lines) == 2

    def test_cyclegan_requires_source(self, runner, toy_manifest, config_file,
                                      tmp_path):
        result = runner.invoke(main, [
            "train-gan", "--target-manifest", str(toy_manifest),
            "--config", str(config_file), "--out", str(tmp_path)])
        assert result.exit_code == 2
        assert "source_manifest" in result.output

    def test_translate_writes_synthetic_manifest(self, runner, cyclegan_ckpt,
                                                 toy_manifest, tmp_path):
        result = runner.invoke(main, [
            "translate", "--checkpoint", str(cyclegan_ckpt[0]),
            "--manifest", str(toy_manifest), "--target-class", "striped",
            "--out", str(tmp_path)])
        assert result.exit_code == 0, result.output
        manifest = load_manifest(printed_paths(result)[0])
        assert len(manifest.entries) == 12
        assert all(e.provenance == "synthetic" for e in manifest.entries)
        assert all(e.label == "striped" for e in manifest.entries)
        assert all(e.source_ref for e in manifest.entries)

    def test_translate_missing_checkpoint_exits_3(self, runner, toy_manifest,
                                                  tmp_path):
        result = runner.invoke(main, [
            "translate", "--checkpoint", str(tmp_path / "none.pt"),
            "--manifest", str(toy_manifest), "--target-class", "striped",
            "--out", str(tmp_path)])
        assert result.exit_code == 3

    def test_dcgan_roundtrip(self, runner, toy_manifest, config_file, tmp_path):
        trained = runner.invoke(main, [
            "train-gan", "--target-manifest", str(toy_manifest),
            "--kind", "dcgan", "--config", str(config_file),
            "--out", str(tmp_path)])
        assert trained.exit_code == 0, trained.output
        ckpt, log = printed_paths(trained)
        assert log.read_text().splitlines()[0] == "epoch,loss_G,loss_D"
        sampled = runner.invoke(main, [
            "translate", "--checkpoint", str(ckpt), "--kind", "dcgan",
            "--target-class", "striped", "--count", "5",
            "--out", str(tmp_path)])
        assert sampled.exit_code == 0, sampled.output
        manifest = load_manifest(printed_paths(sampled)[0])
        assert len(manifest.entries) == 5
        assert all(e.path.startswith("dcgan/") for e in manifest.entries)

    def test_dcgan_translate_needs_count(self, runner, tmp_path):
        result = runner.invoke(main, [
            "translate", "--checkpoint", str(tmp_path / "x.pt"),
            "--kind", "dcgan", "--target-class", "striped",
            "--out", str(tmp_path)])
        assert result.exit_code == 2
        assert "count" in result.output


@pytest.fixture(scope="module")
def split_manifest(toy_manifest):
    manifest = load_manifest(toy_manifest)
    assigned = split_dataset(manifest, {"train": 0.5, "val": 0.5}, seed=0)
    path = toy_manifest.parent / "split-manifest.jsonl"
    return write_manifest(assigned, path)


class TestAblation:
    def ablation_args(self, split_manifest, config_file, out, alphas="1,0.5"):
        return ["ablation", "--manifest", str(split_manifest),
                "--source-class", "plain", "--target-classes", "striped",
                "--alphas", alphas, "--config", str(config_file),
                "--out", str(out)]

    def test_grid_csv_has_one_row_per_cell(self, runner, split_manifest,
                                           config_file, tmp_path):
        result = runner.invoke(main, self.ablation_args(
            split_manifest, config_file, tmp_path))
        assert result.exit_code == 0, result.output
        cells_csv = next(p for p in printed_paths(result)
                         if p.name.endswith("-cells.csv"))
        lines = cells_csv.read_text().splitlines()
        assert lines[0] == ("target_class,alpha,generated_count,"
                            "target_class_fraction,error")
        assert len(lines) == 3
        alphas = {line.split(",")[1] for line in lines[1:]}
        assert alphas == {"1", "0.5"}
        assert all(line.endswith(",") for line in lines[1:]), "cells errored"

    def test_reruns_reproduce_report_bytes(self, runner, split_manifest,
                                           config_file, tmp_path):
        results = [
            runner.invoke(main, self.ablation_args(
                split_manifest, config_file, tmp_path / name, alphas="0.5"))
            for name in ("first", "second")
        ]
        assert all(r.exit_code == 0 for r in results), results[0].output
        first, second = (sorted(printed_paths(r)) for r in results)
        assert [p.name for p in first] == [p.name for p in second]
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

    def test_bad_alpha_list_exits_2(self, runner, split_manifest, config_file,
                                    tmp_path):
        result = runner.invoke(main, self.ablation_args(
            split_manifest, config_file, tmp_path, alphas="1,zero"))
        assert result.exit_code == 2
        assert "alphas" in result.output

    def test_needs_val_split(self, runner, toy_manifest, config_file, tmp_path):
        result = runner.invoke(main, self.ablation_args(
            toy_manifest, config_file, tmp_path))
        assert result.exit_code == 2
        assert "val split" in result.output


@pytest.fixture(scope="module")
def synthetic_manifest(workdir):
    out = workdir / "synthetic"
    tiles = flat_tiles(6, label="striped", provenance="synthetic",
                       size=32, prefix="syn")
    return write_manifest(save_tiles(tiles, out), out / "manifest.jsonl")


@pytest.fixture(scope="module")
def test_manifest(workdir):
    # Distinct ids from the training set, or the leakage guard fires.
    tiles = [replace(t, tile_id=f"held/{t.tile_id}")
             for t in make_tile_set([
                 ToyClassSpec("plain", "plain", 6),
                 ToyClassSpec("striped", "striped", 6, (0.3, 1.0))],
                 seed=11)]
    out = workdir / "testset"
    return write_manifest(save_tiles(tiles, out), out / "manifest.jsonl")


class TestExperiment:
    def experiment_args(self, toy_manifest, test_manifest, synthetic_manifest,
                        config_file, out, extra=()):
        return ["experiment", "--train-manifest", str(toy_manifest),
                "--test-manifest", str(test_manifest),
                "--synthetic", f"syn={synthetic_manifest}",
                "--positive-class", "striped", "--seeds", "0",
                "--config", str(config_file), "--out", str(out), *extra]

    def test_rows_per_arm_and_seed(self, runner, toy_manifest, test_manifest,
                                   synthetic_manifest, config_file, tmp_path):
        result = runner.invoke(main, self.experiment_args(
            toy_manifest, test_manifest, synthetic_manifest, config_file,
            tmp_path))
        assert result.exit_code == 0, result.output
        rows_csv = next(p for p in printed_paths(result)
                        if p.name.endswith("-rows.csv"))
        lines = rows_csv.read_text().splitlines()
        assert lines[0] == "arm,seed,n_real,n_synthetic,auc"
        by_arm = {line.split(",")[0]: line.split(",") for line in lines[1:]}
        assert set(by_arm) == {"no-augmentation", "+syn"}
        assert by_arm["no-augmentation"][3] == "0"
        assert by_arm["+syn"][3] == "6"

    def test_generation_overlap_exits_1(self, runner, toy_manifest, test_manifest,
                                        synthetic_manifest, config_file,
                                        tmp_path):
        # Declaring the test tiles as generator inputs must trip the guard.
        result = runner.invoke(main, self.experiment_args(
            toy_manifest, test_manifest, synthetic_manifest, config_file,
            tmp_path, ["--generation-manifest", str(test_manifest)]))
        assert result.exit_code == 1
        assert "leak" in result.output.lower()

    def test_bad_synthetic_spec_exits_2(self, runner, toy_manifest, test_manifest,
                                        config_file, tmp_path):
        result = runner.invoke(main, [
            "experiment", "--train-manifest", str(toy_manifest),
            "--test-manifest", str(test_manifest), "--synthetic", "nopath",
            "--positive-class", "striped", "--config", str(config_file),
            "--out", str(tmp_path)])
        assert result.exit_code == 2
        assert "name=manifest" in result.output

    def test_bad_seeds_exit_2(self, runner, toy_manifest, test_manifest,
                              synthetic_manifest, config_file, tmp_path):
        result = runner.invoke(main, self.experiment_args(
            toy_manifest, test_manifest, synthetic_manifest, config_file,
            tmp_path, ["--seeds", "a,b"]))
        assert result.exit_code == 2
        assert "seeds" in result.output


class TestServe:
    def test_missing_manifest_exits_3(self, runner, tmp_path):
        result = runner.invoke(main, [
            "serve", "--real-manifest", str(tmp_path / "r.jsonl"),
            "--synthetic-manifest", str(tmp_path / "s.jsonl"),
            "--out", str(tmp_path)])
        assert result.exit_code == 3


def test_version_flag(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert "version" in result.output
