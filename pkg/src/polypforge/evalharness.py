"""Quantitative evaluation: judge-based quality metric, alpha ablation,
and augmentation AUC experiments.

The judge used for ``target_class_fraction`` must be trained on real data
only, on a fold disjoint from anything the generator saw; callers own that
separation and the audit records make it checkable after the fact.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .classifier import ResNetTileClassifier, evaluate_auc
from .cyclegan import CycleGanTranslator, translate_tiles
from .errors import (
    ConfigError,
    EmptyClassError,
    LeakageError,
    TrainingDivergedError,
    UnknownLabelError,
)
from .manifest import ImageTile
from .ranking import ConfidenceRankFilter
from .validation import as_pixel_array, check_is_fitted


def classify_tiles(judge: ResNetTileClassifier, tiles) -> np.ndarray:
    """Argmax labels the judge assigns to each tile."""
    check_is_fitted(judge, "model_")
    return judge.predict(as_pixel_array(tiles))


def target_class_fraction(judge: ResNetTileClassifier, synthetic, target_class) -> float:
    """Fraction of tiles the judge assigns to ``target_class``."""
    if len(synthetic) == 0:
        raise EmptyClassError("cannot judge an empty synthetic set")
    if str(target_class) not in [str(c) for c in judge.classes_]:
        raise ValueError(
            f"target class {target_class!r} unknown to the judge "
            f"({[str(c) for c in judge.classes_]})")
    predictions = classify_tiles(judge, synthetic)
    return float(np.mean(predictions.astype(str) == str(target_class)))


def assert_no_leakage(test_ids, lineage_ids) -> None:
    """Fail loudly when any evaluation tile id appears in a training lineage."""
    overlap = set(test_ids) & set(lineage_ids)
    if overlap:
        raise LeakageError(overlap)


@dataclass
class AblationCell:
    """One grid point: a target class filtered at one alpha."""

    target_class: str
    alpha: float
    generated_count: int = 0
    target_class_fraction: float | None = None
    scorer_hash: str = ""
    subset_ids: list[str] = field(default_factory=list)
    translator_hash: str = ""
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "target_class": self.target_class,
            "alpha": self.alpha,
            "generated_count": self.generated_count,
            "target_class_fraction": self.target_class_fraction,
            "scorer_hash": self.scorer_hash,
            "subset_ids": self.subset_ids,
            "translator_hash": self.translator_hash,
            "error": self.error,
        }


@dataclass
class AblationReport:
    """Target-class-fraction grid over (class, alpha) cells."""

    cells: list[AblationCell]
    judge_hash: str = ""

    def to_csv_bytes(self) -> bytes:
        lines = ["target_class,alpha,generated_count,target_class_fraction,error"]
        for cell in self.cells:
            fraction = "" if cell.target_class_fraction is None else f"{cell.target_class_fraction:.6f}"
            error = "" if cell.error is None else cell.error.replace(",", ";")
            lines.append(f"{cell.target_class},{cell.alpha:.6g},{cell.generated_count},{fraction},{error}")
        return ("\n".join(lines) + "\n").encode("utf-8")

    def to_table_csv_bytes(self) -> bytes:
        """Wide layout: one row per class, one percent column per alpha."""
        alphas = sorted({cell.alpha for cell in self.cells}, reverse=True)
        classes = sorted({cell.target_class for cell in self.cells})
        by_key = {(c.target_class, c.alpha): c for c in self.cells}
        lines = ["target_class," + ",".join(f"alpha={a:.6g}" for a in alphas)]
        for name in classes:
            row = [name]
            for alpha in alphas:
                cell = by_key.get((name, alpha))
                if cell is None or cell.target_class_fraction is None:
                    row.append("")
                else:
                    row.append(f"{100 * cell.target_class_fraction:.1f}")
            lines.append(",".join(row))
        return ("\n".join(lines) + "\n").encode("utf-8")

    def to_json(self) -> dict:
        return {"judge_hash": self.judge_hash, "cells": [c.to_json() for c in self.cells]}

    @classmethod
    def from_json(cls, payload: dict) -> "AblationReport":
        cells = [AblationCell(**cell) for cell in payload["cells"]]
        return cls(cells=cells, judge_hash=payload.get("judge_hash", ""))

    def write(self, out_dir, experiment_id: str, config_hash: str) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = f"{experiment_id}-{config_hash[:12]}"
        paths = {
            "cells_csv": out_dir / f"{stem}-cells.csv",
            "table_csv": out_dir / f"{stem}-table.csv",
            "report_json": out_dir / f"{stem}-report.json",
        }
        paths["cells_csv"].write_bytes(self.to_csv_bytes())
        paths["table_csv"].write_bytes(self.to_table_csv_bytes())
        with open(paths["report_json"], "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
        return paths


def _map_jobs(fn, specs, jobs: int):
    """Apply ``fn`` over ``specs`` preserving order, threaded when jobs > 1."""
    if jobs <= 1:
        return [fn(spec) for spec in specs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, specs))


def run_alpha_ablation(alphas: Sequence[float], target_classes: Sequence[str],
                       source_tiles: Sequence[ImageTile],
                       target_pools: Mapping[str, Sequence[ImageTile]],
                       judge: ResNetTileClassifier,
                       translator_factory: Callable[[int], CycleGanTranslator],
                       scorer_factory: Callable[[int], ResNetTileClassifier] | None = None,
                       folds: int = 2, seed: int = 0, jobs: int = 1) -> AblationReport:
    """Fill the (class, alpha) grid: filter, train translator, translate, judge.

    A failing cell is recorded with its error and the grid continues; the
    audit fields per cell pin the scorer, the selected subset, and the
    translator that produced the judged images. Cells are independent, so
    ``jobs`` may run several at once without changing any result.
    """
    check_is_fitted(judge, "model_")

    def run_cell(spec) -> AblationCell:
        target_class, alpha = spec
        pool = list(target_pools[target_class])
        cell = AblationCell(target_class=str(target_class), alpha=float(alpha))
        try:
            filt = ConfidenceRankFilter(
                target_class=str(target_class), alpha=float(alpha), folds=folds,
                scorer_factory=scorer_factory, seed=seed)
            labels = ([t.label for t in source_tiles] + [t.label for t in pool])
            filt.fit(list(source_tiles) + pool, np.asarray(labels))
            kept = [t for t in pool if t.tile_id in set(filt.subset_.tile_ids)]
            cell.scorer_hash = filt.ranking_.scorer_hash
            cell.subset_ids = list(filt.subset_.tile_ids)
            translator = translator_factory(seed)
            translator.fit(as_pixel_array(source_tiles), as_pixel_array(kept))
            cell.translator_hash = translator.state_hash()
            synthetic = translate_tiles(translator, list(source_tiles), str(target_class))
            cell.generated_count = len(synthetic)
            cell.target_class_fraction = target_class_fraction(
                judge, synthetic, target_class)
        except (TrainingDivergedError, EmptyClassError, UnknownLabelError,
                ConfigError, ValueError) as exc:
            cell.error = f"{type(exc).__name__}: {exc}"
        return cell

    specs = [(tc, a) for tc in target_classes for a in alphas]
    cells = _map_jobs(run_cell, specs, jobs)
    return AblationReport(cells=cells, judge_hash=judge.state_hash())


@dataclass
class ArmResult:
    arm: str
    seed: int
    n_real: int
    n_synthetic: int
    auc: float

    def to_json(self) -> dict:
        return {"arm": self.arm, "seed": self.seed, "n_real": self.n_real,
                "n_synthetic": self.n_synthetic, "auc": self.auc}


@dataclass
class AugmentationReport:
    """Per-(arm, seed) AUC rows plus per-arm aggregates."""

    rows: list[ArmResult]
    test_ids: list[str] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def summary(self) -> dict[str, dict[str, float]]:
        by_arm: dict[str, list[float]] = {}
        for row in self.rows:
            by_arm.setdefault(row.arm, []).append(row.auc)
        return {
            arm: {"median": float(np.median(v)), "min": float(np.min(v)),
                  "max": float(np.max(v)), "n_seeds": len(v)}
            for arm, v in by_arm.items()
        }

    def to_csv_bytes(self) -> bytes:
        lines = ["arm,seed,n_real,n_synthetic,auc"]
        for row in self.rows:
            lines.append(f"{row.arm},{row.seed},{row.n_real},{row.n_synthetic},{row.auc:.6f}")
        return ("\n".join(lines) + "\n").encode("utf-8")

    def to_json(self) -> dict:
        return {
            "rows": [row.to_json() for row in self.rows],
            "summary": self.summary(),
            "test_ids": self.test_ids,
            "notes": self.notes,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "AugmentationReport":
        rows = [ArmResult(**row) for row in payload["rows"]]
        return cls(rows=rows, test_ids=payload.get("test_ids", []),
                   notes=payload.get("notes", {}))

    def write(self, out_dir, experiment_id: str, config_hash: str) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = f"{experiment_id}-{config_hash[:12]}"
        paths = {
            "rows_csv": out_dir / f"{stem}-rows.csv",
            "report_json": out_dir / f"{stem}-report.json",
        }
        paths["rows_csv"].write_bytes(self.to_csv_bytes())
        with open(paths["report_json"], "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
        return paths


def _lineage_ids(tiles: Sequence[ImageTile]) -> set[str]:
    ids = set()
    for tile in tiles:
        ids.add(tile.tile_id)
        if tile.source_ref:
            ids.add(tile.source_ref)
    return ids


def _run_arms(arm_compositions: Mapping[str, Sequence[ImageTile]],
              test_tiles: Sequence[ImageTile], positive_class: str,
              classifier_factory: Callable[[int], ResNetTileClassifier],
              seeds: Sequence[int], extra_lineage_ids: Sequence[str],
              notes: dict, jobs: int = 1) -> AugmentationReport:
    test_ids = [t.tile_id for t in test_tiles]
    if len(set(test_ids)) != len(test_ids):
        raise ValueError("duplicate test tile ids")
    lineage = set(extra_lineage_ids)
    for tiles in arm_compositions.values():
        lineage |= _lineage_ids(tiles)
    assert_no_leakage(test_ids, lineage)
    X_test = as_pixel_array(test_tiles)
    y_test = np.asarray([t.label for t in test_tiles])
    prepared = {}
    for arm, tiles in arm_compositions.items():
        X = as_pixel_array(tiles)
        y = np.asarray([t.label for t in tiles])
        n_real = sum(1 for t in tiles if t.provenance == "real")
        prepared[arm] = (X, y, n_real, len(tiles) - n_real)

    def run_one(spec) -> ArmResult:
        arm, s = spec
        X, y, n_real, n_synthetic = prepared[arm]
        clf = classifier_factory(s)
        clf.fit(X, y)
        auc = evaluate_auc(clf, X_test, y_test, positive_class)
        return ArmResult(arm=arm, seed=int(s), n_real=n_real,
                         n_synthetic=n_synthetic, auc=auc)

    specs = [(arm, s) for arm in arm_compositions for s in seeds]
    rows = _map_jobs(run_one, specs, jobs)
    return AugmentationReport(rows=rows, test_ids=test_ids, notes=notes)


def run_augmentation_experiment(real_train: Sequence[ImageTile],
                                synthetic_sets: Mapping[str, Sequence[ImageTile]],
                                test_tiles: Sequence[ImageTile], positive_class: str,
                                classifier_factory: Callable[[int], ResNetTileClassifier],
                                seeds: Sequence[int] = (0, 1, 2),
                                generation_ids: Sequence[str] = (),
                                jobs: int = 1) -> AugmentationReport:
    """Train one classifier per (arm, seed) and score AUC on a shared test set.

    Arms: ``no-augmentation`` on the real composition alone, plus one
    ``+<name>`` arm per synthetic set appended to it. ``generation_ids``
    should list every tile id any generator trained on, so the leakage
    guard covers the full lineage. All arms share the test set and the
    classifier factory; only the training composition differs.
    """
    arms: dict[str, Sequence[ImageTile]] = {"no-augmentation": list(real_train)}
    for name, tiles in synthetic_sets.items():
        arms[f"+{name}"] = list(real_train) + list(tiles)
    notes = {"experiment": "augmentation", "positive_class": str(positive_class),
             "seeds": [int(s) for s in seeds],
             "synthetic_ratio": {name: len(tiles) for name, tiles in synthetic_sets.items()}}
    return _run_arms(arms, test_tiles, positive_class, classifier_factory,
                     seeds, generation_ids, notes, jobs=jobs)


def run_synthetic_only_experiment(synthetic_sets: Mapping[str, Sequence[ImageTile]],
                                  real_negatives: Sequence[ImageTile],
                                  test_tiles: Sequence[ImageTile], positive_class: str,
                                  classifier_factory: Callable[[int], ResNetTileClassifier],
                                  seeds: Sequence[int] = (0, 1, 2),
                                  generation_ids: Sequence[str] = (),
                                  jobs: int = 1) -> AugmentationReport:
    """As the augmentation experiment, but the minority class is entirely synthetic."""
    arms = {
        f"synthetic-only-{name}": list(real_negatives) + list(tiles)
        for name, tiles in synthetic_sets.items()
    }
    notes = {"experiment": "synthetic-only", "positive_class": str(positive_class),
             "seeds": [int(s) for s in seeds]}
    return _run_arms(arms, test_tiles, positive_class, classifier_factory,
                     seeds, generation_ids, notes, jobs=jobs)
