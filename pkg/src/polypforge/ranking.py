"""Confidence-ranked filtration of a target-class pool.

A scorer classifier assigns each candidate tile its target-class
probability; candidates are ranked by descending probability (ties broken
by ascending tile id) and the top ``ceil(alpha * N)`` survive. By default
the scorer never scores tiles it trained on: the pool is split into folds
and each fold is scored by a scorer fitted on the others.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .classifier import ResNetTileClassifier
from .errors import EmptyClassError, MissingArtifactError, UnknownLabelError
from .validation import as_label_array, as_pixel_array, check_fraction, check_is_fitted, check_positive_int

# Rationalizing alpha before the ceiling keeps decimal configs like 0.1
# exact: ceil(0.1 * 10) must be 1, not 2.
_ALPHA_DENOMINATOR_LIMIT = 1_000_000


@dataclass(frozen=True)
class RankedTile:
    tile_id: str
    probability: float


@dataclass
class RankedSet:
    """Tiles of one target class, sorted by the filtration order."""

    entries: list[RankedTile]
    target_class: str
    scorer_hash: str = ""
    in_sample: bool = False
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def __post_init__(self):
        for a, b in zip(self.entries, self.entries[1:]):
            if (-a.probability, a.tile_id) > (-b.probability, b.tile_id):
                raise ValueError(
                    f"ranking order violated between {a.tile_id} and {b.tile_id}")
        for e in self.entries:
            if not 0.0 <= e.probability <= 1.0:
                raise ValueError(f"probability out of range for {e.tile_id}: {e.probability}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def tile_ids(self) -> list[str]:
        return [e.tile_id for e in self.entries]


@dataclass
class FilteredSubset:
    """The kept prefix of a ranking."""

    tile_ids: list[str]
    alpha: float
    total: int
    target_class: str
    scorer_hash: str = ""

    def __len__(self) -> int:
        return len(self.tile_ids)


def selection_count(n: int, alpha: float) -> int:
    """``ceil(alpha * n)`` with alpha read as an exact rational."""
    check_positive_int(n, "n")
    check_fraction(alpha, "alpha")
    exact = Fraction(alpha).limit_denominator(_ALPHA_DENOMINATOR_LIMIT)
    return int(math.ceil(exact * n))


def rank_from_scores(tile_ids: Sequence[str], probabilities: Sequence[float],
                     target_class: str, *, scorer_hash: str = "",
                     in_sample: bool = False) -> RankedSet:
    """Build a ranking from precomputed probabilities."""
    tile_ids = list(tile_ids)
    probs = np.asarray(probabilities, dtype=np.float64)
    if len(tile_ids) != len(probs):
        raise ValueError(f"{len(tile_ids)} ids but {len(probs)} probabilities")
    if len(set(tile_ids)) != len(tile_ids):
        raise ValueError("tile ids must be unique within a ranking")
    order = sorted(range(len(tile_ids)), key=lambda i: (-probs[i], tile_ids[i]))
    entries = [RankedTile(tile_ids[i], float(probs[i])) for i in order]
    return RankedSet(entries=entries, target_class=target_class,
                     scorer_hash=scorer_hash, in_sample=in_sample)


def rank_by_target_probability(scorer: ResNetTileClassifier, tiles,
                               target_class: str) -> RankedSet:
    """Score tiles with a fitted classifier and rank them.

    In-sample by construction: the caller is responsible for any
    train/score separation.
    """
    check_is_fitted(scorer, "model_")
    class_list = [str(c) for c in scorer.classes_]
    if str(target_class) not in class_list:
        raise UnknownLabelError(
            f"target class {target_class!r} not among scorer classes {class_list}")
    X = as_pixel_array(tiles)
    ids = _tile_ids(tiles, len(X))
    probs = scorer.predict_proba(X)[:, class_list.index(str(target_class))]
    return rank_from_scores(ids, probs, str(target_class),
                            scorer_hash=scorer.state_hash(), in_sample=True)


def select_top_alpha(ranking: RankedSet, alpha: float) -> FilteredSubset:
    """Keep the top ``ceil(alpha * N)`` entries of a ranking."""
    if len(ranking) == 0:
        raise EmptyClassError("cannot select from an empty ranking")
    k = selection_count(len(ranking), alpha)
    return FilteredSubset(
        tile_ids=[e.tile_id for e in ranking.entries[:k]],
        alpha=float(alpha),
        total=len(ranking),
        target_class=ranking.target_class,
        scorer_hash=ranking.scorer_hash,
    )


def build_filtered_training_pair(source_tiles, target_tiles, scorer: ResNetTileClassifier,
                                 alpha: float, target_class: str | None = None):
    """Filter the target pool, pass the source domain through untouched.

    Returns ``(source_tiles, kept_target_tiles, audit)`` where the audit
    record pins the scorer checkpoint hash, alpha, and the selected ids.
    Scoring here is in sample (the caller supplies a fitted scorer); use
    :class:`ConfidenceRankFilter` for fold-separated scoring.
    """
    if target_class is None:
        labels = {t.label for t in target_tiles if getattr(t, "label", None) is not None}
        if len(labels) != 1:
            raise UnknownLabelError(
                f"cannot infer target class from labels {sorted(labels)}; pass target_class")
        target_class = labels.pop()
    ranking = rank_by_target_probability(scorer, target_tiles, target_class)
    subset = select_top_alpha(ranking, alpha)
    keep = set(subset.tile_ids)
    ids = _tile_ids(target_tiles, len(ranking))
    kept = [t for t, tid in zip(target_tiles, ids) if tid in keep]
    assert kept, "selection cannot be empty for alpha > 0 and a non-empty pool"
    audit = {
        "scorer_checkpoint_hash": ranking.scorer_hash,
        "alpha": float(alpha),
        "selected_ids": subset.tile_ids,
        "timestamp": ranking.created_at,
        "in_sample": True,
        "target_class": str(target_class),
    }
    return source_tiles, kept, audit


class ConfidenceRankFilter(BaseEstimator):
    """Estimator wrapper: fit ranks a labeled pool, select returns the kept tiles.

    ``fit(X, y)`` receives the whole pool; rows labeled ``target_class``
    are the candidates, everything else serves as scorer negatives. With
    ``folds >= 2`` each candidate is scored by a scorer that never saw it
    during training; ``folds = 1`` scores in sample and flags the audit
    record accordingly.
    """

    def __init__(self, target_class: str | None = None, alpha: float = 1.0,
                 folds: int = 2, scorer_factory: Callable[[int], ResNetTileClassifier] | None = None,
                 seed: int = 0):
        self.target_class = target_class
        self.alpha = alpha
        self.folds = folds
        self.scorer_factory = scorer_factory
        self.seed = seed

    def _make_scorer(self, offset: int) -> ResNetTileClassifier:
        if self.scorer_factory is not None:
            return self.scorer_factory(self.seed + offset)
        # Underfit on purpose: a lightly trained scorer keeps probabilities
        # graded instead of saturating at 1.0, which would reduce the
        # ranking to tie-breaking on ids.
        return ResNetTileClassifier(epochs=2, lr=1e-3, seed=self.seed + offset)

    def fit(self, X, y):
        if self.target_class is None:
            raise UnknownLabelError("target_class must be set before fitting")
        check_fraction(self.alpha, "alpha")
        check_positive_int(self.folds, "folds")
        pixels = as_pixel_array(X)
        labels = as_label_array(y, len(pixels))
        target_mask = labels == self.target_class
        if not target_mask.any():
            raise EmptyClassError(f"no tiles labeled {self.target_class!r} in the pool")
        if target_mask.all():
            raise EmptyClassError(
                "pool contains only the target class; scorer needs negatives")
        ids = np.asarray(_tile_ids(X, len(pixels)))
        target_idx = np.flatnonzero(target_mask)
        probs = np.zeros(len(target_idx), dtype=np.float64)
        rng = np.random.default_rng(self.seed)
        hashes = []
        if self.folds < 2:
            scorer = self._make_scorer(0).fit(pixels, labels)
            probs[:] = _target_probs(scorer, pixels[target_idx], self.target_class)
            hashes.append(scorer.state_hash())
            in_sample = True
        else:
            fold_of = rng.permutation(len(target_idx)) % self.folds
            for fold in range(self.folds):
                held_out = target_idx[fold_of == fold]
                train_rows = np.r_[np.flatnonzero(~target_mask), target_idx[fold_of != fold]]
                if len(held_out) == 0:
                    continue
                scorer = self._make_scorer(fold).fit(pixels[train_rows], labels[train_rows])
                probs[fold_of == fold] = _target_probs(
                    scorer, pixels[held_out], self.target_class)
                hashes.append(scorer.state_hash())
            in_sample = False
        self.ranking_ = rank_from_scores(
            [ids[i] for i in target_idx], probs, str(self.target_class),
            scorer_hash="+".join(hashes), in_sample=in_sample)
        self.subset_ = select_top_alpha(self.ranking_, self.alpha)
        keep = set(self.subset_.tile_ids)
        self.selected_indices_ = [i for i in target_idx if ids[i] in keep]
        self._tiles = X
        return self

    def select(self):
        """The kept tiles (or pixel rows), in original pool order."""
        check_is_fitted(self, "ranking_")
        if isinstance(self._tiles, np.ndarray):
            return self._tiles[self.selected_indices_]
        return [self._tiles[i] for i in self.selected_indices_]


def _target_probs(scorer: ResNetTileClassifier, pixels: np.ndarray,
                  target_class) -> np.ndarray:
    class_list = [str(c) for c in scorer.classes_]
    if str(target_class) not in class_list:
        raise UnknownLabelError(
            f"target class {target_class!r} not among scorer classes {class_list}")
    return scorer.predict_proba(pixels)[:, class_list.index(str(target_class))]


def _tile_ids(X, n: int) -> list[str]:
    if not isinstance(X, np.ndarray) and len(X) and hasattr(X[0], "tile_id"):
        ids = [t.tile_id for t in X]
        if len(set(ids)) != len(ids):
            raise ValueError("tile ids must be unique")
        return ids
    return [f"{i:06d}" for i in range(n)]


def write_ranking(ranking: RankedSet, path_base, *, alpha: float | None = None,
                  subset: FilteredSubset | None = None) -> tuple[Path, Path]:
    """Persist a ranking as ``<base>.csv`` plus a ``<base>.json`` audit record."""
    base = Path(path_base)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = base.with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        fh.write("tile_id,probability\n")
        for entry in ranking.entries:
            fh.write(f"{entry.tile_id},{entry.probability:.12g}\n")
    # No wall-clock fields: reruns with one config must produce identical
    # bytes. The run record alongside the artifact carries the timestamp.
    audit = {
        "scorer_checkpoint_hash": ranking.scorer_hash,
        "alpha": alpha if alpha is not None else (subset.alpha if subset else None),
        "target_class": ranking.target_class,
        "in_sample": ranking.in_sample,
        "total": len(ranking),
    }
    if subset is not None:
        audit["selected_count"] = len(subset)
        audit["selected_ids"] = subset.tile_ids
    json_path = base.with_suffix(".json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(audit, fh, indent=2, sort_keys=True)
    return csv_path, json_path


def load_ranking(path_base) -> tuple[RankedSet, dict]:
    """Read a persisted ranking and its audit record back."""
    base = Path(path_base)
    csv_path = base.with_suffix(".csv")
    json_path = base.with_suffix(".json")
    if not csv_path.is_file() or not json_path.is_file():
        raise MissingArtifactError(f"ranking artifact not found at {base}.csv/.json")
    with open(json_path, encoding="utf-8") as fh:
        audit = json.load(fh)
    ids, probs = [], []
    with open(csv_path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "tile_id,probability":
            raise MissingArtifactError(f"unexpected ranking header in {csv_path}: {header}")
        for line in fh:
            tile_id, _, prob = line.strip().rpartition(",")
            ids.append(tile_id)
            probs.append(float(prob))
    ranking = rank_from_scores(
        ids, probs, audit.get("target_class", ""),
        scorer_hash=audit.get("scorer_checkpoint_hash", ""),
        in_sample=bool(audit.get("in_sample", False)))
    return ranking, audit
