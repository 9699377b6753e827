"""Residual-network tile classifier, ranking metric, and depth sweep.

The classifier wraps the standard 18/34/50-layer residual topologies in an
estimator with the usual ``fit`` / ``predict`` / ``predict_proba`` surface.
Probabilities come out as float64 softmax of the logits; downstream ranking
depends on them staying graded rather than saturating, so nothing here ever
casts back to float32.
"""

from __future__ import annotations

import csv
import time
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torchvision
from sklearn.base import BaseEstimator, ClassifierMixin

from .common import TORCH_SEED_LOCK, state_dict_hash, tiles_to_tensor
from .errors import CheckpointError, ConfigError, EmptyClassError, TrainingDivergedError
from .validation import as_label_array, as_pixel_array, check_is_fitted

SUPPORTED_DEPTHS = (18, 34, 50)

_BACKBONES = {
    18: torchvision.models.resnet18,
    34: torchvision.models.resnet34,
    50: torchvision.models.resnet50,
}


class ResNetTileClassifier(ClassifierMixin, BaseEstimator):
    """Residual-network classifier over uint8 image tiles.

    Parameters mirror the training recipe: SGD with momentum, a single
    step decay of the learning rate, optional horizontal flips during
    training. ``fit`` always reinitializes from ``seed``, so two fits with
    identical inputs produce identical parameters and history.
    """

    def __init__(self, depth: int = 18, epochs: int = 20, batch_size: int = 32,
                 lr: float = 1e-3, momentum: float = 0.9, lr_step: int = 15,
                 lr_gamma: float = 0.1, input_size: int | None = None,
                 flip_augment: bool = True, seed: int = 0):
        self.depth = depth
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.lr_step = lr_step
        self.lr_gamma = lr_gamma
        self.input_size = input_size
        self.flip_augment = flip_augment
        self.seed = seed

    def _check_params(self) -> None:
        if self.depth not in SUPPORTED_DEPTHS:
            raise ConfigError("depth", f"must be one of {SUPPORTED_DEPTHS}, got {self.depth}")
        if self.epochs < 1:
            raise ConfigError("epochs", f"must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be at least 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError("lr", f"must be positive, got {self.lr}")

    def initialize(self, classes: Sequence) -> "ResNetTileClassifier":
        """Build the network for ``classes`` without training.

        Deterministic per seed: the same call yields bit-identical initial
        parameters. ``fit`` starts from exactly this state.
        """
        self._check_params()
        classes = list(classes)
        if len(classes) < 2:
            raise EmptyClassError(f"need at least 2 classes, got {classes}")
        if len(set(classes)) != len(classes):
            raise ValueError(f"duplicate class names: {classes}")
        with TORCH_SEED_LOCK, torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed)
            model = _BACKBONES[self.depth](num_classes=len(classes))
        model.eval()
        self.classes_ = np.asarray(classes)
        self.model_ = model
        self.history_ = []
        return self

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on uint8 tiles ``X`` with per-tile labels ``y``.

        Appends one history row per epoch (loss, accuracy, plus validation
        metrics when a validation set is given). Raises
        :class:`TrainingDivergedError` on a non-finite loss.
        """
        X = as_pixel_array(X)
        y = as_label_array(y, len(X))
        classes, y_idx = np.unique(y, return_inverse=True)
        if len(classes) < 2:
            raise EmptyClassError(
                f"training set covers only {list(classes)}; need at least 2 classes")
        self.initialize(classes)
        model = self.model_
        model.train()
        optimizer = torch.optim.SGD(model.parameters(), lr=self.lr, momentum=self.momentum)
        scheduler = torch.optim.lr_scheduler.StepLR(
            optimizer, step_size=self.lr_step, gamma=self.lr_gamma)
        loss_fn = nn.CrossEntropyLoss()
        inputs = self._resize(tiles_to_tensor(X))
        targets = torch.from_numpy(y_idx).long()
        rng = np.random.default_rng(self.seed)
        n = len(inputs)
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            total, correct = 0.0, 0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                batch = self._crop(inputs[idx], rng)
                if self.flip_augment:
                    flip = rng.random(len(idx)) < 0.5
                    if flip.any():
                        batch = batch.clone()
                        batch[np.flatnonzero(flip)] = torch.flip(
                            batch[np.flatnonzero(flip)], dims=[3])
                optimizer.zero_grad()
                logits = model(batch)
                loss = loss_fn(logits, targets[idx])
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite classifier loss at epoch {epoch + 1}",
                        epoch=epoch + 1)
                loss.backward()
                optimizer.step()
                total += loss.item() * len(idx)
                correct += int((logits.argmax(1) == targets[idx]).sum())
            scheduler.step()
            row = {"epoch": epoch + 1, "train_loss": total / n, "train_acc": correct / n}
            if X_val is not None:
                row.update(self._validate(X_val, y_val))
                model.train()
            self.history_.append(row)
        model.eval()
        return self

    def _validate(self, X_val, y_val) -> dict:
        X_val = as_pixel_array(X_val)
        y_val = as_label_array(y_val, len(X_val))
        proba = self.predict_proba(X_val)
        pred = self.classes_[np.argmax(proba, axis=1)]
        with torch.no_grad():
            self.model_.eval()
            logits = self.model_(self._prepare(X_val))
            class_index = {c: i for i, c in enumerate(self.classes_)}
            target = torch.tensor([class_index[v] for v in y_val])
            loss = nn.functional.cross_entropy(logits, target).item()
        return {"val_loss": loss, "val_acc": float(np.mean(pred == y_val))}

    def _prepare(self, X: np.ndarray) -> torch.Tensor:
        """Eval-side preprocessing: resize shorter side, then center crop."""
        return self._crop(self._resize(tiles_to_tensor(X)), rng=None)

    def _resize(self, batch: torch.Tensor) -> torch.Tensor:
        # Variable-size crops: shorter side scaled to 8/7 of the input size
        # (256 for 224) so the subsequent crop has positional slack.
        if self.input_size is None or batch.shape[-2:] == (self.input_size, self.input_size):
            return batch
        return _resize_shorter_side(batch, round(self.input_size * 8 / 7))

    def _crop(self, batch: torch.Tensor, rng: np.random.Generator | None) -> torch.Tensor:
        """Random crop when an rng is given (training), else center crop."""
        if self.input_size is None or batch.shape[-2:] == (self.input_size, self.input_size):
            return batch
        h, w = batch.shape[-2:]
        if rng is None:
            return _center_crop(batch, self.input_size)
        out = torch.empty(batch.shape[0], 3, self.input_size, self.input_size,
                          dtype=batch.dtype)
        for i in range(batch.shape[0]):
            top = int(rng.integers(0, h - self.input_size + 1))
            left = int(rng.integers(0, w - self.input_size + 1))
            out[i] = batch[i, :, top:top + self.input_size, left:left + self.input_size]
        return out

    def predict_proba(self, X) -> np.ndarray:
        """Float64 class probabilities; each row sums to 1."""
        check_is_fitted(self, "model_")
        X = as_pixel_array(X)
        inputs = self._prepare(X)
        self.model_.eval()
        chunks = []
        with torch.no_grad():
            for start in range(0, len(inputs), self.batch_size):
                logits = self.model_(inputs[start:start + self.batch_size]).double()
                chunks.append(torch.softmax(logits, dim=1).numpy())
        return np.concatenate(chunks, axis=0)

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def parameter_count(self) -> int:
        check_is_fitted(self, "model_")
        return sum(p.numel() for p in self.model_.parameters())

    def state_hash(self) -> str:
        check_is_fitted(self, "model_")
        return state_dict_hash(self.model_.state_dict())


def _resize_shorter_side(batch: torch.Tensor, size: int) -> torch.Tensor:
    h, w = batch.shape[-2:]
    scale = size / min(h, w)
    new_h, new_w = max(size, round(h * scale)), max(size, round(w * scale))
    return nn.functional.interpolate(
        batch, size=(new_h, new_w), mode="bilinear", align_corners=False)


def _center_crop(batch: torch.Tensor, size: int) -> torch.Tensor:
    h, w = batch.shape[-2:]
    top, left = (h - size) // 2, (w - size) // 2
    return batch[..., top:top + size, left:left + size]


def mann_whitney_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum identity.

    Ties between a positive and a negative score count half. Agrees exactly
    with the brute-force pairwise definition.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be 1-D and equally long")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EmptyClassError(
            f"AUC needs both classes, got {n_pos} positive / {n_neg} negative")
    ranks = _average_ranks(scores)
    rank_sum = float(ranks[labels].sum())
    numerator = rank_sum - n_pos * (n_pos + 1) / 2.0
    return numerator / float(n_pos * n_neg)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_values = values[order]
    ranks = np.arange(1, len(values) + 1, dtype=np.float64)
    boundaries = np.flatnonzero(
        np.r_[True, sorted_values[1:] != sorted_values[:-1], True])
    for lo, hi in zip(boundaries[:-1], boundaries[1:]):
        if hi - lo > 1:
            ranks[lo:hi] = ranks[lo:hi].mean()
    out = np.empty_like(ranks)
    out[order] = ranks
    return out


def evaluate_auc(classifier: ResNetTileClassifier, X, y, positive_class) -> float:
    """AUC of the classifier's positive-class probability on a labeled set."""
    check_is_fitted(classifier, "model_")
    y = np.asarray(y)
    class_list = list(classifier.classes_)
    if positive_class not in class_list:
        raise ValueError(f"positive class {positive_class!r} not in {class_list}")
    scores = classifier.predict_proba(X)[:, class_list.index(positive_class)]
    return mann_whitney_auc(scores, y == positive_class)


def depth_sweep(depths: Sequence[int], X_train, y_train, X_val, y_val,
                **classifier_kwargs) -> list[dict]:
    """Train one classifier per depth and record validation accuracy.

    Returns one row per depth: depth, val_accuracy, param_count, seconds.
    """
    rows = []
    for depth in depths:
        clf = ResNetTileClassifier(depth=depth, **classifier_kwargs)
        start = time.perf_counter()
        clf.fit(X_train, y_train)
        seconds = time.perf_counter() - start
        pred = clf.predict(X_val)
        rows.append({
            "depth": depth,
            "val_accuracy": float(np.mean(pred == np.asarray(y_val))),
            "param_count": clf.parameter_count(),
            "seconds": seconds,
        })
    return rows


def write_sweep_csv(rows: Sequence[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["depth", "val_accuracy", "param_count", "seconds"])
        for row in rows:
            writer.writerow([row["depth"], f"{row['val_accuracy']:.6f}",
                             row["param_count"], f"{row['seconds']:.3f}"])
    return path


CLASSIFIER_FORMAT = "polypforge-classifier"


def save_classifier(classifier: ResNetTileClassifier, path) -> Path:
    """Persist architecture, parameters, classes, and history with a content hash."""
    check_is_fitted(classifier, "model_")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = classifier.model_.state_dict()
    payload = {
        "format": CLASSIFIER_FORMAT,
        "version": 1,
        "params": classifier.get_params(),
        "classes": [str(c) for c in classifier.classes_],
        "state": state,
        "history": [
            {k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
            for row in classifier.history_
        ],
        "content_hash": state_dict_hash(state),
    }
    torch.save(payload, path)
    return path


def load_classifier(path) -> ResNetTileClassifier:
    """Load a classifier checkpoint; verifies format tag and content hash."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CLASSIFIER_FORMAT:
        raise CheckpointError(f"{path} is not a classifier checkpoint")
    if state_dict_hash(payload["state"]) != payload["content_hash"]:
        raise CheckpointError(f"content hash mismatch in {path}")
    clf = ResNetTileClassifier(**payload["params"])
    clf.initialize(payload["classes"])
    clf.model_.load_state_dict(payload["state"])
    clf.model_.eval()
    clf.history_ = payload["history"]
    return clf
