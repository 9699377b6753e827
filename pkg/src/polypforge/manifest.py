"""Dataset manifests and tiling.

A dataset is described by a UTF-8 JSONL manifest: one object per line with
required keys ``path``, ``label``, ``split``, ``provenance`` and optional
``source_ref``, ``generator_ref``, ``theta``. Paths are resolved relative
to the manifest file's directory unless absolute.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .common import check_rng
from .errors import (
    DanglingReferenceError,
    EmptyManifestError,
    ManifestParseError,
    SplitUnderflowError,
    UnknownLabelError,
)

REQUIRED_KEYS = ("path", "label", "split", "provenance")
OPTIONAL_KEYS = ("source_ref", "generator_ref", "theta")
PROVENANCES = ("real", "synthetic")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ClassLabel:
    """A named class; the flag marks the clinically adenomatous ones."""

    name: str
    is_adenomatous: bool = False


# Reference label set for colonic polyp tiles.
REFERENCE_LABELS = (
    ClassLabel("HP", False),
    ClassLabel("NO", False),
    ClassLabel("TVA", True),
    ClassLabel("TA", True),
    ClassLabel("SSA", True),
)


@dataclass(frozen=True)
class ManifestEntry:
    """One image reference in a dataset manifest."""

    path: str
    label: str
    split: str
    provenance: str = "real"
    source_ref: str | None = None
    generator_ref: str | None = None
    theta: float | None = None

    def to_json(self) -> dict:
        record = {
            "path": self.path,
            "label": self.label,
            "split": self.split,
            "provenance": self.provenance,
        }
        for key in OPTIONAL_KEYS:
            value = getattr(self, key)
            if value is not None:
                record[key] = value
        return record


@dataclass
class ImageTile:
    """A decoded tile: pixel payload plus the lineage we track for audits."""

    tile_id: str
    pixels: np.ndarray
    label: str | None = None
    provenance: str = "real"
    source_ref: str | None = None
    generator_ref: str | None = None
    theta: float | None = None

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


@dataclass
class DatasetManifest:
    """An ordered collection of manifest entries with a fixed label set."""

    entries: list[ManifestEntry] = field(default_factory=list)
    labels: tuple[str, ...] = ()
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def subset(self, *, split: str | None = None, label: str | None = None,
               provenance: str | None = None) -> "DatasetManifest":
        """Filtered view; label set and root carry over unchanged."""
        kept = [
            e for e in self.entries
            if (split is None or e.split == split)
            and (label is None or e.label == label)
            and (provenance is None or e.provenance == provenance)
        ]
        return DatasetManifest(entries=kept, labels=self.labels, root=self.root)

    def resolve(self, entry: ManifestEntry) -> Path:
        path = Path(entry.path)
        if path.is_absolute() or self.root is None:
            return path
        return self.root / path


def load_manifest(path, label_set: Sequence[str] | None = None,
                  check_files: bool = True) -> DatasetManifest:
    """Parse a JSONL manifest.

    ``label_set`` restricts admissible labels; when omitted the set is the
    sorted distinct labels found in the file. ``check_files`` verifies every
    referenced image exists. An empty file yields an empty manifest.
    """
    path = Path(path)
    if not path.is_file():
        raise DanglingReferenceError(f"manifest not found: {path}")
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise ManifestParseError(path, line_no, "line is not a JSON object")
            missing = [k for k in REQUIRED_KEYS if k not in record]
            if missing:
                raise ManifestParseError(path, line_no, f"missing keys: {', '.join(missing)}")
            if record["provenance"] not in PROVENANCES:
                raise ManifestParseError(
                    path, line_no, f"provenance must be one of {PROVENANCES}")
            if record["split"] not in SPLITS:
                raise ManifestParseError(path, line_no, f"split must be one of {SPLITS}")
            if record["provenance"] == "synthetic" and not record.get("generator_ref"):
                raise ManifestParseError(
                    path, line_no, "synthetic entry without generator_ref")
            if record["provenance"] == "real" and record.get("generator_ref"):
                raise ManifestParseError(
                    path, line_no, "real entry must not carry generator_ref")
            theta = record.get("theta")
            if theta is not None:
                theta = float(theta)
                if not 0.0 <= theta <= 1.0:
                    raise ManifestParseError(path, line_no, "theta outside [0, 1]")
            entries.append(ManifestEntry(
                path=str(record["path"]),
                label=str(record["label"]),
                split=record["split"],
                provenance=record["provenance"],
                source_ref=record.get("source_ref"),
                generator_ref=record.get("generator_ref"),
                theta=theta,
            ))
    if label_set is None:
        labels = tuple(sorted({e.label for e in entries}))
    else:
        labels = tuple(label_set)
        allowed = set(labels)
        for e in entries:
            if e.label not in allowed:
                raise UnknownLabelError(
                    f"label '{e.label}' for {e.path} not in configured set {sorted(allowed)}")
    manifest = DatasetManifest(entries=entries, labels=labels, root=path.parent)
    if check_files:
        for e in entries:
            resolved = manifest.resolve(e)
            if not resolved.is_file():
                raise DanglingReferenceError(f"image not found: {resolved} (entry {e.path})")
    return manifest


def write_manifest(manifest: DatasetManifest, path) -> Path:
    """Write entries as JSONL. Round-trips through :func:`load_manifest`.

    Relative entry paths are rewritten relative to the new manifest's
    directory, so a manifest stays valid wherever it is written.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for entry in manifest.entries:
            record = entry.to_json()
            if manifest.root is not None and not Path(entry.path).is_absolute():
                record["path"] = os.path.relpath(manifest.resolve(entry), start=path.parent)
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def load_tiles(manifest: DatasetManifest, *, split: str | None = None,
               label: str | None = None) -> list[ImageTile]:
    """Decode the (optionally filtered) manifest into in-memory tiles."""
    selected = manifest.subset(split=split, label=label)
    tiles = []
    for entry in selected.entries:
        resolved = manifest.resolve(entry)
        if not resolved.is_file():
            raise DanglingReferenceError(f"image not found: {resolved}")
        with Image.open(resolved) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        tiles.append(ImageTile(
            tile_id=entry.path,
            pixels=pixels,
            label=entry.label,
            provenance=entry.provenance,
            source_ref=entry.source_ref,
            generator_ref=entry.generator_ref,
            theta=entry.theta,
        ))
    return tiles


def tile_grid_shape(height: int, width: int, tile_size: int, stride: int) -> tuple[int, int]:
    """Rows and columns of the full-tile grid; (0, 0) when the image is too small."""
    if tile_size < 1 or stride < 1:
        raise ValueError("tile_size and stride must be positive")
    if height < tile_size or width < tile_size:
        return (0, 0)
    rows = (height - tile_size) // stride + 1
    cols = (width - tile_size) // stride + 1
    return (rows, cols)


def tile_region(image: np.ndarray, tile_size: int, stride: int,
                region_id: str = "region") -> list[ImageTile]:
    """Cut an image into fully contained tiles, row-major.

    Images smaller than ``tile_size`` in either dimension produce no tiles
    and a warning rather than an error.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {image.shape}")
    height, width = image.shape[:2]
    rows, cols = tile_grid_shape(height, width, tile_size, stride)
    if rows == 0:
        warnings.warn(
            f"region '{region_id}' ({height}x{width}) smaller than tile size {tile_size}; "
            "no tiles produced", stacklevel=2)
        return []
    tiles = []
    for r in range(rows):
        for c in range(cols):
            y, x = r * stride, c * stride
            tiles.append(ImageTile(
                tile_id=f"{region_id}/r{r:03d}c{c:03d}",
                pixels=image[y:y + tile_size, x:x + tile_size].copy(),
            ))
    return tiles


def class_distribution(manifest: DatasetManifest) -> dict[str, tuple[int, float]]:
    """Per-label ``(count, fraction)`` over all entries."""
    if len(manifest) == 0:
        raise EmptyManifestError("cannot compute class distribution of an empty manifest")
    counts: dict[str, int] = {label: 0 for label in manifest.labels}
    for entry in manifest.entries:
        counts[entry.label] = counts.get(entry.label, 0) + 1
    total = len(manifest)
    return {label: (n, n / total) for label, n in counts.items()}


def split_dataset(manifest: DatasetManifest, fractions: Mapping[str, float],
                  seed: int = 0) -> DatasetManifest:
    """Assign entries to splits, stratified per label and keyed on source image.

    Entries sharing a source image id (``source_ref``, falling back to the
    entry's own path) always land in the same split, so crops of one image
    never straddle train and test. Fractions must be nonnegative and sum
    to 1 within 1e-9. With one entry per source the per-label counts follow
    largest-remainder rounding and stay within one entry of
    ``fraction * n``. Deterministic for (manifest, fractions, seed).
    """
    names = list(fractions)
    values = [float(fractions[name]) for name in names]
    for name, value in zip(names, values):
        if name not in SPLITS:
            raise ValueError(f"unknown split name '{name}'")
        if value < 0:
            raise ValueError(f"fraction for split '{name}' is negative")
    if abs(sum(values) - 1.0) > 1e-9:
        raise ValueError(f"split fractions sum to {sum(values)}, expected 1")
    if len(manifest) == 0:
        raise EmptyManifestError("cannot split an empty manifest")

    rng = check_rng(seed)
    nonzero = [name for name, value in zip(names, values) if value > 0]
    assignment: dict[str, str] = {}
    by_label: dict[str, list[ManifestEntry]] = {}
    for entry in manifest.entries:
        by_label.setdefault(entry.label, []).append(entry)
    for label in sorted(by_label):
        entries = by_label[label]
        groups: dict[str, list[ManifestEntry]] = {}
        for entry in entries:
            groups.setdefault(entry.source_ref or entry.path, []).append(entry)
        if len(groups) < len(nonzero):
            raise SplitUnderflowError(
                f"label '{label}' has {len(groups)} source images but "
                f"{len(nonzero)} splits want entries")
        quotas = dict(zip(names, _largest_remainder([v * len(entries) for v in values])))
        filled = dict.fromkeys(names, 0)
        keys = sorted(groups)
        for gi in rng.permutation(len(keys)):
            bucket = groups[keys[gi]]
            # Whole group goes wherever the remaining deficit is largest.
            target = max(nonzero, key=lambda s: quotas[s] - filled[s])
            for entry in bucket:
                assignment[entry.path] = target
            filled[target] += len(bucket)
        for name in nonzero:
            if filled[name] == 0:
                raise SplitUnderflowError(
                    f"split '{name}' gets no entries for label '{label}' "
                    f"({len(entries)} available)")
    entries = [replace(e, split=assignment[e.path]) for e in manifest.entries]
    return DatasetManifest(entries=entries, labels=manifest.labels, root=manifest.root)


def _largest_remainder(targets: Iterable[float]) -> list[int]:
    targets = list(targets)
    floors = [math.floor(t) for t in targets]
    shortfall = round(sum(targets)) - sum(floors)
    remainders = sorted(
        range(len(targets)), key=lambda i: (targets[i] - floors[i], -i), reverse=True)
    for i in remainders[:shortfall]:
        floors[i] += 1
    return floors


def save_tiles(tiles: Sequence[ImageTile], out_dir, *, split: str = "train") -> DatasetManifest:
    """Write tiles as PNGs under ``out_dir`` and build the matching manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for tile in tiles:
        rel = Path(f"{tile.tile_id}.png")
        target = out_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(tile.pixels).save(target, format="PNG")
        entries.append(ManifestEntry(
            path=str(rel),
            label=tile.label if tile.label is not None else "unlabeled",
            split=split,
            provenance=tile.provenance,
            source_ref=tile.source_ref,
            generator_ref=tile.generator_ref,
            theta=tile.theta,
        ))
    labels = tuple(sorted({e.label for e in entries}))
    return DatasetManifest(entries=entries, labels=labels, root=out_dir)
