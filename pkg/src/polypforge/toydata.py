"""Parametric toy tile generator with a known classification rule.

Tiles show a pink/purple field with one of three motifs. A severity knob
``theta`` in [0, 1] scales the motif strength:

* ``plain``   - smooth blotches only; theta scales their contrast.
* ``striped`` - vertical stripes at 3 to 7 cycles per tile; theta scales
  stripe amplitude, so theta = 0 is indistinguishable from plain.
* ``ringed``  - concentric rings in the same frequency band.

The background field is band limited to at most 2 cycles per tile while
motifs live at 3 or more, so a fixed spectral rule (:func:`rule_classify`)
separates the classes without any learning. That rule is the ground-truth
oracle the rest of the test suite leans on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .common import check_rng
from .errors import ToySpecError
from .manifest import DatasetManifest, ImageTile, save_tiles, write_manifest

MOTIFS = ("plain", "striped", "ringed")

# Palette endpoints in unit RGB, loosely stain-like.
BASE = np.array([0.91, 0.76, 0.84])
ACCENT = np.array([0.52, 0.34, 0.62])
INK = np.array([0.30, 0.16, 0.40])

# Motif frequencies (cycles per tile). The background stays at <= BACKGROUND_MAX_FREQ.
BACKGROUND_MAX_FREQ = 2
MOTIF_FREQS = (3, 4, 5, 6, 7)

# Rule thresholds in unit-luminance amplitude; calibrated once on rendered
# grids and frozen (see tests for the separability check). Strong plain
# blotches leak a little into the radial filter, so RING_MIN sits well above
# that leakage and the rule expects ringed tiles at theta >= 0.3.
STRIPE_MIN = 0.015
RING_MIN = 0.045
ANISOTROPY = 2.0


@dataclass(frozen=True)
class ToyClassSpec:
    """One class in a toy domain: a motif, a count, and a theta range."""

    name: str
    motif: str
    count: int
    theta_range: tuple[float, float] = (0.3, 1.0)

    def validate(self, prefix: str) -> None:
        if self.motif not in MOTIFS:
            raise ToySpecError(f"{prefix}.motif", f"unknown motif '{self.motif}', expected one of {MOTIFS}")
        if self.count < 1:
            raise ToySpecError(f"{prefix}.count", "must be at least 1")
        lo, hi = self.theta_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ToySpecError(f"{prefix}.theta_range", f"must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})")


@dataclass(frozen=True)
class ToyDomainSpec:
    """Full description of a generated toy dataset."""

    classes: tuple[ToyClassSpec, ...]
    image_size: int = 32
    seed: int = 0
    noise_sigma: float = 0.0

    def validate(self) -> None:
        if not self.classes:
            raise ToySpecError("classes", "at least one class is required")
        if self.image_size < 16:
            raise ToySpecError("image_size", "must be at least 16")
        if self.noise_sigma < 0:
            raise ToySpecError("noise_sigma", "must be nonnegative")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ToySpecError("classes", f"duplicate class names in {names}")
        # classify_by_rule maps motif -> class name, so motifs must be unique.
        motifs = [c.motif for c in self.classes]
        if len(set(motifs)) != len(motifs):
            raise ToySpecError("classes", f"duplicate motifs in {motifs}")
        for i, cls in enumerate(self.classes):
            cls.validate(f"classes[{i}]")

    @classmethod
    def from_dict(cls, payload: dict) -> "ToyDomainSpec":
        extra = set(payload) - {"classes", "image_size", "seed", "noise_sigma"}
        if extra:
            raise ToySpecError("spec", f"unknown keys {sorted(extra)}")
        for i, c in enumerate(payload.get("classes", ())):
            if isinstance(c, dict):
                bad = set(c) - {"name", "motif", "count", "theta_range"}
                if bad:
                    raise ToySpecError(f"classes[{i}]", f"unknown keys {sorted(bad)}")
        try:
            classes = tuple(
                ToyClassSpec(
                    name=str(c["name"]),
                    motif=str(c["motif"]),
                    count=int(c["count"]),
                    theta_range=tuple(float(v) for v in c.get("theta_range", (0.3, 1.0))),
                )
                for c in payload["classes"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ToySpecError("classes", f"malformed class list: {exc}") from exc
        spec = cls(
            classes=classes,
            image_size=int(payload.get("image_size", 32)),
            seed=int(payload.get("seed", 0)),
            noise_sigma=float(payload.get("noise_sigma", 0.0)),
        )
        spec.validate()
        return spec

    @classmethod
    def from_json(cls, path) -> "ToyDomainSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ToySpecError("spec", f"invalid JSON in {path}: {exc.msg}") from exc
        return cls.from_dict(payload)

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "seed": self.seed,
            "noise_sigma": self.noise_sigma,
            "classes": [
                {"name": c.name, "motif": c.motif, "count": c.count,
                 "theta_range": list(c.theta_range)}
                for c in self.classes
            ],
        }


def _blob_field(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth random field, band limited to BACKGROUND_MAX_FREQ cycles per axis."""
    xx, yy = np.meshgrid(np.arange(size), np.arange(size), indexing="xy")
    f = np.zeros((size, size))
    for kx in range(BACKGROUND_MAX_FREQ + 1):
        for ky in range(BACKGROUND_MAX_FREQ + 1):
            if kx == 0 and ky == 0:
                continue
            a = rng.normal() / (1 + kx + ky)
            ph = rng.uniform(0, 2 * np.pi)
            f += a * np.cos(2 * np.pi * (kx * xx + ky * yy) / size + ph)
    f /= max(np.abs(f).max(), 1e-9)
    return f


def render_tile(motif: str, theta: float, *, size: int = 32, seed: int | None = 0,
                noise_sigma: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Render one (size, size, 3) uint8 tile.

    Deterministic for a fixed ``seed``; pass ``rng`` instead to draw several
    tiles from one stream. ``theta`` controls motif strength.
    """
    if motif not in MOTIFS:
        raise ValueError(f"unknown motif '{motif}', expected one of {MOTIFS}")
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    if rng is None:
        rng = check_rng(seed)
    b = _blob_field(rng, size)
    if motif == "plain":
        mix = (0.15 + 0.75 * theta) * (0.5 + 0.5 * b)
    else:
        mix = 0.45 * (0.5 + 0.5 * b)
    img = BASE[None, None, :] + (ACCENT - BASE)[None, None, :] * mix[:, :, None]
    if motif != "plain":
        freq = int(rng.choice(MOTIF_FREQS))
        phase = rng.uniform(0, 2 * np.pi)
        if motif == "striped":
            xx = np.arange(size)[None, :].repeat(size, 0)
            s = np.sin(2 * np.pi * freq * xx / size + phase)
        else:
            c = (size - 1) / 2.0
            gy, gx = np.mgrid[0:size, 0:size]
            rr = np.sqrt((gx - c) ** 2 + (gy - c) ** 2)
            s = np.sin(2 * np.pi * freq * rr / size + phase)
        img = img + theta * 0.5 * s[:, :, None] * (INK - img)
    img = np.clip(img, 0, 1)
    pixels = (img * 255 + 0.5).astype(np.uint8)
    if noise_sigma > 0:
        noisy = pixels.astype(np.float64) + rng.normal(0, noise_sigma, pixels.shape)
        pixels = np.clip(noisy, 0, 255).astype(np.uint8)
    return pixels


def generate_toy_tiles(spec: ToyDomainSpec) -> list[ImageTile]:
    """Render every tile described by ``spec`` into memory.

    One RNG stream seeded with ``spec.seed`` drives thetas, motif draws and
    noise, so the same spec always produces identical pixels.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    tiles = []
    for cls in spec.classes:
        lo, hi = cls.theta_range
        for i in range(cls.count):
            theta = float(rng.uniform(lo, hi))
            pixels = render_tile(cls.motif, theta, size=spec.image_size,
                                 noise_sigma=spec.noise_sigma, rng=rng)
            tiles.append(ImageTile(
                tile_id=f"{cls.name}/{cls.name}-{i:05d}",
                pixels=pixels,
                label=cls.name,
                provenance="real",
                theta=theta,
            ))
    return tiles


def generate_toy_dataset(spec: ToyDomainSpec, out_dir) -> DatasetManifest:
    """Render ``spec`` to PNGs under ``out_dir`` and write the manifest."""
    out_dir = Path(out_dir)
    tiles = generate_toy_tiles(spec)
    manifest = save_tiles(tiles, out_dir)
    write_manifest(manifest, out_dir / "manifest.jsonl")
    with open(out_dir / "spec.json", "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
    return manifest


def luminance(pixels: np.ndarray) -> np.ndarray:
    """Channel-mean luminance in unit range."""
    return pixels.astype(np.float64).mean(axis=2) / 255.0


def _band_amplitude(profile: np.ndarray) -> float:
    """Largest DFT amplitude of a 1-D profile within the motif band."""
    n = len(profile)
    centered = profile - profile.mean()
    spectrum = np.abs(np.fft.rfft(centered)) * 2.0 / n
    top = min(max(MOTIF_FREQS), n // 2)
    lo = min(MOTIF_FREQS)
    if top < lo:
        return 0.0
    return float(spectrum[lo:top + 1].max())


def axis_scores(pixels: np.ndarray) -> tuple[float, float]:
    """Motif-band amplitudes of the column-mean and row-mean profiles.

    The background cancels out of both profiles exactly: averaging a
    cosine over full periods of the orthogonal axis leaves only pure
    single-axis components, all at or below BACKGROUND_MAX_FREQ.
    """
    lum = luminance(pixels)
    return _band_amplitude(lum.mean(axis=0)), _band_amplitude(lum.mean(axis=1))


def ring_score(pixels: np.ndarray) -> float:
    """Matched-filter response against radial waves in the motif band."""
    lum = luminance(pixels)
    size = lum.shape[0]
    c = (size - 1) / 2.0
    gy, gx = np.mgrid[0:size, 0:size]
    rr = np.sqrt((gx - c) ** 2 + (gy - c) ** 2)
    centered = lum - lum.mean()
    best = 0.0
    for freq in MOTIF_FREQS:
        basis = np.exp(-2j * np.pi * freq * rr / size)
        best = max(best, 2.0 * abs((centered * basis).mean()))
    return best


def motif_score(pixels: np.ndarray, motif: str) -> float:
    """Scalar severity proxy for ``motif``; increases with theta."""
    if motif == "plain":
        return float(luminance(pixels).std())
    if motif == "striped":
        return axis_scores(pixels)[0]
    if motif == "ringed":
        return ring_score(pixels)
    raise ValueError(f"unknown motif '{motif}', expected one of {MOTIFS}")


def rule_classify(pixels: np.ndarray) -> str:
    """Classify a tile by fixed spectral statistics; returns a motif name.

    Stripes are anisotropic (column-profile energy, no row-profile energy),
    rings respond to the radial matched filter, everything else is plain.
    A striped tile at theta = 0 carries no band energy and lands on plain
    by construction.
    """
    sx, sy = axis_scores(pixels)
    if sx > STRIPE_MIN and sx > ANISOTROPY * sy:
        return "striped"
    if ring_score(pixels) > RING_MIN:
        return "ringed"
    return "plain"


def classify_by_rule(pixels: np.ndarray, spec: ToyDomainSpec) -> str:
    """Map the rule's motif verdict onto a class name from ``spec``."""
    motif = rule_classify(pixels)
    for cls in spec.classes:
        if cls.motif == motif:
            return cls.name
    raise ValueError(f"spec has no class with motif '{motif}'")


def apply_pixel_noise(pixels: np.ndarray, rng, sigma: float = 8.0) -> np.ndarray:
    """Additive gaussian pixel noise, clipped back to uint8 range."""
    rng = check_rng(rng)
    noisy = pixels.astype(np.float64) + rng.normal(0, sigma, pixels.shape)
    return np.clip(noisy, 0, 255).astype(np.uint8)


def make_tile_set(spec_classes: Sequence[ToyClassSpec], *, image_size: int = 32,
                  seed: int = 0, noise_sigma: float = 0.0) -> list[ImageTile]:
    """Convenience wrapper building a spec and rendering it in one call."""
    spec = ToyDomainSpec(classes=tuple(spec_classes), image_size=image_size,
                         seed=seed, noise_sigma=noise_sigma)
    return generate_toy_tiles(spec)
