import numpy as np
import pytest

from polypforge.manifest import ImageTile
from polypforge.toydata import ToyClassSpec, ToyDomainSpec, generate_toy_tiles


def flat_tiles(n, label="x", provenance="real", size=8, seed=0, prefix="t"):
    """Uniform-noise tiles with distinct ids; cheap filler for plumbing tests."""
    rng = np.random.default_rng(seed)
    tiles = []
    for i in range(n):
        pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        kwargs = {}
        if provenance == "synthetic":
            kwargs = {"source_ref": f"src-{i:04d}", "generator_ref": "gen0"}
        tiles.append(ImageTile(tile_id=f"{prefix}-{i:04d}", pixels=pixels,
                               label=label, provenance=provenance, **kwargs))
    return tiles


@pytest.fixture(scope="session")
def small_spec():
    return ToyDomainSpec(
        classes=(
            ToyClassSpec(name="plain", motif="plain", count=12),
            ToyClassSpec(name="striped", motif="striped", count=12),
        ),
        image_size=32,
        seed=7,
        noise_sigma=0.0,
    )


@pytest.fixture(scope="session")
def small_tiles(small_spec):
    return generate_toy_tiles(small_spec)


@pytest.fixture(scope="session")
def toy_dataset_dir(tmp_path_factory, small_spec):
    from polypforge.toydata import generate_toy_dataset

    out = tmp_path_factory.mktemp("toyset")
    generate_toy_dataset(small_spec, out)
    return out


@pytest.fixture(scope="session")
def fitted_tiny_classifier(small_tiles):
    """One-epoch classifier over the small toy set, shared where training
    quality does not matter."""
    from polypforge.classifier import ResNetTileClassifier

    clf = ResNetTileClassifier(epochs=1, seed=0)
    clf.fit(small_tiles, np.asarray([t.label for t in small_tiles]))
    return clf
