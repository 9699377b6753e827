"""Generative data augmentation for imbalanced image tile classification.

The pipeline: load a tiled dataset manifest, rank minority-class tiles by
classifier confidence and keep the top fraction, train an unpaired
image-to-image translator on the filtered pair, translate majority tiles
into synthetic minority tiles, then evaluate with judge fractions,
augmentation AUC, and blinded human review sessions.
"""

from .classifier import (
    ResNetTileClassifier,
    depth_sweep,
    evaluate_auc,
    load_classifier,
    mann_whitney_auc,
    save_classifier,
)
from .cyclegan import (
    CycleGanTranslator,
    ImageReplayBuffer,
    load_translator,
    save_translator,
    translate_tiles,
)
from .dcgan import DcganSampler, load_sampler, sample_tiles, save_sampler
from .errors import (
    CheckpointError,
    ConfigError,
    LeakageError,
    ManifestError,
    MissingArtifactError,
    PolypforgeError,
    TrainingDivergedError,
)
from .evalharness import (
    AblationReport,
    AugmentationReport,
    assert_no_leakage,
    run_alpha_ablation,
    run_augmentation_experiment,
    run_synthetic_only_experiment,
    target_class_fraction,
)
from .manifest import (
    ClassLabel,
    DatasetManifest,
    ImageTile,
    ManifestEntry,
    class_distribution,
    load_manifest,
    load_tiles,
    save_tiles,
    split_dataset,
    tile_region,
    write_manifest,
)
from .ranking import (
    ConfidenceRankFilter,
    build_filtered_training_pair,
    rank_by_target_probability,
    select_top_alpha,
    selection_count,
)
from .toydata import ToyClassSpec, ToyDomainSpec, generate_toy_dataset, render_tile
from .turing import (
    ReviewSession,
    SessionStore,
    build_session,
    one_sided_p,
    session_report,
    two_sided_p,
    z_score,
)

__version__ = "0.1.0"

__all__ = [
    "AblationReport",
    "AugmentationReport",
    "CheckpointError",
    "ClassLabel",
    "ConfidenceRankFilter",
    "ConfigError",
    "CycleGanTranslator",
    "DatasetManifest",
    "DcganSampler",
    "ImageReplayBuffer",
    "ImageTile",
    "LeakageError",
    "ManifestEntry",
    "ManifestError",
    "MissingArtifactError",
    "PolypforgeError",
    "ResNetTileClassifier",
    "ReviewSession",
    "SessionStore",
    "ToyClassSpec",
    "ToyDomainSpec",
    "TrainingDivergedError",
    "assert_no_leakage",
    "build_filtered_training_pair",
    "build_session",
    "class_distribution",
    "depth_sweep",
    "evaluate_auc",
    "generate_toy_dataset",
    "load_classifier",
    "load_manifest",
    "load_sampler",
    "load_tiles",
    "load_translator",
    "mann_whitney_auc",
    "one_sided_p",
    "rank_by_target_probability",
    "render_tile",
    "run_alpha_ablation",
    "run_augmentation_experiment",
    "run_synthetic_only_experiment",
    "sample_tiles",
    "save_classifier",
    "save_sampler",
    "save_tiles",
    "save_translator",
    "select_top_alpha",
    "selection_count",
    "session_report",
    "split_dataset",
    "target_class_fraction",
    "tile_region",
    "translate_tiles",
    "two_sided_p",
    "write_manifest",
    "z_score",
]
