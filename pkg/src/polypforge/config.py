"""Config files and run directories for the command line tools.

A config is a JSON object of named sections. Each section is merged over
its defaults; unknown keys and type mismatches are rejected up front so a
typo fails fast instead of silently training with defaults.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

from .common import canonical_json, config_hash
from .errors import ConfigError

SECTION_DEFAULTS: dict[str, dict] = {
    "classifier": {
        "depth": 18, "epochs": 20, "batch_size": 32, "lr": 1e-3, "momentum": 0.9,
        "lr_step": 15, "lr_gamma": 0.1, "input_size": None, "flip_augment": True,
    },
    # Ranking wants graded probabilities, so the scorer deliberately underfits.
    "scorer": {
        "depth": 18, "epochs": 2, "batch_size": 32, "lr": 1e-3, "momentum": 0.9,
        "lr_step": 15, "lr_gamma": 0.1, "input_size": None, "flip_augment": True,
    },
    "filter": {"target_class": None, "alpha": 1.0, "folds": 2},
    "cyclegan": {
        "image_size": 224, "base_filters": 64, "residual_blocks": None,
        "disc_filters": 64, "disc_layers": 3, "epochs": 200, "batch_size": 1,
        "lr": 2e-4, "beta1": 0.5, "lambda_cycle": 10.0, "lambda_identity": 5.0,
        "buffer_capacity": 50, "checkpoint_epochs": [5, 10, 25, 50, 100, 200],
    },
    "dcgan": {
        "image_size": 224, "latent_dim": 100, "base_filters": 64, "epochs": 200,
        "batch_size": 16, "lr": 2e-4, "beta1": 0.5,
    },
    "serve": {"host": "127.0.0.1", "port": 8000, "n_each": 20},
}


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config", f"top level must be an object, got {type(raw).__name__}")
    return raw


def merge_section(name: str, overrides: dict | None) -> dict:
    """Defaults for ``name`` overlaid with user values, strictly keyed."""
    if name not in SECTION_DEFAULTS:
        raise ConfigError(name, "unknown config section")
    merged = dict(SECTION_DEFAULTS[name])
    if overrides is None:
        return merged
    if not isinstance(overrides, dict):
        raise ConfigError(name, f"section must be an object, got {type(overrides).__name__}")
    for key, value in overrides.items():
        if key not in merged:
            raise ConfigError(f"{name}.{key}", "unknown option")
        default = merged[key]
        if default is not None and value is not None:
            want = type(default)
            if want is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            elif want is list and isinstance(value, (list, tuple)):
                value = list(value)
            elif not isinstance(value, want) or (want is not bool and isinstance(value, bool)):
                raise ConfigError(
                    f"{name}.{key}",
                    f"expected {want.__name__}, got {type(value).__name__}")
        merged[key] = value
    return merged


def resolve_out_root(option_value, env: dict | None = None) -> Path:
    """--out beats POLYPFORGE_OUT beats ./runs."""
    import os

    env = os.environ if env is None else env
    if option_value:
        return Path(option_value)
    if env.get("POLYPFORGE_OUT"):
        return Path(env["POLYPFORGE_OUT"])
    return Path("runs")


def create_run_dir(out_root, command: str, resolved: dict,
                   argv: list[str] | None = None) -> Path:
    """Make ``run-<hash12>`` under the out root and drop run.json inside.

    The hash covers the command name and the fully resolved config, so the
    same inputs land in the same directory and reruns are easy to spot.
    """
    payload = {"command": command, "config": resolved}
    digest = config_hash(payload)
    run_dir = Path(out_root) / f"run-{digest[:12]}"
    run_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "argv": list(sys.argv) if argv is None else list(argv),
        "config": json.loads(canonical_json(resolved)),
        "config_hash": digest,
        "created_at": time.time(),
    }
    with open(run_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
    return run_dir
