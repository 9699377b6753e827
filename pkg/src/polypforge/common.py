"""Small shared utilities: canonical hashing, RNG plumbing, pixel conversion."""

from __future__ import annotations

import hashlib
import json
import threading
from typing import Any, Iterable, Mapping

import numpy as np
import torch

# Guards fork_rng around model initialization; the global torch RNG is not
# thread safe and parallel jobs must not interleave inside it.
TORCH_SEED_LOCK = threading.Lock()


def canonical_json(obj: Any) -> str:
    """Serialize ``obj`` to JSON with sorted keys and no whitespace jitter."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def config_hash(obj: Any) -> str:
    """Stable sha256 hex digest of a JSON-serializable config."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def state_dict_hash(state: Mapping[str, torch.Tensor]) -> str:
    """Content hash over a state dict: key order fixed, raw tensor bytes."""
    h = hashlib.sha256()
    for key in sorted(state):
        h.update(key.encode("utf-8"))
        tensor = state[key].detach().cpu().contiguous()
        h.update(str(tensor.dtype).encode("utf-8"))
        h.update(np.asarray(tensor.shape, dtype=np.int64).tobytes())
        h.update(tensor.numpy().tobytes())
    return h.hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def check_rng(seed) -> np.random.Generator:
    """Accept a seed or an existing Generator and hand back a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def uint8_to_unit(pixels: np.ndarray) -> np.ndarray:
    """Map uint8 pixels to float32 in [-1, 1] (the network-side range)."""
    return pixels.astype(np.float32) / 127.5 - 1.0


def unit_to_uint8(values: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats back to uint8 with round-half-up at the midpoint."""
    scaled = (np.clip(values, -1.0, 1.0) + 1.0) * 127.5
    return (scaled + 0.5).astype(np.uint8)


def tiles_to_tensor(pixels: np.ndarray) -> torch.Tensor:
    """(N, H, W, 3) uint8 array to (N, 3, H, W) float tensor in [-1, 1]."""
    if pixels.ndim != 4 or pixels.shape[-1] != 3:
        raise ValueError(f"expected (N, H, W, 3) pixel array, got shape {pixels.shape}")
    arr = uint8_to_unit(np.ascontiguousarray(pixels))
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def tensor_to_tiles(batch: torch.Tensor) -> np.ndarray:
    """(N, 3, H, W) tensor in [-1, 1] back to (N, H, W, 3) uint8."""
    arr = batch.detach().cpu().permute(0, 2, 3, 1).numpy()
    return unit_to_uint8(arr)


def stack_pixels(tiles: Iterable) -> np.ndarray:
    """Stack the ``pixels`` attribute of a tile sequence into one array."""
    arrays = [t.pixels for t in tiles]
    if not arrays:
        raise ValueError("cannot stack an empty tile sequence")
    return np.stack(arrays, axis=0)
