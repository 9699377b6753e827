"""Unpaired image-to-image translation with cycle consistency.

Two generators (G: X to Y, F: Y to X) and two patch discriminators train
jointly under a least-squares adversarial loss, an L1 cycle-consistency
term, and an L1 identity term. Discriminators see generated images through
a replay buffer. All tensors live in [-1, 1]; tiles convert at the edges.
"""

from __future__ import annotations

import csv
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
from sklearn.base import BaseEstimator, TransformerMixin

from .common import TORCH_SEED_LOCK, state_dict_hash, tensor_to_tiles, tiles_to_tensor
from .errors import CheckpointError, ConfigError, TrainingDivergedError
from .manifest import ImageTile
from .validation import as_pixel_array, check_is_fitted

DEFAULT_CHECKPOINT_EPOCHS = (5, 10, 25, 50, 100, 200)

LOSS_LOG_COLUMNS = ("epoch", "loss_G", "loss_F", "loss_D_X", "loss_D_Y",
                    "loss_cyc", "loss_id")


def default_residual_blocks(image_size: int) -> int:
    """9 blocks at full tile resolution, 6 at 128 pixels or below."""
    return 9 if image_size > 128 else 6


def linear_decay_factor(epoch_index: int, total_epochs: int) -> float:
    """Learning-rate multiplier: 1.0 through the first half, then linear decay.

    The factor hits zero one step past the final epoch, so the last epoch
    still trains at ``1 / ceil(total / 2)`` of the base rate.
    """
    decay_start = total_epochs // 2
    if epoch_index < decay_start:
        return 1.0
    return (total_epochs - epoch_index) / (total_epochs - decay_start)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels), nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1), nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels))

    def forward(self, x):
        return x + self.block(x)


class ResnetGenerator(nn.Module):
    """7x7 stem, two stride-2 downsamples, residual trunk, two upsamples, tanh head."""

    def __init__(self, base_filters: int = 64, residual_blocks: int = 9):
        super().__init__()
        ngf = base_filters
        layers = [
            nn.ReflectionPad2d(3), nn.Conv2d(3, ngf, 7),
            nn.InstanceNorm2d(ngf), nn.ReLU(inplace=True),
            nn.Conv2d(ngf, ngf * 2, 3, stride=2, padding=1),
            nn.InstanceNorm2d(ngf * 2), nn.ReLU(inplace=True),
            nn.Conv2d(ngf * 2, ngf * 4, 3, stride=2, padding=1),
            nn.InstanceNorm2d(ngf * 4), nn.ReLU(inplace=True),
        ]
        layers += [ResidualBlock(ngf * 4) for _ in range(residual_blocks)]
        layers += [
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(ngf * 4, ngf * 2, 3, padding=1),
            nn.InstanceNorm2d(ngf * 2), nn.ReLU(inplace=True),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(ngf * 2, ngf, 3, padding=1),
            nn.InstanceNorm2d(ngf), nn.ReLU(inplace=True),
            nn.ReflectionPad2d(3), nn.Conv2d(ngf, 3, 7), nn.Tanh(),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class PatchDiscriminator(nn.Module):
    """Strided conv stack scoring overlapping patches; no sigmoid (LSGAN)."""

    def __init__(self, base_filters: int = 64, strided_layers: int = 3):
        super().__init__()
        ndf = base_filters
        layers = [nn.Conv2d(3, ndf, 4, stride=2, padding=1),
                  nn.LeakyReLU(0.2, inplace=True)]
        channels = ndf
        for _ in range(strided_layers - 1):
            layers += [nn.Conv2d(channels, channels * 2, 4, stride=2, padding=1),
                       nn.InstanceNorm2d(channels * 2),
                       nn.LeakyReLU(0.2, inplace=True)]
            channels *= 2
        layers += [nn.Conv2d(channels, 1, 4, stride=1, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


def adversarial_loss(predictions: torch.Tensor, target: str, mode: str = "lsgan") -> torch.Tensor:
    """Generator/discriminator objective against an all-real or all-fake target."""
    if target not in ("real", "fake"):
        raise ValueError(f"target must be 'real' or 'fake', got {target!r}")
    label = torch.ones_like(predictions) if target == "real" else torch.zeros_like(predictions)
    if mode == "lsgan":
        return nn.functional.mse_loss(predictions, label)
    if mode == "bce":
        return nn.functional.binary_cross_entropy_with_logits(predictions, label)
    raise ValueError(f"unknown adversarial mode {mode!r}")


def cycle_consistency_loss(batch: torch.Tensor, forward: nn.Module,
                           backward: nn.Module) -> torch.Tensor:
    """Mean L1 between ``backward(forward(batch))`` and ``batch``."""
    return nn.functional.l1_loss(backward(forward(batch)), batch)


def identity_loss(batch: torch.Tensor, generator: nn.Module) -> torch.Tensor:
    """Mean L1 penalty for changing images already in the generator's target domain."""
    return nn.functional.l1_loss(generator(batch), batch)


class ImageReplayBuffer:
    """Pool of past generated images fed to the discriminators.

    Holds at most ``capacity`` images. While filling, inputs pass through
    unchanged. Once full, each incoming image is returned as-is with
    probability one half, or swapped against a random stored image.
    """

    def __init__(self, capacity: int = 50, rng: np.random.Generator | None = None):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.rng = rng if rng is not None else np.random.default_rng()
        self.images: list[torch.Tensor] = []

    def __len__(self) -> int:
        return len(self.images)

    def query(self, batch: torch.Tensor) -> torch.Tensor:
        out = []
        for image in batch.detach():
            if len(self.images) < self.capacity:
                self.images.append(image.clone())
                out.append(image)
            elif self.rng.random() < 0.5:
                slot = int(self.rng.integers(self.capacity))
                out.append(self.images[slot])
                self.images[slot] = image.clone()
            else:
                out.append(image)
        return torch.stack(out)


class CycleGanTranslator(TransformerMixin, BaseEstimator):
    """Cycle-consistent translator between two unpaired tile domains.

    ``fit(X, Y)`` trains both directions; ``transform`` maps source tiles
    into the target domain, ``inverse_transform`` the other way. One epoch
    sweeps the larger domain once. The learning rate stays constant for the
    first half of training and decays linearly afterwards.
    """

    def __init__(self, image_size: int = 224, base_filters: int = 64,
                 residual_blocks: int | None = None, disc_filters: int = 64,
                 disc_layers: int = 3, epochs: int = 200, batch_size: int = 1,
                 lr: float = 2e-4, beta1: float = 0.5, lambda_cycle: float = 10.0,
                 lambda_identity: float = 5.0, buffer_capacity: int = 50,
                 checkpoint_epochs: Sequence[int] = DEFAULT_CHECKPOINT_EPOCHS,
                 seed: int = 0):
        self.image_size = image_size
        self.base_filters = base_filters
        self.residual_blocks = residual_blocks
        self.disc_filters = disc_filters
        self.disc_layers = disc_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.beta1 = beta1
        self.lambda_cycle = lambda_cycle
        self.lambda_identity = lambda_identity
        self.buffer_capacity = buffer_capacity
        self.checkpoint_epochs = checkpoint_epochs
        self.seed = seed

    def _check_params(self) -> None:
        if self.image_size % 4 != 0:
            raise ConfigError("image_size",
                              f"must be divisible by 4 (two downsampling stages), got {self.image_size}")
        if self.epochs < 1:
            raise ConfigError("epochs", f"must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be at least 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError("lr", f"must be positive, got {self.lr}")
        if self.lambda_cycle < 0 or self.lambda_identity < 0:
            raise ConfigError("lambda_cycle", "loss weights must be nonnegative")

    def _n_blocks(self) -> int:
        if self.residual_blocks is not None:
            return self.residual_blocks
        return default_residual_blocks(self.image_size)

    def initialize(self) -> "CycleGanTranslator":
        """Build all four networks deterministically without training."""
        self._check_params()
        with TORCH_SEED_LOCK, torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed)
            self.G_ = ResnetGenerator(self.base_filters, self._n_blocks())
            self.F_ = ResnetGenerator(self.base_filters, self._n_blocks())
            self.D_X_ = PatchDiscriminator(self.disc_filters, self.disc_layers)
            self.D_Y_ = PatchDiscriminator(self.disc_filters, self.disc_layers)
        self.history_ = []
        self.fitted_epochs_ = 0
        return self

    def fit(self, X, Y, *, checkpoint_dir=None):
        """Train on unpaired source tiles ``X`` and target tiles ``Y``.

        Writes a checkpoint after each epoch in ``checkpoint_epochs``
        when ``checkpoint_dir`` is given. A non-finite loss aborts with
        :class:`TrainingDivergedError`; checkpoints already written stay
        on disk.
        """
        X = as_pixel_array(X)
        Y = as_pixel_array(Y)
        for name, arr in (("X", X), ("Y", Y)):
            if arr.shape[1] != self.image_size or arr.shape[2] != self.image_size:
                raise ValueError(
                    f"{name} tiles are {arr.shape[1]}x{arr.shape[2]}, "
                    f"expected {self.image_size}x{self.image_size}")
        self.initialize()
        schedule = self._effective_schedule()
        x_all, y_all = tiles_to_tensor(X), tiles_to_tensor(Y)
        opt_g = torch.optim.Adam(
            list(self.G_.parameters()) + list(self.F_.parameters()),
            lr=self.lr, betas=(self.beta1, 0.999))
        opt_dx = torch.optim.Adam(self.D_X_.parameters(), lr=self.lr, betas=(self.beta1, 0.999))
        opt_dy = torch.optim.Adam(self.D_Y_.parameters(), lr=self.lr, betas=(self.beta1, 0.999))
        schedulers = [torch.optim.lr_scheduler.LambdaLR(
            opt, lambda i: linear_decay_factor(i, self.epochs))
            for opt in (opt_g, opt_dx, opt_dy)]
        rng = np.random.default_rng(self.seed)
        buffer_x = ImageReplayBuffer(self.buffer_capacity, rng)
        buffer_y = ImageReplayBuffer(self.buffer_capacity, rng)
        n = max(len(x_all), len(y_all))
        for net in (self.G_, self.F_, self.D_X_, self.D_Y_):
            net.train()
        for epoch in range(1, self.epochs + 1):
            x_order = rng.permutation(len(x_all))
            sums = dict.fromkeys(LOSS_LOG_COLUMNS[1:], 0.0)
            steps = 0
            for start in range(0, n, self.batch_size):
                take = np.arange(start, min(start + self.batch_size, n))
                bx = x_all[x_order[take % len(x_all)]]
                by = y_all[rng.integers(0, len(y_all), size=len(bx))]

                opt_g.zero_grad()
                fake_y = self.G_(bx)
                fake_x = self.F_(by)
                loss_g = adversarial_loss(self.D_Y_(fake_y), "real")
                loss_f = adversarial_loss(self.D_X_(fake_x), "real")
                loss_cyc = (nn.functional.l1_loss(self.F_(fake_y), bx)
                            + nn.functional.l1_loss(self.G_(fake_x), by))
                loss_id = identity_loss(by, self.G_) + identity_loss(bx, self.F_)
                total = (loss_g + loss_f + self.lambda_cycle * loss_cyc
                         + self.lambda_identity * loss_id)
                self._check_finite(total, epoch, steps)
                total.backward()
                opt_g.step()

                opt_dy.zero_grad()
                replay_y = buffer_y.query(fake_y)
                loss_dy = 0.5 * (adversarial_loss(self.D_Y_(by), "real")
                                 + adversarial_loss(self.D_Y_(replay_y), "fake"))
                self._check_finite(loss_dy, epoch, steps)
                loss_dy.backward()
                opt_dy.step()

                opt_dx.zero_grad()
                replay_x = buffer_x.query(fake_x)
                loss_dx = 0.5 * (adversarial_loss(self.D_X_(bx), "real")
                                 + adversarial_loss(self.D_X_(replay_x), "fake"))
                self._check_finite(loss_dx, epoch, steps)
                loss_dx.backward()
                opt_dx.step()

                sums["loss_G"] += loss_g.item()
                sums["loss_F"] += loss_f.item()
                sums["loss_D_X"] += loss_dx.item()
                sums["loss_D_Y"] += loss_dy.item()
                sums["loss_cyc"] += loss_cyc.item()
                sums["loss_id"] += loss_id.item()
                steps += 1
            for sched in schedulers:
                sched.step()
            row = {"epoch": epoch}
            row.update({k: v / steps for k, v in sums.items()})
            self.history_.append(row)
            self.fitted_epochs_ = epoch
            if checkpoint_dir is not None and epoch in schedule:
                save_translator(self, Path(checkpoint_dir) / f"ckpt-epoch{epoch:04d}.pt",
                                optimizers={"G": opt_g, "D_X": opt_dx, "D_Y": opt_dy})
        for net in (self.G_, self.F_, self.D_X_, self.D_Y_):
            net.eval()
        return self

    def _effective_schedule(self) -> set[int]:
        schedule = sorted(set(int(e) for e in self.checkpoint_epochs))
        if any(e < 1 for e in schedule):
            raise ConfigError("checkpoint_epochs", f"epochs must be positive, got {schedule}")
        kept = {e for e in schedule if e <= self.epochs}
        dropped = [e for e in schedule if e > self.epochs]
        if dropped:
            warnings.warn(
                f"checkpoint epochs {dropped} exceed training length {self.epochs}; "
                "schedule truncated", stacklevel=3)
        return kept

    @staticmethod
    def _check_finite(loss: torch.Tensor, epoch: int, step: int) -> None:
        if not torch.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite translation loss at epoch {epoch}, step {step}",
                epoch=epoch, step=step)

    def transform(self, X) -> np.ndarray:
        """Translate source-domain tiles to the target domain (uint8 out)."""
        check_is_fitted(self, "G_")
        return self._run(self.G_, X)

    def inverse_transform(self, Y) -> np.ndarray:
        check_is_fitted(self, "F_")
        return self._run(self.F_, Y)

    def _run(self, net: nn.Module, tiles) -> np.ndarray:
        X = as_pixel_array(tiles)
        net.eval()
        out = []
        with torch.no_grad():
            for start in range(0, len(X), 16):
                batch = tiles_to_tensor(X[start:start + 16])
                out.append(tensor_to_tiles(net(batch)))
        return np.concatenate(out, axis=0)

    def state_hash(self) -> str:
        check_is_fitted(self, "G_")
        return state_dict_hash(_merged_state(self))


def _merged_state(translator: CycleGanTranslator) -> dict:
    merged = {}
    for prefix, net in (("G", translator.G_), ("F", translator.F_),
                        ("D_X", translator.D_X_), ("D_Y", translator.D_Y_)):
        for key, value in net.state_dict().items():
            merged[f"{prefix}.{key}"] = value
    return merged


TRANSLATOR_FORMAT = "polypforge-cyclegan"


def save_translator(translator: CycleGanTranslator, path, *, optimizers=None) -> Path:
    """Write a checkpoint: config, epoch, all four networks, optimizer state, hash."""
    check_is_fitted(translator, "G_")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": TRANSLATOR_FORMAT,
        "version": 1,
        "epoch": translator.fitted_epochs_,
        "params": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in translator.get_params().items()},
        "state": {
            "G": translator.G_.state_dict(),
            "F": translator.F_.state_dict(),
            "D_X": translator.D_X_.state_dict(),
            "D_Y": translator.D_Y_.state_dict(),
        },
        "optim": {name: opt.state_dict() for name, opt in (optimizers or {}).items()},
        "history": [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
                    for row in translator.history_],
        "content_hash": state_dict_hash(_merged_state(translator)),
    }
    torch.save(payload, path)
    return path


def load_translator(path) -> CycleGanTranslator:
    """Restore a translator checkpoint, verifying format and content hash."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != TRANSLATOR_FORMAT:
        raise CheckpointError(f"{path} is not a translator checkpoint")
    params = dict(payload["params"])
    if isinstance(params.get("checkpoint_epochs"), list):
        params["checkpoint_epochs"] = tuple(params["checkpoint_epochs"])
    translator = CycleGanTranslator(**params)
    translator.initialize()
    for name, net in (("G", translator.G_), ("F", translator.F_),
                      ("D_X", translator.D_X_), ("D_Y", translator.D_Y_)):
        net.load_state_dict(payload["state"][name])
        net.eval()
    translator.history_ = payload["history"]
    translator.fitted_epochs_ = payload["epoch"]
    if state_dict_hash(_merged_state(translator)) != payload["content_hash"]:
        raise CheckpointError(f"content hash mismatch in {path}")
    return translator


def write_loss_log(history: Sequence[dict], path) -> Path:
    """Per-epoch loss table as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_LOG_COLUMNS)
        for row in history:
            writer.writerow([row["epoch"]] + [f"{row[c]:.6f}" for c in LOSS_LOG_COLUMNS[1:]])
    return path


def translate_tiles(translator: CycleGanTranslator, tiles: Sequence[ImageTile],
                    target_label: str, generator_ref: str | None = None) -> list[ImageTile]:
    """Translate real tiles and wrap the outputs with full lineage."""
    check_is_fitted(translator, "G_")
    if generator_ref is None:
        generator_ref = translator.state_hash()[:12]
    pixels = translator.transform(tiles)
    out = []
    for tile, px in zip(tiles, pixels):
        out.append(ImageTile(
            tile_id=f"{tile.tile_id}@{generator_ref}",
            pixels=px,
            label=target_label,
            provenance="synthetic",
            source_ref=tile.tile_id,
            generator_ref=generator_ref,
        ))
    return out
