"""Unconditional convolutional GAN baseline.

Samples target-class tiles from latent noise alone, with no source image
and no cycle constraint. Serves as the comparison generator for the
translation pipeline.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from sklearn.base import BaseEstimator

from .common import TORCH_SEED_LOCK, state_dict_hash, tensor_to_tiles, tiles_to_tensor
from .errors import CheckpointError, ConfigError, TrainingDivergedError
from .manifest import ImageTile
from .validation import as_pixel_array, check_is_fitted


def _stages(image_size: int) -> tuple[int, int]:
    """Initial spatial size and number of stride-2 stages for ``image_size``."""
    size, ups = image_size, 0
    while size > 7:
        if size % 2 != 0:
            raise ConfigError(
                "image_size",
                f"{image_size} cannot be reduced to a <=7 seed by halving")
        size //= 2
        ups += 1
    if ups < 1:
        raise ConfigError("image_size", f"{image_size} is too small, need at least 8")
    return size, ups


class DcganGenerator(nn.Module):
    def __init__(self, image_size: int, latent_dim: int = 100, base_filters: int = 64):
        super().__init__()
        start, ups = _stages(image_size)
        channels = base_filters * (2 ** (ups - 1))
        layers = [
            nn.ConvTranspose2d(latent_dim, channels, start, 1, 0, bias=False),
            nn.BatchNorm2d(channels), nn.ReLU(inplace=True),
        ]
        for _ in range(ups - 1):
            layers += [
                nn.ConvTranspose2d(channels, channels // 2, 4, 2, 1, bias=False),
                nn.BatchNorm2d(channels // 2), nn.ReLU(inplace=True),
            ]
            channels //= 2
        layers += [nn.ConvTranspose2d(channels, 3, 4, 2, 1, bias=False), nn.Tanh()]
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z)


class DcganDiscriminator(nn.Module):
    def __init__(self, image_size: int, base_filters: int = 64):
        super().__init__()
        start, ups = _stages(image_size)
        layers = [nn.Conv2d(3, base_filters, 4, 2, 1),
                  nn.LeakyReLU(0.2, inplace=True)]
        channels = base_filters
        for _ in range(ups - 1):
            layers += [nn.Conv2d(channels, channels * 2, 4, 2, 1),
                       nn.BatchNorm2d(channels * 2),
                       nn.LeakyReLU(0.2, inplace=True)]
            channels *= 2
        layers += [nn.Conv2d(channels, 1, start, 1, 0)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class DcganSampler(BaseEstimator):
    """Latent-noise tile generator trained on a single-class pool."""

    def __init__(self, image_size: int = 32, latent_dim: int = 100,
                 base_filters: int = 64, epochs: int = 30, batch_size: int = 16,
                 lr: float = 2e-4, beta1: float = 0.5, seed: int = 0):
        self.image_size = image_size
        self.latent_dim = latent_dim
        self.base_filters = base_filters
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.beta1 = beta1
        self.seed = seed

    def _check_params(self) -> None:
        _stages(self.image_size)
        if self.latent_dim < 1:
            raise ConfigError("latent_dim", f"must be positive, got {self.latent_dim}")
        if self.epochs < 1:
            raise ConfigError("epochs", f"must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be at least 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError("lr", f"must be positive, got {self.lr}")

    def initialize(self) -> "DcganSampler":
        self._check_params()
        with TORCH_SEED_LOCK, torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed)
            self.G_ = DcganGenerator(self.image_size, self.latent_dim, self.base_filters)
            self.D_ = DcganDiscriminator(self.image_size, self.base_filters)
        self.history_ = []
        self.fitted_epochs_ = 0
        return self

    def fit(self, Y):
        """Adversarial training on target tiles ``Y`` (labels play no role)."""
        Y = as_pixel_array(Y)
        if Y.shape[1] != self.image_size or Y.shape[2] != self.image_size:
            raise ValueError(
                f"tiles are {Y.shape[1]}x{Y.shape[2]}, expected "
                f"{self.image_size}x{self.image_size}")
        self.initialize()
        real_all = tiles_to_tensor(Y)
        opt_g = torch.optim.Adam(self.G_.parameters(), lr=self.lr, betas=(self.beta1, 0.999))
        opt_d = torch.optim.Adam(self.D_.parameters(), lr=self.lr, betas=(self.beta1, 0.999))
        rng = np.random.default_rng(self.seed)
        z_gen = torch.Generator().manual_seed(self.seed)
        self.G_.train()
        self.D_.train()
        for epoch in range(1, self.epochs + 1):
            order = rng.permutation(len(real_all))
            g_sum, d_sum, steps = 0.0, 0.0, 0
            for start in range(0, len(real_all), self.batch_size):
                real = real_all[order[start:start + self.batch_size]]
                z = torch.randn(len(real), self.latent_dim, 1, 1, generator=z_gen)
                fake = self.G_(z)

                opt_d.zero_grad()
                d_real = self.D_(real)
                d_fake = self.D_(fake.detach())
                loss_d = (nn.functional.binary_cross_entropy_with_logits(
                              d_real, torch.ones_like(d_real))
                          + nn.functional.binary_cross_entropy_with_logits(
                              d_fake, torch.zeros_like(d_fake)))
                self._check_finite(loss_d, epoch, steps)
                loss_d.backward()
                opt_d.step()

                opt_g.zero_grad()
                d_out = self.D_(fake)
                loss_g = nn.functional.binary_cross_entropy_with_logits(
                    d_out, torch.ones_like(d_out))
                self._check_finite(loss_g, epoch, steps)
                loss_g.backward()
                opt_g.step()

                g_sum += loss_g.item()
                d_sum += loss_d.item()
                steps += 1
            self.history_.append({"epoch": epoch, "loss_G": g_sum / steps,
                                  "loss_D": d_sum / steps})
            self.fitted_epochs_ = epoch
        self.G_.eval()
        self.D_.eval()
        return self

    @staticmethod
    def _check_finite(loss: torch.Tensor, epoch: int, step: int) -> None:
        if not torch.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite adversarial loss at epoch {epoch}, step {step}",
                epoch=epoch, step=step)

    def sample(self, n: int, seed: int | None = None) -> np.ndarray:
        """Draw ``n`` tiles; deterministic for a given seed (default: fit seed)."""
        check_is_fitted(self, "G_")
        if n < 1:
            raise ValueError(f"sample count must be positive, got {n}")
        z_gen = torch.Generator().manual_seed(self.seed if seed is None else seed)
        self.G_.eval()
        out = []
        with torch.no_grad():
            remaining = n
            while remaining > 0:
                take = min(remaining, 64)
                z = torch.randn(take, self.latent_dim, 1, 1, generator=z_gen)
                out.append(tensor_to_tiles(self.G_(z)))
                remaining -= take
        return np.concatenate(out, axis=0)

    def state_hash(self) -> str:
        check_is_fitted(self, "G_")
        merged = {f"G.{k}": v for k, v in self.G_.state_dict().items()}
        merged.update({f"D.{k}": v for k, v in self.D_.state_dict().items()})
        return state_dict_hash(merged)


def sample_tiles(sampler: DcganSampler, n: int, label: str,
                 seed: int | None = None, generator_ref: str | None = None) -> list[ImageTile]:
    """Sample tiles and wrap them with synthetic provenance (no source tile)."""
    if generator_ref is None:
        generator_ref = sampler.state_hash()[:12]
    pixels = sampler.sample(n, seed=seed)
    return [
        ImageTile(
            tile_id=f"dcgan/{generator_ref}/{i:05d}",
            pixels=px,
            label=label,
            provenance="synthetic",
            source_ref=None,
            generator_ref=generator_ref,
        )
        for i, px in enumerate(pixels)
    ]


SAMPLER_FORMAT = "polypforge-dcgan"


def save_sampler(sampler: DcganSampler, path) -> Path:
    check_is_fitted(sampler, "G_")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": SAMPLER_FORMAT,
        "version": 1,
        "epoch": sampler.fitted_epochs_,
        "params": sampler.get_params(),
        "state": {"G": sampler.G_.state_dict(), "D": sampler.D_.state_dict()},
        "history": [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
                    for row in sampler.history_],
        "content_hash": sampler.state_hash(),
    }
    torch.save(payload, path)
    return path


def load_sampler(path) -> DcganSampler:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != SAMPLER_FORMAT:
        raise CheckpointError(f"{path} is not a sampler checkpoint")
    sampler = DcganSampler(**payload["params"])
    sampler.initialize()
    sampler.G_.load_state_dict(payload["state"]["G"])
    sampler.D_.load_state_dict(payload["state"]["D"])
    sampler.G_.eval()
    sampler.D_.eval()
    sampler.history_ = payload["history"]
    sampler.fitted_epochs_ = payload["epoch"]
    if sampler.state_hash() != payload["content_hash"]:
        raise CheckpointError(f"content hash mismatch in {path}")
    return sampler
