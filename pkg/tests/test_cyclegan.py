"""Translator losses, replay buffer, schedules, and checkpointing.

Training-quality claims live in the slow end-to-end suite; everything here
runs on miniature networks.
"""

import numpy as np
import pytest
import torch
import torch.nn as nn

from polypforge.cyclegan import (
    CycleGanTranslator,
    ImageReplayBuffer,
    PatchDiscriminator,
    ResidualBlock,
    ResnetGenerator,
    adversarial_loss,
    cycle_consistency_loss,
    default_residual_blocks,
    identity_loss,
    linear_decay_factor,
    load_translator,
    save_translator,
    translate_tiles,
    write_loss_log,
)
from polypforge.errors import CheckpointError, ConfigError

from conftest import flat_tiles


def mini_translator(**overrides):
    kwargs = dict(image_size=8, base_filters=2, residual_blocks=1,
                  disc_filters=2, disc_layers=1, epochs=2, batch_size=2,
                  checkpoint_epochs=(), seed=0)
    kwargs.update(overrides)
    return CycleGanTranslator(**kwargs)


def mini_domains(seed=0):
    X = np.stack([t.pixels for t in flat_tiles(4, size=8, seed=seed)])
    Y = np.stack([t.pixels for t in flat_tiles(4, size=8, seed=seed + 1)])
    return X, Y


class Negate(nn.Module):
    def forward(self, x):
        return -x


class Identity(nn.Module):
    def forward(self, x):
        return x


class TestArchitecture:
    def test_default_residual_blocks(self):
        assert default_residual_blocks(224) == 9
        assert default_residual_blocks(129) == 9
        assert default_residual_blocks(128) == 6
        assert default_residual_blocks(32) == 6

    def test_default_blocks_wired_into_generator(self):
        t = mini_translator(residual_blocks=None).initialize()
        blocks = sum(isinstance(m, ResidualBlock) for m in t.G_.modules())
        assert blocks == 6

    def test_generator_shape_and_range(self):
        gen = ResnetGenerator(base_filters=4, residual_blocks=1)
        out = gen(torch.randn(2, 3, 8, 8))
        assert out.shape == (2, 3, 8, 8)
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_discriminator_patch_output(self):
        disc = PatchDiscriminator(base_filters=4, strided_layers=3)
        out = disc(torch.randn(2, 3, 32, 32))
        assert out.shape == (2, 1, 3, 3)


class TestLosses:
    def test_lsgan_pinned(self):
        halves = torch.full((2, 1, 2, 2), 0.5)
        assert adversarial_loss(halves, "real").item() == 0.25
        assert adversarial_loss(halves, "fake").item() == 0.25
        assert adversarial_loss(torch.zeros(3, 1), "real").item() == 1.0
        assert adversarial_loss(torch.ones(3, 1), "real").item() == 0.0

    def test_bce_mode(self):
        logits = torch.zeros(4, 1)
        loss = adversarial_loss(logits, "real", mode="bce")
        assert loss.item() == pytest.approx(np.log(2.0), abs=1e-6)

    def test_bad_arguments(self):
        with pytest.raises(ValueError, match="target"):
            adversarial_loss(torch.zeros(1), "genuine")
        with pytest.raises(ValueError, match="mode"):
            adversarial_loss(torch.zeros(1), "real", mode="wgan")

    def test_cycle_loss_pinned(self):
        ones = torch.ones(2, 3, 4, 4)
        assert cycle_consistency_loss(ones, Negate(), Identity()).item() == 2.0
        assert cycle_consistency_loss(ones, Identity(), Identity()).item() == 0.0

    def test_identity_loss_pinned(self):
        ones = torch.ones(2, 3, 4, 4)
        assert identity_loss(ones, Identity()).item() == 0.0
        assert identity_loss(ones, Negate()).item() == 2.0


class TestDecaySchedule:
    def test_constant_then_linear(self):
        assert linear_decay_factor(0, 200) == 1.0
        assert linear_decay_factor(99, 200) == 1.0
        assert linear_decay_factor(100, 200) == 1.0
        assert linear_decay_factor(101, 200) == pytest.approx(0.99)
        assert linear_decay_factor(150, 200) == pytest.approx(0.50)
        assert linear_decay_factor(199, 200) == pytest.approx(0.01)
        assert linear_decay_factor(200, 200) == 0.0

    def test_single_epoch_never_decays_below_full_step(self):
        assert linear_decay_factor(0, 1) == 1.0


class TestReplayBuffer:
    def test_passes_through_while_filling(self):
        buffer = ImageReplayBuffer(capacity=10, rng=np.random.default_rng(0))
        batch = torch.randn(4, 3, 2, 2)
        out = buffer.query(batch)
        assert torch.equal(out, batch)
        assert len(buffer) == 4

    def test_never_exceeds_capacity(self):
        buffer = ImageReplayBuffer(capacity=5, rng=np.random.default_rng(0))
        for i in range(20):
            buffer.query(torch.full((2, 3, 2, 2), float(i)))
        assert len(buffer) == 5

    def test_swap_rate_is_half(self):
        buffer = ImageReplayBuffer(capacity=5, rng=np.random.default_rng(7))
        buffer.query(torch.zeros(5, 3, 1, 1))
        fresh = 0
        n = 10_000
        for i in range(1, n + 1):
            out = buffer.query(torch.full((1, 3, 1, 1), float(i)))
            if float(out[0, 0, 0, 0]) == float(i):
                fresh += 1
        assert abs(fresh / n - 0.5) < 0.02

    def test_swapped_images_enter_the_pool(self):
        buffer = ImageReplayBuffer(capacity=2, rng=np.random.default_rng(1))
        buffer.query(torch.zeros(2, 3, 1, 1))
        for i in range(1, 50):
            buffer.query(torch.full((1, 3, 1, 1), float(i)))
        stored = {float(img[0, 0, 0]) for img in buffer.images}
        assert stored != {0.0}

    def test_bad_capacity(self):
        with pytest.raises(ValueError, match="capacity"):
            ImageReplayBuffer(capacity=0)


class TestFit:
    def test_refit_is_deterministic(self):
        X, Y = mini_domains()
        a = mini_translator(seed=4).fit(X, Y)
        b = mini_translator(seed=4).fit(X, Y)
        c = mini_translator(seed=5).fit(X, Y)
        assert a.state_hash() == b.state_hash()
        assert a.history_ == b.history_
        assert a.state_hash() != c.state_hash()

    def test_history_columns(self):
        X, Y = mini_domains()
        t = mini_translator(epochs=2).fit(X, Y)
        assert [row["epoch"] for row in t.history_] == [1, 2]
        assert set(t.history_[0]) == {"epoch", "loss_G", "loss_F", "loss_D_X",
                                      "loss_D_Y", "loss_cyc", "loss_id"}

    def test_transform_output_contract(self):
        X, Y = mini_domains()
        t = mini_translator().fit(X, Y)
        out = t.transform(X)
        assert out.shape == X.shape
        assert out.dtype == np.uint8
        back = t.inverse_transform(Y)
        assert back.shape == Y.shape

    def test_wrong_tile_size_rejected(self):
        X, Y = mini_domains()
        big = np.zeros((2, 16, 16, 3), dtype=np.uint8)
        with pytest.raises(ValueError, match="expected 8x8"):
            mini_translator().fit(big, Y)

    @pytest.mark.parametrize("kwargs,field", [
        ({"image_size": 30}, "image_size"),
        ({"epochs": 0}, "epochs"),
        ({"batch_size": 0}, "batch_size"),
        ({"lr": 0.0}, "lr"),
        ({"lambda_cycle": -1.0}, "lambda_cycle"),
    ])
    def test_bad_params(self, kwargs, field):
        with pytest.raises(ConfigError, match=field):
            mini_translator(**kwargs).initialize()


class TestCheckpointSchedule:
    def test_requested_epochs_written(self, tmp_path):
        X, Y = mini_domains()
        t = mini_translator(epochs=3, checkpoint_epochs=(1, 3))
        t.fit(X, Y, checkpoint_dir=tmp_path)
        names = sorted(p.name for p in tmp_path.glob("*.pt"))
        assert names == ["ckpt-epoch0001.pt", "ckpt-epoch0003.pt"]
        assert load_translator(tmp_path / "ckpt-epoch0001.pt").fitted_epochs_ == 1

    def test_overlong_schedule_warns_and_truncates(self, tmp_path):
        X, Y = mini_domains()
        t = mini_translator(epochs=2, checkpoint_epochs=(1, 5))
        with pytest.warns(UserWarning, match="truncated"):
            t.fit(X, Y, checkpoint_dir=tmp_path)
        assert [p.name for p in sorted(tmp_path.glob("*.pt"))] == ["ckpt-epoch0001.pt"]

    def test_nonpositive_schedule_rejected(self):
        X, Y = mini_domains()
        with pytest.raises(ConfigError, match="checkpoint_epochs"):
            mini_translator(checkpoint_epochs=(0, 1)).fit(X, Y)


class TestCheckpointRoundTrip:
    def test_round_trip(self, tmp_path):
        X, Y = mini_domains()
        t = mini_translator().fit(X, Y)
        path = save_translator(t, tmp_path / "gan.pt")
        loaded = load_translator(path)
        assert loaded.state_hash() == t.state_hash()
        assert loaded.fitted_epochs_ == t.fitted_epochs_
        assert loaded.history_ == t.history_
        assert loaded.get_params() == t.get_params()
        np.testing.assert_array_equal(loaded.transform(X), t.transform(X))

    def test_missing_and_malformed(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_translator(tmp_path / "absent.pt")
        wrong = tmp_path / "wrong.pt"
        torch.save({"format": "other"}, wrong)
        with pytest.raises(CheckpointError, match="not a translator"):
            load_translator(wrong)

    def test_tampered_weights_detected(self, tmp_path):
        X, Y = mini_domains()
        t = mini_translator().fit(X, Y)
        path = save_translator(t, tmp_path / "gan.pt")
        payload = torch.load(path, map_location="cpu", weights_only=True)
        key = next(iter(payload["state"]["G"]))
        payload["state"]["G"][key] = payload["state"]["G"][key] + 1.0
        torch.save(payload, path)
        with pytest.raises(CheckpointError, match="hash mismatch"):
            load_translator(path)


class TestArtifacts:
    def test_loss_log_format(self, tmp_path):
        X, Y = mini_domains()
        t = mini_translator(epochs=2).fit(X, Y)
        path = write_loss_log(t.history_, tmp_path / "loss_log.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,loss_G,loss_F,loss_D_X,loss_D_Y,loss_cyc,loss_id"
        assert len(lines) == 3
        assert lines[1].startswith("1,")

    def test_translate_tiles_lineage(self):
        tiles = flat_tiles(3, label="plain", size=8)
        X = np.stack([t.pixels for t in tiles])
        t = mini_translator().fit(X, X)
        out = translate_tiles(t, tiles, "striped")
        ref = t.state_hash()[:12]
        assert [s.tile_id for s in out] == [f"{t0.tile_id}@{ref}" for t0 in tiles]
        assert all(s.provenance == "synthetic" for s in out)
        assert all(s.label == "striped" for s in out)
        assert [s.source_ref for s in out] == [t0.tile_id for t0 in tiles]
        assert all(s.generator_ref == ref for s in out)

    def test_translate_tiles_custom_ref(self):
        tiles = flat_tiles(2, size=8)
        X = np.stack([t.pixels for t in tiles])
        t = mini_translator().fit(X, X)
        out = translate_tiles(t, tiles, "striped", generator_ref="run42")
        assert out[0].tile_id == "t-0000@run42"
        assert out[0].generator_ref == "run42"
