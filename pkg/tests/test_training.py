"""Losses, Adam, augmentation, checkpoints, configuration and the training loop."""

import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shadoc.augment import SamplePair, Transform, augment, draw_transform, flip_pair, mixup
from shadoc.autodiff import GradTape, Tensor, gradcheck, precision
from shadoc.checkpoint import Checkpoint, load_checkpoint, load_into_model, model_checkpoint, save_checkpoint
from shadoc.config import ModelConfig, RunConfig
from shadoc.data import DatasetIndex, match_files
from shadoc.errors import CheckpointMismatchError, ConfigError, DataError, DecodeError, FormatError, ShapeError, TapeStateError
from shadoc.imaging.image import Image, save_image
from shadoc.losses import (
    LossBreakdown,
    LossWeights,
    PerceptualExtractor,
    default_extractor,
    mse_loss,
    perceptual_loss,
    ssim_loss,
    total_loss,
)
from shadoc.model import ShaDocFormer
from shadoc.nn import Parameter
from shadoc.optim import Adam
from shadoc.synthetic import fixture_pairs
from shadoc.training import train


def pair_tensors(rng, h=12, w=12, noise=0.1):
    a = rng.uniform(0, 1, (1, 3, h, w))
    b = np.clip(a + rng.normal(0, noise, a.shape), 0, 1)
    return Tensor(a), Tensor(b)


class TestLosses:
    def test_zero_at_identity(self, rng):
        a, _ = pair_tensors(rng)
        assert mse_loss(a, a).item() == 0
        assert ssim_loss(a, a).item() == pytest.approx(0, abs=1e-6)
        assert perceptual_loss(a, a).item() == 0
        assert total_loss(a, a)[1].total == pytest.approx(0, abs=1e-6)

    def test_mse_offset_and_oracle(self, rng):
        a = Tensor(rng.uniform(0, 0.8, (1, 3, 4, 4)))
        assert mse_loss(a + 0.1, a).item() == pytest.approx(0.01, abs=1e-7)
        b = Tensor(rng.uniform(0, 1, (1, 3, 4, 4)))
        diffs = [(float(x) - float(y)) ** 2 for x, y in zip(a.data.ravel(), b.data.ravel())]
        assert mse_loss(a, b).item() == pytest.approx(math.fsum(diffs) / len(diffs), abs=1e-7)

    def test_ssim_loss_range_and_size(self, rng):
        a, b = pair_tensors(rng, noise=0.5)
        assert 0 <= ssim_loss(a, b).item() <= 2
        assert 0 <= ssim_loss(a, Tensor(1 - a.data)).item() <= 2
        with pytest.raises(ShapeError):
            ssim_loss(Tensor(np.zeros((1, 3, 10, 12))), Tensor(np.zeros((1, 3, 10, 12))))

    def test_ssim_stationary_at_identity(self, rng):
        a = rng.uniform(0, 1, (1, 3, 11, 11))
        target = Tensor(a.copy())
        with precision(np.float64):
            p = Tensor(a.copy(), requires_grad=True)
            target = Tensor(a.copy())
            with GradTape() as tape:
                loss = ssim_loss(p, target)
            tape.backward(loss)
        assert np.abs(p.grad).max() < 1e-9
        h = 1e-4
        flat = p.data.reshape(-1)
        with precision(np.float64):
            flat[17] += h
            up = ssim_loss(p, target).item()
            flat[17] -= 2 * h
            down = ssim_loss(p, target).item()
        assert abs(up - down) / (2 * h) < 1e-6

    def test_perceptual_symmetry_and_patch(self, rng):
        a, b = pair_tensors(rng, 16, 16)
        assert perceptual_loss(a, b).item() == pytest.approx(perceptual_loss(b, a).item(), abs=1e-7)
        page = np.full((1, 3, 16, 16), 0.8)
        patched = page.copy()
        patched[:, :, 4:10, 4:10] -= 0.5
        assert perceptual_loss(Tensor(page), Tensor(patched)).item() > 0

    def test_extractor_fixed_and_frozen(self):
        a, b = PerceptualExtractor(), PerceptualExtractor()
        for (na, ta), (nb, tb) in zip(a.named_tensors(), b.named_tensors()):
            assert na == nb and ta.tobytes() == tb.tobytes()
        assert [t.shape[0] for n, t in a.named_tensors() if n.endswith("weight")] == [8, 16, 32]
        assert PerceptualExtractor(seed=2).named_tensors()[0][1].tobytes() != a.named_tensors()[0][1].tobytes()

    def test_total_is_weighted_sum(self, rng):
        a, b = pair_tensors(rng, 16, 16)
        loss, parts = total_loss(a, b)
        assert parts.total == 1.0 * parts.mse + 0.3 * parts.ssim + 0.7 * parts.perc
        assert loss.item() == pytest.approx(parts.total, rel=1e-6)
        w = LossWeights(2.0, 0.0, 1.5)
        _, p2 = total_loss(a, b, w)
        assert p2.total == 2.0 * p2.mse + 0.0 * p2.ssim + 1.5 * p2.perc

    def test_default_weight_arithmetic(self):
        w = LossWeights()
        assert w.w_mse * 1 + w.w_ssim * 0.5 + w.w_p * 0.2 == pytest.approx(1.29, abs=1e-12)

    def test_negative_weight(self):
        with pytest.raises(ConfigError):
            LossWeights(1.0, -0.1, 0.7)

    def test_log_line(self):
        line = LossBreakdown(0.5, 0.25, 0.125, 0.6).log_line(7)
        assert line == "step=7 mse=0.5000000000 ssim=0.2500000000 perc=0.1250000000 total=0.6000000000"

    @pytest.mark.parametrize("fn", [mse_loss, ssim_loss, perceptual_loss])
    def test_gradients(self, rng, fn):
        a = rng.uniform(0.1, 0.9, (1, 3, 11, 11))
        b = rng.uniform(0.1, 0.9, (1, 3, 11, 11))
        rep = gradcheck(lambda p: fn(p, Tensor(b)), [a], max_checks=60)
        assert rep.ok, rep.failures[:3]


class TestAdam:
    def test_zero_gradient(self):
        p = Parameter(np.array([1.0, -2.0]))
        opt = Adam([("p", p)])
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert opt.t == 1

    def test_first_step(self):
        p = Parameter(np.array([0.0]))
        opt = Adam([("p", p)], lr=1e-4)
        p.grad = np.array([10.0])
        opt.step()
        assert p.data[0] == pytest.approx(-1e-4 * 10 / (10 + 1e-8), rel=1e-6)

    def test_two_steps_against_oracle(self):
        with precision(np.float64):
            p = Parameter(np.array([0.3, -0.7]))
        opt = Adam([("p", p)], lr=1e-2)
        g = np.array([0.5, -2.0])
        theta, m, v = np.array([0.3, -0.7]), np.zeros(2), np.zeros(2)
        for t in (1, 2):
            p.grad = g.copy()
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            theta = theta - 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.data, theta, atol=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), st.integers(1, 5))
    def test_zero_lr_fixed(self, grads, steps):
        p = Parameter(np.array([1.0, 2.0, 3.0]))
        opt = Adam([("p", p)], lr=0.0)
        for _ in range(steps):
            p.grad = np.array(grads)
            opt.step()
            assert np.all(opt.v["p"] >= 0)
        np.testing.assert_array_equal(p.data, [1.0, 2.0, 3.0])
        assert opt.t == steps

    def test_shape_mismatch(self):
        p = Parameter(np.zeros(3))
        opt = Adam([("p", p)])
        p.grad = np.zeros(4)
        with pytest.raises(TapeStateError):
            opt.step()


def _pair(rng, h=20, w=24):
    return SamplePair("x", rng.uniform(0, 1, (h, w, 3)).astype(np.float32), rng.uniform(0, 1, (h, w, 3)).astype(np.float32))


class TestAugment:
    def test_flip_involution_and_row(self, rng):
        p = _pair(rng)
        twice = flip_pair(flip_pair(p))
        np.testing.assert_array_equal(twice.input, p.input)
        row = SamplePair("r", np.array([[[1, 1, 1], [2, 2, 2]]], np.float32), np.zeros((1, 2, 3), np.float32))
        np.testing.assert_array_equal(flip_pair(row).input[0, :, 0], [2, 1])

    def test_crop_in_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            h, w = int(rng.integers(16, 40)), int(rng.integers(16, 40))
            t = draw_transform(h, w, rng, crop=16)
            assert 0 <= t.top and t.top + t.crop_h <= t.out_h
            assert 0 <= t.left and t.left + t.crop_w <= t.out_w
            assert (t.crop_h, t.crop_w) == (16, 16)

    def test_crop_too_large(self, rng):
        with pytest.raises(ConfigError):
            draw_transform(20, 20, rng, crop=40)

    def test_pair_stays_registered(self, rng):
        p = _pair(rng)
        state = np.random.default_rng(5)
        out = augment(p, state, crop=12)
        t = draw_transform(20, 24, np.random.default_rng(5), crop=12)
        np.testing.assert_array_equal(out.input, t.apply(p.input))
        np.testing.assert_array_equal(out.target, t.apply(p.target))

    def test_forced_flip(self, rng):
        p = _pair(rng)
        t = Transform(20, 24, 0, 0, 20, 24, True)
        np.testing.assert_array_equal(t.apply(t.apply(p.input)), p.input)

    def test_mixup(self, rng):
        a, b = _pair(rng), _pair(rng)
        assert mixup(a, b, 1.0) is a
        m1, m2 = mixup(a, b, 0.5), mixup(b, a, 0.5)
        np.testing.assert_array_equal(m1.input, m2.input)
        zero = SamplePair("z", np.zeros((1, 1, 3), np.float32), np.zeros((1, 1, 3), np.float32))
        ten = SamplePair("t", np.full((1, 1, 3), 10, np.float32), np.full((1, 1, 3), 10, np.float32))
        np.testing.assert_allclose(mixup(zero, ten, 0.3).input, 7.0, atol=1e-6)
        with pytest.raises(ConfigError):
            mixup(a, b, 1.5)


class TestCheckpoint:
    def test_single_tensor_layout(self, tmp_path):
        ck = Checkpoint()
        ck.add("w", np.array([1.0]))
        save_checkpoint(ck, tmp_path / "c.sdcf")
        data = (tmp_path / "c.sdcf").read_bytes()
        assert len(data) == 4 + 4 + 4 + 4 + 1 + 4 + 8 + 1 + 4
        expected = b"SDCF" + struct.pack("<III", 1, 1, 1) + b"w" + struct.pack("<IQB", 1, 1, 0) + struct.pack("<f", 1.0)
        assert data == expected

    def test_round_trip_bytes(self, tmp_path, tiny_config):
        ck = model_checkpoint(ShaDocFormer(tiny_config))
        save_checkpoint(ck, tmp_path / "a.sdcf")
        save_checkpoint(load_checkpoint(tmp_path / "a.sdcf"), tmp_path / "b.sdcf")
        assert (tmp_path / "a.sdcf").read_bytes() == (tmp_path / "b.sdcf").read_bytes()

    def test_parameters_bit_exact(self, tiny_config):
        src, dst = ShaDocFormer(tiny_config, seed=1), ShaDocFormer(tiny_config, seed=2)
        load_into_model(dst, Checkpoint.from_bytes(model_checkpoint(src).to_bytes()))
        for (_, a), (_, b) in zip(src.named_parameters(), dst.named_parameters()):
            assert a.data.tobytes() == b.data.tobytes()

    def test_bad_magic_and_version(self):
        good = Checkpoint({"a": np.zeros(2, np.float32)}).to_bytes()
        with pytest.raises(FormatError):
            Checkpoint.from_bytes(b"XDCF" + good[4:])
        with pytest.raises(FormatError):
            Checkpoint.from_bytes(good[:4] + struct.pack("<I", 2) + good[8:])

    def test_truncation_offset(self):
        good = Checkpoint({"abc": np.arange(6, dtype=np.float32).reshape(2, 3)}).to_bytes()
        with pytest.raises(DecodeError) as err:
            Checkpoint.from_bytes(good[:-3])
        # payload starts after header(12) + name(4+3) + rank(4) + extents(16) + tag(1)
        assert err.value.offset == 40

    def test_shape_conflict(self, tiny_config):
        ck = model_checkpoint(ShaDocFormer(tiny_config))
        with pytest.raises(CheckpointMismatchError):
            load_into_model(ShaDocFormer(tiny_config.replace(base_channels=8)), ck)


class TestConfig:
    def test_defaults_and_parse(self):
        cfg = RunConfig.parse("# comment\nmodel.base_channels = 8\ntrain.lr = 0.001  # inline\nmodel.use_std = false\n")
        assert cfg.model.base_channels == 8 and cfg.train.lr == 0.001 and not cfg.model.use_std
        assert cfg.loss.w_ssim == 0.3 and cfg.train.mixup_alpha == 0.2

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="model.width"):
            RunConfig.parse("model.width = 3\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            RunConfig.parse("train.steps = many\n")
        with pytest.raises(ConfigError):
            RunConfig.parse("model.base_channels = 7\n")

    @settings(max_examples=30, deadline=None)
    @given(c=st.sampled_from([2, 4, 8, 16]), lr=st.floats(1e-6, 1.0), steps=st.integers(0, 10**6),
           flags=st.tuples(st.booleans(), st.booleans(), st.booleans()), path=st.text("abc/_.", min_size=1, max_size=12))
    def test_echo_round_trip(self, c, lr, steps, flags, path):
        text = (f"model.base_channels = {c}\ntrain.lr = {lr!r}\ntrain.steps = {steps}\nmodel.use_std = {flags[0]}\n"
                f"model.use_aggregation = {flags[1]}\nmodel.use_cdgf = {flags[2]}\ndata.train_dir = {path}\n")
        cfg = RunConfig.parse(text)
        assert RunConfig.parse(cfg.dump()) == cfg

    def test_model_config_invariants(self):
        with pytest.raises(ConfigError):
            ModelConfig(levels=4)
        with pytest.raises(ConfigError):
            ModelConfig(spp_scales=(4, 2))


class TestDataset:
    def _write(self, root, names_in, names_tgt, rng):
        for sub, names in (("input", names_in), ("target", names_tgt)):
            (root / sub).mkdir(parents=True, exist_ok=True)
            for n in names:
                save_image(Image(rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)), root / sub / n)

    def test_discovery_sorted(self, tmp_path, rng):
        self._write(tmp_path, ["b.png", "a.png"], ["a.png", "b.png"], rng)
        idx = DatasetIndex.discover(tmp_path)
        assert idx.names == ("a.png", "b.png")
        pairs = idx.load()
        assert pairs[0].input.shape == (8, 8, 3) and pairs[0].input.dtype == np.float32

    def test_unpaired_named(self, tmp_path, rng):
        self._write(tmp_path, ["a.png", "c.png"], ["a.png"], rng)
        with pytest.raises(DataError, match="c.png"):
            DatasetIndex.discover(tmp_path)

    def test_missing_dir(self, tmp_path):
        with pytest.raises(DataError, match="missing directory"):
            match_files(tmp_path / "nope", tmp_path)

    def test_resize_option(self, tmp_path, rng):
        self._write(tmp_path, ["a.png"], ["a.png"], rng)
        assert DatasetIndex.discover(tmp_path).load(resize=16)[0].target.shape == (16, 16, 3)


def fixture_samples(size=32):
    return [SamplePair(n, a.astype(np.float32) / 255, b.astype(np.float32) / 255) for n, a, b in fixture_pairs(size)]


TINY_RUN = RunConfig.parse(
    "model.base_channels = 4\nmodel.blocks_per_level = 1\nmodel.spp_scales = 1,2\nmodel.std_channels = 4\n"
    "model.std_blocks = 1\ntrain.crop = 24\ntrain.eval_every = 2\n")


class TestTrain:
    def test_deterministic(self):
        a = train(TINY_RUN, fixture_samples(), steps=3, seed=4)
        b = train(TINY_RUN, fixture_samples(), steps=3, seed=4)
        assert a.checkpoint().to_bytes() == b.checkpoint().to_bytes()
        assert a.log == b.log
        c = train(TINY_RUN, fixture_samples(), steps=3, seed=5)
        assert c.checkpoint().to_bytes() != a.checkpoint().to_bytes()

    def test_zero_steps_is_initialization(self):
        res = train(TINY_RUN, fixture_samples(), steps=0, seed=2)
        init = ShaDocFormer(TINY_RUN.model, seed=2)
        ck = res.checkpoint()
        for name, p in init.named_parameters():
            assert ck[name].tobytes() == p.data.tobytes()

    def test_log_lines(self):
        res = train(TINY_RUN, fixture_samples(), steps=4, seed=0)
        loss_lines = [ln for ln in res.log if "total=" in ln]
        assert len(loss_lines) == 4
        assert [ln for ln in res.log if "val_psnr" in ln][0].startswith("step=2 val_psnr=")
        for ln in loss_lines:
            f = dict(kv.split("=") for kv in ln.split())
            assert abs(float(f["total"]) - (float(f["mse"]) + 0.3 * float(f["ssim"]) + 0.7 * float(f["perc"]))) < 1e-7

    def test_empty_dataset(self):
        with pytest.raises(ConfigError):
            train(TINY_RUN, [], steps=1)

    def test_checkpoint_contents(self):
        ck = train(TINY_RUN, fixture_samples(), steps=1).checkpoint()
        names = list(ck.entries)
        assert "perc.stage0.weight" in names and "adam.t" in names
        assert ck["adam.t"][0] == 1
        perc = dict(default_extractor().named_tensors())
        assert ck["perc.stage2.bias"].tobytes() == perc["perc.stage2.bias"].astype(np.float32).tobytes()
