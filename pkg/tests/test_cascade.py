import copy
import json

import numpy as np
import pytest

from phaseret import nn
from phaseret.cascade import (
    CascadeSpec,
    TrainConfig,
    build_cascade,
    downsample_nn,
    load_checkpoint,
    reconstruct,
    reconstruct_many,
    save_checkpoint,
    spec_for_method,
    train_cascade,
)
from phaseret.measurement import measure


def tiny_spec(q=2, n=8, width=12):
    return CascadeSpec((n // 2,) * (q - 1) + (n,), (width,) * q, (nn.MSE,) * q, input_size=n)


def tiny_model(q=2, n=8, width=12, seed=0):
    return build_cascade(tiny_spec(q=q, n=n, width=width), seed=seed)


class TestSpec:
    def test_five_stage_defaults(self):
        spec = CascadeSpec.cpr()
        assert spec.scales == (7, 12, 17, 22, 28)
        assert spec.widths == (1136, 1336, 1536, 1736, 1936)
        # stage 3 consumes the magnitude plus the 12x12 stage-2 output
        assert spec.stage_input_dim(2) == 784 + 144
        assert spec.scales[2] ** 2 == 289

    def test_full_scale_defaults(self):
        spec = CascadeSpec.cpr_fs()
        assert spec.scales == (28,) * 5
        assert spec.widths == (1936,) * 5
        assert spec.stage_input_dim(0) == 784
        for p in range(1, 5):
            assert spec.stage_input_dim(p) == 784 + 784

    def test_mlp_is_single_stage(self):
        spec = CascadeSpec.mlp()
        assert spec.q == 1
        assert spec.stage_input_dim(0) == 784

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            CascadeSpec((12, 7, 28), (8, 8, 8), (nn.MSE,) * 3)  # decreasing
        with pytest.raises(ValueError):
            CascadeSpec((7, 12), (8, 8), (nn.MSE,) * 2, input_size=28)  # last != n
        with pytest.raises(ValueError):
            CascadeSpec((7, 28), (8,), (nn.MSE,) * 2)  # widths length
        with pytest.raises(ValueError):
            CascadeSpec((28,), (8,), ("hinge",))

    def test_spec_for_method(self):
        assert spec_for_method("mlp").q == 1
        assert spec_for_method("cpr").scales == (7, 12, 17, 22, 28)
        assert spec_for_method("cpr-fs", q=3).q == 3
        with pytest.raises(ValueError):
            spec_for_method("resnet")


class TestBuild:
    def test_stage_shapes(self):
        model = tiny_model(q=3, n=8)
        for p, net in enumerate(model.nets):
            first = net.layers[0]
            assert first.d_in == model.spec.stage_input_dim(p)
            out_layer = net.layers[-2]
            assert out_layer.d_out == model.spec.scales[p] ** 2
            # 3 hidden blocks of 4 layers each, plus dense+sigmoid
            assert len(net.layers) == 3 * 4 + 2

    def test_seed_reproducibility(self):
        a, b = tiny_model(seed=5), tiny_model(seed=5)
        for na, nb in zip(a.nets, b.nets):
            for (ka, pa), (kb, pb) in zip(na.param_items(), nb.param_items()):
                np.testing.assert_array_equal(pa, pb)


class TestDownsample:
    def test_identity_at_full_scale(self, rng):
        x = rng.uniform(size=(28, 28))
        np.testing.assert_array_equal(downsample_nn(x, 28), x)

    def test_constant_image(self):
        x = np.full((28, 28), 0.3)
        np.testing.assert_array_equal(downsample_nn(x, 7), np.full((7, 7), 0.3))

    def test_28_to_7_row_mapping(self, rng):
        x = rng.uniform(size=(28, 28))
        out = downsample_nn(x, 7)
        # center-aligned mapping: destination r samples source row 4r + 2
        for r in range(7):
            for c in range(7):
                assert out[r, c] == x[4 * r + 2, 4 * c + 2]

    def test_output_pixels_come_from_source(self, rng):
        x = rng.uniform(size=(28, 28))
        out = downsample_nn(x, 12)
        src = set(x.ravel().tolist())
        assert all(v in src for v in out.ravel().tolist())

    def test_out_of_range_rejected(self, rng):
        x = rng.uniform(size=(8, 8))
        with pytest.raises(ValueError):
            downsample_nn(x, 0)
        with pytest.raises(ValueError):
            downsample_nn(x, 9)


class TestTraining:
    def test_validation_mse_decreases(self, rng):
        images = np.stack([_smooth_image(rng, 8) for _ in range(220)])
        model = tiny_model(q=2, width=48, seed=1)
        cfg = TrainConfig(epochs=6, batch_size=32, learning_rate=3e-3, seed=2)
        history = train_cascade(model, images, cfg)
        assert history["val_mse"][-1] < history["val_mse"][0]
        assert len(history["train_loss"]) == 6
        assert len(history["train_loss"][0]) == 2

    def test_earlier_stages_frozen_during_later_updates(self, rng):
        images = np.stack([_smooth_image(rng, 8) for _ in range(8)])
        model = tiny_model(q=2, seed=3)
        before = [p.copy() for _, p in model.nets[0].param_items()]

        # run by hand: stage 1 forward+update, then verify stage 2's update
        # leaves stage 1 bit-identical
        omegas = np.abs(np.fft.fft2(images, axes=(-2, -1)))
        om_flat = model.normalize_magnitudes(omegas)
        drop_rng = np.random.default_rng(0)
        out1 = model.nets[0].forward(om_flat, train=True, rng=drop_rng)
        _, g = nn.loss_and_grad(nn.MSE, out1, np.zeros_like(out1, dtype=np.float32))
        model.nets[0].backward(g)
        nn.adam_step(model.nets[0], model.adam[0])
        after_own_update = [p.copy() for _, p in model.nets[0].param_items()]

        inp2 = np.concatenate([om_flat, out1], axis=1)
        out2 = model.nets[1].forward(inp2, train=True, rng=drop_rng)
        _, g2 = nn.loss_and_grad(nn.MSE, out2, np.zeros_like(out2, dtype=np.float32))
        model.nets[1].backward(g2)
        nn.adam_step(model.nets[1], model.adam[1])

        for prev, cur in zip(after_own_update, (p for _, p in model.nets[0].param_items())):
            np.testing.assert_array_equal(prev, cur)
        assert any(
            not np.array_equal(a, b)
            for a, b in zip(before, (p for _, p in model.nets[0].param_items()))
        )

    def test_training_follows_stage_wise_schedule(self, rng):
        """One batch of train_cascade must equal the hand-rolled sequence:
        forward p, update p, pass the pre-update output to p+1."""
        images = np.stack([_smooth_image(rng, 8) for _ in range(6)])
        model = tiny_model(q=2, seed=9)
        clone = copy.deepcopy(model)

        cfg = TrainConfig(epochs=1, batch_size=6, learning_rate=1e-3, seed=4, val_fraction=0.0)
        train_cascade(model, images, cfg)

        order = np.random.default_rng(np.random.SeedSequence((4, 1))).permutation(6)
        batch = images[order]
        omegas = np.abs(np.fft.fft2(batch, axes=(-2, -1)))
        om_flat = clone.normalize_magnitudes(omegas)
        drop_rng = np.random.default_rng(np.random.SeedSequence((4, 202, 1)))
        for state in clone.adam:
            state.learning_rate = 1e-3
        prev = None
        for p in range(2):
            scale = clone.spec.scales[p]
            idx = np.floor((np.arange(scale) + 0.5) * 8 / scale).astype(int)
            target = batch[:, idx[:, None], idx[None, :]].reshape(6, -1).astype(np.float32)
            inp = om_flat if p == 0 else np.concatenate([om_flat, prev], axis=1)
            out = clone.nets[p].forward(inp, train=True, rng=drop_rng)
            _, grad = nn.loss_and_grad(nn.MSE, out, target)
            clone.nets[p].backward(grad)
            nn.adam_step(clone.nets[p], clone.adam[p])
            prev = out

        for net_a, net_b in zip(model.nets, clone.nets):
            for (ka, pa), (kb, pb) in zip(net_a.param_items(), net_b.param_items()):
                np.testing.assert_array_equal(pa, pb)

    def test_bit_reproducible(self, rng):
        images = np.stack([_smooth_image(rng, 8) for _ in range(40)])
        runs = []
        for _ in range(2):
            model = tiny_model(q=2, seed=6)
            cfg = TrainConfig(epochs=2, batch_size=16, seed=7)
            history = train_cascade(model, images, cfg)
            runs.append((model, history))
        for (ka, pa), (kb, pb) in zip(
            runs[0][0].nets[1].param_items(), runs[1][0].nets[1].param_items()
        ):
            np.testing.assert_array_equal(pa, pb)
        assert runs[0][1] == runs[1][1]

    def test_wrong_image_size_rejected(self, rng):
        model = tiny_model(n=8)
        with pytest.raises(ValueError):
            train_cascade(model, rng.uniform(size=(4, 6, 6)), TrainConfig(epochs=1))


class TestReconstruct:
    def test_deterministic_and_in_unit_interval(self, rng):
        model = tiny_model(q=3, seed=2)
        omega = measure(rng.uniform(size=(8, 8)))
        final_a, inters_a = reconstruct(model, omega)
        final_b, inters_b = reconstruct(model, omega)
        np.testing.assert_array_equal(final_a, final_b)
        assert len(inters_a) == 3
        for img, scale in zip(inters_a, model.spec.scales):
            assert img.shape == (scale, scale)
            assert (img > 0).all() and (img < 1).all()

    def test_untrained_outputs_near_half(self, rng):
        model = tiny_model(q=2, width=64, seed=1)
        omega = measure(rng.uniform(size=(8, 8)))
        final, _ = reconstruct(model, omega)
        assert np.mean(np.abs(final - 0.5)) < 0.2

    def test_batched_matches_single(self, rng):
        model = tiny_model(q=2, seed=5)
        omegas = np.stack([measure(rng.uniform(size=(8, 8))) for _ in range(3)])
        batch = reconstruct_many(model, omegas)
        for i in range(3):
            single, _ = reconstruct(model, omegas[i])
            np.testing.assert_allclose(batch[i], single, atol=1e-6)

    def test_wrong_size_rejected(self, rng):
        model = tiny_model(n=8)
        with pytest.raises(ValueError):
            reconstruct(model, measure(rng.uniform(size=(12, 12))))


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, rng, tmp_path):
        images = np.stack([_smooth_image(rng, 8) for _ in range(30)])
        model = tiny_model(q=2, seed=8)
        train_cascade(model, images, TrainConfig(epochs=1, batch_size=10, seed=3))
        save_checkpoint(model, tmp_path / "ckpt")
        loaded = load_checkpoint(tmp_path / "ckpt")

        omega = measure(images[0])
        a, _ = reconstruct(model, omega)
        b, _ = reconstruct(loaded, omega)
        np.testing.assert_array_equal(a, b)
        assert loaded.epoch == model.epoch
        for sa, sb in zip(model.adam, loaded.adam):
            assert sa.t == sb.t
            for key in sa.m:
                np.testing.assert_array_equal(sa.m[key], sb.m[key])

    def test_resumed_training_matches_uninterrupted(self, rng, tmp_path):
        images = np.stack([_smooth_image(rng, 8) for _ in range(30)])
        solid = tiny_model(q=2, seed=8)
        cfg = TrainConfig(epochs=2, batch_size=10, seed=3)
        train_cascade(solid, images, cfg)

        stopped = tiny_model(q=2, seed=8)
        train_cascade(stopped, images, TrainConfig(epochs=1, batch_size=10, seed=3))
        save_checkpoint(stopped, tmp_path / "ckpt")
        resumed = load_checkpoint(tmp_path / "ckpt")
        train_cascade(resumed, images, TrainConfig(epochs=1, batch_size=10, seed=3))

        for (ka, pa), (kb, pb) in zip(
            solid.nets[0].param_items(), resumed.nets[0].param_items()
        ):
            np.testing.assert_array_equal(pa, pb)

    def test_tampered_dims_rejected(self, rng, tmp_path):
        model = tiny_model(q=2, seed=1)
        save_checkpoint(model, tmp_path / "ckpt")
        manifest = json.loads((tmp_path / "ckpt" / "manifest.json").read_text())
        manifest["spec"]["widths"] = [99, 99]
        (tmp_path / "ckpt" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "ckpt")

    def test_corrupt_tensor_rejected(self, rng, tmp_path):
        model = tiny_model(q=2, seed=1)
        save_checkpoint(model, tmp_path / "ckpt")
        victim = next((tmp_path / "ckpt").glob("stage1.0.weight.bin"))
        victim.write_bytes(b"NOTMAGIC" + victim.read_bytes()[8:])
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "ckpt")

    def test_truncated_tensor_rejected(self, rng, tmp_path):
        model = tiny_model(q=2, seed=1)
        save_checkpoint(model, tmp_path / "ckpt")
        victim = next((tmp_path / "ckpt").glob("stage1.0.weight.bin"))
        victim.write_bytes(victim.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "ckpt")

    def test_tensor_file_layout(self, tmp_path):
        model = tiny_model(q=2, seed=1)
        save_checkpoint(model, tmp_path / "ckpt")
        # the output block's dense layer sits after 3 hidden blocks of 4
        blob = (tmp_path / "ckpt" / "stage1.12.bias.bin").read_bytes()
        assert blob[:8] == b"PFTENSOR"
        rank = int.from_bytes(blob[8:12], "little")
        assert rank == 1
        dim = int.from_bytes(blob[12:16], "little")
        assert dim == model.nets[0].layers[12].params["bias"].size
        assert len(blob) == 16 + 4 * dim

        wblob = (tmp_path / "ckpt" / "stage1.0.weight.bin").read_bytes()
        assert wblob[:8] == b"PFTENSOR"
        assert int.from_bytes(wblob[8:12], "little") == 2
        d_in = int.from_bytes(wblob[12:16], "little")
        d_out = int.from_bytes(wblob[16:20], "little")
        assert (d_in, d_out) == model.nets[0].layers[0].params["weight"].shape
        assert len(wblob) == 20 + 4 * d_in * d_out


def _smooth_image(rng, n):
    base = rng.uniform(size=(n, n))
    padded = np.pad(base, 1, mode="wrap")
    out = sum(
        padded[1 + di : 1 + di + n, 1 + dj : 1 + dj + n]
        for di in (-1, 0, 1)
        for dj in (-1, 0, 1)
    ) / 9.0
    return np.clip(out, 0.0, 1.0)
