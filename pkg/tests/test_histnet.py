import numpy as np
import pytest

from spadsr.core import DepthMap, FeatureSet, IntensityMap
from spadsr.features import build_features
from spadsr.histnet import (HistNetParams, ProximalAdagrad, TrainConfig, backward, forward, infer,
                            init_params, layer_specs, load, loss, save, stack_features, train,
                            zero_params)
from spadsr.histnet.engine import Tape, Var
from spadsr.histnet.model import width
from spadsr.histnet.train import feature_patches
from spadsr.scenes import random_scene
from spadsr.simulator import preset, simulate


# -- naive oracles -----------------------------------------------------------

def naive_conv3x3(x, w, b):
    n, h, wd, c = x.shape
    o = w.shape[0]
    y = np.zeros((n, h, wd, o))
    for s in range(n):
        for i in range(h):
            for j in range(wd):
                for k in range(o):
                    acc = b[k]
                    for ky in range(3):
                        for kx in range(3):
                            ii, jj = i + ky - 1, j + kx - 1
                            if 0 <= ii < h and 0 <= jj < wd:
                                acc += np.dot(w[k, :, ky, kx], x[s, ii, jj])
                    y[s, i, j, k] = acc
    return y


def naive_deconv(x, w, b):
    n, h, wd, c = x.shape
    o = w.shape[0]
    y = np.zeros((n, 2 * h, 2 * wd, o)) + b
    for s in range(n):
        for i in range(h):
            for j in range(wd):
                for ky in range(3):
                    for kx in range(3):
                        oi, oj = 2 * i + 1 - ky, 2 * j + 1 - kx
                        if 0 <= oi < 2 * h and 0 <= oj < 2 * wd:
                            y[s, oi, oj] += w[:, :, ky, kx] @ x[s, i, j]
    return y


def naive_maxpool(x):
    n, h, wd, c = x.shape
    y = np.zeros((n, h // 2, wd // 2, c))
    for s in range(n):
        for i in range(h // 2):
            for j in range(wd // 2):
                for k in range(c):
                    y[s, i, j, k] = x[s, 2 * i:2 * i + 2, 2 * j:2 * j + 2, k].max()
    return y


def fd_check(fn, arrays, rng, h=1e-6, tol=1e-6):
    """Compare tape gradients of ``sum(fn(vars) * R)`` with central differences."""
    tape = Tape()
    vs = [Var(a) for a in arrays]
    out = fn(tape, *vs)
    proj = rng.standard_normal(out.value.shape)
    tape.backward(out, proj)
    for v, a in zip(vs, arrays):
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            fp = (fn(Tape(False), *[Var(x) for x in arrays]).value * proj).sum()
            a[idx] = old - h
            fm = (fn(Tape(False), *[Var(x) for x in arrays]).value * proj).sum()
            a[idx] = old
            assert v.grad[idx] == pytest.approx((fp - fm) / (2 * h), rel=tol, abs=tol)


class TestOps:
    def test_conv3x3_matches_loops(self, rng):
        x, w, b = rng.standard_normal((2, 8, 8, 3)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
        y = Tape().conv3x3(Var(x), Var(w), Var(b)).value
        np.testing.assert_allclose(y, naive_conv3x3(x, w, b), rtol=1e-12, atol=1e-12)

    def test_conv1x1(self, rng):
        x, w, b = rng.standard_normal((2, 4, 4, 3)), rng.standard_normal((2, 3, 1, 1)), rng.standard_normal(2)
        y = Tape().conv1x1(Var(x), Var(w), Var(b)).value
        np.testing.assert_allclose(y, np.einsum("nhwc,oc->nhwo", x, w[:, :, 0, 0]) + b, rtol=1e-12)

    def test_deconv_matches_loops_and_doubles(self, rng):
        x, w, b = rng.standard_normal((2, 8, 8, 3)), rng.standard_normal((2, 3, 3, 3)), rng.standard_normal(2)
        y = Tape().deconv_up2(Var(x), Var(w), Var(b)).value
        assert y.shape == (2, 16, 16, 2)
        np.testing.assert_allclose(y, naive_deconv(x, w, b), rtol=1e-12, atol=1e-12)

    def test_deconv_is_zero_insertion_conv(self, rng):
        x, w, b = rng.standard_normal((1, 4, 5, 2)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
        z = np.zeros((1, 8, 10, 2))
        z[:, ::2, ::2] = x
        t = Tape(False)
        np.testing.assert_allclose(t.deconv_up2(Var(x), Var(w), Var(b)).value,
                                   t.conv3x3(Var(z), Var(w), Var(b)).value, atol=1e-12)

    def test_maxpool_matches_loops(self, rng):
        x = rng.standard_normal((2, 8, 8, 3))
        np.testing.assert_array_equal(Tape().maxpool2(Var(x)).value, naive_maxpool(x))

    def test_maxpool_constant_idempotent(self):
        x = np.full((1, 8, 8, 2), 0.7)
        t = Tape(False)
        once = t.maxpool2(Var(x)).value
        np.testing.assert_array_equal(once, 0.7)
        np.testing.assert_array_equal(t.maxpool2(Var(once)).value, 0.7)

    def test_relu(self):
        y = Tape().relu(Var(np.array([-1.0, 0.0, 2.0]))).value
        np.testing.assert_array_equal(y, [0, 0, 2])

    def test_concat_assert(self):
        with pytest.raises(AssertionError):
            Tape().concat([Var(np.zeros((1, 2, 2, 1))), Var(np.zeros((1, 4, 4, 1)))])

    @pytest.mark.parametrize("op", ["conv3x3", "deconv_up2", "conv1x1"])
    def test_gradients(self, rng, op):
        k = 1 if op == "conv1x1" else 3
        arrays = [rng.standard_normal((2, 4, 4, 2)), rng.standard_normal((3, 2, k, k)),
                  rng.standard_normal(3)]
        fd_check(lambda t, x, w, b: getattr(t, op)(x, w, b), arrays, rng)

    def test_pool_relu_concat_gradients(self, rng):
        a, b = rng.standard_normal((1, 4, 4, 2)), rng.standard_normal((1, 2, 2, 1))
        fd_check(lambda t, x, y: t.concat([t.relu(t.maxpool2(x)), y]), [a, b], rng)


def small_features(n=1, size=32, seed=0, name="high"):
    out = []
    for k in range(n):
        scene = random_scene((size, size), seed=seed + k)
        f = build_features(simulate(scene, 16, preset(name, seed=k), 4))
        out.append((f, scene.depth_gt))
    return out


class TestModel:
    def test_widths(self):
        assert [width(c, 1 / 8) for c in (64, 128, 1024)] == [8, 16, 128]
        assert width(64, 1 / 128) == 1
        assert layer_specs(1.0)[0].out_ch == 64
        assert {s.kind for s in layer_specs(0.25)} == {"conv3x3", "deconv_up2", "conv1x1_out"}
        with pytest.raises(ValueError):
            layer_specs(0)

    def test_residual_shape_and_finite(self):
        (f, _), = small_features(size=64)
        params = init_params(1 / 8, seed=1)
        params.arrays["L9.w"][:] = 0.1
        r = forward(params, stack_features([f]))
        assert r.shape == (1, 64, 64) and np.isfinite(r).all() and np.abs(r).max() > 0

    def test_zero_params_zero_residual(self):
        (f, _), = small_features()
        r = forward(zero_params(1 / 16), stack_features([f]))
        assert (r == 0).all()

    def test_guidance_attach_points(self):
        (f, _), = small_features(size=32)
        batch = stack_features([f])
        shapes = {k: v.shape[1:3] for k, v in batch.items() if k.startswith("d")}
        assert shapes == {"d1": (16, 16), "d2": (8, 8), "d3": (4, 4), "d4": (2, 2)}

    def test_non_multiple_of_16_rejected(self):
        z = lambda h, w: DepthMap(np.zeros((h, w)))
        with pytest.raises(ValueError):
            f = FeatureSet(z(8, 8), z(8, 8), z(4, 4), z(2, 2), z(1, 1), z(0, 0),
                           IntensityMap(np.zeros((8, 8))), (1, 16))
            stack_features([f])


class TestLoss:
    def test_exact_residual_zero(self, rng):
        d, g = rng.random((2, 4, 4)), rng.random((2, 4, 4))
        assert loss(g - d, d, g) == 0

    def test_constant_field(self):
        d = np.full((1, 4, 4), 0.6)
        assert loss(np.zeros_like(d), d, d - 0.1) == pytest.approx(0.1)

    def test_brute_force(self, rng):
        r, d, g = (rng.standard_normal((3, 5, 5)) for _ in range(3))
        ref = sum(abs(r.flat[i] + d.flat[i] - g.flat[i]) for i in range(r.size)) / r.size
        assert loss(r, d, g) == pytest.approx(ref, rel=1e-12)


class TestBackward:
    def test_zero_loss_zero_gradients(self):
        (f, _), = small_features()
        batch = stack_features([f])
        value, grads = backward(zero_params(1 / 16), batch, batch["first"])
        assert value == 0
        assert all((g == 0).all() for g in grads.values())

    def test_gradients_scale_linearly(self):
        (f, gt), = small_features()
        p = init_params(1 / 16, seed=2, dtype=np.float64)
        batch = stack_features([f], np.float64)
        _, g1 = backward(p, batch, gt.values[None])
        _, g2 = backward(p, batch, gt.values[None], scale=2.0)
        for k in g1:
            np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)

    def test_sampled_finite_differences(self, rng):
        (f, gt), = small_features()
        p = init_params(1 / 16, seed=3, dtype=np.float64)
        for k in p.arrays:
            if k.endswith(".b"):
                p.arrays[k] += 0.05 * rng.standard_normal(p.arrays[k].shape)
        batch = stack_features([f], np.float64)
        target = gt.values[None]
        _, grads = backward(p, batch, target)
        h = 1e-6
        for name in ("L0.conv1.w", "L4.conv2.w", "L5.up.w", "ig3.b", "dg2.w", "L9.w"):
            w = p.arrays[name]
            for i in rng.choice(w.size, 3, replace=False):
                old = w.flat[i]
                w.flat[i] = old + h
                lp, _ = backward(p, batch, target)
                w.flat[i] = old - h
                lm, _ = backward(p, batch, target)
                w.flat[i] = old
                num, ana = (lp - lm) / (2 * h), grads[name].flat[i]
                assert abs(num - ana) / max(abs(num), abs(ana), 1e-6) < 1e-3, name


class TestOptimizer:
    def test_first_step_closed_form(self, rng):
        w0, g0 = rng.standard_normal(10), rng.standard_normal(10)
        w = {"w": w0.copy()}
        ProximalAdagrad(0.1, 0.0, 0.1).step(w, {"w": g0})
        np.testing.assert_allclose(w["w"], w0 - 0.1 * g0 / np.sqrt(0.1 + g0**2), rtol=1e-14)

    def test_accumulates(self):
        w = {"w": np.array([1.0])}
        opt = ProximalAdagrad(1.0, 0.0, 1.0)
        opt.step(w, {"w": np.array([1.0])})
        opt.step(w, {"w": np.array([1.0])})
        assert w["w"][0] == pytest.approx(1 - 1 / np.sqrt(2) - 1 / np.sqrt(3))

    def test_strong_l1_zeroes_weights(self, rng):
        w = {"w": rng.standard_normal(100) * 0.1}
        opt = ProximalAdagrad(0.1, 10.0, 0.1)
        for _ in range(3):
            opt.step(w, {"w": rng.standard_normal(100) * 0.01})
        assert (w["w"] == 0).all()

    def test_validation(self):
        with pytest.raises(ValueError):
            ProximalAdagrad(learning_rate=0)
        with pytest.raises(ValueError):
            ProximalAdagrad(l1_reg=-1)


class TestTraining:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(l1_reg=-0.1)
        assert TrainConfig().batch_size == 64 and TrainConfig().learning_rate == 0.1
        assert TrainConfig(batch_size=4, epochs=3).total_steps(10) == 8

    def test_deterministic_curves(self):
        data = small_features(2)
        cfg = TrainConfig(batch_size=2, max_steps=3, learning_rate=0.01, seed=4)
        a, b = train(data, cfg, 1 / 16), train(data, cfg, 1 / 16)
        assert a.losses == b.losses
        for k in a.params.arrays:
            np.testing.assert_array_equal(a.params.arrays[k], b.params.arrays[k])

    def test_l1_reg_drives_weights_to_zero(self):
        data = small_features(1)
        res = train(data, TrainConfig(batch_size=1, max_steps=3, l1_reg=10.0), 1 / 16)
        assert all((v == 0).all() for v in res.params.arrays.values())

    def test_nan_aborts(self):
        data = small_features(1)
        p = init_params(1 / 16)
        p.arrays["L0.conv1.w"][0, 0, 0, 0] = np.nan
        with pytest.raises(FloatingPointError):
            train(data, TrainConfig(batch_size=1, max_steps=1), 1 / 16, params=p)

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train([], TrainConfig(max_steps=1), 1 / 16)

    def test_feature_patches(self):
        (f, gt), = small_features(size=64)
        pairs = feature_patches(f, gt, 32, 32, augment=True)
        assert len(pairs) == 4 * 8
        pf, pg = pairs[0]
        np.testing.assert_array_equal(pf.first_depth.values, f.first_depth.values[:32, :32])
        np.testing.assert_array_equal(pf.d4.values, f.d4.values[:2, :2])
        np.testing.assert_array_equal(pg.values, gt.values[:32, :32])
        with pytest.raises(ValueError):
            feature_patches(f, gt, 24)


class TestInferAndCheckpoint:
    def test_zero_residual_returns_first_depth(self):
        (f, _), = small_features()
        out = infer(zero_params(1 / 16), f)
        np.testing.assert_allclose(out.values, f.first_depth.values, atol=1e-7)

    def test_output_clamped_and_matches_oracle(self):
        (f, _), = small_features()
        p = init_params(1 / 16, seed=5)
        p.arrays["L9.w"][:] = 1.0
        out = infer(p, f)
        assert out.values.min() >= 0 and out.values.max() <= 1
        ref = np.clip(f.first_depth.values + forward(p, stack_features([f]))[0], 0, 1)
        np.testing.assert_allclose(out.values, ref, atol=1e-7)

    def test_checkpoint_roundtrip(self, tmp_path):
        p = init_params(1 / 16, seed=6)
        p.step = 17
        save(p, tmp_path / "ck")
        q = load(tmp_path / "ck")
        assert q.width_scale == p.width_scale and q.step == 17
        for k in p.arrays:
            np.testing.assert_array_equal(p.arrays[k], q.arrays[k])

    def test_checkpoint_dim_mismatch(self, tmp_path):
        save(init_params(1 / 16), tmp_path / "ck")
        import json
        man = json.loads((tmp_path / "ck" / "manifest.json").read_text())
        man["width_scale"] = 1 / 8
        (tmp_path / "ck" / "manifest.json").write_text(json.dumps(man))
        with pytest.raises(Exception):
            load(tmp_path / "ck")

    def test_params_copy_independent(self):
        p = init_params(1 / 16)
        q = p.copy()
        q.arrays["L9.b"][:] = 5
        assert (p.arrays["L9.b"] == 0).all()
        assert isinstance(q, HistNetParams) and q.n_params() == p.n_params()
