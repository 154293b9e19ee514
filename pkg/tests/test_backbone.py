import numpy as np
import pytest

from fino import autodiff as ad
from fino.autodiff import ParamStore, Tensor, grad_check
from fino.backbone import BackboneConfig, Encoder, feature_diff

SMALL = BackboneConfig(widths=(4, 6, 8, 10))


def build(cfg=SMALL, seed=0):
    store = ParamStore()
    return Encoder(store, cfg, np.random.default_rng(seed)), store


class TestEncoder:
    def test_stage_extents_64(self):
        enc, _ = build()
        rng = np.random.default_rng(1)
        pyramid = enc(Tensor(rng.uniform(size=(1, 3, 64, 64))))
        assert [t.shape[2] for t in pyramid] == [16, 8, 4, 2]
        assert [t.shape[1] for t in pyramid] == [4, 6, 8, 10]

    def test_deterministic_forward(self):
        enc, _ = build()
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(1, 3, 64, 64))
        p1 = enc(Tensor(img))
        p2 = enc(Tensor(img))
        for a, b in zip(p1, p2):
            assert np.array_equal(a.values, b.values)

    def test_indivisible_extents_rejected(self):
        enc, _ = build()
        with pytest.raises(ValueError):
            enc(Tensor(np.zeros((1, 3, 48, 64))))

    def test_zeroed_residual_branch_equals_skip_path(self):
        enc, store = build()
        for name, t in store.items():
            if ".conv2." in name:
                t.values[:] = 0.0
        rng = np.random.default_rng(3)
        x = Tensor(rng.uniform(size=(1, 3, 64, 64)))
        got = enc(x)
        h = ad.relu(enc.stem(x))
        h = ad.max_pool(h, 2, 2)
        for blocks, stage_out in zip(enc.stages, got):
            for block in blocks:
                h = block.skip_path(h)
            assert np.array_equal(h.values, stage_out.values)

    def test_siamese_sharing_perturbation_hits_both_branches(self):
        enc, store = build()
        rng = np.random.default_rng(4)
        img_a = rng.uniform(size=(1, 3, 64, 64))
        img_b = rng.uniform(size=(1, 3, 64, 64))
        base_a = enc(Tensor(img_a))[3].values.copy()
        base_b = enc(Tensor(img_b))[3].values.copy()
        store["backbone.stem.conv.w"].values[0, 0, 0, 0] += 0.25
        assert not np.array_equal(enc(Tensor(img_a))[3].values, base_a)
        assert not np.array_equal(enc(Tensor(img_b))[3].values, base_b)

    def test_swap_symmetry(self):
        enc, _ = build()
        rng = np.random.default_rng(5)
        img_a = rng.uniform(size=(1, 3, 64, 64))
        img_b = rng.uniform(size=(1, 3, 64, 64))
        pa, pb = enc(Tensor(img_a)), enc(Tensor(img_b))
        pb2, pa2 = enc(Tensor(img_b)), enc(Tensor(img_a))
        for i in range(4):
            assert np.array_equal(pa[i].values, pa2[i].values)
            assert np.array_equal(pb[i].values, pb2[i].values)
            d1 = feature_diff(pa[i], pb[i]).values
            d2 = feature_diff(pb2[i], pa2[i]).values
            assert np.array_equal(d1, d2)

    def test_group_norm_variant_runs(self):
        enc, _ = build(BackboneConfig(widths=(4, 6, 8, 12), norm="group"))
        pyramid = enc(Tensor(np.random.default_rng(6).uniform(size=(1, 3, 64, 64))))
        assert pyramid[3].shape == (1, 12, 2, 2)

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            BackboneConfig(widths=(8, 8, 16, 32)).validate()
        with pytest.raises(ValueError):
            BackboneConfig(widths=(4, 8, 16)).validate()
        with pytest.raises(ValueError):
            BackboneConfig(activation="gelu").validate()

    def test_grad_check_through_two_stages(self):
        cfg = BackboneConfig(widths=(2, 3, 4, 5))
        enc, store = build(cfg, seed=7)
        rng = np.random.default_rng(8)
        img = rng.uniform(size=(1, 3, 32, 32))
        w = rng.standard_normal((1, 3, 4, 4))

        def f():
            return (enc(Tensor(img))[1] * Tensor(w)).mean()

        early = {name: t for name, t in store.items()
                 if "stage1" in name or "stage2" in name or "stem" in name}
        report = grad_check(f, early, tol=1e-3)
        assert report.passed, report.failures


class TestFeatureDiff:
    def test_identical_stages_zero(self):
        x = Tensor(np.random.default_rng(0).uniform(size=(1, 4, 8, 8)))
        assert feature_diff(x, x).values.max() == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.standard_normal((2, 3, 4, 4)))
        b = Tensor(rng.standard_normal((2, 3, 4, 4)))
        assert np.array_equal(feature_diff(a, b).values, feature_diff(b, a).values)

    def test_matches_element_loop(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((1, 2, 3, 3))
        b = rng.standard_normal((1, 2, 3, 3))
        got = feature_diff(Tensor(a), Tensor(b)).values
        expected = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            expected[idx] = abs(a[idx] - b[idx])
        np.testing.assert_array_equal(got, expected)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            feature_diff(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 2, 4, 4))))
