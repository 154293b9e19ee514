import numpy as np
import pytest

from fino.autodiff import backward
from fino.data import SynthConfig, generate_pair
from fino.losses import LossWeights
from fino.model import ChangeDetector, ModelConfig

TINY = dict(widths=(4, 6, 8, 10), region_size=4)


def small_batch(seed=0, size=64, n=2):
    cfg = SynthConfig(size=size, object_count=(2, 4), pseudo_fraction=0.3, seed=seed)
    pairs = [generate_pair(cfg, i) for i in range(n)]
    a = np.stack([p.image_a for p in pairs])
    b = np.stack([p.image_b for p in pairs])
    m = np.stack([p.mask for p in pairs])
    return a, b, m


class TestForward:
    def test_shapes_and_stage_state(self):
        model = ChangeDetector(ModelConfig(**TINY), seed=0)
        a, b, m = small_batch()
        fwd = model.forward(a, b)
        assert fwd.prob.shape == (2, 1, 64, 64)
        assert 0.0 < fwd.prob.values.min() <= fwd.prob.values.max() < 1.0
        for i in (1, 2, 3, 4):
            st = fwd.stages[i]
            for attr in ("diff", "context", "attn", "shape", "mask", "gate",
                         "gated_a", "gated_b", "dist", "change"):
                assert getattr(st, attr) is not None, f"stage {i} missing {attr}"
            assert st.dist.values.min() >= 0.0
            assert 0.0 < st.gate.values.min() and st.gate.values.max() < 2.0

    def test_identical_images_give_zero_change_features(self):
        model = ChangeDetector(ModelConfig(**TINY), seed=1)
        a, _, _ = small_batch(seed=3)
        fwd = model.forward(a, a.copy())
        for i in (1, 2, 3, 4):
            assert np.abs(fwd.stages[i].dist.values).max() == 0.0
            assert np.abs(fwd.stages[i].change.values).max() == 0.0

    def test_deterministic_construction(self):
        m1 = ChangeDetector(ModelConfig(**TINY), seed=5)
        m2 = ChangeDetector(ModelConfig(**TINY), seed=5)
        assert m1.store.names() == m2.store.names()
        for name, t in m1.store.items():
            assert np.array_equal(t.values, m2.store[name].values)

    @pytest.mark.parametrize("stages", [(4,), (4, 3), (4, 3, 2), (4, 3, 2, 1)])
    def test_stage_subsets(self, stages):
        model = ChangeDetector(ModelConfig(stages=stages, **TINY), seed=2)
        a, b, m = small_batch()
        fwd = model.forward(a, b)
        assert fwd.prob.shape == (2, 1, 64, 64)
        assert set(fwd.stages) == set(stages)
        assert model.finest_stage == min(stages)

    def test_ablation_flags(self):
        a, b, m = small_batch()
        for flags in [dict(disable_cdl=True), dict(disable_bsa=True),
                      dict(disable_rega=True), dict(gate_clamp=True),
                      dict(disable_cdl=True, disable_bsa=True, disable_rega=True)]:
            model = ChangeDetector(ModelConfig(**TINY, **flags), seed=3)
            fwd = model.forward(a, b)
            assert fwd.prob.shape == (2, 1, 64, 64)
            if flags.get("disable_bsa"):
                assert fwd.stages[4].mask is None
            if flags.get("gate_clamp") and fwd.stages[4].gate is not None:
                assert fwd.stages[4].gate.values.max() <= 1.0
            if flags.get("disable_rega"):
                assert fwd.stages[4].gate is None

    def test_twin_models_share_unablated_init(self):
        base = ChangeDetector(ModelConfig(**TINY), seed=9)
        norega = ChangeDetector(ModelConfig(**TINY, disable_rega=True), seed=9)
        for name, t in norega.store.items():
            assert np.array_equal(t.values, base.store[name].values), name


class TestLosses:
    def test_components_and_total(self):
        model = ChangeDetector(ModelConfig(**TINY), seed=0)
        a, b, m = small_batch()
        total, comps = model.losses(model.forward(a, b), m, LossWeights(0.1))
        for key in ("l_cd", "l_sal", "l_gcl", "l_rcl", "total"):
            assert np.isfinite(comps[key])
        expected = (comps["l_cd"] + comps["l_sal"]
                    + 0.1 * comps["l_gcl"] + 0.1 * comps["l_rcl"])
        assert abs(comps["total"] - expected) < 1e-12

    def test_lambda_zero_skips_brightness_losses(self):
        model = ChangeDetector(ModelConfig(**TINY), seed=0)
        a, b, m = small_batch()
        total, comps = model.losses(model.forward(a, b), m, LossWeights(0.0))
        assert comps["l_gcl"] == 0.0 and comps["l_rcl"] == 0.0
        assert abs(comps["total"] - (comps["l_cd"] + comps["l_sal"])) < 1e-12

    def test_gradients_reach_every_parameter(self):
        model = ChangeDetector(ModelConfig(**TINY), seed=0)
        a, b, m = small_batch()
        total, _ = model.losses(model.forward(a, b), m, LossWeights(0.1))
        backward(total)
        missing = [name for name, t in model.store.items() if t.grad is None]
        assert not missing, f"no gradient for {missing}"
