import numpy as np
import pytest

import imuvid.autodiff as ad
from imuvid.autodiff import Parameter
from imuvid.errors import ConfigError, NonFiniteGradientError
from imuvid.optim import AdamW, CosineSchedule, cosine_lr


def _param(value, name="p"):
    return Parameter(np.asarray(value, dtype=np.float32), name=name)


class TestAdamW:
    def test_zero_grad_zero_decay_is_identity(self):
        p = _param([1.0, -2.0, 3.0])
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0, 3.0])

    def test_single_step_bias_corrected(self):
        # p=0, g=1, lr=0.1: m_hat = v_hat = 1 -> p ~ -0.1
        p = _param([0.0])
        p.grad[...] = 1.0
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        opt.step()
        assert p.data[0] == pytest.approx(-0.1, rel=1e-6)

    def test_pure_shrinkage_with_weight_decay(self):
        p = _param([2.0])
        opt = AdamW([p], lr=0.1, weight_decay=0.5)
        opt.step()
        assert p.data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5), rel=1e-6)

    def test_lr_zero_is_identity_on_values(self, rng):
        p = _param(rng.standard_normal(5))
        before = p.data.copy()
        p.grad[...] = rng.standard_normal(5)
        AdamW([p], lr=0.0).step()
        np.testing.assert_array_equal(p.data, before)

    def test_nonfinite_gradient_aborts_with_diagnostics(self):
        p = _param([1.0], name="layer.weight")
        p.grad[...] = np.nan
        opt = AdamW([p], lr=0.1)
        before = p.data.copy()
        with pytest.raises(NonFiniteGradientError, match="layer.weight"):
            opt.step()
        np.testing.assert_array_equal(p.data, before)

    def test_param_groups_use_their_own_lr(self):
        a, b = _param([0.0], "a"), _param([0.0], "b")
        a.grad[...] = 1.0
        b.grad[...] = 1.0
        opt = AdamW([{"params": [a], "lr": 0.1}, {"params": [b], "lr": 0.001}])
        opt.step()
        assert a.data[0] == pytest.approx(-0.1, rel=1e-5)
        assert b.data[0] == pytest.approx(-0.001, rel=1e-5)

    def test_deterministic_trajectory_bitwise(self):
        def run():
            rng = np.random.default_rng(7)
            p = _param(rng.standard_normal(8).astype(np.float32))
            opt = AdamW([p], lr=1e-3, weight_decay=0.01)
            for _ in range(25):
                opt.zero_grad()
                loss = ad.tensor_sum(ad.mul(p, p))
                ad.backward(loss)
                opt.step()
            return p.data.copy()

        a, b = run(), run()
        np.testing.assert_array_equal(a, b)

    def test_invalid_config_rejected(self):
        p = _param([1.0])
        with pytest.raises(ConfigError):
            AdamW([p], betas=(1.5, 0.9))
        with pytest.raises(ConfigError):
            AdamW([p], weight_decay=-1.0)


class TestCosineSchedule:
    def test_endpoints(self):
        sched = CosineSchedule(eta_max=0.01, total_steps=100, eta_min=0.001)
        assert cosine_lr(sched, 0) == pytest.approx(0.01)
        assert cosine_lr(sched, 100) == pytest.approx(0.001)

    def test_midpoint_half(self):
        sched = CosineSchedule(eta_max=0.02, total_steps=10, eta_min=0.0)
        assert cosine_lr(sched, 5) == pytest.approx(0.01)

    def test_monotone_nonincreasing(self):
        sched = CosineSchedule(eta_max=1.0, total_steps=50)
        values = [cosine_lr(sched, t) for t in range(51)]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_out_of_range_clamps_and_warns(self):
        sched = CosineSchedule(eta_max=1.0, total_steps=10)
        with pytest.warns(RuntimeWarning):
            assert cosine_lr(sched, 99) == pytest.approx(0.0)
        with pytest.warns(RuntimeWarning):
            assert cosine_lr(sched, -1) == pytest.approx(1.0)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            CosineSchedule(eta_max=1.0, total_steps=0)
