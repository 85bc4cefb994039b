import numpy as np
import pytest

from latentmark.errors import DimensionError, NumericError, ParameterError
from latentmark.optim import AdamState, IterationPlan, adam_step, optimize_image
from latentmark.percept import ConstraintSpec, psnr, quantize


class TestAdam:
    def test_first_step_sign_identity(self, rng):
        # exact first-step form: update = -eta * g / (|g| + eps)
        g = rng.standard_normal((8, 8, 2))
        g[np.abs(g) < 1e-2] = 1e-2  # keep the bound meaningful everywhere
        state = AdamState(g.shape, eta=0.5)
        upd = adam_step(state, g)
        exact = -0.5 * g / (np.abs(g) + state.eps)
        np.testing.assert_allclose(upd, exact, rtol=0, atol=1e-15)
        # the sign approximation holds to eta*1e-6 once |g| >= 1e-2
        deviation = np.abs(upd + 0.5 * np.sign(g))
        assert deviation.max() <= 0.5 * 1e-6 + 1e-15

    def test_first_step_deviation_closed_form(self, rng):
        # in general the deviation from -eta*sign(g) is eta*eps/(|g|+eps)
        g = rng.standard_normal((4, 4, 1)) * 1e-3
        state = AdamState(g.shape, eta=1.0)
        upd = adam_step(state, g)
        deviation = np.abs(upd + np.sign(g))
        np.testing.assert_allclose(deviation, state.eps / (np.abs(g) + state.eps),
                                   rtol=1e-9, atol=1e-18)

    def test_zero_gradient_forever_zero_updates(self):
        state = AdamState((4, 4, 3))
        for _ in range(5):
            upd = adam_step(state, np.zeros((4, 4, 3)))
            assert np.all(upd == 0.0)

    def test_identical_streams_identical_updates(self, rng):
        grads = [rng.standard_normal((6, 6, 1)) for _ in range(7)]
        s1, s2 = AdamState((6, 6, 1)), AdamState((6, 6, 1))
        for g in grads:
            assert np.array_equal(adam_step(s1, g), adam_step(s2, g))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            adam_step(AdamState((4, 4, 1)), np.zeros((4, 5, 1)))


def _mse_objective(ref):
    n = ref.size

    def objective(x):
        d = x - ref
        return float(np.mean(d * d)), (2.0 / n) * d

    return objective


class TestOptimizeImage:
    def test_fixed_point_at_ref(self, rng):
        ref = quantize(rng.uniform(0, 255, (16, 16, 3)))
        plan = IterationPlan(iterations=10,
                             constraints=ConstraintSpec(42.0, "exact", attenuation=False))
        out = optimize_image(ref, ref, _mse_objective(ref), plan)
        np.testing.assert_array_equal(out, ref)

    def test_loss_decreases_toward_target(self, rng):
        ref = quantize(rng.uniform(40, 215, (16, 16, 3)))
        target = quantize(np.clip(ref + 12.0 * rng.standard_normal(ref.shape), 0, 255))
        losses = []
        obj = _mse_objective(target)

        def tracking(x):
            value, grad = obj(x)
            losses.append(value)
            return value, grad

        plan = IterationPlan(iterations=10, eta=1.0,
                             constraints=ConstraintSpec(30.0, "cap", attenuation=False))
        optimize_image(ref, ref, tracking, plan)
        assert losses[-1] < losses[0]
        assert all(b <= a + 1e-9 for a, b in zip(losses[:4], losses[1:5]))

    def test_output_quantized_in_range(self, rng):
        ref = quantize(rng.uniform(0, 255, (16, 16, 3)))
        plan = IterationPlan(iterations=5, eta=2.0,
                             constraints=ConstraintSpec(35.0, "cap", attenuation=False))
        out = optimize_image(ref, ref, _mse_objective(np.zeros_like(ref)), plan)
        assert np.all(out == np.round(out))
        assert out.min() >= 0.0 and out.max() <= 255.0

    def test_cap_budget_respected_after_quantization(self, rng):
        for seed in range(5):
            r = np.random.default_rng(seed)
            ref = quantize(r.uniform(0, 255, (16, 16, 3)))
            target = quantize(r.uniform(0, 255, (16, 16, 3)))
            plan = IterationPlan(iterations=20, eta=3.0,
                                 constraints=ConstraintSpec(40.0, "cap", attenuation=False))
            out = optimize_image(ref, ref, _mse_objective(target), plan)
            assert psnr(ref, out) >= 40.0

    def test_nonfinite_loss_reports_iteration(self, rng):
        ref = quantize(rng.uniform(0, 255, (16, 16, 3)))
        calls = {"n": 0}

        def bad(x):
            calls["n"] += 1
            if calls["n"] >= 3:
                return float("nan"), np.zeros_like(x)
            return 0.0, np.ones_like(x)

        plan = IterationPlan(iterations=10,
                             constraints=ConstraintSpec(42.0, "exact", attenuation=False))
        with pytest.raises(NumericError, match="iteration 2"):
            optimize_image(ref, ref, bad, plan)

    def test_deterministic(self, rng):
        ref = quantize(rng.uniform(0, 255, (16, 16, 3)))
        target = quantize(rng.uniform(0, 255, (16, 16, 3)))
        plan = IterationPlan(iterations=15, eta=1.0,
                             constraints=ConstraintSpec(38.0, "cap", attenuation=False))
        a = optimize_image(ref, ref, _mse_objective(target), plan)
        b = optimize_image(ref, ref, _mse_objective(target), plan)
        assert np.array_equal(a, b)

    def test_plan_validation(self):
        with pytest.raises(ParameterError):
            IterationPlan(iterations=0)
        with pytest.raises(ParameterError):
            IterationPlan(lam=-1.0)
