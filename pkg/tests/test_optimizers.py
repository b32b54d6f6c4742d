import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cadam import (
    AdamState,
    BaselineSchedule,
    BaselineState,
    CAdamState,
    CompositionalProblem,
    InnerBatch,
    InvalidConfigError,
    NumericFailureError,
    SampleStreams,
    ScheduleConfig,
    StepParams,
    adam_step,
    ascpg_step,
    cadam_run,
    cadam_step,
    identity_problem,
    quad_compose_problem,
    scgd_step,
    sgd_step,
)
from cadam.core import KIND_OUTER_GRAD
from cadam.problems import QuadCompose


def constant_outer(value):
    value = np.asarray(value, dtype=float)

    def outer(y, K, rng):
        return np.tile(value, (K, 1))

    return outer


def params(alpha=0.1, beta=1.0, gamma1=0.0, gamma2=0.0, k=1, epsilon=1e-8):
    return StepParams(alpha=alpha, beta=beta, k1=k, k2=k, k3=k,
                      gamma1=gamma1, gamma2=gamma2, epsilon=epsilon)


def quad_problem(p=2, q=3, seed=0, noise=(0.0, 0.0, 0.0)):
    rng = np.random.default_rng(seed)
    return quad_compose_problem(
        QuadCompose(A=rng.standard_normal((q, p)), b=rng.standard_normal(q), noise_scales=noise)
    )


class TestCAdamStep:
    def test_zero_gradient_fixed_point(self):
        prob = identity_problem(constant_outer(np.zeros(2)), p=2)
        state = CAdamState.init(prob, np.array([0.4, -0.2]))
        nxt, rep = cadam_step(prob, state, params(), SampleStreams(0))
        assert np.array_equal(nxt.x, state.x)
        assert np.array_equal(nxt.m, np.zeros(2))
        assert np.array_equal(nxt.v, np.zeros(2))
        assert np.array_equal(rep.composite_grad_estimate, np.zeros(2))

    def test_full_tracking_weight_pins_y_to_new_iterate(self):
        prob = identity_problem(constant_outer(np.array([1.0, 2.0])), p=2)
        state = CAdamState.init(prob, np.array([1.0, 1.0]))
        nxt, _ = cadam_step(prob, state, params(beta=1.0), SampleStreams(0))
        assert np.array_equal(nxt.z, nxt.x)
        assert np.array_equal(nxt.y, nxt.x)

    def test_one_dimensional_hand_step(self):
        # estimate 2, gamma1 = gamma2 = 0, alpha = 0.1, epsilon = 1e-8, beta = 1
        prob = identity_problem(constant_outer(np.array([2.0])), p=1)
        state = CAdamState.init(prob, np.zeros(1))
        nxt, _ = cadam_step(prob, state, params(alpha=0.1, beta=1.0), SampleStreams(0))
        assert nxt.m[0] == pytest.approx(2.0)
        assert nxt.v[0] == pytest.approx(4.0)
        assert nxt.x[0] == pytest.approx(-0.1 * 2.0 / (2.0 + 1e-8), abs=1e-15)
        assert nxt.y[0] == nxt.x[0]

    def test_zero_beta_rejected(self):
        prob = identity_problem(constant_outer(np.zeros(1)), p=1)
        state = CAdamState.init(prob, np.zeros(1))
        with pytest.raises(InvalidConfigError):
            cadam_step(prob, state, params(beta=0.0), SampleStreams(0))

    def test_extrapolation_identity_every_step(self):
        prob = quad_problem(noise=(0.05, 0.05, 0.05))
        cfg = ScheduleConfig(C_beta=0.5)
        streams = SampleStreams(3)
        state = CAdamState.init(prob, np.ones(2))
        for t in range(1, 40):
            prev_x = state.x
            state, _ = cadam_step(prob, state, cfg.at(t), streams)
            beta = cfg.at(t).beta
            lhs = state.z - prev_x
            rhs = (state.x - prev_x) / beta
            assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_moment_invariants_along_run(self):
        prob = quad_problem(noise=(0.1, 0.1, 0.1))
        cfg = ScheduleConfig()
        streams = SampleStreams(1)
        state = CAdamState.init(prob, np.ones(2))
        max_est = 0.0
        for t in range(1, 120):
            state, rep = cadam_step(prob, state, cfg.at(t), streams)
            assert (state.v >= 0).all()
            max_est = max(max_est, np.linalg.norm(rep.composite_grad_estimate))
            assert np.linalg.norm(state.m) <= max_est * (1 + 1e-12)


class TestCAdamRun:
    def test_single_step_trace(self):
        prob = quad_problem()
        x_out, trace = cadam_run(prob, np.zeros(2), ScheduleConfig(), 1, SampleStreams(0))
        assert len(trace) == 1
        assert trace.t[0] == 1

    def test_reference_sequence_deterministic_quadratic(self):
        """Five steps against an independently scripted update evaluation."""
        rng = np.random.default_rng(8)
        A = rng.standard_normal((3, 2))
        b = rng.standard_normal(3)
        prob = quad_compose_problem(QuadCompose(A=A, b=b, noise_scales=(0, 0, 0)))
        cfg = ScheduleConfig(C_alpha=0.05, C_beta=0.5, mu=0.8)
        x_ref = np.array([1.0, -1.0])
        y_ref = np.zeros(3)
        m_ref = np.zeros(2)
        v_ref = np.zeros(2)
        xs = []
        for t in range(1, 6):
            alpha = 0.05 / t**0.2
            beta = 0.5
            g1 = 0.8**t
            g2 = min(max(1.0 - (0.05 / t**0.4) * (1.0 - g1) ** 2, 0.0), 1.0 - 1e-12)
            est = A.T @ y_ref  # grad f(y) = y; mean Jacobian = A
            m_ref = g1 * m_ref + (1 - g1) * est
            v_ref = g2 * v_ref + (1 - g2) * est**2
            x_new = x_ref - alpha * m_ref / (np.sqrt(v_ref) + 1e-8)
            z_new = (1 - 1 / beta) * x_ref + (1 / beta) * x_new
            y_ref = (1 - beta) * y_ref + beta * (A @ z_new + b)
            x_ref = x_new
            xs.append(x_ref.copy())

        state = CAdamState.init(prob, np.array([1.0, -1.0]))
        streams = SampleStreams(0)
        for t in range(1, 6):
            state, _ = cadam_step(prob, state, cfg.at(t), streams)
            assert np.allclose(state.x, xs[t - 1], rtol=1e-12, atol=1e-12)

    def test_uniform_rule_reproducible(self):
        prob = quad_problem(noise=(0.1, 0.1, 0.1))
        a, _ = cadam_run(prob, np.ones(2), ScheduleConfig(), 20, SampleStreams(9))
        b, _ = cadam_run(prob, np.ones(2), ScheduleConfig(), 20, SampleStreams(9))
        assert np.array_equal(a, b)

    def test_output_rules(self):
        prob = quad_problem()
        for rule in ("uniform-iterate", "last-iterate", "best-evaluated"):
            x_out, _ = cadam_run(
                prob, np.ones(2), ScheduleConfig(), 5, SampleStreams(0), output_rule=rule
            )
            assert x_out.shape == (2,)
        with pytest.raises(InvalidConfigError):
            cadam_run(prob, np.ones(2), ScheduleConfig(), 5, SampleStreams(0), output_rule="nope")

    def test_best_evaluated_needs_exact_objective(self):
        prob = identity_problem(constant_outer(np.zeros(2)), p=2)
        with pytest.raises(InvalidConfigError):
            cadam_run(prob, np.zeros(2), ScheduleConfig(), 3, SampleStreams(0),
                      output_rule="best-evaluated")

    def test_sample_accounting_matches_schedule(self):
        prob = quad_problem(noise=(0.1, 0.1, 0.1))
        cfg = ScheduleConfig()
        _, trace = cadam_run(prob, np.ones(2), cfg, 50, SampleStreams(2))
        expected = np.cumsum([cfg.at(t).samples for t in range(1, 51)])
        assert np.array_equal(trace.cumulative_samples, expected)

    def test_post_step_hook_applies(self):
        prob = quad_problem(noise=(0.1, 0.1, 0.1))
        seen = []

        def clip(x):
            x = np.clip(x, -0.01, 0.01)
            seen.append(x.copy())
            return x

        cadam_run(prob, np.zeros(2), ScheduleConfig(), 30, SampleStreams(0), post_step=clip)
        assert len(seen) == 30
        assert all((np.abs(x) <= 0.01 + 1e-15).all() for x in seen)

    def test_numeric_failure_reports_step(self):
        def bad_inner(z, K, rng, need_jacobian=True):
            values = np.tile(z, (K, 1))
            if need_jacobian:
                return InnerBatch(values=values, jacobians=np.tile(np.eye(2), (K, 1, 1)))
            return InnerBatch(values=values * np.nan)

        prob = CompositionalProblem(p=2, q=2, inner=bad_inner,
                                    outer=lambda y, K, rng: np.tile(y, (K, 1)))
        with pytest.raises(NumericFailureError) as err:
            cadam_run(prob, np.ones(2), ScheduleConfig(), 5, SampleStreams(0))
        assert err.value.t == 1


class TestCAdamReducesToAdam:
    def test_identity_composition_matches_reference_adam(self):
        p = 4
        rng_mk = np.random.default_rng(77)
        for seed in range(3):
            Q = rng_mk.standard_normal((p, p))
            c = rng_mk.standard_normal(p)

            def outer(y, K, rng):
                return np.tile(Q @ y + c, (K, 1)) + 0.1 * rng.standard_normal((K, p))

            prob = identity_problem(outer, p)
            cfg = ScheduleConfig(C_alpha=0.05, C_beta=1.0, mu=0.9)
            x1 = rng_mk.standard_normal(p)

            state = CAdamState.init(prob, x1)
            ref = AdamState.init(x1)
            y_ref = np.zeros(p)
            streams = SampleStreams(seed)
            for t in range(1, 101):
                s = cfg.at(t)
                state, _ = cadam_step(prob, state, s, streams)
                grad = outer(y_ref, 1, streams.stream(t, KIND_OUTER_GRAD)).mean(axis=0)
                ref = adam_step(ref, grad, s.alpha, s.gamma1, s.gamma2, s.epsilon)
                y_ref = ref.x
                assert np.max(np.abs(state.x - ref.x)) <= 1e-12


class TestBaselines:
    def test_scgd_zero_gradients_keep_x(self):
        prob = identity_problem(constant_outer(np.zeros(2)), p=2)
        state = BaselineState.init(prob, np.array([1.0, 2.0]))
        nxt, _ = scgd_step(prob, state, 1, SampleStreams(0))
        assert np.array_equal(nxt.x, state.x)

    def test_scgd_full_tracking_weight(self):
        prob = quad_problem()
        state = BaselineState.init(prob, np.array([0.5, -0.5]))
        sched = BaselineSchedule(C_beta=1.0, b=0.0)
        nxt, _ = scgd_step(prob, state, 1, SampleStreams(0), sched)
        assert np.allclose(nxt.y, prob.exact_inner(state.x))

    def test_scgd_hand_step_on_quadratic(self):
        # p = q = 1, g(x) = 2x + 1 exactly, f(y) = y^2/2
        prob = quad_compose_problem(
            QuadCompose(A=np.array([[2.0]]), b=np.array([1.0]), noise_scales=(0, 0, 0))
        )
        sched = BaselineSchedule(C_alpha=0.1, C_beta=1.0, a=0.75, b=0.5)
        state = BaselineState.init(prob, np.array([1.0]))
        nxt, _ = scgd_step(prob, state, 1, SampleStreams(0), sched)
        # y1 = g(1) = 3; x1 = 1 - 0.1 * (2 * 3) = 0.4
        assert nxt.y[0] == pytest.approx(3.0)
        assert nxt.x[0] == pytest.approx(0.4)

    def test_ascpg_zero_gradients_keep_x(self):
        prob = identity_problem(constant_outer(np.zeros(2)), p=2)
        state = BaselineState.init(prob, np.array([1.0, 2.0]))
        nxt, _ = ascpg_step(prob, state, 1, SampleStreams(0))
        assert np.array_equal(nxt.x, state.x)

    def test_ascpg_hand_step_on_quadratic(self):
        prob = quad_compose_problem(
            QuadCompose(A=np.array([[2.0]]), b=np.array([1.0]), noise_scales=(0, 0, 0))
        )
        sched = BaselineSchedule(C_alpha=0.1, C_beta=1.0, a=0.75, b=0.5)
        state = BaselineState.init(prob, np.array([1.0]))
        nxt, _ = ascpg_step(prob, state, 1, SampleStreams(0), sched)
        # grad f at y = 0 is 0: x unchanged, z = x, y = g(x) = 3
        assert nxt.x[0] == pytest.approx(1.0)
        assert nxt.y[0] == pytest.approx(3.0)

    def test_ascpg_extrapolation_matches_formula(self):
        prob = quad_problem(noise=(0.05, 0.05, 0.05))
        sched = BaselineSchedule(C_alpha=0.01, C_beta=0.5, b=0.0)
        state = BaselineState.init(prob, np.ones(2))
        streams = SampleStreams(4)
        # after the first step y blends g at the extrapolated point
        nxt, _ = ascpg_step(prob, state, 1, streams, sched)
        est_dir = nxt.x - state.x
        z = state.x + est_dir / sched.beta(1)
        expected_y = (1 - sched.beta(1)) * state.y + sched.beta(1) * prob.exact_inner(z)
        assert np.allclose(nxt.y, expected_y, rtol=1e-12)


class TestPlainOptimizers:
    def test_adam_zero_gradient(self):
        s = AdamState.init(np.array([1.0, -1.0]))
        nxt = adam_step(s, np.zeros(2), 0.1, 0.9, 0.999)
        assert np.array_equal(nxt.x, s.x)

    def test_adam_hand_step(self):
        s = AdamState.init(np.array([0.0]))
        nxt = adam_step(s, np.array([2.0]), 0.1, 0.0, 0.0, 1e-8)
        assert nxt.m[0] == 2.0
        assert nxt.v[0] == 4.0
        assert nxt.x[0] == pytest.approx(-0.1 * 2.0 / (2.0 + 1e-8), abs=1e-15)

    def test_sgd_examples(self):
        assert sgd_step(np.array([1.0]), np.array([2.0]), 0.1)[0] == pytest.approx(0.8)
        x = np.zeros(3)
        assert np.array_equal(sgd_step(x, np.zeros(3), 0.5), x)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_sgd_closed_form(self, seed):
        rng = np.random.default_rng(seed)
        x, g = rng.standard_normal(4), rng.standard_normal(4)
        alpha = float(rng.uniform(0, 2))
        assert np.array_equal(sgd_step(x, g, alpha), x - alpha * g)
