import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cadam import (
    CompositionalProblem,
    DimensionMismatchError,
    InvalidConfigError,
    ProblemConstants,
    SampleStreams,
    ScheduleConfig,
    composite_smoothness,
    identity_problem,
    portfolio_problem,
    quad_compose_problem,
    sample_inner,
    sample_outer,
)
from cadam.problems import PortfolioData, QuadCompose


class TestSchedule:
    def test_first_step_values(self):
        cfg = ScheduleConfig(C_alpha=0.01, C_beta=0.01, mu=0.9)
        s = cfg.at(1)
        assert s.alpha == pytest.approx(0.01)
        assert s.beta == pytest.approx(0.01)
        assert (s.k1, s.k2, s.k3) == (1, 1, 1)
        assert s.gamma1 == pytest.approx(0.9)
        # 1 - C_alpha * (1 - gamma1)^2 at t = 1
        assert s.gamma2 == pytest.approx(1.0 - 0.01 * 0.01**2)

    def test_power_decay_alpha(self):
        # 32^(1/5) = 2
        assert ScheduleConfig(C_alpha=1.0).at(32).alpha == pytest.approx(0.5)

    def test_batch_growth_exact_power(self):
        # 32^(4/5) = 16, no float-rounding inflation
        assert ScheduleConfig().at(32).k1 == 16
        assert ScheduleConfig().at(32).k3 == 16

    def test_invalid_configs_rejected(self):
        with pytest.raises(InvalidConfigError):
            ScheduleConfig(C_alpha=0.0)
        with pytest.raises(InvalidConfigError):
            ScheduleConfig(mu=1.0)
        with pytest.raises(InvalidConfigError):
            ScheduleConfig(mu=-0.1)
        with pytest.raises(InvalidConfigError):
            ScheduleConfig(C_beta=1.5)
        with pytest.raises(InvalidConfigError):
            ScheduleConfig(C_3=-1.0)

    def test_monotonicity_over_horizon(self):
        cfg = ScheduleConfig()
        params = [cfg.at(t) for t in range(1, 201)]
        alphas = [s.alpha for s in params]
        assert all(a > b for a, b in zip(alphas, alphas[1:]))
        gamma2 = [s.gamma2 for s in params]
        assert all(g2 <= g2n + 1e-15 for g2, g2n in zip(gamma2, gamma2[1:]))
        assert gamma2[-1] < 1.0
        for key in ("k1", "k2", "k3"):
            ks = [getattr(s, key) for s in params]
            assert all(a <= b for a, b in zip(ks, ks[1:]))

    def test_gamma2_clamped_into_unit_interval(self):
        # large C_alpha at t = 1 would push gamma2 negative without the clamp
        s = ScheduleConfig(C_alpha=0.9, C_gamma=0.01, mu=0.5, a=0.0).at(1)
        assert 0.0 <= s.gamma2 < 1.0

    def test_default_exponents_feasible(self):
        assert ScheduleConfig().decay_feasible
        assert not ScheduleConfig(a=0.2, b=0.2).decay_feasible

    def test_samples_property(self):
        s = ScheduleConfig().at(32)
        assert s.samples == s.k1 + s.k2 + s.k3 == 48


class TestSmoothnessConstant:
    @pytest.mark.parametrize(
        "args,expected", [((2, 3, 1, 4), 16.0), ((0, 3, 0, 4), 0.0), ((1, 1, 1, 1), 2.0)]
    )
    def test_examples(self, args, expected):
        assert composite_smoothness(*args) == expected

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1e3), min_size=4, max_size=4))
    def test_matches_direct_formula(self, vals):
        M_g, L_f, L_g, M_f = vals
        assert composite_smoothness(M_g, L_f, L_g, M_f) == M_g * M_g * L_f + L_g * M_f

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            composite_smoothness(-1, 0, 0, 0)


class TestProblemConstants:
    def test_smoothness_property(self):
        c = ProblemConstants(M_f=4.0, M_g=2.0, L_f=3.0, L_g=1.0)
        assert c.L == 16.0

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            ProblemConstants(sigma1_sq=-1.0)


class TestStreams:
    def test_same_key_same_draws(self):
        a = SampleStreams(42).stream(3, 1).standard_normal(8)
        b = SampleStreams(42).stream(3, 1).standard_normal(8)
        assert np.array_equal(a, b)

    def test_distinct_keys_distinct_draws(self):
        s = SampleStreams(42)
        base = s.stream(3, 1).standard_normal(8)
        assert not np.array_equal(base, s.stream(3, 2).standard_normal(8))
        assert not np.array_equal(base, s.stream(4, 1).standard_normal(8))
        assert not np.array_equal(base, SampleStreams(43).stream(3, 1).standard_normal(8))

    def test_batch_size_change_leaves_other_steps_alone(self):
        s = SampleStreams(7)
        later = s.stream(5, 2).standard_normal(4)
        # consume a differently-sized draw at step 4, then re-derive step 5
        s.stream(4, 2).standard_normal(100)
        s.stream(4, 2).standard_normal(3)
        assert np.array_equal(later, s.stream(5, 2).standard_normal(4))


class TestOracles:
    def test_identity_inner_copies_point(self):
        prob = identity_problem(lambda y, K, rng: np.tile(y, (K, 1)), p=3)
        z = np.array([1.0, -2.0, 0.5])
        batch = sample_inner(prob, z, 3, np.random.default_rng(0))
        assert batch.values.shape == (3, 3)
        for k in range(3):
            assert np.array_equal(batch.values[k], z)
            assert np.array_equal(batch.jacobians[k], np.eye(3))

    def test_portfolio_inner_atom(self):
        # rows: the probed atom and one filler
        data = PortfolioData(np.array([[0.5, 0.2], [1.0, 1.0]]))
        prob = portfolio_problem(data)
        z = np.array([1.0, 0.0])
        batch = prob.enumerate_inner(z)
        assert np.allclose(batch.values[0], [1.0, 0.0, -0.5])
        assert np.allclose(batch.jacobians[0][:2], np.eye(2))
        assert np.allclose(batch.jacobians[0][2], [-0.5, -0.2])

    def test_enumeration_hits_every_atom_once(self):
        rng = np.random.default_rng(3)
        data = PortfolioData(rng.standard_normal((5, 2)))
        prob = portfolio_problem(data)
        z = rng.standard_normal(2)
        batch = prob.enumerate_inner(z)
        assert batch.values.shape == (5, 3)
        assert np.allclose(batch.values[:, 2], -data.R @ z)

    def test_outer_quadratic_gradient_is_point(self):
        qc = QuadCompose(A=np.eye(2), b=np.zeros(2), noise_scales=(0, 0, 0))
        prob = quad_compose_problem(qc)
        y = np.array([0.3, -1.0])
        grads = sample_outer(prob, y, 4, np.random.default_rng(0))
        assert np.array_equal(grads, np.tile(y, (4, 1)))

    def test_portfolio_outer_gradient_example(self):
        data = PortfolioData(np.array([[0.5, 0.2], [0.5, 0.2]]))
        prob = portfolio_problem(data)
        grads = prob.enumerate_outer(np.array([1.0, 0.0, -0.3]))
        assert np.allclose(grads[0], [-0.3, -0.12, 0.4])

    def test_portfolio_outer_gradient_at_zero(self):
        data = PortfolioData(np.array([[1.0, 1.0], [1.0, 1.0]]))
        prob = portfolio_problem(data)
        grads = prob.enumerate_outer(np.zeros(3))
        assert np.allclose(grads[0], [-1.0, -1.0, 0.0])

    def test_dimension_mismatch_raises(self):
        prob = identity_problem(lambda y, K, rng: np.tile(y, (K, 1)), p=3)
        rng = np.random.default_rng(0)
        with pytest.raises(DimensionMismatchError):
            sample_inner(prob, np.zeros(4), 1, rng)
        with pytest.raises(DimensionMismatchError):
            sample_outer(prob, np.zeros(2), 1, rng)

    def test_bad_batch_size_raises(self):
        prob = identity_problem(lambda y, K, rng: np.tile(y, (K, 1)), p=2)
        with pytest.raises(ValueError):
            sample_inner(prob, np.zeros(2), 0, np.random.default_rng(0))


class TestFiniteSumUnbiasedness:
    def test_inner_mean_over_all_atoms_is_exact(self):
        rng = np.random.default_rng(11)
        data = PortfolioData(rng.standard_normal((7, 3)))
        prob = portfolio_problem(data)
        x = rng.standard_normal(3)
        mean_val = prob.enumerate_inner(x).values.mean(axis=0)
        exact = prob.exact_inner(x)
        assert np.linalg.norm(mean_val - exact) <= 1e-12 * (1 + np.linalg.norm(exact))

    def test_pairwise_composite_factorizes(self):
        rng = np.random.default_rng(12)
        data = PortfolioData(rng.standard_normal((6, 3)))
        prob = portfolio_problem(data)
        x, y = rng.standard_normal(3), rng.standard_normal(4)
        jac = prob.enumerate_inner(x).jacobians
        grads = prob.enumerate_outer(y)
        pairwise = np.mean(
            [jac[j].T @ grads[i] for i in range(6) for j in range(6)], axis=0
        )
        factored = jac.mean(axis=0).T @ grads.mean(axis=0)
        assert np.linalg.norm(pairwise - factored) <= 1e-12 * (
            1 + np.linalg.norm(factored)
        )

    def test_seed_determinism_of_sampling(self):
        data = PortfolioData(np.random.default_rng(1).standard_normal((9, 2)))
        prob = portfolio_problem(data)
        x = np.array([0.2, -0.1])
        a = sample_inner(prob, x, 5, SampleStreams(5).stream(1, 1)).values
        b = sample_inner(prob, x, 5, SampleStreams(5).stream(1, 1)).values
        assert np.array_equal(a, b)
