import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from jointsim.errors import ConfigurationError, SimulationError
from jointsim.experiments import example1_setup, example1_spec
from jointsim.hazards import ConstantHazard
from jointsim.model import DriftModel, LinearMixedModel, LongitudinalSpec, ModelSetup
from jointsim.simulate import (
    simulate_counting_paths,
    simulate_drift_paths,
    simulate_joint_samples,
    simulate_linear_mixed_paths,
    stack_samples,
)


def lm_spec(alpha, z1, z2, beta_mean=0.0, beta_var=1.0, err_mean=0.0, err_var=1.0, m=1):
    lm = LinearMixedModel(
        alpha=np.full(m, alpha),
        beta_mean=np.full(m, beta_mean), beta_var=np.full(m, beta_var),
        err_mean=np.full(m, err_mean), err_var=np.full(m, err_var),
        z1=z1, z2=z2,
    )
    return LongitudinalSpec(p=m, linear_mixed=lm, linear_mixed_dims=tuple(range(m)))


def drift_spec(sampler, initial, m=1):
    return LongitudinalSpec(p=m, drift=DriftModel(n_dims=m, sampler=sampler, initial=initial),
                            drift_dims=tuple(range(m)))


def counting_only_setup(rate=1.0, b_c=0.0):
    spec = LongitudinalSpec(p=1, counting_index=0)
    return ModelSetup(a=spec, b=np.array([0.0]), b_c=np.array([b_c]),
                      lambda0=ConstantHazard(0.0), lambda0_c=ConstantHazard(rate))


def constant_covariate_setup(rate=1.0):
    spec = LongitudinalSpec(p=1, constants={0: 0.0})
    return ModelSetup(a=spec, b=np.array([0.0]), b_c=np.array([0.0]),
                      lambda0=ConstantHazard(rate), lambda0_c=ConstantHazard(0.0))


class TestLinearMixed:
    def test_constant_when_configs_are_zero(self):
        spec = lm_spec(alpha=3.0, z1=0.0, z2=0.0)
        grid = simulate_linear_mixed_paths(spec, t0=0.0, dt=0.1, n_steps=20, N=50, seed=1)
        np.testing.assert_array_equal(grid.values[-1], grid.values[0])

    def test_deterministic_linear_flow(self):
        # beta and e degenerate at 0, z1(t) = t, alpha = 2: value is 2 k dt exactly
        spec = lm_spec(alpha=2.0, z1=lambda t: np.asarray(t, float), z2=0.0,
                       beta_var=0.0, err_var=0.0)
        dt = 0.125
        grid = simulate_linear_mixed_paths(spec, t0=0.0, dt=dt, n_steps=16, N=3, seed=2)
        for k in range(17):
            np.testing.assert_array_equal(grid.values[k], np.full((3, 1), 2.0 * k * dt))

    def test_benchmark_variance_at_t1(self):
        # beta * t + e with both standard normal: Var at t=1 is 1 + t^2 = 2
        spec = example1_spec()
        grid = simulate_linear_mixed_paths(spec, t0=0.0, dt=0.05, n_steps=20, N=5000, seed=3)
        at_t1 = grid.values[20, :, :6]
        var = at_t1.var(axis=0, ddof=1)
        assert np.all(np.abs(var - 2.0) < 0.15)

    def test_weak_convergence_moments(self):
        # mean 0 and variance 1 + t^2 at t in {0.5, 1, 2} within 4 standard errors
        spec = example1_spec()
        N = 5000
        grid = simulate_linear_mixed_paths(spec, t0=0.0, dt=0.05, n_steps=40, N=N, seed=4)
        for k, t in [(10, 0.5), (20, 1.0), (40, 2.0)]:
            x = grid.values[k, :, :6]
            target_var = 1.0 + t * t
            se_mean = math.sqrt(target_var / N)
            se_var = target_var * math.sqrt(2.0 / (N - 1))
            assert np.all(np.abs(x.mean(axis=0)) < 4 * se_mean)
            assert np.all(np.abs(x.var(axis=0, ddof=1) - target_var) < 4 * se_var)

    def test_per_trajectory_clocks(self):
        # trajectory clocks shift the configuration increments
        spec = lm_spec(alpha=1.0, z1=lambda t: np.asarray(t, float) ** 2, z2=0.0,
                       beta_var=0.0, err_var=0.0)
        t0 = np.array([0.0, 1.0])
        grid = simulate_linear_mixed_paths(spec, t0=t0, dt=0.5, n_steps=2, N=2, seed=5)
        # increment over one step from t0: (t0+dt)^2 - t0^2
        np.testing.assert_allclose(grid.values[1, 0, 0], 0.25)
        np.testing.assert_allclose(grid.values[1, 1, 0], 2.25 - 1.0)

    def test_requires_linear_mixed(self):
        spec = LongitudinalSpec(p=1, constants={0: 0.0})
        with pytest.raises(ConfigurationError):
            simulate_linear_mixed_paths(spec, t0=0.0, dt=0.1, n_steps=1, N=1, seed=0)


class TestDrift:
    def test_zero_drift_constant(self):
        spec = drift_spec(lambda rng, z, t: np.zeros_like(z), initial=lambda rng: np.array([1.5]))
        grid = simulate_drift_paths(spec, t0=0.0, dt=0.1, n_steps=10, N=4, seed=6)
        np.testing.assert_array_equal(grid.values[-1], grid.values[0])
        np.testing.assert_array_equal(grid.values[0], np.full((4, 1), 1.5))

    def test_constant_drift_linear(self):
        c = 0.7
        spec = drift_spec(lambda rng, z, t: np.full_like(z, c), initial=lambda rng: np.array([0.0]))
        dt = 0.25
        grid = simulate_drift_paths(spec, t0=0.0, dt=dt, n_steps=8, N=2, seed=7)
        for k in range(9):
            np.testing.assert_allclose(grid.values[k], np.full((2, 1), c * k * dt), atol=1e-12)

    def test_exponential_flow(self):
        # point-mass drift at the current state follows z' = z; terminal value ~ e
        spec = drift_spec(lambda rng, z, t: z, initial=lambda rng: np.array([1.0]))
        grid = simulate_drift_paths(spec, t0=0.0, dt=1e-3, n_steps=1000, N=1, seed=8)
        terminal = grid.values[-1, 0, 0]
        assert abs(terminal - math.e) / math.e < 0.005

    def test_nonfinite_drift_aborts(self):
        spec = drift_spec(lambda rng, z, t: np.full_like(z, np.nan), initial=0.0)
        with pytest.raises(SimulationError):
            simulate_drift_paths(spec, t0=0.0, dt=0.1, n_steps=2, N=1, seed=9)

    def test_requires_drift(self):
        spec = LongitudinalSpec(p=1, constants={0: 0.0})
        with pytest.raises(ConfigurationError):
            simulate_drift_paths(spec, t0=0.0, dt=0.1, n_steps=1, N=1, seed=0)


class TestCounting:
    def test_zero_intensity_never_jumps(self):
        setup = counting_only_setup(rate=0.0)
        grid = simulate_counting_paths(setup, dt=0.1, n_steps=30, N=40, seed=10)
        assert np.all(grid.values[:, :, 0] == 0.0)
        assert np.all(grid.jump_idx == -1)

    def test_poisson_oracle(self):
        # unit intensity over [0, 2]: jump count ~ Poisson(2)
        setup = counting_only_setup(rate=1.0)
        grid = simulate_counting_paths(setup, dt=0.01, n_steps=200, N=5000, seed=11)
        counts = grid.values[-1, :, 0]
        assert abs(counts.mean() - 2.0) < 0.1
        assert abs(counts.var(ddof=1) - 2.0) < 0.3

    def test_counting_coordinate_is_cumulative(self):
        setup = counting_only_setup(rate=2.0)
        grid = simulate_counting_paths(setup, dt=0.05, n_steps=40, N=100, seed=12)
        counts = grid.values[:, :, 0]
        steps = np.diff(counts, axis=0)
        assert np.all((steps == 0.0) | (steps == 1.0))
        assert np.all(counts[0] == 0.0)

    def test_requires_counting_dimension(self):
        setup = constant_covariate_setup()
        with pytest.raises(ConfigurationError):
            simulate_counting_paths(setup, dt=0.1, n_steps=10, N=5, seed=0)


class TestJoint:
    def test_tiny_censor_bound(self):
        setup = constant_covariate_setup(rate=1.0)
        samples = simulate_joint_samples(setup, dt=0.01, N=20, censor_bound=1e-6, seed=13)
        assert all(s.censored for s in samples)
        assert all(s.s == pytest.approx(1e-6) for s in samples)

    def test_exponential_event_time_oracle(self):
        setup = constant_covariate_setup(rate=1.0)
        samples = simulate_joint_samples(setup, dt=0.005, N=5000, censor_bound=50.0, seed=14)
        _, s, censored = stack_samples(samples)
        assert not censored.any()
        assert abs(s.mean() - 1.0) < 0.05
        ts = np.linspace(0.0, 3.0, 61)
        emp = (s[None, :] > ts[:, None]).mean(axis=1)
        assert np.max(np.abs(emp - np.exp(-ts))) < 0.03

    def test_sample_count_and_shape(self):
        setup = example1_setup()
        samples = simulate_joint_samples(setup, dt=0.02, N=37, censor_bound=4.0, seed=15)
        assert len(samples) == 37
        assert all(s.w.shape == (7,) for s in samples)
        assert all(np.isfinite(s.w).all() and 0.0 <= s.s <= 4.0 for s in samples)

    def test_bit_identical_reruns(self):
        setup = example1_setup()
        a = simulate_joint_samples(setup, dt=0.02, N=60, censor_bound=3.0, seed=16)
        b = simulate_joint_samples(setup, dt=0.02, N=60, censor_bound=3.0, seed=16)
        wa, sa, ca = stack_samples(a)
        wb, sb, cb = stack_samples(b)
        assert np.array_equal(wa, wb) and np.array_equal(sa, sb) and np.array_equal(ca, cb)

    def test_race_matches_counting_when_terminal_off(self):
        # with terminal intensity identically zero, jump behaviour must be
        # draw-for-draw identical to the counting-only generator
        truth = example1_setup()
        setup = ModelSetup(a=truth.a, b=truth.b, b_c=truth.b_c,
                           lambda0=ConstantHazard(0.0), lambda0_c=truth.lambda0_c)
        dt, n_steps = 0.01, 200
        samples = simulate_joint_samples(setup, dt=dt, N=300, censor_bound=2.0, seed=17)
        grid = simulate_counting_paths(setup, dt=dt, n_steps=n_steps, N=300, seed=17)
        w, s, censored = stack_samples(samples)
        assert censored.all()
        np.testing.assert_array_equal(w[:, 6], grid.values[-1, :, 6])
        np.testing.assert_array_equal(w, grid.values[-1])

    def test_discretization_consistency(self):
        # halving dt moves the mean exponential event time by less than 2 dt
        setup = constant_covariate_setup(rate=1.0)
        m = {}
        for dt in (0.01, 0.005):
            samples = simulate_joint_samples(setup, dt=dt, N=2000, censor_bound=50.0, seed=18)
            _, s, _ = stack_samples(samples)
            m[dt] = s.mean()
        assert abs(m[0.01] - m[0.005]) < 2 * 0.01 * 1.0

    def test_split_halves_iid(self):
        # two-sample KS on the halves should fail to reject in >= 18/20 seeds
        setup = constant_covariate_setup(rate=1.0)
        rejected = 0
        for seed in range(20):
            samples = simulate_joint_samples(setup, dt=0.02, N=400, censor_bound=20.0, seed=seed)
            _, s, _ = stack_samples(samples)
            if ks_2samp(s[:200], s[200:]).pvalue < 0.01:
                rejected += 1
        assert rejected <= 2

    def test_invalid_censor_bound(self):
        setup = constant_covariate_setup()
        with pytest.raises(ConfigurationError):
            simulate_joint_samples(setup, dt=0.01, N=5, censor_bound=0.0, seed=0)
