import math

import numpy as np
import pytest

from jointsim.density import (
    EmpiricalPdf,
    Partition,
    bandwidth_vector,
    build_partition,
    censored_pdf_eval,
    empirical_pdf_eval,
    gaussian_kernel,
    log_likelihood,
    mean_log_likelihood,
    uncensored_pdf_eval,
)
from jointsim.errors import ContractViolation, DegenerateCellWarning, DegenerateWindowError
from jointsim.model import ObservedDataset, Subject


def dataset_from_events(times, covs, censor_bound=None, missing=None, subjects=None):
    covs = np.atleast_2d(np.asarray(covs, dtype=float))
    p = covs.shape[1]
    if subjects is None:
        subjects = [Subject(event_time=t, event_covariates=c) for t, c in zip(times, covs)]
    missing = frozenset(range(p)) if missing is None else frozenset(missing)
    bound = censor_bound if censor_bound is not None else max(times) + 1.0
    return ObservedDataset(subjects=tuple(subjects), p=p, missing_dims=missing,
                           censor_bound=bound)


class TestGaussianKernel:
    def test_standard_normal_at_mode(self):
        assert gaussian_kernel([0.0], [1.0], d=1) == pytest.approx(1 / math.sqrt(2 * math.pi))
        assert gaussian_kernel([0.0], [1.0], d=1) == pytest.approx(0.39894, abs=5e-6)

    def test_product_form(self):
        assert gaussian_kernel([0.0, 0.0], [1.0, 1.0], d=2) == pytest.approx(1 / (2 * math.pi))

    def test_bandwidth_scaling(self):
        assert gaussian_kernel([0.0], [0.5], d=1) == pytest.approx(2 / math.sqrt(2 * math.pi))

    def test_nonpositive_bandwidth(self):
        with pytest.raises(ContractViolation):
            gaussian_kernel([0.0], [0.0], d=1)


class TestEmpiricalPdf:
    def test_single_sample_at_atom(self):
        for p in (1, 3, 7):
            pdf = EmpiricalPdf(w=np.zeros((1, p)), s=np.zeros(1), h=np.ones(p + 1))
            d = p + 1
            assert pdf.evaluate(np.zeros(p), 0.0) == pytest.approx((2 * math.pi) ** (-d / 2))

    def test_quadrature_integrates_to_one(self):
        rng = np.random.default_rng(5)
        w = rng.normal(size=(40, 1))
        s = rng.exponential(size=40)
        h = bandwidth_vector(w, s, 0.35)
        pdf = EmpiricalPdf(w=w, s=s, h=h)
        zs = np.linspace(w.min() - 6 * h[0], w.max() + 6 * h[0], 161)
        ts = np.linspace(s.min() - 6 * h[1], s.max() + 6 * h[1], 161)
        zz, tt = np.meshgrid(zs, ts, indexing="ij")
        vals = pdf.evaluate(zz.ravel()[:, None], tt.ravel()).reshape(zz.shape)
        integral = np.trapezoid(np.trapezoid(vals, ts, axis=1), zs)
        assert integral == pytest.approx(1.0, abs=0.02)

    def test_symmetry(self):
        w = np.array([[1.0], [-1.0]])
        s = np.array([0.5, -0.5])
        pdf = EmpiricalPdf(w=w, s=s, h=np.array([1.0, 1.0]))
        x = np.array([0.3])
        assert pdf.evaluate(x, 0.2) == pytest.approx(pdf.evaluate(-x, -0.2))

    def test_strictly_positive_and_finite(self):
        pdf = EmpiricalPdf(w=np.zeros((2, 2)), s=np.zeros(2), h=np.full(3, 0.1))
        val = pdf.log_evaluate(np.array([50.0, -30.0]), 80.0)
        assert np.isfinite(val)

    def test_empty_sample_set_rejected(self):
        with pytest.raises(ContractViolation):
            EmpiricalPdf(w=np.zeros((0, 1)), s=np.zeros(0), h=np.ones(2))

    def test_consistency_as_samples_grow(self):
        # density of a 2-d standard normal, estimated with h = N^{-1/6}
        target = lambda pts: np.exp(-0.5 * np.sum(pts ** 2, axis=1)) / (2 * math.pi)
        grid = np.linspace(-2, 2, 21)
        zz, tt = np.meshgrid(grid, grid, indexing="ij")
        pts = np.column_stack([zz.ravel(), tt.ravel()])
        maes = {500: [], 5000: []}
        for seed in range(5):
            rng = np.random.default_rng(seed)
            for n in (500, 5000):
                x = rng.standard_normal((n, 2))
                h = n ** (-1 / 6)
                pdf = EmpiricalPdf(w=x[:, :1], s=x[:, 1], h=np.array([h, h]))
                est = pdf.evaluate(pts[:, :1], pts[:, 1])
                maes[n].append(np.mean(np.abs(est - target(pts))))
        assert np.mean(maes[5000]) < np.mean(maes[500])


class TestLogLikelihood:
    def test_single_observation(self):
        pdf = EmpiricalPdf(w=np.array([[0.4]]), s=np.array([1.0]), h=np.ones(2))
        data = dataset_from_events([0.9], [[0.1]])
        val = log_likelihood(lambda setup: pdf, data, setup=None)
        assert val == pytest.approx(math.log(pdf.evaluate(np.array([0.1]), 0.9)))

    def test_duplication_doubles(self):
        pdf = EmpiricalPdf(w=np.array([[0.4], [1.2]]), s=np.array([1.0, 2.0]), h=np.ones(2))
        data1 = dataset_from_events([0.9, 1.4], [[0.1], [0.6]])
        data2 = dataset_from_events([0.9, 1.4, 0.9, 1.4], [[0.1], [0.6], [0.1], [0.6]])
        v1 = log_likelihood(lambda _: pdf, data1, None)
        v2 = log_likelihood(lambda _: pdf, data2, None)
        assert v2 == pytest.approx(2 * v1)

    def test_frozen_sum_of_logs(self):
        # three observations with known per-point densities 0.2, 0.5, 0.1
        class StubPdf:
            def log_evaluate(self, z, s):
                dens = {0.1: 0.2, 0.2: 0.5, 0.3: 0.1}
                return np.array([math.log(dens[round(float(t), 6)]) for t in np.atleast_1d(s)])

        data = dataset_from_events([0.1, 0.2, 0.3], [[0.0], [0.0], [0.0]])
        val = log_likelihood(lambda _: StubPdf(), data, None)
        assert val == pytest.approx(math.log(0.01))
        assert val == pytest.approx(-4.60517, abs=5e-6)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(20, 2))
        s = rng.exponential(size=20)
        h = bandwidth_vector(w, s, 0.3)
        data_times = rng.exponential(size=8)
        data_covs = rng.normal(size=(8, 2))
        perm = rng.permutation(8)
        pdf_a = EmpiricalPdf(w=w, s=s, h=h)
        sperm = rng.permutation(20)
        pdf_b = EmpiricalPdf(w=w[sperm], s=s[sperm], h=h)
        d1 = dataset_from_events(data_times, data_covs)
        d2 = dataset_from_events(data_times[perm], data_covs[perm])
        v1 = log_likelihood(lambda _: pdf_a, d1, None)
        v2 = log_likelihood(lambda _: pdf_b, d2, None)
        assert v1 == pytest.approx(v2, rel=1e-12)


class TestWindowedPdfs:
    samples = (np.array([[0.0], [1.0], [2.0]]), np.array([0.3, 0.9, 2.0]))

    def test_outside_window_is_one(self):
        assert uncensored_pdf_eval(self.samples, (0.0, 0.6), np.array([0.5]), 1.4,
                                   h=np.array([1.0, 1.0])) == 1.0

    def test_full_window_matches_empirical_pdf(self):
        w, s = self.samples
        h = np.array([0.8, 0.8])
        pdf = EmpiricalPdf(w=w, s=s, h=h)
        val = uncensored_pdf_eval(self.samples, (0.0, 5.0), np.array([0.5]), 0.9, h=h)
        assert val == pytest.approx(pdf.evaluate(np.array([0.5]), 0.9), rel=1e-12)

    def test_single_sample_window(self):
        # window containing exactly one atom, queried at that atom
        w, s = np.array([[0.0], [5.0]]), np.array([1.0, 9.0])
        h = np.array([1.0, 1.0])
        val = uncensored_pdf_eval((w, s), (0.5, 1.5), np.array([0.0]), 1.0, h=h)
        n_t = 2  # both atoms at risk at t = 0.5
        assert val == pytest.approx(float(gaussian_kernel([0.0, 0.0], h)) / n_t)

    def test_at_risk_normalization(self):
        w, s = self.samples
        h = np.array([1.0, 1.0])
        v1 = uncensored_pdf_eval((w, s), (0.5, 1.5), np.array([1.0]), 0.9, h=h)
        # at risk at 0.5: s in {0.9, 2.0} -> 2; window atoms: {0.9}
        k = float(gaussian_kernel([0.0, 0.0], h))
        assert v1 == pytest.approx(k / 2)

    def test_empty_at_risk_raises(self):
        with pytest.raises(DegenerateWindowError):
            uncensored_pdf_eval(self.samples, (5.0, 6.0), np.array([0.0]), 5.5,
                                h=np.array([1.0, 1.0]))

    def test_censored_before_threshold_is_one(self):
        assert censored_pdf_eval(self.samples, 1.5, np.array([0.2]), (0,), s=0.7,
                                 h=np.array([1.0, 1.0])) == 1.0

    def test_censored_full_projection(self):
        w = np.array([[0.0, 1.0], [2.0, -1.0]])
        s = np.array([1.0, 3.0])
        h = np.array([1.0, 1.0, 1.0])
        val = censored_pdf_eval((w, s), 2.0, np.array([1.8, -0.5]), (0, 1), s=2.5, h=h)
        expect = float(gaussian_kernel([1.8 - 2.0, -0.5 + 1.0], [1.0, 1.0])) / 1
        # at risk at t' = 2: only s = 3 -> n_t = 1; survivor set likewise
        assert val == pytest.approx(expect)

    def test_censored_no_survivors_raises(self):
        with pytest.raises(DegenerateWindowError):
            censored_pdf_eval(self.samples, 2.5, np.array([0.2]), (0,), s=3.0,
                              h=np.array([1.0, 1.0]))


class TestPartition:
    def test_equal_length(self):
        data = dataset_from_events([0.4, 2.0], [[0.0], [0.0]])
        part = build_partition(data, mode="equal-length", m_hint=4)
        np.testing.assert_allclose(part.interior, [0.5, 1.0, 1.5, 2.0])
        assert part.m == 4

    def test_uniform_times_monthly(self):
        subjects = []
        for term in (3, 5, 8):
            times = np.arange(1.0, term + 1.0)
            subjects.append(Subject(
                event_time=float(term), event_covariates=[0.0],
                obs_times=times, obs_dims=np.zeros(len(times), dtype=int),
                obs_values=np.linspace(0, 1, len(times))))
        data = dataset_from_events([3, 5, 8], [[0.0]] * 3, missing=set(), subjects=subjects)
        part = build_partition(data, mode="uniform-times")
        np.testing.assert_allclose(part.interior, np.arange(1.0, 9.0))

    def test_uniform_times_mode_mismatch(self):
        subjects = [
            Subject(event_time=2.0, event_covariates=[0.0], obs_times=[1.0],
                    obs_dims=[0], obs_values=[0.1]),
            Subject(event_time=3.0, event_covariates=[0.0], obs_times=[1.37, 2.0],
                    obs_dims=[0, 0], obs_values=[0.1, 0.2]),
        ]
        data = dataset_from_events([2.0, 3.0], [[0.0]] * 2, missing=set(), subjects=subjects)
        with pytest.raises(ContractViolation):
            build_partition(data, mode="uniform-times")

    def test_single_subject_single_observation(self):
        subjects = [Subject(event_time=1.7, event_covariates=[0.0], obs_times=[1.7],
                            obs_dims=[0], obs_values=[0.4])]
        data = dataset_from_events([1.7], [[0.0]], missing=set(), subjects=subjects)
        part = build_partition(data, mode="uniform-times")
        assert part.m == 1
        np.testing.assert_allclose(part.boundaries, [0.0, 1.7])


class TestMeanLogLikelihood:
    def test_single_cell_reduces_to_full_likelihood(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=(30, 2))
        s = rng.exponential(size=30)
        h = bandwidth_vector(w, s, 0.4)
        times = rng.uniform(0.1, 1.5, size=6)
        covs = rng.normal(size=(6, 2))
        data = dataset_from_events(times, covs, missing=set())
        t1 = max(s.max(), times.max()) + 1.0
        part = Partition(np.array([0.0, t1]))
        mean_val = mean_log_likelihood((w, s), data, part, h)
        full = log_likelihood(lambda _: EmpiricalPdf(w=w, s=s, h=h), data, None)
        assert mean_val == pytest.approx(full / data.n, rel=1e-12)

    def test_two_cell_hand_computation(self):
        # independent enumeration of every kernel sum with plain math.exp
        w = np.array([[0.0], [1.0], [2.0]])
        s = np.array([0.3, 0.9, 2.0])
        h = np.array([0.7, 0.5])
        sub_a = Subject(event_time=0.5, event_covariates=[0.2])
        sub_b = Subject(event_time=1.0, event_covariates=[0.8], obs_times=[0.3],
                        obs_dims=[0], obs_values=[0.4])
        data = dataset_from_events([0.5, 1.0], [[0.2], [0.8]], missing=set(),
                                   subjects=[sub_a, sub_b])
        part = Partition(np.array([0.0, 0.6, 1.2]))

        def k2(du, dt):
            return (math.exp(-0.5 * (du / 0.7) ** 2) / (0.7 * math.sqrt(2 * math.pi))
                    * math.exp(-0.5 * (dt / 0.5) ** 2) / (0.5 * math.sqrt(2 * math.pi)))

        def k1(du):
            return math.exp(-0.5 * (du / 0.7) ** 2) / (0.7 * math.sqrt(2 * math.pi))

        # cell 1 [0, 0.6): at-risk sim = 3, atoms inside = {(0.0, 0.3)}
        log_u_a = math.log(k2(0.2 - 0.0, 0.5 - 0.3) / 3)
        # subject B survives past 0.6; its value at the boundary interpolates
        # between (0.3, 0.4) and (1.0, 0.8)
        zb = 0.4 + (0.6 - 0.3) / (1.0 - 0.3) * (0.8 - 0.4)
        log_c_b = math.log((k1(zb - 1.0) + k1(zb - 2.0)) / 3)
        # cell 2 [0.6, 1.2): observed at-risk = 1 (B), sim at-risk = 2, atom = (1.0, 0.9)
        log_u_b = math.log(k2(0.8 - 1.0, 1.0 - 0.9) / 2)
        expected = 0.5 * ((log_u_a + log_c_b) / 2 + log_u_b / 1)

        val = mean_log_likelihood((w, s), data, part, h)
        assert val == pytest.approx(expected, abs=1e-10)

    def test_zero_exponent_contributions_vanish(self):
        # a subject dead before the cell start adds nothing to that cell
        w = np.array([[0.0], [1.0]])
        s = np.array([0.5, 1.5])
        h = np.array([1.0, 1.0])
        data = dataset_from_events([0.4, 1.4], [[0.1], [0.2]])
        part = Partition(np.array([0.0, 1.0, 2.0]))
        val, rows = mean_log_likelihood((w, s), data, part, h, collect_cells=True)
        cell2 = [r for r in rows if r[0] == 1]
        assert all(i == 1 for (_, i, _, _) in cell2)

    def test_degenerate_cell_skipped_with_warning(self):
        w = np.array([[0.0], [0.5]])
        s = np.array([0.2, 0.25])
        h = np.array([1.0, 1.0])
        data = dataset_from_events([0.1, 1.5], [[0.0], [0.0]])
        part = Partition(np.array([0.0, 1.0, 2.0]))
        with pytest.warns(DegenerateCellWarning):
            val = mean_log_likelihood((w, s), data, part, h)
        assert np.isfinite(val)

    def test_all_cells_degenerate_raises(self):
        w = np.array([[0.0]])
        s = np.array([5.0])
        data = dataset_from_events([0.5], [[0.0]])
        part = Partition(np.array([0.0, 1.0]))
        with pytest.warns(DegenerateCellWarning):
            with pytest.raises(DegenerateWindowError):
                mean_log_likelihood((w, s), data, part, np.array([1.0, 1.0]))


class TestBandwidth:
    def test_scales_by_std(self):
        w = np.array([[0.0], [2.0]])
        s = np.array([1.0, 1.0])
        h = bandwidth_vector(w, s, 0.5)
        assert h[0] == pytest.approx(0.5 * 1.0)  # std of {0, 2} is 1
        assert h[1] == pytest.approx(0.5)        # zero spread falls back to 1

    def test_requires_positive_base(self):
        with pytest.raises(ContractViolation):
            bandwidth_vector(np.zeros((2, 1)), np.zeros(2), 0.0)
