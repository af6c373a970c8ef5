"""Synthetic benchmark model and the desk-scale replication study.

The benchmark is a seven-dimensional covariate process: six standard
linear-mixed dimensions plus one counting dimension, with closed-form
decaying baselines for both the terminal event and the jump intensity.
Replication runs estimate the model on freshly generated datasets and
summarize bias, sampling standard error, and interval coverage per
parameter.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .hazards import ClosedFormHazard, StepHazard
from .model import LinearMixedModel, LongitudinalSpec, ModelSetup, ObservedDataset, Subject
from .simulate import simulate_joint_samples, stack_samples

__all__ = [
    "EXAMPLE1_B",
    "EXAMPLE1_B_C",
    "EXAMPLE1_CENSOR_BOUND",
    "example1_terminal_baseline",
    "example1_counting_baseline",
    "example1_spec",
    "example1_setup",
    "gen_example1",
    "metrics",
    "cum_hazard_error",
    "ReplicationReport",
    "replicate_study",
]

EXAMPLE1_P = 7
EXAMPLE1_COUNTING_INDEX = 6
EXAMPLE1_B = np.array([1.0, -1.0, 0.3, 0.0, 0.0, 0.0, 1.0])
EXAMPLE1_B_C = np.array([0.0, 0.0, 0.0, -1.0, 1.0, 0.6, 1.0])

# The benchmark model has no stated end of observation; 4 time units keep
# the censored fraction small at desk scale while bounding the grid.
EXAMPLE1_CENSOR_BOUND = 4.0


def example1_terminal_baseline() -> ClosedFormHazard:
    """Decaying terminal baseline (e^-1 + e^-t) / (e^-1 + 1); equals 1 at t=0."""
    c = np.exp(-1.0)
    return ClosedFormHazard(
        fn=lambda t: (c + np.exp(-t)) / (c + 1.0),
        cumulative_fn=lambda t: (c * t + 1.0 - np.exp(-t)) / (c + 1.0),
    )


def example1_counting_baseline() -> ClosedFormHazard:
    """Decaying jump-intensity baseline (e^-3 + e^-0.5t) / (e^-3 + 1)."""
    c = np.exp(-3.0)
    return ClosedFormHazard(
        fn=lambda t: (c + np.exp(-0.5 * t)) / (c + 1.0),
        cumulative_fn=lambda t: (c * t + 2.0 * (1.0 - np.exp(-0.5 * t))) / (c + 1.0),
    )


def example1_spec(beta_mean=None, beta_var=None, err_mean=None, err_var=None) -> LongitudinalSpec:
    """Covariate process of the benchmark: dims 0-5 linear mixed with
    z1 = 0 and z2(t) = t, dim 6 counting.  Distribution parameters
    default to standard normal for both the random effect and the error."""
    m = 6
    lm = LinearMixedModel(
        alpha=np.zeros(m),
        beta_mean=np.zeros(m) if beta_mean is None else beta_mean,
        beta_var=np.ones(m) if beta_var is None else beta_var,
        err_mean=np.zeros(m) if err_mean is None else err_mean,
        err_var=np.ones(m) if err_var is None else err_var,
        z1=0.0,
        z2=lambda t: np.asarray(t, dtype=float),
    )
    return LongitudinalSpec(
        p=EXAMPLE1_P,
        counting_index=EXAMPLE1_COUNTING_INDEX,
        linear_mixed=lm,
        linear_mixed_dims=tuple(range(m)),
    )


def example1_setup() -> ModelSetup:
    """True model setup of the benchmark study."""
    return ModelSetup(
        a=example1_spec(),
        b=EXAMPLE1_B.copy(),
        b_c=EXAMPLE1_B_C.copy(),
        lambda0=example1_terminal_baseline(),
        lambda0_c=example1_counting_baseline(),
    )


def gen_example1(n: int, seed, dt: float | None = None,
                 censor_bound: float = EXAMPLE1_CENSOR_BOUND) -> ObservedDataset:
    """Generate one observed dataset of ``n`` subjects from the benchmark truth.

    All longitudinal histories are missing except the covariates at the
    event time, matching the all-missing estimation setting.  The
    generation grid defaults to ``dt = 1/n`` so the data-generating
    discretization matches the estimation schedule.
    """
    if n < 1:
        raise ContractViolation("n must be >= 1")
    dt = 1.0 / n if dt is None else dt
    setup = example1_setup()
    samples = simulate_joint_samples(setup, dt=dt, N=n, censor_bound=censor_bound, seed=seed)
    subjects = tuple(Subject(event_time=s.s, event_covariates=s.w) for s in samples)
    return ObservedDataset(subjects=subjects, p=EXAMPLE1_P,
                           missing_dims=frozenset(range(EXAMPLE1_P)),
                           censor_bound=censor_bound)


def metrics(estimates, truth, intervals=None):
    """Per-coordinate bias, sampling standard error, and interval coverage.

    ``bias`` is the mean estimate minus the true value; ``sse`` the
    sample standard deviation across estimates; ``cp`` the fraction of
    intervals containing the truth (``None`` when no intervals given).
    """
    est = np.asarray(estimates, dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    if est.shape[0] < 2:
        raise ContractViolation("need at least 2 estimates")
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    bias = est.mean(axis=0) - truth
    sse = est.std(axis=0, ddof=1)
    cp = None
    if intervals is not None:
        lo = np.asarray([iv[0] for iv in intervals], dtype=float)
        hi = np.asarray([iv[1] for iv in intervals], dtype=float)
        if lo.ndim == 1:
            lo, hi = lo[:, None], hi[:, None]
        cp = np.mean((lo <= truth) & (truth <= hi), axis=0)
    return {"bias": bias, "sse": sse, "cp": cp}


def cum_hazard_error(est, truth, grid):
    """Compare cumulative baselines pointwise on a time grid.

    Returns the sup and L2 errors of the estimated cumulative hazard
    against the true one, plus plot-ready rows ``(t, est_cum, true_cum)``.
    """
    grid = np.asarray(grid, dtype=float)
    est_cum = np.asarray(est.cumulative(grid), dtype=float)
    true_cum = np.asarray(truth.cumulative(grid), dtype=float)
    diff = est_cum - true_cum
    sup_error = float(np.max(np.abs(diff)))
    if grid.size > 1:
        l2_error = float(np.sqrt(np.trapezoid(diff ** 2, grid)))
    else:
        l2_error = float(np.abs(diff[0]))
    curve = np.column_stack([grid, est_cum, true_cum])
    return {"sup_error": sup_error, "l2_error": l2_error, "curve": curve}


# ---------------------------------------------------------------------------
# Replication study


def example1_parameter_names() -> list[str]:
    """Report row labels: regression coefficients then the longitudinal block."""
    names = [f"b_{k}" for k in range(1, 8)]
    names += [f"bc_{k}" for k in range(1, 8)]
    names += [f"mu_1{k}" for k in range(1, 7)]
    names += [f"mu_2{k}" for k in range(1, 7)]
    names += [f"sigma2_1{k}" for k in range(1, 7)]
    names += [f"sigma2_2{k}" for k in range(1, 7)]
    return names


def example1_truth_vector() -> np.ndarray:
    """True values in the order of :func:`example1_parameter_names`.

    The random effect maps to the (mu_1, sigma2_1) rows and the error to
    (mu_2, sigma2_2); both are standard normal in this benchmark."""
    return np.concatenate([
        EXAMPLE1_B, EXAMPLE1_B_C,
        np.zeros(6), np.zeros(6), np.ones(6), np.ones(6),
    ])


@dataclass(frozen=True)
class ReplicationReport:
    """Summary of a replication run: one row per free parameter plus
    cumulative-hazard error summaries for both baselines."""

    names: list[str]
    truth: np.ndarray
    bias: np.ndarray
    sse: np.ndarray
    cp: np.ndarray | None
    reps: int
    n: int
    failures: int
    hazard_errors: dict = field(default_factory=dict)
    estimates: np.ndarray | None = None
    hazard_curves: dict = field(default_factory=dict)

    def rows(self):
        for i, name in enumerate(self.names):
            cp = float(self.cp[i]) if self.cp is not None else float("nan")
            yield name, float(self.truth[i]), float(self.bias[i]), float(self.sse[i]), cp

    @property
    def failure_fraction(self) -> float:
        return self.failures / max(self.reps, 1)


def _one_replicate(args):
    """Worker body: generate a dataset, estimate, optionally bootstrap."""
    from .estimate import bootstrap_bands, flatten_params, maximize, tuning_from_n

    rep, n, seed, bootstrap_reps, options = args
    rep_seed = [int(seed), int(rep)]
    data = gen_example1(n, seed=rep_seed)
    schedule = tuning_from_n(n)
    try:
        result = maximize(data, schedule, mode="full",
                          options=dict(options, master_seed=rep_seed + [1]))
        vec = flatten_params(result.setup_hat)
        intervals = None
        if bootstrap_reps >= 2:
            bands = bootstrap_bands(data, schedule, reps=bootstrap_reps, level=0.95,
                                    options=dict(options, master_seed=rep_seed + [2]),
                                    point=result)
            intervals = bands["ci"]
        curves = {
            "terminal": result.setup_hat.lambda0,
            "counting": result.setup_hat.lambda0_c,
        }
        return rep, vec, intervals, curves, None
    except Exception as exc:  # noqa: BLE001 - failed replicates are counted, not fatal
        return rep, None, None, None, f"{type(exc).__name__}: {exc}"


def replicate_study(reps: int, n: int, seed, *, bootstrap_reps: int = 30,
                    workers: int = 1, options: dict | None = None,
                    hazard_grid: np.ndarray | None = None) -> ReplicationReport:
    """Run the replication loop for the benchmark model.

    Each replicate draws a fresh dataset, estimates the full setup, and
    (when ``bootstrap_reps >= 2``) attaches bootstrap intervals used for
    the coverage column.  Replicates are independent jobs keyed by
    ``(seed, replicate)``; results do not depend on ``workers``.
    """
    if reps < 2:
        raise ContractViolation("reps must be >= 2")
    options = options or {}
    t_start = time.monotonic()
    jobs = [(r, n, seed, bootstrap_reps, options) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_one_replicate, jobs))
    else:
        raw = [_one_replicate(job) for job in jobs]
    raw.sort(key=lambda r: r[0])

    truth = example1_truth_vector()
    names = example1_parameter_names()
    grid = np.linspace(0.0, 1.0, 51) if hazard_grid is None else np.asarray(hazard_grid)
    vecs, ivs, failures = [], [], []
    sup_term, sup_count = [], []
    term_curves, count_curves = [], []
    truth_term = example1_terminal_baseline()
    truth_count = example1_counting_baseline()
    for rep, vec, intervals, curves, err in raw:
        if err is not None:
            failures.append((rep, err))
            continue
        vecs.append(vec)
        ivs.append(intervals)
        e_term = cum_hazard_error(curves["terminal"], truth_term, grid)
        e_count = cum_hazard_error(curves["counting"], truth_count, grid)
        sup_term.append(e_term["sup_error"])
        sup_count.append(e_count["sup_error"])
        term_curves.append(e_term["curve"][:, 1])
        count_curves.append(e_count["curve"][:, 1])

    if len(vecs) < 2:
        raise RuntimeError(f"too few successful replicates ({len(vecs)}/{reps})")
    est = np.stack(vecs)
    have_iv = all(iv is not None for iv in ivs)
    summary = metrics(est, truth, intervals=None)
    cp = None
    if have_iv and ivs:
        lo = np.stack([iv[0] for iv in ivs])
        hi = np.stack([iv[1] for iv in ivs])
        cp = np.mean((lo <= truth) & (truth <= hi), axis=0)
    report = ReplicationReport(
        names=names, truth=truth,
        bias=summary["bias"], sse=summary["sse"], cp=cp,
        reps=reps, n=n, failures=len(failures),
        hazard_errors={
            "terminal_sup_mean": float(np.mean(sup_term)),
            "counting_sup_mean": float(np.mean(sup_count)),
            "wall_seconds": time.monotonic() - t_start,
            "failure_detail": failures,
        },
        estimates=est,
        hazard_curves={
            "grid": grid,
            "terminal": np.stack(term_curves),
            "counting": np.stack(count_curves),
            "terminal_truth": np.asarray(truth_term.cumulative(grid)),
            "counting_truth": np.asarray(truth_count.cumulative(grid)),
        },
    )
    return report
