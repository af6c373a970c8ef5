"""Likelihood maximization over model setups.

The objective simulates joint samples under a candidate setup with a
fixed master seed (common random numbers), builds the KDE likelihood,
and returns the chosen log-likelihood; it is a deterministic function of
(setup, data, schedule, seed).  Maximization cycles Nelder-Mead over
parameter blocks (regression coefficients, longitudinal parameters, and
the log step heights of both baselines) with random restarts.  Variance
and hazard parameters are optimized in log space so positivity never
needs clamping.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import Bounds, minimize

from .density import EmpiricalPdf, bandwidth_vector, build_partition, mean_log_likelihood
from .errors import (
    ContractViolation,
    DegenerateWindowError,
    NonConvergenceError,
    SimulationError,
)
from .hazards import StepHazard
from .model import ModelSetup, ObservedDataset
from .simulate import simulate_joint_samples, stack_samples

__all__ = [
    "TuningSchedule",
    "tuning_from_n",
    "objective",
    "EstimationResult",
    "maximize",
    "adaptive_lasso",
    "bootstrap_bands",
    "block_nelder_mead",
    "flatten_params",
    "param_names",
    "default_init",
]


@dataclass(frozen=True)
class TuningSchedule:
    """Simulation/bandwidth schedule tied to the observed sample size."""

    n: int
    dt: float
    N: int
    h: float

    def __post_init__(self):
        if min(self.dt, self.h) <= 0 or self.N < 1 or self.n < 1:
            raise ContractViolation("schedule entries must be positive")


def tuning_from_n(n: int) -> TuningSchedule:
    """Default schedule: dt = 1/n, N = n, h = n^(-1/2)."""
    if n < 2:
        raise ContractViolation("n must be >= 2")
    return TuningSchedule(n=int(n), dt=1.0 / n, N=int(n), h=n ** -0.5)


def _seed_tuple(seed) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def objective(setup: ModelSetup, data: ObservedDataset, schedule: TuningSchedule,
              mode: str = "full", master_seed=0, partition=None) -> float:
    """Simulated log-likelihood of ``data`` under ``setup``.

    ``mode='full'`` sums log KDE densities at the observed events;
    ``mode='mean'`` evaluates the partition-averaged likelihood (a
    partition is required).  Holding ``master_seed`` fixed makes the
    value deterministic in its arguments.
    """
    samples = simulate_joint_samples(setup, dt=schedule.dt, N=schedule.N,
                                     censor_bound=data.censor_bound, seed=master_seed)
    w, s, _ = stack_samples(samples)
    h = bandwidth_vector(w, s, schedule.h)
    if mode == "full":
        pdf = EmpiricalPdf(w=w, s=s, h=h)
        return float(np.sum(pdf.log_evaluate(data.event_covariates, data.event_times)))
    if mode == "mean":
        if partition is None:
            raise ContractViolation("mode='mean' requires a partition")
        return float(mean_log_likelihood((w, s), data, partition, h))
    raise ContractViolation(f"unknown objective mode: {mode!r}")


# ---------------------------------------------------------------------------
# Parameter layout


_DEFAULT_OPTIONS = dict(
    master_seed=2025,
    restarts=3,
    max_sweeps=6,
    tol_f=1e-6,
    block_maxfev=None,
    max_hazard_steps=25,
    hazard_steps=None,
    coef_bound=5.0,
    mean_bound=5.0,
    log_var_bounds=(math.log(1e-4), math.log(25.0)),
    log_theta_bounds=(math.log(1e-3), math.log(20.0)),
    nm_step=0.4,
    init=None,
    spec=None,
    pin_blocks=(),
    pin_coords=None,
    var_floor=1e-3,
    partition_mode="equal-length",
    partition_cells=10,
    restart_scale=0.5,
)

_BLOCKS = ("b", "b_c", "a", "theta", "theta_c")


@dataclass
class ParameterLayout:
    """Mapping between the optimizer vector and a full model setup.

    Each coordinate carries its block, box bounds (in optimizer space),
    and initial simplex step.  Hazard blocks live in log space; fully
    pinned hazard blocks keep the template baseline object untouched.
    """

    template: ModelSetup
    block_index: dict
    lo: np.ndarray
    hi: np.ndarray
    step: np.ndarray
    x0: np.ndarray
    hazard_dt: dict

    @property
    def free(self) -> np.ndarray:
        return self.lo < self.hi

    def blocks(self):
        """Free coordinate indices per block, in cycling order."""
        out = []
        for name in _BLOCKS:
            idx = self.block_index.get(name)
            if idx is None:
                continue
            idx = idx[self.free[idx]]
            if idx.size:
                out.append((name, idx))
        return out

    def unpack(self, x: np.ndarray) -> ModelSetup:
        setup = self.template
        spec = setup.spec
        b = setup.b.copy()
        b_c = setup.b_c.copy()
        if "b" in self.block_index:
            b = x[self.block_index["b"]].copy()
        if "b_c" in self.block_index:
            b_c = x[self.block_index["b_c"]].copy()
        if "a" in self.block_index:
            xa = x[self.block_index["a"]]
            m = xa.size // 4
            spec = spec.with_linear_mixed(
                beta_mean=xa[:m].copy(), err_mean=xa[m:2 * m].copy(),
                beta_var=np.exp(xa[2 * m:3 * m]), err_var=np.exp(xa[3 * m:]),
            )
        lam0 = setup.lambda0
        lam0_c = setup.lambda0_c
        if "theta" in self.block_index:
            lam0 = StepHazard(np.exp(x[self.block_index["theta"]]), self.hazard_dt["theta"])
        if "theta_c" in self.block_index:
            lam0_c = StepHazard(np.exp(x[self.block_index["theta_c"]]), self.hazard_dt["theta_c"])
        return ModelSetup(a=spec, b=b, b_c=b_c, lambda0=lam0, lambda0_c=lam0_c)


def _hazard_x0(baseline, n_steps: int, step_dt: float) -> np.ndarray:
    """Initial log step heights from an arbitrary baseline (midpoint rates)."""
    mids = (np.arange(n_steps) + 0.5) * step_dt
    rates = np.maximum(np.asarray(baseline.rate(mids), dtype=float), 1e-6)
    return np.log(rates)


def build_layout(init: ModelSetup, data: ObservedDataset, schedule: TuningSchedule,
                 opts: dict) -> ParameterLayout:
    spec = init.spec
    pin_blocks = set(opts["pin_blocks"])
    pin_coords = opts["pin_coords"] or {}
    p = init.p

    t_max = float(data.event_times.max())
    k_full = int(np.floor(t_max / schedule.dt)) + 1
    n_hazard = opts["hazard_steps"] or min(k_full, opts["max_hazard_steps"])
    hazard_dt = {}

    parts_x0, parts_lo, parts_hi, parts_step = [], [], [], []
    block_index = {}
    pos = 0

    def add_block(name, x0, lo, hi, step):
        nonlocal pos
        block_index[name] = np.arange(pos, pos + x0.size)
        parts_x0.append(x0)
        parts_lo.append(lo)
        parts_hi.append(hi)
        parts_step.append(step)
        pos += x0.size

    cb = opts["coef_bound"]
    for name, coefs in (("b", init.b), ("b_c", init.b_c)):
        x0 = coefs.astype(float).copy()
        lo = np.full(p, -cb)
        hi = np.full(p, cb)
        step = np.full(p, opts["nm_step"])
        _apply_pins(name, pin_blocks, pin_coords, x0, lo, hi)
        add_block(name, x0, lo, hi, step)

    if spec.linear_mixed is not None:
        lm = spec.linear_mixed
        m = lm.n_dims
        lv_lo, lv_hi = opts["log_var_bounds"]
        x0 = np.concatenate([
            lm.beta_mean, lm.err_mean,
            np.log(np.maximum(lm.beta_var, opts["var_floor"])),
            np.log(np.maximum(lm.err_var, opts["var_floor"])),
        ])
        mb = opts["mean_bound"]
        lo = np.concatenate([np.full(2 * m, -mb), np.full(2 * m, lv_lo)])
        hi = np.concatenate([np.full(2 * m, mb), np.full(2 * m, lv_hi)])
        step = np.full(4 * m, opts["nm_step"])
        _apply_pins("a", pin_blocks, pin_coords, x0, lo, hi)
        add_block("a", x0, lo, hi, step)

    lt_lo, lt_hi = opts["log_theta_bounds"]
    for name, baseline in (("theta", init.lambda0), ("theta_c", init.lambda0_c)):
        if name in pin_blocks:
            # fully pinned: keep the template baseline object (possibly closed form)
            continue
        step_dt = t_max / n_hazard
        hazard_dt[name] = step_dt
        if isinstance(baseline, StepHazard) and baseline.k == n_hazard:
            x0 = np.log(np.maximum(baseline.theta, 1e-6))
        else:
            x0 = _hazard_x0(baseline, n_hazard, step_dt)
        x0 = np.clip(x0, lt_lo, lt_hi)
        lo = np.full(n_hazard, lt_lo)
        hi = np.full(n_hazard, lt_hi)
        stp = np.full(n_hazard, opts["nm_step"])
        _apply_pins(name, pin_blocks, pin_coords, x0, lo, hi)
        add_block(name, x0, lo, hi, stp)

    template = init
    if "theta" in block_index or "theta_c" in block_index:
        # template baselines for estimated hazard blocks are placeholders;
        # unpack() always rebuilds them from the vector
        pass
    return ParameterLayout(
        template=template,
        block_index=block_index,
        lo=np.concatenate(parts_lo) if parts_lo else np.empty(0),
        hi=np.concatenate(parts_hi) if parts_hi else np.empty(0),
        step=np.concatenate(parts_step) if parts_step else np.empty(0),
        x0=np.concatenate(parts_x0) if parts_x0 else np.empty(0),
        hazard_dt=hazard_dt,
    )


def _apply_pins(name, pin_blocks, pin_coords, x0, lo, hi):
    if name in pin_blocks:
        lo[:] = x0
        hi[:] = x0
    for k in pin_coords.get(name, ()):
        lo[k] = x0[k]
        hi[k] = x0[k]


def default_init(data: ObservedDataset, schedule: TuningSchedule, opts: dict) -> ModelSetup:
    """Cheap, scale-aware starting setup.

    Coefficients start at zero.  Linear-mixed moments come from
    per-dimension least squares of the event-time covariates on event
    time (means) and of squared residuals on squared time (variances).
    Both baselines start flat at the average event rate.
    """
    spec = opts["spec"]
    if spec is None:
        raise ContractViolation("options must provide either 'init' or 'spec'")
    t = data.event_times
    zc = data.event_covariates
    censored = t >= data.censor_bound * (1 - 1e-9)
    n_events = max(int(np.sum(~censored)), 1)
    rate0 = max(n_events / float(np.sum(t)), 1e-2)

    if spec.linear_mixed is not None:
        dims = list(spec.linear_mixed_dims)
        design = np.column_stack([np.ones_like(t), t])
        coef, *_ = np.linalg.lstsq(design, zc[:, dims], rcond=None)
        err_mean, beta_mean = coef[0], coef[1]
        resid = zc[:, dims] - design @ coef
        design2 = np.column_stack([np.ones_like(t), t ** 2])
        coef2, *_ = np.linalg.lstsq(design2, resid ** 2, rcond=None)
        err_var = np.maximum(coef2[0], opts["var_floor"])
        beta_var = np.maximum(coef2[1], opts["var_floor"])
        spec = spec.with_linear_mixed(beta_mean=beta_mean, err_mean=err_mean,
                                      beta_var=beta_var, err_var=err_var)

    rate_c0 = rate0
    if spec.counting_index is not None:
        jumps = float(np.sum(zc[:, spec.counting_index]))
        rate_c0 = max(jumps / float(np.sum(t)), 1e-2)

    p = data.p
    t_max = float(t.max())
    n_hazard = opts["hazard_steps"] or min(int(np.floor(t_max / schedule.dt)) + 1,
                                           opts["max_hazard_steps"])
    step_dt = t_max / n_hazard
    return ModelSetup(
        a=spec, b=np.zeros(p), b_c=np.zeros(p),
        lambda0=StepHazard(np.full(n_hazard, rate0), step_dt),
        lambda0_c=StepHazard(np.full(n_hazard, rate_c0), step_dt),
    )


# ---------------------------------------------------------------------------
# Optimizer core


def block_nelder_mead(fn, x0, blocks, lo, hi, step, *, max_sweeps=6,
                      block_maxfev=None, tol_f=1e-6):
    """Maximize ``fn`` by cycling Nelder-Mead over coordinate blocks.

    ``blocks`` is a list of ``(name, index_array)`` pairs; each pass
    optimizes one block with the others held fixed, accepting only
    improvements.  Stops when a full sweep improves the objective by
    less than ``tol_f`` or the sweep budget is exhausted.

    Returns ``(x_best, f_best, trace, n_eval)`` where ``trace`` records
    every accepted step with its objective value.
    """
    x = np.asarray(x0, dtype=float).copy()
    best = fn(x)
    n_eval = 1
    trace = [{"sweep": -1, "block": "init", "objective": float(best)}]
    if not blocks:
        return x, best, trace, n_eval

    for sweep in range(max_sweeps):
        sweep_gain = 0.0
        for name, idx in blocks:
            maxfev = block_maxfev or (30 * idx.size + 30)

            def g(xb, idx=idx):
                y = x.copy()
                y[idx] = xb
                return -fn(y)

            simplex = _initial_simplex(x[idx], step[idx], lo[idx], hi[idx])
            res = minimize(g, x[idx], method="Nelder-Mead",
                           bounds=Bounds(lo[idx], hi[idx]),
                           options=dict(maxfev=maxfev, fatol=tol_f / 10,
                                        xatol=1e-4, initial_simplex=simplex,
                                        adaptive=idx.size > 4))
            n_eval += res.nfev
            val = -res.fun
            if np.isfinite(val) and val > best:
                sweep_gain += val - best
                best = val
                x[idx] = res.x
                trace.append({"sweep": sweep, "block": name, "objective": float(best)})
        if sweep_gain < tol_f:
            break
    return x, best, trace, n_eval


def _initial_simplex(x0, step, lo, hi):
    """Simplex spanning a real neighborhood (scipy's default collapses at 0)."""
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        delta = step[i]
        if x0[i] + delta > hi[i]:
            delta = -step[i]
        if x0[i] + delta < lo[i]:
            delta = (hi[i] - lo[i]) / 2 or 1e-8
        simplex[i + 1, i] = np.clip(x0[i] + delta, lo[i], hi[i])
        if simplex[i + 1, i] == x0[i]:
            simplex[i + 1, i] = x0[i] + 1e-8
    return simplex


# ---------------------------------------------------------------------------
# Estimation results


@dataclass
class EstimationResult:
    """Point estimate plus optimization and uncertainty metadata."""

    setup_hat: ModelSetup
    objective_value: float
    objective_trace: list
    schedule: TuningSchedule
    mode: str
    seeds: dict
    se: np.ndarray | None = None
    ci95: tuple | None = None
    selected: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        setup = self.setup_hat
        out = {
            "b": setup.b.tolist(),
            "b_c": setup.b_c.tolist(),
            "objective": self.objective_value,
            "mode": self.mode,
            "schedule": {"n": self.schedule.n, "dt": self.schedule.dt,
                         "N": self.schedule.N, "h": self.schedule.h},
            "seeds": {k: (list(v) if isinstance(v, (tuple, list)) else v)
                      for k, v in self.seeds.items()},
            "trace_summary": {
                "accepted_steps": len(self.objective_trace) - 1,
                "final_objective": self.objective_value,
                "evaluations": self.diagnostics.get("n_eval"),
            },
        }
        for name, baseline in (("lambda0", setup.lambda0), ("lambda0_c", setup.lambda0_c)):
            if isinstance(baseline, StepHazard):
                out[name] = {"theta": baseline.theta.tolist(), "dt": baseline.dt}
            else:
                out[name] = {"closed_form": True}
        lm = setup.spec.linear_mixed
        if lm is not None:
            out["a"] = {
                "beta_mean": lm.beta_mean.tolist(), "beta_var": lm.beta_var.tolist(),
                "err_mean": lm.err_mean.tolist(), "err_var": lm.err_var.tolist(),
            }
        if self.se is not None:
            out["se"] = np.asarray(self.se).tolist()
        if self.ci95 is not None:
            out["ci95"] = {"lo": np.asarray(self.ci95[0]).tolist(),
                           "hi": np.asarray(self.ci95[1]).tolist()}
        if self.selected is not None:
            out["selected"] = np.asarray(self.selected).astype(bool).tolist()
        return out

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)


def flatten_params(setup: ModelSetup) -> np.ndarray:
    """Coefficients and longitudinal moments as one vector.

    Order: b, b_c, then (when a linear-mixed block exists) random-effect
    means, error means, random-effect variances, error variances.
    """
    parts = [setup.b, setup.b_c]
    lm = setup.spec.linear_mixed
    if lm is not None:
        parts += [lm.beta_mean, lm.err_mean, lm.beta_var, lm.err_var]
    return np.concatenate(parts)


def param_names(setup: ModelSetup) -> list[str]:
    p = setup.p
    names = [f"b_{k}" for k in range(1, p + 1)]
    names += [f"bc_{k}" for k in range(1, p + 1)]
    lm = setup.spec.linear_mixed
    if lm is not None:
        m = lm.n_dims
        names += [f"mu_1{k}" for k in range(1, m + 1)]
        names += [f"mu_2{k}" for k in range(1, m + 1)]
        names += [f"sigma2_1{k}" for k in range(1, m + 1)]
        names += [f"sigma2_2{k}" for k in range(1, m + 1)]
    return names


# ---------------------------------------------------------------------------
# Maximization


def _merge_options(options) -> dict:
    opts = dict(_DEFAULT_OPTIONS)
    if options:
        unknown = set(options) - set(_DEFAULT_OPTIONS) - {"penalty"}
        if unknown:
            raise ContractViolation(f"unknown options: {sorted(unknown)}")
        opts.update(options)
    return opts


def maximize(data: ObservedDataset, schedule: TuningSchedule, mode: str = "full",
             options: dict | None = None, _penalty=None) -> EstimationResult:
    """Maximize the simulated log-likelihood over the model setup.

    The simulation seed is held fixed across all objective evaluations
    within one call (fresh seed per restart), making each restart a
    deterministic optimization.  Restart winners are compared under a
    common evaluation seed.
    """
    opts = _merge_options(options)
    t_start = time.monotonic()
    master = _seed_tuple(opts["master_seed"])
    init = opts["init"] or default_init(data, schedule, opts)
    layout = build_layout(init, data, schedule, opts)

    partition = None
    if mode == "mean":
        partition = build_partition(data, mode=opts["partition_mode"],
                                    m_hint=opts["partition_cells"])

    def make_fn(sim_seed):
        def fn(x):
            setup = layout.unpack(x)
            try:
                val = objective(setup, data, schedule, mode=mode,
                                master_seed=sim_seed, partition=partition)
            except (DegenerateWindowError, SimulationError):
                return -np.inf
            if _penalty is not None:
                val -= _penalty(setup)
            return val
        return fn

    restart_rng = np.random.default_rng(master + (777,))
    blocks = layout.blocks()
    candidates = []
    trace_all = []
    total_eval = 0
    n_restarts = max(int(opts["restarts"]), 1)
    restart_seeds = []
    for r in range(n_restarts):
        sim_seed = master if r == 0 else master + (101, r)
        restart_seeds.append(sim_seed)
        fn = make_fn(sim_seed)
        x0 = layout.x0.copy()
        if r > 0:
            free = layout.free
            jitter = restart_rng.normal(scale=opts["restart_scale"], size=x0.size)
            x0[free] = np.clip(x0[free] + jitter[free] * layout.step[free] / 0.4,
                               layout.lo[free], layout.hi[free])
        x_best, val, trace, n_eval = block_nelder_mead(
            fn, x0, blocks, layout.lo, layout.hi, layout.step,
            max_sweeps=opts["max_sweeps"], block_maxfev=opts["block_maxfev"],
            tol_f=opts["tol_f"])
        total_eval += n_eval
        for t in trace:
            trace_all.append({"restart": r, **t})
        candidates.append((x_best, val))

    accepted = sum(1 for t in trace_all if t["block"] != "init")
    if blocks and accepted == 0:
        raise NonConvergenceError(
            "optimizer budget exhausted without any accepted step", trace=trace_all)

    if n_restarts == 1:
        x_final, val_final = candidates[0]
    else:
        fn_final = make_fn(master + (202,))
        scored = [(fn_final(x), x) for x, _ in candidates]
        total_eval += len(scored)
        val_final, x_final = max(scored, key=lambda t: t[0])

    setup_hat = layout.unpack(x_final)
    return EstimationResult(
        setup_hat=setup_hat,
        objective_value=float(val_final),
        objective_trace=trace_all,
        schedule=schedule,
        mode=mode,
        seeds={"master": master, "restarts": restart_seeds},
        diagnostics={"n_eval": total_eval,
                     "wall_seconds": time.monotonic() - t_start,
                     "restarts": n_restarts},
    )


# ---------------------------------------------------------------------------
# Adaptive LASSO


def adaptive_lasso(data: ObservedDataset, schedule: TuningSchedule,
                   weights_source="pilot", penalty_grid=(0.0, 0.5, 2.0, 8.0),
                   mode: str = "full", options: dict | None = None,
                   zero_threshold: float = 1e-3,
                   holdout_fraction: float = 0.3) -> EstimationResult:
    """Penalized coefficient selection on top of :func:`maximize`.

    An unpenalized pilot fit supplies adaptive weights ``1/|coef|`` per
    coordinate of ``b`` and ``b_c``; the penalty never touches the
    longitudinal block or the baselines.  The penalty level is chosen by
    the unpenalized objective of each penalized fit on a held-out
    subject split, then the winning level is refit on the full data.
    Coefficients below ``zero_threshold`` in magnitude are reported as
    exact zeros in the sparsity mask.
    """
    opts = _merge_options(options)
    master = _seed_tuple(opts["master_seed"])

    if isinstance(weights_source, str) and weights_source == "pilot":
        pilot = maximize(data, schedule, mode=mode, options=dict(opts))
        w_b = 1.0 / np.maximum(np.abs(pilot.setup_hat.b), zero_threshold)
        w_bc = 1.0 / np.maximum(np.abs(pilot.setup_hat.b_c), zero_threshold)
    else:
        w_b, w_bc = weights_source
        pilot = None

    grid = [float(g) for g in penalty_grid]
    if len(grid) == 0:
        raise ContractViolation("penalty grid is empty")

    # subject split for penalty selection
    rng = np.random.default_rng(master + (303,))
    perm = rng.permutation(data.n)
    n_hold = max(int(round(holdout_fraction * data.n)), 1) if len(grid) > 1 else 0
    hold_idx = set(perm[:n_hold].tolist())
    train_subjects = tuple(s for i, s in enumerate(data.subjects) if i not in hold_idx)
    hold_subjects = tuple(s for i, s in enumerate(data.subjects) if i in hold_idx)

    def penalty_for(gamma):
        if gamma == 0.0:
            return None
        def pen(setup):
            return gamma * float(np.sum(w_b * np.abs(setup.b))
                                 + np.sum(w_bc * np.abs(setup.b_c)))
        return pen

    fit_opts = dict(opts)
    if pilot is not None:
        fit_opts["init"] = pilot.setup_hat
        fit_opts["restarts"] = 1

    if len(grid) == 1:
        best_gamma = grid[0]
    else:
        train = ObservedDataset(subjects=train_subjects, p=data.p,
                                missing_dims=data.missing_dims,
                                censor_bound=data.censor_bound)
        hold = ObservedDataset(subjects=hold_subjects, p=data.p,
                               missing_dims=data.missing_dims,
                               censor_bound=data.censor_bound)
        scores = []
        for gamma in grid:
            fit = maximize(train, schedule, mode=mode, options=dict(fit_opts),
                           _penalty=penalty_for(gamma))
            score = objective(fit.setup_hat, hold, schedule, mode="full",
                              master_seed=master + (404,))
            scores.append((score, gamma))
        best_gamma = max(scores, key=lambda t: t[0])[1]

    if best_gamma == 0.0 and pilot is not None:
        final = pilot
    else:
        final = maximize(data, schedule, mode=mode, options=dict(fit_opts),
                         _penalty=penalty_for(best_gamma))

    b = final.setup_hat.b.copy()
    b_c = final.setup_hat.b_c.copy()
    b[np.abs(b) < zero_threshold] = 0.0
    b_c[np.abs(b_c) < zero_threshold] = 0.0
    selected = np.concatenate([b != 0.0, b_c != 0.0])
    setup_hat = ModelSetup(a=final.setup_hat.a, b=b, b_c=b_c,
                           lambda0=final.setup_hat.lambda0,
                           lambda0_c=final.setup_hat.lambda0_c)
    return EstimationResult(
        setup_hat=setup_hat,
        objective_value=final.objective_value,
        objective_trace=final.objective_trace,
        schedule=schedule,
        mode=mode,
        seeds=dict(final.seeds, gamma=best_gamma),
        selected=selected,
        diagnostics=dict(final.diagnostics, gamma=best_gamma,
                         penalty_grid=grid),
    )


# ---------------------------------------------------------------------------
# Bootstrap


def bootstrap_bands(data: ObservedDataset, schedule: TuningSchedule, reps: int,
                    level: float = 0.95, mode: str = "full",
                    options: dict | None = None, point: EstimationResult | None = None,
                    include_point: bool = False, hazard_grid=None) -> dict:
    """Nonparametric bootstrap over subjects.

    Each replicate resamples subjects with replacement and re-estimates;
    percentile intervals cover the flattened coefficient vector and
    pointwise bands cover both cumulative baselines on ``hazard_grid``.
    Lower/upper quantiles use the floor/ceiling order statistics, so
    with two replicates the bands are exactly their min/max envelope.
    """
    if reps < 2:
        raise ContractViolation("reps must be >= 2")
    opts = _merge_options(options)
    master = _seed_tuple(opts["master_seed"])
    t_max = float(data.event_times.max())
    grid = np.linspace(0.0, t_max, 51) if hazard_grid is None else np.asarray(hazard_grid)

    fit_opts = dict(opts)
    if point is not None:
        fit_opts["init"] = point.setup_hat
        fit_opts["restarts"] = 1

    vectors, term_curves, count_curves = [], [], []
    if include_point and point is not None:
        vectors.append(flatten_params(point.setup_hat))
        term_curves.append(np.asarray(point.setup_hat.lambda0.cumulative(grid)))
        count_curves.append(np.asarray(point.setup_hat.lambda0_c.cumulative(grid)))

    failed = 0
    for rep in range(reps):
        rng = np.random.default_rng(master + (505, rep))
        idx = rng.integers(0, data.n, size=data.n)
        boot = ObservedDataset(subjects=tuple(data.subjects[i] for i in idx),
                               p=data.p, missing_dims=data.missing_dims,
                               censor_bound=data.censor_bound)
        rep_opts = dict(fit_opts, master_seed=master + (606, rep))
        try:
            fit = maximize(boot, schedule, mode=mode, options=rep_opts)
        except NonConvergenceError:
            failed += 1
            continue
        vectors.append(flatten_params(fit.setup_hat))
        term_curves.append(np.asarray(fit.setup_hat.lambda0.cumulative(grid)))
        count_curves.append(np.asarray(fit.setup_hat.lambda0_c.cumulative(grid)))

    if len(vectors) < 2:
        raise NonConvergenceError(f"bootstrap produced {len(vectors)} usable replicates")
    mat = np.stack(vectors)
    alpha = (1.0 - level) / 2.0
    lo = np.quantile(mat, alpha, axis=0, method="lower")
    hi = np.quantile(mat, 1.0 - alpha, axis=0, method="higher")
    bands = {}
    for name, curves in (("terminal", term_curves), ("counting", count_curves)):
        cm = np.stack(curves)
        bands[name] = {
            "grid": grid,
            "lo": np.quantile(cm, alpha, axis=0, method="lower"),
            "hi": np.quantile(cm, 1.0 - alpha, axis=0, method="higher"),
        }
    return {
        "ci": (lo, hi),
        "se": mat.std(axis=0, ddof=1),
        "bands": bands,
        "replicates": len(vectors),
        "failed": failed,
        "level": level,
    }
